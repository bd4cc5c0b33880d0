#include "convrnnt/toy_corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "convrnnt/errors.hpp"
#include "convrnnt/features.hpp"

namespace convrnnt {

namespace {

constexpr double kToneSeconds = 0.12;
constexpr double kGapSeconds = 0.05;
constexpr double kEdgeSeconds = 0.08;
constexpr double kBurstSeconds = 0.08;
constexpr double kToneAmplitude = 8000.0;
constexpr double kBurstAmplitude = 3000.0;
constexpr double kFloorAmplitude = 30.0;

void append_silence(std::vector<double>& out, std::size_t n) { out.insert(out.end(), n, 0.0); }

}  // namespace

const std::vector<std::string>& toy_transcripts() {
  static const std::vector<std::string> t = {"cab", "bad", "ace", "dab", "bead",
                                             "a be", "deed", "cede", "bed", "ad ce"};
  return t;
}

double toy_letter_hz(char letter) {
  if (letter < 'a' || letter > 'z') throw InputError(std::string("no tone for '") + letter + "'");
  return 400.0 + 250.0 * (letter - 'a');
}

std::vector<std::int16_t> synthesize_toy(const std::string& text, CounterRng& rng, int sample_rate) {
  const auto samples = [sample_rate](double s) { return static_cast<std::size_t>(s * sample_rate); };
  std::vector<double> wave;
  append_silence(wave, samples(kEdgeSeconds));
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (c == ' ') {
      for (std::size_t n = 0; n < samples(kBurstSeconds); ++n) {
        wave.push_back(kBurstAmplitude * rng.uniform(-1.0, 1.0));
      }
    } else {
      const double hz = toy_letter_hz(c);
      const std::size_t len = samples(kToneSeconds);
      for (std::size_t n = 0; n < len; ++n) {
        // Raised-cosine envelope avoids clicks at the tone edges.
        const double env = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * n / (len - 1));
        wave.push_back(kToneAmplitude * env *
                       std::sin(2.0 * std::numbers::pi * hz * n / sample_rate));
      }
    }
    if (i + 1 < text.size()) append_silence(wave, samples(kGapSeconds));
  }
  append_silence(wave, samples(kEdgeSeconds));

  std::vector<std::int16_t> pcm(wave.size());
  for (std::size_t n = 0; n < wave.size(); ++n) {
    const double v = wave[n] + kFloorAmplitude * rng.uniform(-1.0, 1.0);
    pcm[n] = static_cast<std::int16_t>(std::clamp(std::lround(v), -32768L, 32767L));
  }
  return pcm;
}

std::vector<ToyUtterance> generate_toy_corpus(std::uint64_t seed) {
  CounterRng rng(seed);
  std::vector<ToyUtterance> out;
  const auto& texts = toy_transcripts();
  for (std::size_t i = 0; i < texts.size(); ++i) {
    out.push_back({"toy" + std::to_string(i), texts[i], synthesize_toy(texts[i], rng)});
  }
  return out;
}

Vocab character_vocab() {
  std::vector<std::string> tokens = {Vocab::kBlank, Vocab::kUnk, " "};
  for (char c = 'a'; c <= 'z'; ++c) tokens.emplace_back(1, c);
  return Vocab(std::move(tokens));
}

ToyCorpusFiles write_toy_corpus(const std::filesystem::path& dir, std::uint64_t seed) {
  std::filesystem::create_directories(dir / "wav");
  ToyCorpusFiles files{dir / "manifest.tsv", dir / "vocab.txt"};
  std::ofstream manifest(files.manifest);
  if (!manifest) throw DataError("cannot write " + files.manifest.string());
  for (const auto& u : generate_toy_corpus(seed)) {
    const auto rel = std::filesystem::path("wav") / (u.id + ".wav");
    write_wav(dir / rel, u.pcm);
    manifest << rel.string() << '\t' << u.transcript << '\n';
  }
  character_vocab().save(files.vocab);
  return files;
}

}  // namespace convrnnt
