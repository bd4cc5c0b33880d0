#pragma once

// Synthetic speech-like corpus: each letter is a fixed-pitch tone, a space is
// a short noise burst, separated by silence. Deterministic given the seed.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "convrnnt/rng.hpp"
#include "convrnnt/vocab.hpp"

namespace convrnnt {

struct ToyUtterance {
  std::string id;
  std::string transcript;
  std::vector<std::int16_t> pcm;
};

// The ten bundled transcripts.
const std::vector<std::string>& toy_transcripts();

// Tone frequency used for a lowercase letter.
double toy_letter_hz(char letter);

std::vector<std::int16_t> synthesize_toy(const std::string& text, CounterRng& rng, int sample_rate = 16000);
std::vector<ToyUtterance> generate_toy_corpus(std::uint64_t seed);

// <blank>, <unk>, space, a–z.
Vocab character_vocab();

struct ToyCorpusFiles {
  std::filesystem::path manifest;
  std::filesystem::path vocab;
};

// Writes wav/<id>.wav, manifest.tsv and vocab.txt under dir.
ToyCorpusFiles write_toy_corpus(const std::filesystem::path& dir, std::uint64_t seed);

}  // namespace convrnnt
