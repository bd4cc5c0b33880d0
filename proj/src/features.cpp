#include "convrnnt/features.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>
#include <numbers>

#include "convrnnt/binary_io.hpp"
#include "convrnnt/errors.hpp"

namespace convrnnt {

namespace {

struct FftwPlan {
  std::size_t n;
  double* in;
  fftw_complex* out;
  fftw_plan plan;

  explicit FftwPlan(std::size_t size)
      : n(size),
        in(fftw_alloc_real(size)),
        out(fftw_alloc_complex(size / 2 + 1)),
        plan(fftw_plan_dft_r2c_1d(static_cast<int>(size), in, out, FFTW_ESTIMATE)) {}
  ~FftwPlan() {
    fftw_destroy_plan(plan);
    fftw_free(in);
    fftw_free(out);
  }
  FftwPlan(const FftwPlan&) = delete;
  FftwPlan& operator=(const FftwPlan&) = delete;
};

std::uint32_t read_u32(std::istream& is) { return binary::get<std::uint32_t>(is); }
std::uint16_t read_u16(std::istream& is) { return binary::get<std::uint16_t>(is); }

}  // namespace

std::size_t FeatureConfig::window_samples() const {
  return static_cast<std::size_t>(std::lround(window_ms * sample_rate_hz / 1000.0));
}

std::size_t FeatureConfig::hop_samples() const {
  return static_cast<std::size_t>(std::lround(hop_ms * sample_rate_hz / 1000.0));
}

void FeatureConfig::validate() const {
  if (!(window_ms > hop_ms && hop_ms > 0)) throw ConfigError("features: need window_ms > hop_ms > 0");
  if (fft_size < window_samples()) throw ConfigError("features: fft_size shorter than the window");
  if (n_bands == 0 || n_bands > fft_size / 2 + 1) throw ConfigError("features: bad band count");
  if (stack == 0 || skip == 0) throw ConfigError("features: stack and skip must be positive");
  if (!(log_floor > 0)) throw ConfigError("features: log floor must be positive");
}

// ---- audio I/O ------------------------------------------------------------

std::vector<std::int16_t> read_wav(const std::filesystem::path& path, int expected_rate) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open wav file " + path.string());
  char tag[4];
  is.read(tag, 4);
  if (!is || std::string(tag, 4) != "RIFF") throw DataError(path.string() + ": not a RIFF file");
  read_u32(is);
  is.read(tag, 4);
  if (!is || std::string(tag, 4) != "WAVE") throw DataError(path.string() + ": not a WAVE file");

  bool have_fmt = false;
  while (is.read(tag, 4)) {
    const std::string chunk(tag, 4);
    const std::uint32_t size = read_u32(is);
    if (chunk == "fmt ") {
      const auto format = read_u16(is);
      const auto channels = read_u16(is);
      const auto rate = read_u32(is);
      read_u32(is);
      read_u16(is);
      const auto bits = read_u16(is);
      if (format != 1 || channels != 1 || bits != 16) {
        throw DataError(path.string() + ": only 16-bit mono PCM is supported");
      }
      if (static_cast<int>(rate) != expected_rate) {
        throw DataError(path.string() + ": sample rate " + std::to_string(rate) + ", expected " +
                        std::to_string(expected_rate));
      }
      is.seekg(size - 16 + (size & 1), std::ios::cur);
      have_fmt = true;
    } else if (chunk == "data") {
      if (!have_fmt) throw DataError(path.string() + ": data chunk before fmt chunk");
      std::vector<std::int16_t> samples(size / 2);
      is.read(reinterpret_cast<char*>(samples.data()), static_cast<std::streamsize>(samples.size() * 2));
      if (!is) throw DataError(path.string() + ": truncated data chunk");
      return samples;
    } else {
      is.seekg(size + (size & 1), std::ios::cur);
    }
  }
  throw DataError(path.string() + ": no data chunk");
}

void write_wav(const std::filesystem::path& path, std::span<const std::int16_t> samples,
               int sample_rate) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write wav file " + path.string());
  const auto data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
  os.write("RIFF", 4);
  binary::put<std::uint32_t>(os, 36 + data_bytes);
  os.write("WAVEfmt ", 8);
  binary::put<std::uint32_t>(os, 16);
  binary::put<std::uint16_t>(os, 1);
  binary::put<std::uint16_t>(os, 1);
  binary::put<std::uint32_t>(os, static_cast<std::uint32_t>(sample_rate));
  binary::put<std::uint32_t>(os, static_cast<std::uint32_t>(sample_rate * 2));
  binary::put<std::uint16_t>(os, 2);
  binary::put<std::uint16_t>(os, 16);
  os.write("data", 4);
  binary::put<std::uint32_t>(os, data_bytes);
  os.write(reinterpret_cast<const char*>(samples.data()), data_bytes);
}

// ---- features -------------------------------------------------------------

std::pair<std::size_t, std::size_t> band_bins(std::size_t band, const FeatureConfig& cfg) {
  const std::size_t bins = cfg.fft_size / 2 + 1;
  return {band * bins / cfg.n_bands, (band + 1) * bins / cfg.n_bands};
}

Tensor extract_features(std::span<const std::int16_t> pcm, const FeatureConfig& cfg) {
  cfg.validate();
  const std::size_t window = cfg.window_samples(), hop = cfg.hop_samples();
  if (pcm.size() < window) {
    throw InputError("extract_features: " + std::to_string(pcm.size()) +
                     " samples is shorter than one window of " + std::to_string(window));
  }
  const std::size_t frames = (pcm.size() - window) / hop + 1;
  const std::size_t bins = cfg.fft_size / 2 + 1;

  std::vector<double> hamming(window);
  for (std::size_t n = 0; n < window; ++n) {
    hamming[n] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * static_cast<double>(n) /
                                        static_cast<double>(window - 1));
  }

  FftwPlan fft(cfg.fft_size);
  std::vector<double> magnitude(bins);
  std::vector<double> out(frames * cfg.n_bands);
  for (std::size_t f = 0; f < frames; ++f) {
    std::fill_n(fft.in, cfg.fft_size, 0.0);
    for (std::size_t n = 0; n < window; ++n) {
      fft.in[n] = static_cast<double>(pcm[f * hop + n]) / 32768.0 * hamming[n];
    }
    fftw_execute(fft.plan);
    for (std::size_t k = 0; k < bins; ++k) magnitude[k] = std::hypot(fft.out[k][0], fft.out[k][1]);
    for (std::size_t b = 0; b < cfg.n_bands; ++b) {
      const auto [first, last] = band_bins(b, cfg);
      double acc = 0.0;
      for (std::size_t k = first; k < last; ++k) acc += magnitude[k];
      out[f * cfg.n_bands + b] = std::log(acc / static_cast<double>(last - first) + cfg.log_floor);
    }
  }
  return Tensor({frames, cfg.n_bands}, std::move(out));
}

Tensor stack_frames(const Tensor& raw, std::size_t stack, std::size_t skip) {
  if (raw.rank() != 2 || raw.dim(0) == 0) throw InputError("stack_frames: empty input");
  if (stack == 0 || skip == 0) throw ConfigError("stack_frames: stack and skip must be positive");
  const std::size_t t_raw = raw.dim(0), d = raw.dim(1);
  const std::size_t t_out = (t_raw + skip - 1) / skip;
  std::vector<double> out(t_out * stack * d);
  for (std::size_t j = 0; j < t_out; ++j) {
    for (std::size_t s = 0; s < stack; ++s) {
      const std::size_t src = std::min(j * skip + s, t_raw - 1);
      std::copy_n(raw.data().data() + src * d, d, out.data() + (j * stack + s) * d);
    }
  }
  return Tensor({t_out, stack * d}, std::move(out));
}

FeatureSequence compute_features(std::span<const std::int16_t> pcm, const FeatureConfig& cfg) {
  const Tensor raw = extract_features(pcm, cfg);
  return {stack_frames(raw, cfg.stack, cfg.skip), raw.dim(0)};
}

// ---- normalization --------------------------------------------------------

NormStats accumulate_stats(std::span<const Tensor> corpus) {
  NormStats stats;
  std::vector<double> m2;
  for (const Tensor& seq : corpus) {
    if (seq.rank() != 2) throw DimensionError("accumulate_stats: expected [T×D] sequences");
    const std::size_t d = seq.dim(1);
    if (stats.mean.empty()) {
      stats.mean.assign(d, 0.0);
      m2.assign(d, 0.0);
    } else if (stats.mean.size() != d) {
      throw DimensionError("accumulate_stats: inconsistent feature dimension");
    }
    for (std::size_t t = 0; t < seq.dim(0); ++t) {
      ++stats.count;
      const double n = static_cast<double>(stats.count);
      for (std::size_t j = 0; j < d; ++j) {
        const double x = seq.data()[t * d + j];
        const double delta = x - stats.mean[j];
        stats.mean[j] += delta / n;
        m2[j] += delta * (x - stats.mean[j]);
      }
    }
  }
  if (stats.count == 0) throw ConfigError("accumulate_stats: empty corpus");
  stats.variance.resize(m2.size());
  for (std::size_t j = 0; j < m2.size(); ++j) stats.variance[j] = m2[j] / static_cast<double>(stats.count);
  return stats;
}

Tensor normalize(const Tensor& frames, const NormStats& stats) {
  if (stats.count == 0) throw ConfigError("normalize: statistics have zero count");
  const std::size_t d = frames.dim(1);
  if (stats.mean.size() != d || stats.variance.size() != d) {
    throw DimensionError("normalize: stats dimension " + std::to_string(stats.mean.size()) +
                         " vs features " + std::to_string(d));
  }
  std::vector<double> out(frames.numel());
  for (std::size_t t = 0; t < frames.dim(0); ++t) {
    for (std::size_t j = 0; j < d; ++j) {
      out[t * d + j] = (frames.data()[t * d + j] - stats.mean[j]) / std::sqrt(stats.variance[j] + 1e-8);
    }
  }
  return Tensor(frames.shape(), std::move(out));
}

FeatureSequence normalize(const FeatureSequence& seq, const NormStats& stats) {
  return {normalize(seq.frames, stats), seq.raw_frame_count};
}

// ---- augmentation ---------------------------------------------------------

Tensor spec_augment(const Tensor& frames, const SpecAugConfig& cfg, CounterRng& rng) {
  const std::size_t t_len = frames.dim(0), d = frames.dim(1);
  std::vector<double> out(frames.data().begin(), frames.data().end());
  auto mask_range = [&](std::size_t extent, double ratio, auto&& apply) {
    const auto max_width = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(extent)));
    const std::size_t width = rng.uniform_int(max_width + 1);
    const std::size_t start = rng.uniform_int(extent - width + 1);
    apply(start, width);
  };

  const auto n_time = static_cast<std::size_t>(std::floor(cfg.adaptive_multiplicity * static_cast<double>(t_len)));
  for (std::size_t m = 0; m < n_time; ++m) {
    mask_range(t_len, cfg.max_time_mask_ratio, [&](std::size_t start, std::size_t width) {
      std::fill_n(out.begin() + static_cast<std::ptrdiff_t>(start * d), width * d, 0.0);
    });
  }
  for (std::size_t m = 0; m < cfg.n_freq_masks; ++m) {
    mask_range(d, cfg.max_freq_mask_ratio, [&](std::size_t start, std::size_t width) {
      for (std::size_t t = 0; t < t_len; ++t) {
        std::fill_n(out.begin() + static_cast<std::ptrdiff_t>(t * d + start), width, 0.0);
      }
    });
  }
  return Tensor(frames.shape(), std::move(out));
}

FeatureSequence spec_augment(const FeatureSequence& seq, const SpecAugConfig& cfg, CounterRng& rng) {
  return {spec_augment(seq.frames, cfg, rng), seq.raw_frame_count};
}

// ---- binary persistence ---------------------------------------------------

void write_feature_cache(const std::filesystem::path& path, const Tensor& frames) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write feature cache " + path.string());
  binary::put<std::uint32_t>(os, static_cast<std::uint32_t>(frames.dim(0)));
  binary::put<std::uint32_t>(os, static_cast<std::uint32_t>(frames.dim(1)));
  for (double v : frames.data()) binary::put<double>(os, v);
}

Tensor read_feature_cache(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open feature cache " + path.string());
  const auto t_len = binary::get<std::uint32_t>(is);
  const auto d = binary::get<std::uint32_t>(is);
  std::vector<double> values(static_cast<std::size_t>(t_len) * d);
  for (double& v : values) v = binary::get<double>(is);
  return Tensor({t_len, d}, std::move(values));
}

void write_norm_stats(const std::filesystem::path& path, const NormStats& stats) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write stats file " + path.string());
  binary::put<std::uint32_t>(os, static_cast<std::uint32_t>(stats.mean.size()));
  for (double v : stats.mean) binary::put<double>(os, v);
  for (double v : stats.variance) binary::put<double>(os, v);
  binary::put<std::uint64_t>(os, stats.count);
}

NormStats read_norm_stats(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open stats file " + path.string());
  NormStats stats;
  const auto d = binary::get<std::uint32_t>(is);
  stats.mean.resize(d);
  stats.variance.resize(d);
  for (double& v : stats.mean) v = binary::get<double>(is);
  for (double& v : stats.variance) v = binary::get<double>(is);
  stats.count = binary::get<std::uint64_t>(is);
  return stats;
}

}  // namespace convrnnt
