#pragma once

// Audio frontend: 16-bit PCM → 64-band log-STFT → 3-frame stacking (192-dim)
// → global mean/variance normalization, plus SpecAugment masking.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "convrnnt/rng.hpp"
#include "convrnnt/tensor.hpp"

namespace convrnnt {

struct FeatureConfig {
  int sample_rate_hz = 16000;
  double window_ms = 25.0;
  double hop_ms = 10.0;
  std::size_t n_bands = 64;
  std::size_t fft_size = 512;
  double log_floor = 1e-10;
  std::size_t stack = 3;
  std::size_t skip = 3;

  std::size_t window_samples() const;
  std::size_t hop_samples() const;
  std::size_t output_dim() const { return n_bands * stack; }
  void validate() const;
};

struct FeatureSequence {
  Tensor frames;  // [T×D]
  std::size_t raw_frame_count = 0;
};

struct NormStats {
  std::vector<double> mean;
  std::vector<double> variance;
  std::uint64_t count = 0;
};

struct SpecAugConfig {
  double max_time_mask_ratio = 0.04;
  double adaptive_multiplicity = 0.04;
  double max_freq_mask_ratio = 0.34;
  std::size_t n_freq_masks = 2;
};

// ---- audio I/O ------------------------------------------------------------

// 16 kHz mono 16-bit little-endian PCM WAV only.
std::vector<std::int16_t> read_wav(const std::filesystem::path& path, int expected_rate = 16000);
void write_wav(const std::filesystem::path& path, std::span<const std::int16_t> samples,
               int sample_rate = 16000);

// ---- features -------------------------------------------------------------

// [T_raw×n_bands] log band magnitudes, T_raw = floor((N - window)/hop) + 1.
Tensor extract_features(std::span<const std::int16_t> pcm, const FeatureConfig& cfg);

// Bin range [first, last) of band b when fft_size/2+1 bins are split into
// n_bands equal-width contiguous bands.
std::pair<std::size_t, std::size_t> band_bins(std::size_t band, const FeatureConfig& cfg);

// Frame j concatenates raw frames skip·j .. skip·j+stack-1, clamped to the last
// raw frame; T = ceil(T_raw / skip).
Tensor stack_frames(const Tensor& raw, std::size_t stack, std::size_t skip);

FeatureSequence compute_features(std::span<const std::int16_t> pcm, const FeatureConfig& cfg);

// ---- normalization --------------------------------------------------------

// Population mean/variance per dimension over every frame of every sequence.
NormStats accumulate_stats(std::span<const Tensor> corpus);
FeatureSequence normalize(const FeatureSequence& seq, const NormStats& stats);
Tensor normalize(const Tensor& frames, const NormStats& stats);

// ---- augmentation ---------------------------------------------------------

// Time masks: floor(adaptive_multiplicity·T) masks of width U[0, floor(ratio·T)];
// frequency masks: n_freq_masks of width U[0, floor(ratio·D)]. Masked values → 0.
FeatureSequence spec_augment(const FeatureSequence& seq, const SpecAugConfig& cfg, CounterRng& rng);
Tensor spec_augment(const Tensor& frames, const SpecAugConfig& cfg, CounterRng& rng);

// ---- binary persistence (little-endian) -----------------------------------

// [u32 T][u32 D][f64 × T·D]
void write_feature_cache(const std::filesystem::path& path, const Tensor& frames);
Tensor read_feature_cache(const std::filesystem::path& path);
// [u32 D][f64 mean×D][f64 var×D][u64 count]
void write_norm_stats(const std::filesystem::path& path, const NormStats& stats);
NormStats read_norm_stats(const std::filesystem::path& path);

}  // namespace convrnnt
