#pragma once

// Single-file little-endian checkpoint:
//   "CRNT" u32 version u64 model_hash u64 step u64 rng_seed u64 rng_counter
//   u32 D f64 mean[D] f64 var[D] u64 count
//   u32 n { string name, u32 rank, u32 dims[rank], f64 values[] } × n
// Strings are u32 length + bytes. Tensor names are prefixed "param/",
// "buffer/", "adam_m/" or "adam_v/".

#include <cstdint>
#include <filesystem>

#include "convrnnt/features.hpp"
#include "convrnnt/nn.hpp"
#include "convrnnt/optimizer.hpp"
#include "convrnnt/transducer.hpp"

namespace convrnnt {

struct CheckpointData {
  std::uint64_t model_hash = 0;
  std::uint64_t step = 0;
  std::uint64_t rng_seed = 0;
  std::uint64_t rng_counter = 0;
  NormStats stats;
  TensorList tensors;
};

void write_checkpoint(const std::filesystem::path& path, const CheckpointData& data);
CheckpointData read_checkpoint(const std::filesystem::path& path);

CheckpointData capture_checkpoint(const ConvRnnt& model, const Adam& optimizer, const CounterRng& rng,
                                  const NormStats& stats);
// Copies tensors into the live model/optimizer. Throws DataError if the
// architecture hash differs or any tensor is missing or mis-shaped.
void restore_checkpoint(const CheckpointData& data, ConvRnnt& model, Adam& optimizer, CounterRng& rng,
                        NormStats& stats);
// Parameters and buffers only (for eval/decode).
void restore_model(const CheckpointData& data, ConvRnnt& model);

}  // namespace convrnnt
