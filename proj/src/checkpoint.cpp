#include "convrnnt/checkpoint.hpp"

#include <algorithm>
#include <fstream>
#include <unordered_map>

#include "convrnnt/binary_io.hpp"
#include "convrnnt/config.hpp"
#include "convrnnt/errors.hpp"

namespace convrnnt {

namespace {

constexpr char kMagic[4] = {'C', 'R', 'N', 'T'};
constexpr std::uint32_t kVersion = 1;

void append(TensorList& out, const std::string& prefix, const TensorList& src) {
  for (const auto& t : src) out.push_back({prefix + t.name, t.tensor});
}

void copy_into(const std::unordered_map<std::string, const Tensor*>& table, const std::string& prefix,
               const TensorList& targets) {
  for (const auto& t : targets) {
    const auto it = table.find(prefix + t.name);
    if (it == table.end()) throw DataError("checkpoint: missing tensor " + prefix + t.name);
    const Tensor& src = *it->second;
    if (src.shape() != t.tensor.shape()) {
      throw DataError("checkpoint: tensor " + prefix + t.name + " has shape " + shape_str(src.shape()) +
                      ", model expects " + shape_str(t.tensor.shape()));
    }
    Tensor dst = t.tensor;
    std::ranges::copy(src.data(), dst.mutable_data().begin());
  }
}

std::unordered_map<std::string, const Tensor*> index(const CheckpointData& data) {
  std::unordered_map<std::string, const Tensor*> table;
  for (const auto& t : data.tensors) table.emplace(t.name, &t.tensor);
  return table;
}

void check_hash(const CheckpointData& data, const ConvRnnt& model) {
  const auto expected = model_config_hash(model.config());
  if (data.model_hash != expected) {
    throw DataError("checkpoint was written for a different model configuration (hash mismatch)");
  }
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const CheckpointData& data) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write checkpoint " + path.string());
  os.write(kMagic, 4);
  binary::put<std::uint32_t>(os, kVersion);
  binary::put<std::uint64_t>(os, data.model_hash);
  binary::put<std::uint64_t>(os, data.step);
  binary::put<std::uint64_t>(os, data.rng_seed);
  binary::put<std::uint64_t>(os, data.rng_counter);
  binary::put<std::uint32_t>(os, static_cast<std::uint32_t>(data.stats.mean.size()));
  for (double v : data.stats.mean) binary::put<double>(os, v);
  for (double v : data.stats.variance) binary::put<double>(os, v);
  binary::put<std::uint64_t>(os, data.stats.count);
  binary::put<std::uint32_t>(os, static_cast<std::uint32_t>(data.tensors.size()));
  for (const auto& t : data.tensors) {
    binary::put_string(os, t.name);
    binary::put<std::uint32_t>(os, static_cast<std::uint32_t>(t.tensor.rank()));
    for (std::size_t d : t.tensor.shape()) binary::put<std::uint32_t>(os, static_cast<std::uint32_t>(d));
    for (double v : t.tensor.data()) binary::put<double>(os, v);
  }
  if (!os) throw DataError("failed writing checkpoint " + path.string());
}

CheckpointData read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || !std::equal(magic, magic + 4, kMagic)) throw DataError(path.string() + " is not a checkpoint");
  if (const auto v = binary::get<std::uint32_t>(is); v != kVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(v));
  }
  CheckpointData data;
  data.model_hash = binary::get<std::uint64_t>(is);
  data.step = binary::get<std::uint64_t>(is);
  data.rng_seed = binary::get<std::uint64_t>(is);
  data.rng_counter = binary::get<std::uint64_t>(is);
  const auto d = binary::get<std::uint32_t>(is);
  data.stats.mean.resize(d);
  data.stats.variance.resize(d);
  for (auto& v : data.stats.mean) v = binary::get<double>(is);
  for (auto& v : data.stats.variance) v = binary::get<double>(is);
  data.stats.count = binary::get<std::uint64_t>(is);
  const auto n = binary::get<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string name = binary::get_string(is);
    const auto rank = binary::get<std::uint32_t>(is);
    Shape shape(rank);
    for (auto& s : shape) s = binary::get<std::uint32_t>(is);
    std::vector<double> values(shape_numel(shape));
    for (auto& v : values) v = binary::get<double>(is);
    data.tensors.push_back({std::move(name), Tensor(std::move(shape), std::move(values))});
  }
  return data;
}

CheckpointData capture_checkpoint(const ConvRnnt& model, const Adam& optimizer, const CounterRng& rng,
                                  const NormStats& stats) {
  CheckpointData data;
  data.model_hash = model_config_hash(model.config());
  data.step = optimizer.steps();
  data.rng_seed = rng.seed();
  data.rng_counter = rng.counter();
  data.stats = stats;
  append(data.tensors, "param/", model.parameters());
  append(data.tensors, "buffer/", model.buffers());
  append(data.tensors, "adam_m/", optimizer.first_moments());
  append(data.tensors, "adam_v/", optimizer.second_moments());
  return data;
}

void restore_model(const CheckpointData& data, ConvRnnt& model) {
  check_hash(data, model);
  const auto table = index(data);
  copy_into(table, "param/", model.parameters());
  copy_into(table, "buffer/", model.buffers());
}

void restore_checkpoint(const CheckpointData& data, ConvRnnt& model, Adam& optimizer, CounterRng& rng,
                        NormStats& stats) {
  restore_model(data, model);
  const auto table = index(data);
  copy_into(table, "adam_m/", optimizer.first_moments());
  copy_into(table, "adam_v/", optimizer.second_moments());
  optimizer.set_steps(data.step);
  rng = CounterRng(data.rng_seed, data.rng_counter);
  stats = data.stats;
}

}  // namespace convrnnt
