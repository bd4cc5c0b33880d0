#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "convrnnt/checkpoint.hpp"
#include "convrnnt/config.hpp"
#include "convrnnt/decoder.hpp"
#include "convrnnt/optimizer.hpp"
#include "convrnnt/transducer.hpp"
#include "convrnnt/vocab.hpp"

namespace convrnnt {

struct ManifestEntry {
  std::filesystem::path audio;  // resolved against the manifest's directory
  std::string transcript;
};

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);

struct Utterance {
  std::string id;
  std::string transcript;
  std::vector<int> tokens;
  Tensor features;  // normalized [T×D]
};

using Dataset = std::vector<Utterance>;

// Raw (unnormalized) features of every manifest entry, in manifest order.
std::vector<Tensor> manifest_features(const std::vector<ManifestEntry>& entries, const FeatureConfig& cfg);
Dataset build_dataset(const std::vector<ManifestEntry>& entries, const std::vector<Tensor>& raw_features,
                      const Vocab& vocab, const NormStats& stats);

// Sets transducer.vocab_size from the vocab when it is 0; otherwise they must agree.
void resolve_vocab_size(ModelConfig& cfg, const Vocab& vocab);

// Utterance indices of the batch consumed at 1-based `step`. Utterances are
// sorted by length, cut into batches, and the batch order is shuffled per
// epoch from (seed, epoch).
std::vector<std::size_t> batch_for_step(const Dataset& data, std::size_t batch_size, std::uint64_t seed,
                                        std::uint64_t step);

struct StepResult {
  std::uint64_t step = 0;
  double loss = 0.0;      // mean nll + L2 term
  double mean_nll = 0.0;  // training-mode mean per-utterance nll
  double grad_norm = 0.0;
  double lr = 0.0;
};

struct EvalResult {
  double mean_nll = 0.0;
  double exact_match = 0.0;  // fraction of utterances decoded exactly
  double wer = 0.0;
  std::vector<std::string> hypotheses;
};

struct FitSummary {
  std::uint64_t steps = 0;
  bool reached_target = false;
  std::optional<EvalResult> last_eval;
  std::vector<StepResult> trace;
};

class Trainer {
 public:
  Trainer(const RunConfig& cfg, Dataset train, NormStats stats, Vocab vocab);

  StepResult train_step();
  StepResult train_step(const std::vector<std::size_t>& batch);
  // Eval mode, no gradients; greedy decoding against reference transcripts.
  EvalResult evaluate(const Dataset& data) const;

  // Trains until max_steps, stopping early once the eval nll on `eval_set`
  // (training data if null) falls below training.target_nll with an exact-match
  // rate of at least training.target_exact.
  FitSummary fit(const Dataset* eval_set = nullptr, std::ostream* log = nullptr,
                 std::ostream* step_csv = nullptr, std::ostream* eval_csv = nullptr);

  void save(const std::filesystem::path& path) const;
  void load(const std::filesystem::path& path);

  const RunConfig& config() const { return cfg_; }
  ConvRnnt& model() { return model_; }
  const ConvRnnt& model() const { return model_; }
  Adam& optimizer() { return optimizer_; }
  CounterRng& rng() { return rng_; }
  const Dataset& train_data() const { return train_; }
  const NormStats& stats() const { return stats_; }
  const Vocab& vocab() const { return vocab_; }

 private:
  RunConfig cfg_;
  Dataset train_;
  NormStats stats_;
  Vocab vocab_;
  ConvRnnt model_;
  Adam optimizer_;
  CounterRng rng_;  // dropout and augmentation
};

// Everything needed to run from a config file: data, stats, vocab.
struct Workspace {
  RunConfig cfg;
  Vocab vocab;
  NormStats stats;
  Dataset train;
  Dataset eval;  // empty when no eval manifest is configured
};

// Loads vocab and manifests; stats come from cfg.data.stats when set and
// present, else they are computed over the training manifest.
Workspace load_workspace(RunConfig cfg);

struct ParamReportRow {
  std::string module;
  std::size_t count = 0;
  double reference_millions = 0.0;  // 0 when there is no reference value
};

std::vector<ParamReportRow> param_report(const ModelConfig& cfg);
void print_param_report(std::ostream& os, const std::vector<ParamReportRow>& rows, bool with_reference);

struct AblationRow {
  std::string variant;
  std::size_t frontend_params = 0;
  std::size_t local_params = 0;
  std::size_t global_params = 0;
  std::size_t total_params = 0;
  double final_loss = 0.0;
  double eval_nll = 0.0;
  double exact_match = 0.0;
};

// Trains local-only, global-only and combined variants for `steps` steps each.
std::vector<AblationRow> run_ablation(const Workspace& ws, std::uint64_t steps);
void print_ablation(std::ostream& os, const std::vector<AblationRow>& rows);

}  // namespace convrnnt
