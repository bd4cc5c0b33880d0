#include "convrnnt/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <ostream>

#include "convrnnt/errors.hpp"
#include "convrnnt/features.hpp"

namespace convrnnt {

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  const auto base = path.parent_path();
  std::vector<ManifestEntry> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected <wav-path>\\t<transcript>");
    }
    std::filesystem::path audio = line.substr(0, tab);
    if (audio.is_relative()) audio = base / audio;
    out.push_back({audio, line.substr(tab + 1)});
  }
  if (out.empty()) throw DataError("manifest " + path.string() + " is empty");
  return out;
}

std::vector<Tensor> manifest_features(const std::vector<ManifestEntry>& entries, const FeatureConfig& cfg) {
  std::vector<Tensor> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(compute_features(read_wav(e.audio, cfg.sample_rate_hz), cfg).frames);
  return out;
}

Dataset build_dataset(const std::vector<ManifestEntry>& entries, const std::vector<Tensor>& raw_features,
                      const Vocab& vocab, const NormStats& stats) {
  Dataset data;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    Utterance u;
    u.id = entries[i].audio.stem().string();
    u.transcript = entries[i].transcript;
    u.tokens = vocab.tokenize(u.transcript);
    u.features = normalize(raw_features[i], stats);
    data.push_back(std::move(u));
  }
  return data;
}

void resolve_vocab_size(ModelConfig& cfg, const Vocab& vocab) {
  auto& v = cfg.transducer.vocab_size;
  if (v == 0) {
    v = vocab.size();
  } else if (v != vocab.size()) {
    throw ConfigError("transducer.vocab_size = " + std::to_string(v) + " but the vocab file has " +
                      std::to_string(vocab.size()) + " tokens");
  }
}

std::vector<std::size_t> batch_for_step(const Dataset& data, std::size_t batch_size, std::uint64_t seed,
                                        std::uint64_t step) {
  if (data.empty()) throw DataError("empty training set");
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return data[a].features.dim(0) < data[b].features.dim(0);
  });
  const std::size_t n_batches = (data.size() + batch_size - 1) / batch_size;
  const std::uint64_t epoch = (step - 1) / n_batches;
  std::vector<std::size_t> batch_order(n_batches);
  std::iota(batch_order.begin(), batch_order.end(), 0);
  CounterRng rng(seed ^ 0x5bd1e9955bd1e995ULL, epoch * 0x10000);
  for (std::size_t i = n_batches; i > 1; --i) {
    std::swap(batch_order[i - 1], batch_order[rng.uniform_int(i)]);
  }
  const std::size_t b = batch_order[(step - 1) % n_batches];
  const std::size_t lo = b * batch_size;
  const std::size_t hi = std::min(lo + batch_size, data.size());
  return {order.begin() + static_cast<std::ptrdiff_t>(lo), order.begin() + static_cast<std::ptrdiff_t>(hi)};
}

// ---- Trainer --------------------------------------------------------------

Trainer::Trainer(const RunConfig& cfg, Dataset train, NormStats stats, Vocab vocab)
    : cfg_(cfg),
      train_(std::move(train)),
      stats_(std::move(stats)),
      vocab_(std::move(vocab)) {
  resolve_vocab_size(cfg_.model, vocab_);
  cfg_.validate();
  model_ = ConvRnnt(cfg_.model, cfg_.training.seed);
  optimizer_ = Adam(model_.parameters(), cfg_.optimizer);
  rng_ = CounterRng(cfg_.training.seed ^ 0xa0761d6478bd642fULL);
}

StepResult Trainer::train_step() {
  return train_step(batch_for_step(train_, cfg_.training.batch_size, cfg_.training.seed, optimizer_.steps() + 1));
}

StepResult Trainer::train_step(const std::vector<std::size_t>& batch) {
  if (batch.empty()) throw DataError("empty batch");
  const ForwardContext ctx{true, &rng_};
  std::vector<Tensor> inputs;
  inputs.reserve(batch.size());
  for (std::size_t i : batch) {
    const Tensor& x = train_.at(i).features;
    // Shared batch statistics would spread a bad frame to every utterance.
    for (double v : x.data())
      if (!std::isfinite(v))
        throw DataError("non-finite feature on utterance '" + train_[i].id + "' at step " +
                        std::to_string(optimizer_.steps() + 1));
    inputs.push_back(cfg_.training.spec_augment ? spec_augment(x, cfg_.spec_augment, rng_) : x);
  }
  const auto enc = model_.encode(inputs, ctx);

  std::vector<Tensor> nlls;
  double nll_sum = 0.0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const Utterance& u = train_[batch[b]];
    Tensor nll = model_.utterance_nll(enc[b], u.tokens, ctx);
    if (!std::isfinite(nll.item())) {
      throw DataError("non-finite loss " + std::to_string(nll.item()) + " on utterance '" + u.id +
                      "' (" + std::to_string(u.features.dim(0)) + " frames, transcript \"" +
                      u.transcript + "\") at step " + std::to_string(optimizer_.steps() + 1));
    }
    nll_sum += nll.item();
    nlls.push_back(nll);
  }
  const Tensor mean_nll = scale(sum(concat(nlls, 0)), 1.0 / static_cast<double>(batch.size()));
  const Tensor loss = add(mean_nll, model_.l2_penalty());

  StepResult r;
  r.loss = loss.item();
  r.mean_nll = nll_sum / static_cast<double>(batch.size());
  loss.backward();
  r.grad_norm = optimizer_.grad_norm();
  r.lr = optimizer_.step();
  optimizer_.zero_grad();
  r.step = optimizer_.steps();
  return r;
}

EvalResult Trainer::evaluate(const Dataset& data) const {
  NoGradGuard no_grad;
  const ForwardContext ctx{false, nullptr};
  DecodeOptions opts;
  opts.max_symbols_per_frame = cfg_.training.max_symbols_per_frame;
  EvalResult r;
  std::vector<std::string> refs;
  std::size_t exact = 0;
  double nll_sum = 0.0;
  for (const auto& u : data) {
    const Tensor enc = model_.encode(u.features, ctx);
    nll_sum += model_.utterance_nll(enc, u.tokens, ctx).item();
    const Hypothesis hyp = greedy_decode(model_, enc, opts);
    if (hyp.tokens == u.tokens) ++exact;
    r.hypotheses.push_back(vocab_.detokenize(hyp.tokens));
    refs.push_back(u.transcript);
  }
  if (!data.empty()) {
    r.mean_nll = nll_sum / static_cast<double>(data.size());
    r.exact_match = static_cast<double>(exact) / static_cast<double>(data.size());
    r.wer = corpus_wer(refs, r.hypotheses);
  }
  return r;
}

FitSummary Trainer::fit(const Dataset* eval_set, std::ostream* log, std::ostream* step_csv,
                        std::ostream* eval_csv) {
  const Dataset& eval_data = eval_set ? *eval_set : train_;
  FitSummary summary;
  if (step_csv) *step_csv << "step,loss,mean_nll,grad_norm,lr\n";
  if (eval_csv) *eval_csv << "step,mean_nll,exact_match,wer\n";
  while (optimizer_.steps() < cfg_.training.max_steps) {
    const StepResult s = train_step();
    summary.trace.push_back(s);
    if (step_csv) {
      *step_csv << s.step << ',' << std::setprecision(17) << s.loss << ',' << s.mean_nll << ',' << s.grad_norm
                << ',' << s.lr << '\n';
    }
    const bool last = s.step == cfg_.training.max_steps;
    if (s.step % cfg_.training.eval_interval == 0 || last) {
      EvalResult e = evaluate(eval_data);
      if (log) {
        *log << "step " << s.step << "  loss " << std::setprecision(6) << s.loss << "  eval nll " << e.mean_nll
             << "  exact " << e.exact_match << "  wer " << e.wer << "\n";
        log->flush();
      }
      if (eval_csv) *eval_csv << s.step << ',' << std::setprecision(17) << e.mean_nll << ',' << e.exact_match << ',' << e.wer << '\n';
      const bool done = cfg_.training.target_nll > 0.0 && e.mean_nll < cfg_.training.target_nll &&
                        e.exact_match >= cfg_.training.target_exact;
      summary.last_eval = std::move(e);
      if (done) {
        summary.reached_target = true;
        break;
      }
    }
  }
  summary.steps = optimizer_.steps();
  return summary;
}

void Trainer::save(const std::filesystem::path& path) const {
  write_checkpoint(path, capture_checkpoint(model_, optimizer_, rng_, stats_));
}

void Trainer::load(const std::filesystem::path& path) {
  restore_checkpoint(read_checkpoint(path), model_, optimizer_, rng_, stats_);
}

// ---- workspace ------------------------------------------------------------

Workspace load_workspace(RunConfig cfg) {
  if (cfg.data.vocab.empty()) throw ConfigError("data.vocab is not set");
  if (cfg.data.train_manifest.empty()) throw ConfigError("data.train_manifest is not set");
  Workspace ws{cfg, Vocab::load(cfg.data.vocab), {}, {}, {}};
  resolve_vocab_size(ws.cfg.model, ws.vocab);
  ws.cfg.validate();

  const auto entries = read_manifest(cfg.data.train_manifest);
  const auto raw = manifest_features(entries, ws.cfg.model.features);
  if (!cfg.data.stats.empty() && std::filesystem::exists(cfg.data.stats)) {
    ws.stats = read_norm_stats(cfg.data.stats);
  } else {
    ws.stats = accumulate_stats(raw);
  }
  ws.train = build_dataset(entries, raw, ws.vocab, ws.stats);
  if (!cfg.data.eval_manifest.empty()) {
    const auto eval_entries = read_manifest(cfg.data.eval_manifest);
    ws.eval = build_dataset(eval_entries, manifest_features(eval_entries, ws.cfg.model.features), ws.vocab,
                            ws.stats);
  }
  return ws;
}

// ---- reports --------------------------------------------------------------

std::vector<ParamReportRow> param_report(const ModelConfig& cfg) {
  const ParamGroups g = count_parameters(cfg);
  return {
      {"Convolution blocks", g.convolution_blocks(), 5.40},
      {"LSTM encoder", g.lstm_encoder, 18.93},
      {"Joint network", g.joint, 1.28},
      {"Decoder input embedding", g.embedding, 0.62},
      {"LSTM decoder", g.lstm_decoder, 2.62},
  };
}

void print_param_report(std::ostream& os, const std::vector<ParamReportRow>& rows, bool with_reference) {
  os << std::left << std::setw(26) << "module" << std::right << std::setw(12) << "params" << std::setw(10)
     << "millions";
  if (with_reference) os << std::setw(12) << "reference" << std::setw(8) << "ratio";
  os << "\n";
  std::size_t total = 0;
  double ref_total = 0.0;
  for (const auto& r : rows) {
    total += r.count;
    ref_total += r.reference_millions;
    const double m = static_cast<double>(r.count) / 1e6;
    os << std::left << std::setw(26) << r.module << std::right << std::setw(12) << r.count << std::setw(10)
       << std::fixed << std::setprecision(2) << m;
    if (with_reference) {
      os << std::setw(12) << r.reference_millions << std::setw(8)
         << (r.reference_millions > 0 ? m / r.reference_millions : 0.0);
    }
    os << std::defaultfloat << "\n";
  }
  os << std::left << std::setw(26) << "total" << std::right << std::setw(12) << total << std::setw(10) << std::fixed
     << std::setprecision(2) << static_cast<double>(total) / 1e6;
  if (with_reference) os << std::setw(12) << ref_total;
  os << std::defaultfloat << "\n";
}

std::vector<AblationRow> run_ablation(const Workspace& ws, std::uint64_t steps) {
  struct Variant {
    const char* name;
    bool local;
    bool global;
  };
  const Variant variants[] = {{"local-only", true, false}, {"global-only", false, true}, {"local+global", true, true}};
  std::vector<AblationRow> rows;
  for (const auto& v : variants) {
    RunConfig cfg = ws.cfg;
    cfg.model.local.enabled = v.local;
    cfg.model.global.enabled = v.global;
    cfg.training.max_steps = steps;
    cfg.training.target_nll = 0.0;
    Trainer trainer(cfg, ws.train, ws.stats, ws.vocab);
    double last_loss = 0.0;
    for (std::uint64_t s = 0; s < steps; ++s) last_loss = trainer.train_step().loss;
    const EvalResult e = trainer.evaluate(ws.eval.empty() ? ws.train : ws.eval);
    const ParamGroups g = trainer.model().parameter_groups();
    rows.push_back({v.name, g.frontend(), g.local, g.global, g.total(), last_loss, e.mean_nll, e.exact_match});
  }
  return rows;
}

void print_ablation(std::ostream& os, const std::vector<AblationRow>& rows) {
  os << "variant,frontend_params,local_params,global_params,total_params,final_loss,eval_nll,exact_match\n";
  for (const auto& r : rows) {
    os << r.variant << ',' << r.frontend_params << ',' << r.local_params << ',' << r.global_params << ','
       << r.total_params << ',' << std::setprecision(6) << r.final_loss << ',' << r.eval_nll << ','
       << r.exact_match << '\n';
  }
}

}  // namespace convrnnt
