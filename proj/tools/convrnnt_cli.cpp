// Command-line front end: corpus generation, feature statistics, training,
// evaluation, decoding, FLOP curves, parameter reports and ablations.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "convrnnt/complexity.hpp"
#include "convrnnt/config.hpp"
#include "convrnnt/errors.hpp"
#include "convrnnt/features.hpp"
#include "convrnnt/toy_corpus.hpp"
#include "convrnnt/trainer.hpp"

namespace fs = std::filesystem;
using namespace convrnnt;

namespace {

struct ConfigArgs {
  std::string path;
  std::vector<std::string> overrides;

  void add_to(CLI::App* cmd, bool required = true) {
    auto* opt = cmd->add_option("-c,--config", path, "run configuration file");
    if (required) opt->required()->check(CLI::ExistingFile);
    cmd->add_option("--set", overrides, "override a config key (key=value)");
  }

  RunConfig load() const {
    if (path.empty()) {
      RunConfig cfg = desk_run_config();
      for (const auto& o : overrides) apply_override(cfg, o);
      return cfg;
    }
    return load_run_config(path, overrides);
  }
};

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  return os;
}

Trainer make_trainer(const Workspace& ws) { return Trainer(ws.cfg, ws.train, ws.stats, ws.vocab); }

int cmd_toy_corpus(const std::string& out, std::uint64_t seed) {
  const auto files = write_toy_corpus(out, seed);
  std::cout << "wrote " << files.manifest.string() << " and " << files.vocab.string() << "\n";
  return 0;
}

int cmd_prep_stats(const ConfigArgs& args, const std::string& out, const std::string& cache_dir) {
  const RunConfig cfg = args.load();
  if (cfg.data.train_manifest.empty()) throw ConfigError("data.train_manifest is not set");
  const auto entries = read_manifest(cfg.data.train_manifest);
  const auto raw = manifest_features(entries, cfg.model.features);
  const NormStats stats = accumulate_stats(raw);
  if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
  write_norm_stats(out, stats);
  if (!cache_dir.empty()) {
    fs::create_directories(cache_dir);
    for (std::size_t i = 0; i < entries.size(); ++i) {
      write_feature_cache(fs::path(cache_dir) / (entries[i].audio.stem().string() + ".feat"),
                          normalize(raw[i], stats));
    }
  }
  std::cout << "stats over " << stats.count << " frames of " << entries.size() << " utterances -> " << out << "\n";
  return 0;
}

int cmd_train(const ConfigArgs& args, const std::string& out_dir, const std::string& resume) {
  const Workspace ws = load_workspace(args.load());
  Trainer trainer = make_trainer(ws);
  if (!resume.empty()) trainer.load(resume);
  fs::create_directories(out_dir);
  auto resolved = open_out(fs::path(out_dir) / "config.resolved");
  resolved << to_config_text(trainer.config());
  auto steps = open_out(fs::path(out_dir) / "train.csv");
  auto evals = open_out(fs::path(out_dir) / "eval.csv");
  const FitSummary s = trainer.fit(ws.eval.empty() ? nullptr : &ws.eval, &std::cout, &steps, &evals);
  trainer.save(fs::path(out_dir) / "model.ckpt");
  std::cout << "finished at step " << s.steps << (s.reached_target ? " (target nll reached)" : "") << "; checkpoint "
            << (fs::path(out_dir) / "model.ckpt").string() << "\n";
  return 0;
}

int cmd_eval(const ConfigArgs& args, const std::string& checkpoint, bool decode_only, const std::string& out) {
  const Workspace ws = load_workspace(args.load());
  Trainer trainer = make_trainer(ws);
  trainer.load(checkpoint);
  const Dataset& data = ws.eval.empty() ? ws.train : ws.eval;
  const EvalResult e = trainer.evaluate(data);
  if (!out.empty()) {
    auto os = open_out(out);
    for (std::size_t i = 0; i < data.size(); ++i) os << data[i].id << '\t' << e.hypotheses[i] << '\n';
  }
  if (decode_only) {
    std::size_t exact = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const bool ok = e.hypotheses[i] == data[i].transcript;
      exact += ok;
      std::cout << data[i].id << '\t' << e.hypotheses[i] << (ok ? "" : "\t(ref: " + data[i].transcript + ")")
                << '\n';
    }
    std::cout << "exact match " << exact << "/" << data.size() << "\n";
  } else {
    std::cout << "utterances " << data.size() << "\nmean_nll " << e.mean_nll << "\nexact_match " << e.exact_match
              << "\nwer " << e.wer << "\n";
  }
  return 0;
}

int cmd_flops(const std::vector<std::string>& models, const std::string& lengths, const std::string& out,
              const ConfigArgs& args) {
  std::vector<FlopsReport> reports;
  const auto ns = parse_length_range(lengths);
  for (const auto& m : models) {
    for (auto n : ns) {
      if (m == "convrnnt" && !args.path.empty()) {
        RunConfig cfg = args.load();
        if (cfg.model.transducer.vocab_size == 0) cfg.model.transducer.vocab_size = 1;
        reports.push_back(convrnnt_flops(cfg.model, n));
      } else {
        reports.push_back(encoder_flops(m, n));
      }
    }
  }
  if (out.empty()) {
    write_flops_csv(std::cout, reports);
  } else {
    auto os = open_out(out);
    write_flops_csv(os, reports);
    std::cout << "wrote " << out << "\n";
  }
  for (const auto& m : models) {
    if (m == "conformer") std::cerr << "note: conformer counts use closed-form attention/FFN formulas (approximate)\n";
  }
  return 0;
}

int cmd_params(const ConfigArgs& args, bool full) {
  ModelConfig model;
  if (full) {
    model = full_model_config();
  } else {
    RunConfig cfg = args.load();
    if (cfg.model.transducer.vocab_size == 0) {
      if (cfg.data.vocab.empty()) throw ConfigError("transducer.vocab_size is 0 and data.vocab is not set");
      resolve_vocab_size(cfg.model, Vocab::load(cfg.data.vocab));
    }
    model = cfg.model;
  }
  print_param_report(std::cout, param_report(model), full);
  return 0;
}

int cmd_ablate(const ConfigArgs& args, std::uint64_t steps, const std::string& out) {
  const Workspace ws = load_workspace(args.load());
  const auto rows = run_ablation(ws, steps);
  print_ablation(std::cout, rows);
  if (!out.empty()) {
    auto os = open_out(out);
    print_ablation(os, rows);
  }
  const bool additive = rows[2].frontend_params == rows[0].frontend_params + rows[1].frontend_params;
  std::cout << "frontend counts additive: " << (additive ? "yes" : "no") << "\n";
  return additive ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ConvRNN-T streaming transducer toolkit"};
  app.require_subcommand(1);

  auto* toy = app.add_subcommand("toy-corpus", "write the synthetic toy corpus");
  std::string toy_out;
  std::uint64_t toy_seed = 7;
  toy->add_option("-o,--out", toy_out, "output directory")->required();
  toy->add_option("--seed", toy_seed, "generator seed");

  ConfigArgs prep_args;
  std::string stats_out, cache_dir;
  auto* prep = app.add_subcommand("prep-stats", "compute normalization statistics over the training manifest");
  prep_args.add_to(prep);
  prep->add_option("-o,--out", stats_out, "stats file")->required();
  prep->add_option("--cache", cache_dir, "also write normalized feature caches here");

  ConfigArgs train_args;
  std::string train_out, resume;
  auto* train = app.add_subcommand("train", "train a model");
  train_args.add_to(train);
  train->add_option("-o,--out", train_out, "output directory")->required();
  train->add_option("--resume", resume, "checkpoint to continue from")->check(CLI::ExistingFile);

  ConfigArgs eval_args;
  std::string eval_ckpt, eval_out;
  auto* eval = app.add_subcommand("eval", "mean nll, exact-match rate and WER");
  eval_args.add_to(eval);
  eval->add_option("--checkpoint", eval_ckpt)->required()->check(CLI::ExistingFile);
  eval->add_option("-o,--out", eval_out, "write hypotheses here");

  ConfigArgs dec_args;
  std::string dec_ckpt, dec_out;
  auto* dec = app.add_subcommand("decode", "greedy-decode the eval (or training) manifest");
  dec_args.add_to(dec);
  dec->add_option("--checkpoint", dec_ckpt)->required()->check(CLI::ExistingFile);
  dec->add_option("-o,--out", dec_out, "write hypotheses here");

  ConfigArgs flops_args;
  std::vector<std::string> flops_models;
  std::string flops_lengths = "500:4000:500", flops_out;
  auto* flops = app.add_subcommand("flops", "encoder FLOPs against sequence length");
  flops->add_option("-m,--model", flops_models, "convrnnt and/or conformer")->required()->delimiter(',');
  flops->add_option("--lengths", flops_lengths, "start:stop:step");
  flops->add_option("-o,--out", flops_out, "CSV output (stdout when omitted)");
  flops_args.add_to(flops, false);

  ConfigArgs params_args;
  bool params_full = false;
  auto* params = app.add_subcommand("params", "parameter counts per module");
  params_args.add_to(params, false);
  params->add_flag("--full-size", params_full, "report the full-size architecture beside reference counts");

  ConfigArgs abl_args;
  std::uint64_t abl_steps = 20;
  std::string abl_out;
  auto* abl = app.add_subcommand("ablate", "train local-only, global-only and combined variants");
  abl_args.add_to(abl);
  abl->add_option("--steps", abl_steps, "training steps per variant");
  abl->add_option("-o,--out", abl_out, "CSV output");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*toy) return cmd_toy_corpus(toy_out, toy_seed);
    if (*prep) return cmd_prep_stats(prep_args, stats_out, cache_dir);
    if (*train) return cmd_train(train_args, train_out, resume);
    if (*eval) return cmd_eval(eval_args, eval_ckpt, false, eval_out);
    if (*dec) return cmd_eval(dec_args, dec_ckpt, true, dec_out);
    if (*flops) return cmd_flops(flops_models, flops_lengths, flops_out, flops_args);
    if (*params) return cmd_params(params_args, params_full);
    if (*abl) return cmd_ablate(abl_args, abl_steps, abl_out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
