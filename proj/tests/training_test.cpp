#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <set>

#include "convrnnt/checkpoint.hpp"
#include "convrnnt/config.hpp"
#include "convrnnt/errors.hpp"
#include "convrnnt/optimizer.hpp"
#include "convrnnt/toy_corpus.hpp"
#include "convrnnt/trainer.hpp"
#include "convrnnt/vocab.hpp"
#include "oracles.hpp"
#include "test_models.hpp"

using namespace convrnnt;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) { return fs::temp_directory_path() / ("convrnnt_training_" + name); }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

const Workspace& small_batches() {
  static const Workspace ws = testing_models::toy_workspace("training", {"training.batch_size=2"});
  return ws;
}

Trainer make_trainer(const Workspace& ws) { return Trainer(ws.cfg, ws.train, ws.stats, ws.vocab); }

}  // namespace

// ---- config -----------------------------------------------------------------

TEST(Config, SectionsAndOverrides) {
  const RunConfig cfg = run_config_from_text(
      "# comment\n[transducer]\nenc_layers = 3\n\n[training]\nseed=9\nspec_augment = off\n"
      "[local]\nchannels = 8, 8\n");
  EXPECT_EQ(cfg.model.transducer.enc_layers, 3u);
  EXPECT_EQ(cfg.training.seed, 9u);
  EXPECT_FALSE(cfg.training.spec_augment);
  EXPECT_EQ(cfg.model.local.channels, (std::vector<std::size_t>{8, 8}));

  RunConfig c2 = cfg;
  apply_override(c2, "optimizer.peak_lr=0.01");
  EXPECT_EQ(c2.optimizer.peak_lr, 0.01);
  apply_override(c2, "optimizer.l2=0.5");
  EXPECT_EQ(c2.model.transducer.l2, 0.5);
}

TEST(Config, ErrorsAreConfigErrors) {
  RunConfig cfg;
  EXPECT_THROW(apply_setting(cfg, "transducer.nonsense", "1"), ConfigError);
  EXPECT_THROW(apply_setting(cfg, "transducer.enc_layers", "-2"), ConfigError);
  EXPECT_THROW(apply_setting(cfg, "optimizer.peak_lr", "fast"), ConfigError);
  EXPECT_THROW(apply_setting(cfg, "training.spec_augment", "maybe"), ConfigError);
  EXPECT_THROW(apply_override(cfg, "no-equals-sign"), ConfigError);
  EXPECT_THROW(run_config_from_text("[broken\n"), ConfigError);
  EXPECT_THROW(run_config_from_text("just words\n"), ConfigError);
  EXPECT_THROW(run_config_from_text("[optimizer]\nwarmup_steps = 0\n").validate(), ConfigError);
  EXPECT_THROW(load_run_config("/nonexistent/run.cfg"), ConfigError);
}

TEST(Config, CanonicalTextRoundTrips) {
  const RunConfig a = desk_run_config();
  const std::string text = to_config_text(a);
  const RunConfig b = run_config_from_text(text);
  EXPECT_EQ(to_config_text(b), text);
  EXPECT_EQ(model_config_hash(a.model), model_config_hash(b.model));
}

TEST(Config, HashTracksArchitectureOnly) {
  RunConfig a = desk_run_config();
  RunConfig b = a;
  b.training.seed = 99;
  b.optimizer.peak_lr = 0.5;
  EXPECT_EQ(model_config_hash(a.model), model_config_hash(b.model));
  b.model.transducer.enc_hidden += 1;
  EXPECT_NE(model_config_hash(a.model), model_config_hash(b.model));
}

TEST(Config, ShippedConfigsLoad) {
  const RunConfig desk = load_run_config(fs::path(CONVRNNT_SOURCE_DIR) / "configs/desk.cfg");
  RunConfig expected = desk_run_config();
  expected.data = desk.data;
  expected.training.eval_interval = desk.training.eval_interval;
  EXPECT_EQ(to_config_text(desk), to_config_text(expected));

  const RunConfig full = load_run_config(fs::path(CONVRNNT_SOURCE_DIR) / "configs/full.cfg");
  EXPECT_EQ(model_config_hash(full.model), model_config_hash(full_model_config()));
}

// ---- vocab and WER ----------------------------------------------------------

TEST(Vocab, CharacterRoundTrip) {
  const Vocab v = character_vocab();
  EXPECT_EQ(v.size(), 28u);
  const auto ids = v.tokenize("ab");
  EXPECT_EQ(ids, (std::vector<int>{v.id("a"), v.id("b")}));
  EXPECT_EQ(v.detokenize(ids), "ab");
  for (const auto& t : toy_transcripts()) EXPECT_EQ(v.detokenize(v.tokenize(t)), t);
}

TEST(Vocab, UnknownSymbolsAndLongestMatch) {
  const Vocab v = character_vocab();
  const auto ids = v.tokenize("a\xC3\xA9z");  // é is not covered
  EXPECT_EQ(ids.size(), 3u);
  EXPECT_EQ(ids[1], v.unk_id());

  const Vocab w({Vocab::kBlank, Vocab::kUnk, "a", "ab", "b"});
  EXPECT_EQ(w.tokenize("ab"), (std::vector<int>{w.id("ab")}));
  EXPECT_EQ(w.tokenize("aab"), (std::vector<int>{w.id("a"), w.id("ab")}));
  EXPECT_THROW(w.tokenize(""), DataError);
  EXPECT_THROW(w.token(9), InputError);
}

TEST(Vocab, FileFormat) {
  const auto path = temp_file("vocab.txt");
  character_vocab().save(path);
  const std::string text = slurp(path);
  EXPECT_EQ(text.substr(0, 17), "<blank>\n<unk>\n\xE2\x96\x81");
  const Vocab v = Vocab::load(path);
  EXPECT_EQ(v.tokenize("a be"), character_vocab().tokenize("a be"));
  std::ofstream(path) << "<unk>\n<blank>\n";
  EXPECT_THROW(Vocab::load(path), DataError);
  std::ofstream(path) << "<blank>\na\n";
  EXPECT_THROW(Vocab::load(path), DataError);
  fs::remove(path);
}

TEST(Wer, HandPairs) {
  EXPECT_EQ(edit_distance(split_words("a b c"), split_words("a c")), 1u);
  EXPECT_NEAR(corpus_wer({"a b c"}, {"a c"}), 1.0 / 3.0, 1e-15);
  EXPECT_EQ(corpus_wer({"x y"}, {"x y"}), 0.0);
  EXPECT_NEAR(corpus_wer({"a b", "c"}, {"b", "c d e"}), 3.0 / 3.0, 1e-15);
  EXPECT_EQ(split_words("  two   words "), (std::vector<std::string>{"two", "words"}));
  EXPECT_THROW(corpus_wer({"a"}, {}), InputError);
}

TEST(Wer, MatchesLevenshteinOracle) {
  CounterRng rng(1);
  const std::vector<std::string> lexicon = {"a", "b", "c", "d"};
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::string> r(rng.uniform_int(7)), h(rng.uniform_int(7));
    for (auto& w : r) w = lexicon[rng.uniform_int(4)];
    for (auto& w : h) w = lexicon[rng.uniform_int(4)];
    EXPECT_EQ(edit_distance(r, h), oracle::levenshtein(r, h));
  }
}

// ---- optimizer ----------------------------------------------------------------

TEST(Schedule, Pins) {
  const OptimizerConfig cfg;
  EXPECT_EQ(lr_at(10000, cfg), 0.002);
  EXPECT_EQ(lr_at(5000, cfg), 0.001);
  EXPECT_EQ(lr_at(40000, cfg), 0.001);
  EXPECT_DOUBLE_EQ(lr_at(1, cfg), 0.002 / 10000.0);
  EXPECT_THROW(lr_at(0, cfg), ConfigError);
}

TEST(Adam, FirstStepsMatchHandFormula) {
  OptimizerConfig cfg;
  cfg.warmup_steps = 1;
  cfg.peak_lr = 0.1;
  Tensor w({2}, {1.0, -2.0});
  w.set_requires_grad(true);
  Adam opt({{"w", w}}, cfg);
  double m[2] = {0, 0}, v[2] = {0, 0}, ref[2] = {1.0, -2.0};
  for (int step = 1; step <= 3; ++step) {
    opt.zero_grad();
    sum_squares(w).backward();
    const double lr = opt.step();
    EXPECT_EQ(lr, lr_at(static_cast<std::uint64_t>(step), cfg));
    for (int i = 0; i < 2; ++i) {
      const double g = 2.0 * ref[i];
      m[i] = 0.9 * m[i] + 0.1 * g;
      v[i] = 0.98 * v[i] + 0.02 * g * g;
      const double mh = m[i] / (1.0 - std::pow(0.9, step));
      const double vh = v[i] / (1.0 - std::pow(0.98, step));
      ref[i] -= lr * mh / (std::sqrt(vh) + 1e-9);
      EXPECT_NEAR(w.data()[i], ref[i], 1e-14);
    }
  }
  EXPECT_EQ(opt.steps(), 3u);
}

// ---- data -------------------------------------------------------------------

TEST(Data, ManifestResolvesRelativePaths) {
  const auto dir = temp_file("manifest_dir");
  fs::create_directories(dir);
  std::ofstream(dir / "m.tsv") << "wav/x.wav\thello\n\n/abs/y.wav\tbye\n";
  const auto entries = read_manifest(dir / "m.tsv");
  ASSERT_EQ(entries.size(), 2u);
  EXPECT_EQ(entries[0].audio, dir / "wav/x.wav");
  EXPECT_EQ(entries[1].audio, fs::path("/abs/y.wav"));
  std::ofstream(dir / "bad.tsv") << "no tab here\n";
  EXPECT_THROW(read_manifest(dir / "bad.tsv"), DataError);
  EXPECT_THROW(read_manifest(dir / "missing.tsv"), DataError);
  fs::remove_all(dir);
}

TEST(Data, ToyCorpusIsDeterministic) {
  const auto a = generate_toy_corpus(7), b = generate_toy_corpus(7), c = generate_toy_corpus(8);
  ASSERT_EQ(a.size(), 10u);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].pcm, b[i].pcm);
  EXPECT_NE(a[0].pcm, c[0].pcm);
}

TEST(Data, EpochsCoverEveryUtteranceOnce) {
  const Dataset& data = small_batches().train;
  for (std::uint64_t epoch = 0; epoch < 3; ++epoch) {
    std::multiset<std::size_t> seen;
    for (std::uint64_t s = 1; s <= 5; ++s) {
      const auto b = batch_for_step(data, 2, 1, epoch * 5 + s);
      EXPECT_EQ(b.size(), 2u);
      seen.insert(b.begin(), b.end());
    }
    EXPECT_EQ(seen.size(), 10u);
    EXPECT_EQ(std::set<std::size_t>(seen.begin(), seen.end()).size(), 10u);
  }
}

// ---- trainer ----------------------------------------------------------------

TEST(Trainer, SingleUtteranceLossDecreases) {
  const Workspace& ws = small_batches();
  Trainer t = make_trainer(ws);
  double prev = std::numeric_limits<double>::infinity();
  for (int s = 0; s < 50; ++s) {
    const double loss = t.train_step({3}).loss;
    EXPECT_LT(loss, prev) << "step " << s + 1;
    prev = loss;
  }
}

TEST(Trainer, IdenticalRunsGiveIdenticalTraces) {
  const Workspace& ws = small_batches();
  Trainer a = make_trainer(ws), b = make_trainer(ws);
  for (int s = 0; s < 8; ++s) {
    const StepResult ra = a.train_step(), rb = b.train_step();
    EXPECT_EQ(std::memcmp(&ra.loss, &rb.loss, sizeof(double)), 0);
    EXPECT_EQ(std::memcmp(&ra.grad_norm, &rb.grad_norm, sizeof(double)), 0);
  }
}

TEST(Trainer, ResumeMatchesUninterruptedRun) {
  const Workspace& ws = small_batches();
  Trainer full = make_trainer(ws);
  std::vector<double> expected;
  for (int s = 0; s < 6; ++s) expected.push_back(full.train_step().loss);

  Trainer first = make_trainer(ws);
  for (int s = 0; s < 3; ++s) EXPECT_EQ(first.train_step().loss, expected[s]);
  const auto path = temp_file("resume.ckpt");
  first.save(path);

  Trainer second = make_trainer(ws);
  second.load(path);
  EXPECT_EQ(second.optimizer().steps(), 3u);
  for (int s = 3; s < 6; ++s) EXPECT_EQ(second.train_step().loss, expected[s]);
  const auto pa = full.model().parameters(), pb = second.model().parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_TRUE(oracle::bitwise_equal(pa[i].tensor.data(), pb[i].tensor.data())) << pa[i].name;
  }
  fs::remove(path);
}

TEST(Trainer, CheckpointResaveIsByteIdentical) {
  const Workspace& ws = small_batches();
  Trainer t = make_trainer(ws);
  t.train_step();
  const auto p1 = temp_file("a.ckpt"), p2 = temp_file("b.ckpt");
  t.save(p1);
  write_checkpoint(p2, read_checkpoint(p1));
  EXPECT_EQ(slurp(p1), slurp(p2));
  Trainer u = make_trainer(ws);
  u.load(p1);
  u.save(p2);
  EXPECT_EQ(slurp(p1), slurp(p2));
  fs::remove(p1);
  fs::remove(p2);
}

TEST(Trainer, CheckpointRejectsOtherArchitectures) {
  const Workspace& ws = small_batches();
  Trainer t = make_trainer(ws);
  const auto path = temp_file("arch.ckpt");
  t.save(path);
  RunConfig other = ws.cfg;
  other.model.transducer.enc_hidden = 32;
  Trainer u(other, ws.train, ws.stats, ws.vocab);
  EXPECT_THROW(u.load(path), DataError);
  std::ofstream(path) << "garbage";
  EXPECT_THROW(t.load(path), DataError);
  fs::remove(path);
}

TEST(Trainer, NonFiniteLossNamesTheUtterance) {
  const Workspace& ws = small_batches();
  Dataset data = ws.train;
  data[4].features.mutable_data()[0] = std::numeric_limits<double>::quiet_NaN();
  Trainer t(ws.cfg, data, ws.stats, ws.vocab);
  try {
    t.train_step({2, 4});
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find(data[4].id), std::string::npos) << e.what();
  }
}

TEST(Reports, ParamReportRowsAndAblationCounts) {
  const auto rows = param_report(full_model_config());
  ASSERT_EQ(rows.size(), 5u);
  EXPECT_EQ(rows[4].count, 2624512u);
  EXPECT_EQ(rows[3].count, 2501u * 256u);

  const Workspace ws = testing_models::toy_workspace("ablation", {"training.batch_size=2"});
  const auto abl = run_ablation(ws, 1);
  ASSERT_EQ(abl.size(), 3u);
  EXPECT_EQ(abl[2].frontend_params, abl[0].frontend_params + abl[1].frontend_params);
  EXPECT_EQ(abl[0].global_params, 0u);
  EXPECT_EQ(abl[1].local_params, 0u);
}
