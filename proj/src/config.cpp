#include "convrnnt/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "convrnnt/errors.hpp"

namespace convrnnt {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto* end = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key + ": expected a boolean, got '" + v + "'");
}

std::vector<std::size_t> parse_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_u64(key, trim(item)));
  return out;
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::string fmt_list(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(v[i]);
  }
  return out;
}

struct Field {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

template <typename T, typename Member>
Field size_field(std::string key, Member member) {
  return {key,
          [member](const RunConfig& c) { return std::to_string(member(const_cast<RunConfig&>(c))); },
          [member, key](RunConfig& c, const std::string& v) {
            member(c) = static_cast<T>(parse_u64(key, v));
          }};
}

template <typename Member>
Field double_field(std::string key, Member member) {
  return {key, [member](const RunConfig& c) { return fmt_double(member(const_cast<RunConfig&>(c))); },
          [member, key](RunConfig& c, const std::string& v) { member(c) = parse_double(key, v); }};
}

template <typename Member>
Field bool_field(std::string key, Member member) {
  return {key,
          [member](const RunConfig& c) { return std::string(member(const_cast<RunConfig&>(c)) ? "true" : "false"); },
          [member, key](RunConfig& c, const std::string& v) { member(c) = parse_bool(key, v); }};
}

template <typename Member>
Field string_field(std::string key, Member member) {
  return {key, [member](const RunConfig& c) { return member(const_cast<RunConfig&>(c)); },
          [member](RunConfig& c, const std::string& v) { member(c) = v; }};
}

#define CFG(expr) [](RunConfig& c) -> auto& { return c.expr; }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      // model architecture (hashed)
      size_field<int>("features.sample_rate_hz", CFG(model.features.sample_rate_hz)),
      double_field("features.window_ms", CFG(model.features.window_ms)),
      double_field("features.hop_ms", CFG(model.features.hop_ms)),
      size_field<std::size_t>("features.n_bands", CFG(model.features.n_bands)),
      size_field<std::size_t>("features.fft_size", CFG(model.features.fft_size)),
      double_field("features.log_floor", CFG(model.features.log_floor)),
      size_field<std::size_t>("features.stack", CFG(model.features.stack)),
      size_field<std::size_t>("features.skip", CFG(model.features.skip)),
      bool_field("local.enabled", CFG(model.local.enabled)),
      {"local.channels", [](const RunConfig& c) { return fmt_list(c.model.local.channels); },
       [](RunConfig& c, const std::string& v) { c.model.local.channels = parse_list("local.channels", v); }},
      size_field<std::size_t>("local.kernel_t", CFG(model.local.kernel_t)),
      size_field<std::size_t>("local.kernel_f", CFG(model.local.kernel_f)),
      bool_field("global.enabled", CFG(model.global.enabled)),
      size_field<std::size_t>("global.n_blocks", CFG(model.global.n_blocks)),
      size_field<std::size_t>("global.expansion", CFG(model.global.expansion)),
      size_field<std::size_t>("global.dw_kernel", CFG(model.global.dw_kernel)),
      size_field<std::size_t>("global.se_divisor", CFG(model.global.se_divisor)),
      size_field<std::size_t>("global.se_min", CFG(model.global.se_min)),
      double_field("global.dropout", CFG(model.global.dropout)),
      bool_field("global.one_based_dilation", CFG(model.global.one_based_dilation)),
      size_field<std::size_t>("transducer.enc_layers", CFG(model.transducer.enc_layers)),
      size_field<std::size_t>("transducer.enc_hidden", CFG(model.transducer.enc_hidden)),
      size_field<std::size_t>("transducer.proj_dim", CFG(model.transducer.proj_dim)),
      size_field<std::size_t>("transducer.label_layers", CFG(model.transducer.label_layers)),
      size_field<std::size_t>("transducer.label_hidden", CFG(model.transducer.label_hidden)),
      size_field<std::size_t>("transducer.embed_dim", CFG(model.transducer.embed_dim)),
      size_field<std::size_t>("transducer.joint_dim", CFG(model.transducer.joint_dim)),
      size_field<std::size_t>("transducer.vocab_size", CFG(model.transducer.vocab_size)),
      double_field("transducer.dropout", CFG(model.transducer.dropout)),
      double_field("transducer.l2", CFG(model.transducer.l2)),
      // everything below is not part of the architecture hash
      double_field("optimizer.beta1", CFG(optimizer.beta1)),
      double_field("optimizer.beta2", CFG(optimizer.beta2)),
      double_field("optimizer.epsilon", CFG(optimizer.epsilon)),
      double_field("optimizer.peak_lr", CFG(optimizer.peak_lr)),
      size_field<std::uint64_t>("optimizer.warmup_steps", CFG(optimizer.warmup_steps)),
      size_field<std::size_t>("training.batch_size", CFG(training.batch_size)),
      size_field<std::uint64_t>("training.max_steps", CFG(training.max_steps)),
      size_field<std::uint64_t>("training.eval_interval", CFG(training.eval_interval)),
      size_field<std::uint64_t>("training.seed", CFG(training.seed)),
      double_field("training.target_nll", CFG(training.target_nll)),
      double_field("training.target_exact", CFG(training.target_exact)),
      bool_field("training.spec_augment", CFG(training.spec_augment)),
      size_field<std::size_t>("training.max_symbols_per_frame", CFG(training.max_symbols_per_frame)),
      double_field("specaug.max_time_mask_ratio", CFG(spec_augment.max_time_mask_ratio)),
      double_field("specaug.adaptive_multiplicity", CFG(spec_augment.adaptive_multiplicity)),
      double_field("specaug.max_freq_mask_ratio", CFG(spec_augment.max_freq_mask_ratio)),
      size_field<std::size_t>("specaug.n_freq_masks", CFG(spec_augment.n_freq_masks)),
      string_field("data.train_manifest", CFG(data.train_manifest)),
      string_field("data.eval_manifest", CFG(data.eval_manifest)),
      string_field("data.vocab", CFG(data.vocab)),
      string_field("data.stats", CFG(data.stats)),
  };
  return table;
}

#undef CFG

bool is_model_key(const std::string& key) {
  return key.starts_with("features.") || key.starts_with("local.") || key.starts_with("global.") ||
         key.starts_with("transducer.");
}

// The local encoder reads each frame as stack × n_bands.
void sync_derived(RunConfig& cfg) {
  cfg.model.local.in_channels = cfg.model.features.stack;
  cfg.model.local.freq = cfg.model.features.n_bands;
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  if (optimizer.warmup_steps == 0) throw ConfigError("optimizer.warmup_steps must be positive");
  if (!(optimizer.peak_lr > 0.0)) throw ConfigError("optimizer.peak_lr must be positive");
  if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0 && optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0)) {
    throw ConfigError("optimizer betas must lie in [0, 1)");
  }
  if (training.batch_size == 0) throw ConfigError("training.batch_size must be positive");
  if (training.eval_interval == 0) throw ConfigError("training.eval_interval must be positive");
  if (training.max_symbols_per_frame == 0) throw ConfigError("training.max_symbols_per_frame must be positive");
  const auto& sa = spec_augment;
  for (double r : {sa.max_time_mask_ratio, sa.adaptive_multiplicity, sa.max_freq_mask_ratio}) {
    if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("specaug ratios must lie in [0, 1]");
  }
}

std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream is(text);
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("line " + std::to_string(lineno) + ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    if (!section.empty()) key = section + "." + key;
    out.emplace_back(key, trim(line.substr(eq + 1)));
  }
  return out;
}

void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value) {
  const std::string k = key == "optimizer.l2" ? "transducer.l2" : key;
  for (const auto& f : fields()) {
    if (f.key == k) {
      f.set(cfg, value);
      sync_derived(cfg);
      return;
    }
  }
  throw ConfigError("unknown configuration key '" + key + "'");
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value");
  apply_setting(cfg, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

RunConfig run_config_from_text(const std::string& text) {
  RunConfig cfg;
  sync_derived(cfg);
  for (const auto& [k, v] : parse_config_text(text)) apply_setting(cfg, k, v);
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  RunConfig cfg = run_config_from_text(ss.str());
  for (const auto& o : overrides) apply_override(cfg, o);
  return cfg;
}

std::string to_config_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& f : fields()) out += f.key + " = " + f.get(cfg) + "\n";
  return out;
}

std::uint64_t model_config_hash(const ModelConfig& model) {
  RunConfig cfg;
  cfg.model = model;
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& f : fields()) {
    if (!is_model_key(f.key)) continue;
    const std::string line = f.key + "=" + f.get(cfg) + "\n";
    for (unsigned char ch : line) {
      h ^= ch;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

ModelConfig full_model_config() {
  ModelConfig m;
  m.local.channels = {100, 100, 64, 64};
  m.transducer = TransducerConfig{};
  return m;
}

RunConfig desk_run_config() {
  RunConfig cfg;
  cfg.model.local.channels = {4, 4, 3, 3};
  auto& t = cfg.model.transducer;
  t.enc_layers = 2;
  t.enc_hidden = 64;
  t.proj_dim = 64;
  t.label_layers = 1;
  t.label_hidden = 64;
  t.embed_dim = 32;
  t.joint_dim = 64;
  t.vocab_size = 0;
  t.dropout = 0.0;
  cfg.model.global.dropout = 0.0;
  cfg.optimizer.warmup_steps = 100;
  cfg.optimizer.peak_lr = 0.002;
  cfg.training.spec_augment = false;
  cfg.training.target_nll = 0.1;
  cfg.training.target_exact = 1.0;
  sync_derived(cfg);
  return cfg;
}

}  // namespace convrnnt
