#include "scone/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "scone/errors.hpp"
#include "scone/eval.hpp"

namespace scone {

const char* run_kind_name(RunKind kind) {
  switch (kind) {
    case RunKind::Synth: return "synth";
    case RunKind::Idx: return "idx";
    case RunKind::MarginSweep: return "margin-sweep";
    case RunKind::Propcheck: return "propcheck";
    case RunKind::Gradcheck: return "gradcheck";
  }
  return "?";
}

RunKind parse_run_kind(const std::string& name) {
  for (RunKind k : {RunKind::Synth, RunKind::Idx, RunKind::MarginSweep, RunKind::Propcheck, RunKind::Gradcheck})
    if (name == run_kind_name(k)) return k;
  throw ConfigError("unknown run kind '" + name + "'");
}

RunConfig default_config(RunKind kind) {
  RunConfig cfg;
  cfg.kind = kind;
  switch (kind) {
    case RunKind::Idx:
      cfg.hidden = {256};
      cfg.activation = Activation::Relu;
      cfg.opt.learning_rate = 0.001;
      cfg.wild = {0.3, 0.4};
      break;
    case RunKind::Propcheck:
      cfg.constraints.eta = -1.0;
      break;
    default:
      break;
  }
  return cfg;
}

void RunConfig::validate() const {
  synth.validate();
  wild.validate();
  constraints.validate();
  opt.validate();
  if (eta_grid.empty()) throw ConfigError("eta_grid must not be empty");
  MarginGrid{eta_grid, {}}.validate();
  if (hidden.empty()) throw ConfigError("hidden must list at least one layer width");
  for (auto h : hidden)
    if (h == 0) throw ConfigError("hidden layer widths must be positive");
  if (val_size == 0) throw ConfigError("val_size must be positive");
  if (kind == RunKind::Idx) {
    for (const auto* p : {&id_images, &id_labels, &semantic_images}) {
      if (p->empty()) throw ConfigError("idx runs need id_images, id_labels and semantic_images");
      if (!std::ifstream(*p)) throw ConfigError("cannot open dataset file '" + *p + "'");
    }
    if (!(corruption_sigma > 0.0)) throw ConfigError("corruption_sigma must be positive");
    if (idx_subset < 10) throw ConfigError("idx_subset is too small");
  }
  if (!(prop_lipschitz > 0.0) || !(prop_delta > 0.0)) throw ConfigError("prop_lipschitz and prop_delta must be positive");
  if (hist_bins == 0) throw ConfigError("hist_bins must be positive");
  if (threads == 0) throw ConfigError("threads must be positive");
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string normalize_key(std::string key) {
  key = trim(key);
  while (!key.empty() && key.front() == '-') key.erase(key.begin());
  std::replace(key.begin(), key.end(), '-', '_');
  return key;
}

double to_double(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty())
    throw ConfigError("bad number for '" + key + "': '" + text + "'");
  return v;
}

std::uint64_t to_uint(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty())
    throw ConfigError("bad non-negative integer for '" + key + "': '" + text + "'");
  return v;
}

bool to_bool(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  if (t == "true" || t == "1" || t == "yes") return true;
  if (t == "false" || t == "0" || t == "no") return false;
  throw ConfigError("bad boolean for '" + key + "': '" + text + "'");
}

std::vector<std::string> tokens(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, sep)) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<double> to_doubles(const std::string& key, const std::string& text) {
  std::vector<double> out;
  for (const auto& t : tokens(text, ',')) out.push_back(to_double(key, t));
  return out;
}

std::array<double, 2> to_point(const std::string& key, const std::string& text) {
  const auto v = to_doubles(key, text);
  if (v.size() != 2) throw ConfigError("'" + key + "' needs two comma-separated numbers");
  return {v[0], v[1]};
}

std::string fmt(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

template <typename Seq, typename F>
std::string join(const Seq& seq, const char* sep, F f) {
  std::string out;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (i) out += sep;
    out += f(seq[i]);
  }
  return out;
}

}  // namespace

Settings parse_settings(std::istream& in) {
  Settings out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    std::string key = normalize_key(line.substr(0, eq));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    out.emplace_back(std::move(key), trim(line.substr(eq + 1)));
  }
  return out;
}

Settings read_settings_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  return parse_settings(in);
}

void apply_setting(RunConfig& c, const std::string& raw_key, const std::string& v) {
  const std::string key = normalize_key(raw_key);
  using Setter = std::function<void()>;
  const std::map<std::string, Setter> setters = {
      {"kind", [&] { c.kind = parse_run_kind(trim(v)); }},
      {"seed", [&] { c.seed = to_uint(key, v); }},
      {"out_dir", [&] { c.out_dir = trim(v); }},
      {"run_id", [&] { c.run_id = trim(v); }},
      {"n_per_class", [&] { c.synth.n_per_class = to_uint(key, v); }},
      {"id_means",
       [&] {
         c.synth.id_means.clear();
         for (const auto& p : tokens(v, ';')) c.synth.id_means.push_back(to_point(key, p));
       }},
      {"id_std", [&] { c.synth.id_std = to_double(key, v); }},
      {"cov_shift", [&] { c.synth.cov_shift = to_point(key, v); }},
      {"cov_extra_std", [&] { c.synth.cov_extra_std = to_double(key, v); }},
      {"sem_mean", [&] { c.synth.sem_mean = to_point(key, v); }},
      {"sem_std", [&] { c.synth.sem_std = to_double(key, v); }},
      {"val_size", [&] { c.val_size = to_uint(key, v); }},
      {"id_images", [&] { c.id_images = trim(v); }},
      {"id_labels", [&] { c.id_labels = trim(v); }},
      {"semantic_images", [&] { c.semantic_images = trim(v); }},
      {"idx_subset", [&] { c.idx_subset = to_uint(key, v); }},
      {"corruption_sigma", [&] { c.corruption_sigma = to_double(key, v); }},
      {"pi_c", [&] { c.wild.pi_c = to_double(key, v); }},
      {"pi_s", [&] { c.wild.pi_s = to_double(key, v); }},
      {"hidden",
       [&] {
         c.hidden.clear();
         for (const auto& t : tokens(v, ',')) c.hidden.push_back(to_uint(key, t));
       }},
      {"activation", [&] { c.activation = parse_activation(trim(v)); }},
      {"alpha", [&] { c.constraints.alpha = to_double(key, v); }},
      {"tau", [&] { c.constraints.tau = to_double(key, v); }},
      {"eta",
       [&] {
         if (trim(v) == "auto") {
           c.eta_auto = true;
         } else {
           c.eta_auto = false;
           c.constraints.eta = to_double(key, v);
         }
       }},
      {"eta_grid", [&] { c.eta_grid = to_doubles(key, v); }},
      {"batch_size", [&] { c.opt.batch_size = to_uint(key, v); }},
      {"lr", [&] { c.opt.learning_rate = to_double(key, v); }},
      {"momentum", [&] { c.opt.momentum = to_double(key, v); }},
      {"weight_decay", [&] { c.opt.weight_decay = to_double(key, v); }},
      {"warmup_epochs", [&] { c.opt.warmup_epochs = static_cast<int>(to_uint(key, v)); }},
      {"inner_epochs", [&] { c.opt.inner_epochs = static_cast<int>(to_uint(key, v)); }},
      {"outer_iterations", [&] { c.opt.outer_iterations = static_cast<int>(to_uint(key, v)); }},
      {"rho_init", [&] { c.opt.rho_init = to_double(key, v); }},
      {"rho_growth", [&] { c.opt.rho_growth = to_double(key, v); }},
      {"rho_max", [&] { c.opt.rho_max = to_double(key, v); }},
      {"tau_factor", [&] { c.opt.tau_factor = to_double(key, v); }},
      {"lr_milestones", [&] { c.opt.lr_milestones = to_doubles(key, v); }},
      {"lr_decay", [&] { c.opt.lr_decay = to_double(key, v); }},
      {"min_ood_scale", [&] { c.opt.min_ood_scale = to_double(key, v); }},
      {"max_grad_norm", [&] { c.opt.max_grad_norm = to_double(key, v); }},
      {"reference_wild_size", [&] { c.opt.reference_wild_size = to_uint(key, v); }},
      {"prop_lipschitz", [&] { c.prop_lipschitz = to_double(key, v); }},
      {"prop_delta", [&] { c.prop_delta = to_double(key, v); }},
      {"prop_trained", [&] { c.prop_trained = to_bool(key, v); }},
      {"gradcheck_models", [&] { c.gradcheck_models = to_uint(key, v); }},
      {"hist_bins", [&] { c.hist_bins = to_uint(key, v); }},
      {"threads", [&] { c.threads = to_uint(key, v); }},
  };
  const auto it = setters.find(key);
  if (it == setters.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second();
}

RunConfig build_config(const Settings& settings, std::optional<RunKind> kind) {
  RunKind k = kind.value_or(RunKind::Synth);
  for (const auto& [key, value] : settings)
    if (normalize_key(key) == "kind") k = parse_run_kind(trim(value));
  RunConfig cfg = default_config(k);
  for (const auto& [key, value] : settings) apply_setting(cfg, key, value);
  cfg.kind = k;
  return cfg;
}

std::string echo_config(const RunConfig& c) {
  std::ostringstream o;
  auto point = [](const std::array<double, 2>& p) { return fmt(p[0]) + "," + fmt(p[1]); };
  o << "kind = " << run_kind_name(c.kind) << '\n';
  o << "seed = " << c.seed << '\n';
  o << "out_dir = " << c.out_dir << '\n';
  o << "run_id = " << c.run_id << '\n';
  o << "n_per_class = " << c.synth.n_per_class << '\n';
  o << "id_means = " << join(c.synth.id_means, ";", point) << '\n';
  o << "id_std = " << fmt(c.synth.id_std) << '\n';
  o << "cov_shift = " << point(c.synth.cov_shift) << '\n';
  o << "cov_extra_std = " << fmt(c.synth.cov_extra_std) << '\n';
  o << "sem_mean = " << point(c.synth.sem_mean) << '\n';
  o << "sem_std = " << fmt(c.synth.sem_std) << '\n';
  o << "val_size = " << c.val_size << '\n';
  o << "id_images = " << c.id_images << '\n';
  o << "id_labels = " << c.id_labels << '\n';
  o << "semantic_images = " << c.semantic_images << '\n';
  o << "idx_subset = " << c.idx_subset << '\n';
  o << "corruption_sigma = " << fmt(c.corruption_sigma) << '\n';
  o << "pi_c = " << fmt(c.wild.pi_c) << '\n';
  o << "pi_s = " << fmt(c.wild.pi_s) << '\n';
  o << "hidden = " << join(c.hidden, ",", [](std::size_t h) { return std::to_string(h); }) << '\n';
  o << "activation = " << activation_name(c.activation) << '\n';
  o << "alpha = " << fmt(c.constraints.alpha) << '\n';
  o << "tau = " << fmt(c.constraints.tau) << '\n';
  o << "eta = " << (c.eta_auto ? std::string("auto") : fmt(c.constraints.eta)) << '\n';
  o << "eta_grid = " << join(c.eta_grid, ",", fmt) << '\n';
  o << "batch_size = " << c.opt.batch_size << '\n';
  o << "lr = " << fmt(c.opt.learning_rate) << '\n';
  o << "momentum = " << fmt(c.opt.momentum) << '\n';
  o << "weight_decay = " << fmt(c.opt.weight_decay) << '\n';
  o << "warmup_epochs = " << c.opt.warmup_epochs << '\n';
  o << "inner_epochs = " << c.opt.inner_epochs << '\n';
  o << "outer_iterations = " << c.opt.outer_iterations << '\n';
  o << "rho_init = " << fmt(c.opt.rho_init) << '\n';
  o << "rho_growth = " << fmt(c.opt.rho_growth) << '\n';
  o << "rho_max = " << fmt(c.opt.rho_max) << '\n';
  o << "tau_factor = " << fmt(c.opt.tau_factor) << '\n';
  o << "lr_milestones = " << join(c.opt.lr_milestones, ",", fmt) << '\n';
  o << "lr_decay = " << fmt(c.opt.lr_decay) << '\n';
  o << "min_ood_scale = " << fmt(c.opt.min_ood_scale) << '\n';
  o << "max_grad_norm = " << fmt(c.opt.max_grad_norm) << '\n';
  o << "reference_wild_size = " << c.opt.reference_wild_size << '\n';
  o << "prop_lipschitz = " << fmt(c.prop_lipschitz) << '\n';
  o << "prop_delta = " << fmt(c.prop_delta) << '\n';
  o << "prop_trained = " << (c.prop_trained ? "true" : "false") << '\n';
  o << "gradcheck_models = " << c.gradcheck_models << '\n';
  o << "hist_bins = " << c.hist_bins << '\n';
  o << "threads = " << c.threads << '\n';
  return o.str();
}

}  // namespace scone
