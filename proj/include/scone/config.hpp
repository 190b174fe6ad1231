#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "scone/data.hpp"
#include "scone/model.hpp"
#include "scone/objective.hpp"

namespace scone {

enum class RunKind { Synth, Idx, MarginSweep, Propcheck, Gradcheck };

const char* run_kind_name(RunKind kind);
RunKind parse_run_kind(const std::string& name);

/// Everything one invocation of the runner needs. Defaults depend on the kind
/// (see default_config); every field maps to one key of the config file.
struct RunConfig {
  RunKind kind = RunKind::Synth;
  std::uint64_t seed = 0;
  std::string out_dir = "runs";
  std::string run_id;  // empty: timestamp

  // Data
  SyntheticSpec synth;
  std::size_t val_size = 1000;
  std::string id_images;
  std::string id_labels;
  std::string semantic_images;
  std::size_t idx_subset = 5000;
  double corruption_sigma = 0.3;
  WildConfig wild{0.5, 0.1};

  // Model
  std::vector<std::size_t> hidden{64, 64};
  Activation activation = Activation::Tanh;

  // Objective
  ConstraintSpec constraints;
  bool eta_auto = false;
  std::vector<double> eta_grid = {0.0, -0.1, -0.5, -1.0, -2.0, -10.0, -20.0, -50.0};
  OptimizerSettings opt;

  // Proposition check
  double prop_lipschitz = 1.0;
  double prop_delta = 0.2;
  bool prop_trained = false;

  std::size_t gradcheck_models = 20;
  std::size_t hist_bins = 50;
  std::size_t threads = 1;

  /// Throws ConfigError.
  void validate() const;
};

RunConfig default_config(RunKind kind);

/// Ordered key/value pairs as read from a file or the command line.
using Settings = std::vector<std::pair<std::string, std::string>>;

/// `key = value` per line; `#` starts a comment; blank lines are ignored.
/// Keys may use '-' or '_'. Throws ConfigError on malformed lines.
Settings parse_settings(std::istream& in);
Settings read_settings_file(const std::string& path);

/// Builds a config from the kind-specific defaults, then applies `settings` in
/// order (later keys win). A "kind" key, if present, selects the defaults.
RunConfig build_config(const Settings& settings, std::optional<RunKind> kind = std::nullopt);

/// Applies one key. Throws ConfigError for unknown keys or bad values.
void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value);

/// Every key with its effective value, in the config-file syntax. Reading the
/// echo back yields an identical config.
std::string echo_config(const RunConfig& cfg);

}  // namespace scone
