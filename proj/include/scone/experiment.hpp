#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "scone/config.hpp"
#include "scone/eval.hpp"
#include "scone/objective.hpp"
#include "scone/propcheck.hpp"

namespace scone {

/// Everything a training run consumes. The wild pools feed the mixture the
/// trainer samples from; `eval` holds the held-out test sets and the wild
/// validation sample used for out%.
struct ExperimentData {
  LabeledSet id_train;
  FeatureSet wild_id_pool;
  LabeledSet wild_cov_pool;
  FeatureSet wild_sem_pool;
  EvalSets eval;
  std::size_t num_classes = 0;

  std::size_t input_dim() const { return id_train.dim(); }
};

/// Synthetic clusters: the training draw is split in half between labeled ID
/// training data and the ID part of the wild pool; test and validation sets
/// come from independent draws.
ExperimentData prepare_synthetic(const RunConfig& cfg);

/// MNIST-style IDX files: ID images are split into training, wild-pool,
/// covariate and test parts; covariate parts are Gaussian-corrupted; the
/// semantic file feeds the wild pool, validation and test.
ExperimentData prepare_idx(const RunConfig& cfg);

ExperimentData prepare_data(const RunConfig& cfg);

MlpModel initial_model(const RunConfig& cfg, const ExperimentData& data, std::uint64_t seed);

struct RunOutcome {
  double eta = 0.0;
  std::uint64_t seed = 0;
  bool diverged = false;
  std::string error;
  std::optional<MlpModel> model;
  ConstraintSpec spec;  // tau resolved when training got past warm-up
  TrainHistory history;
  MetricsReport report;  // NaN metrics when diverged
};

/// Trains one model at margin `eta`. Divergence is reported, not thrown.
RunOutcome run_training(const RunConfig& cfg, const ExperimentData& data, double eta, std::uint64_t seed);

struct SweepOutcome {
  MarginGrid grid;  // out_frac is NaN for diverged entries
  std::vector<RunOutcome> runs;
  std::size_t chosen = 0;

  double chosen_eta() const { return grid.etas[chosen]; }
};

/// One run per grid entry with seed base + index, then margin selection on
/// the validation out%. Entries run on up to cfg.threads workers.
SweepOutcome run_sweep(const RunConfig& cfg, const ExperimentData& data);

/// Same as select_margin_index but ignores diverged (non-finite) entries.
std::size_t select_margin_robust(const MarginGrid& grid);

// ---------------------------------------------------------------------------
// Run directories

/// SCONE_OUT_DIR when set, else cfg.out_dir.
std::filesystem::path output_root(const RunConfig& cfg);

/// Creates `<root>/<run_id or kind-timestamp>` with a numeric suffix when the
/// name is taken.
std::filesystem::path create_run_dir(const RunConfig& cfg);

/// Row label stored in metrics files; independent of the wall clock.
std::string metrics_run_id(const RunConfig& cfg, double eta);

inline constexpr const char* kConfigFile = "config.txt";
inline constexpr const char* kMetricsCsv = "metrics.csv";
inline constexpr const char* kMetricsJson = "metrics.json";
inline constexpr const char* kHistoryCsv = "history.csv";
inline constexpr const char* kModelFile = "model.txt";
inline constexpr const char* kHistogramCsv = "histogram.csv";

struct RunArtifacts {
  std::filesystem::path dir;
  std::vector<MetricsRow> rows;  // final row last
  std::optional<SweepOutcome> sweep;
  RunOutcome final_run;
};

/// Writes config echo, metrics CSV/JSON, history, snapshot and histogram.
/// After divergence the snapshot and histogram are skipped.
void write_artifacts(const RunArtifacts& a, const RunConfig& cfg, const ExperimentData& data);

enum class ExitCode : int { Ok = 0, Failure = 1, Config = 2, Diverged = 3 };

/// Full `run` path: optional sweep (eta = auto), final training, artifacts.
ExitCode execute_run(const RunConfig& cfg, std::filesystem::path* dir_out = nullptr);

/// Full `sweep` path: grid training, selection, artifacts of the chosen run.
ExitCode execute_sweep(const RunConfig& cfg, std::filesystem::path* dir_out = nullptr);

/// Analytic proposition cases, plus a trained two-class synthetic model when
/// cfg.prop_trained. Writes propcheck.json next to the config echo.
ExitCode execute_propcheck(const RunConfig& cfg, std::filesystem::path* dir_out = nullptr);

/// Writes gradcheck.json; fails when the worst relative error is >= 1e-5.
ExitCode execute_gradcheck(const RunConfig& cfg, std::filesystem::path* dir_out = nullptr);

/// The analytic one-dimensional case f_bar(z) = L z with ID points at +-2 and
/// covariate points moved delta/2 toward the origin.
prop::LipschitzCase linear_case(double lipschitz, double delta, double eta);

/// The same geometry with the sign of f_bar flipped between ID and covariate
/// points, which breaks the Lipschitz premise.
prop::LipschitzCase breach_case(double delta, double eta);

}  // namespace scone
