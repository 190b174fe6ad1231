#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "scone/data.hpp"
#include "scone/model.hpp"

namespace scone {

/// Higher energy means "more OOD" everywhere in this module; a score equal
/// to the threshold counts as IN.
struct MetricsReport {
  double id_acc = 0.0;
  double ood_acc = 0.0;  // accuracy on covariate-shifted samples
  double fpr95 = 0.0;    // semantic OOD declared IN at the 95%-ID threshold
  double auroc = 0.0;    // ID vs semantic OOD
  double out_frac = 0.0;
  double threshold = 0.0;
};

/// Smallest t drawn from `id_energies` with #{E <= t} / n >= keep.
double threshold_at_id_quantile(std::span<const double> id_energies, double keep);

/// Fraction of OOD scores <= threshold_at_id_quantile(id, tpr).
double fpr_at_tpr(std::span<const double> id_energies, std::span<const double> ood_energies, double tpr = 0.95);

/// P(E_ood > E_id) + 1/2 P(E_ood == E_id).
double auroc(std::span<const double> id_energies, std::span<const double> ood_energies);
double auroc_pairwise(std::span<const double> id_energies, std::span<const double> ood_energies);
double auroc_rank_sum(std::span<const double> id_energies, std::span<const double> ood_energies);

std::vector<double> energies(const MlpModel& model, const FeatureSet& xs);
double accuracy(const MlpModel& model, const LabeledSet& set);

/// Fraction of samples the zero-threshold detector marks OUT (E > 0).
double out_fraction(const MlpModel& model, const FeatureSet& wild_val);

struct EvalSets {
  LabeledSet id_test;
  LabeledSet cov_test;
  FeatureSet sem_test;
  FeatureSet wild_val;
};

MetricsReport evaluate(const MlpModel& model, const EvalSets& sets, double tpr = 0.95);

// ---------------------------------------------------------------------------
// Margin selection

struct MarginGrid {
  std::vector<double> etas;       // strictly decreasing, all <= 0
  std::vector<double> out_fracs;  // one per eta once computed

  static std::vector<double> default_etas() { return {0.0, -0.1, -0.5, -1.0, -2.0, -10.0, -20.0, -50.0}; }

  void validate() const;
};

inline constexpr double kMinPhaseDrop = 0.05;

/// Scans from the first (least negative) eta and returns the eta right after
/// the largest consecutive drop in out_frac. When no drop reaches
/// kMinPhaseDrop, returns the first grid value.
double select_margin(const MarginGrid& grid);
std::size_t select_margin_index(const MarginGrid& grid);

// ---------------------------------------------------------------------------
// Serialization

/// `run_id,eta,pi_c,pi_s,id_acc,ood_acc,fpr95,auroc,out_frac,threshold`
struct MetricsRow {
  std::string run_id;
  double eta = 0.0;
  double pi_c = 0.0;
  double pi_s = 0.0;
  MetricsReport report;
};

void write_metrics_csv_header(std::ostream& out);
void write_metrics_csv_row(std::ostream& out, const MetricsRow& row);
std::string metrics_json(const MetricsRow& row);

struct EnergyHistogram {
  std::vector<double> edges;  // bins + 1
  std::vector<std::size_t> id;
  std::vector<std::size_t> cov;
  std::vector<std::size_t> sem;
};

/// Equal-width bins spanning the pooled min..max energies.
EnergyHistogram energy_histogram(std::span<const double> id, std::span<const double> cov, std::span<const double> sem,
                                 std::size_t bins);

/// CSV `bin_left,bin_right,count_id,count_cov,count_sem`.
void write_histogram_csv(std::ostream& out, const EnergyHistogram& h);

}  // namespace scone
