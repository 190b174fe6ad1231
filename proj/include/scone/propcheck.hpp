#pragma once

// Pointwise check of the two-class margin guarantee: if every ID point is
// classified correctly with energy below eta, f_bar is L-Lipschitz, and each
// covariate point lies within delta of a same-label ID point, then
// eta < -log 2 - L*delta/2 forces each covariate point to be classified
// correctly and detected IN.
//
// Two-class convention: logits (f_bar/2, -f_bar/2). Label 0 corresponds to
// f_bar > 0 and label 1 to f_bar < 0.

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "scone/data.hpp"
#include "scone/model.hpp"

namespace scone::prop {

using ScalarField = std::function<double(std::span<const double>)>;

/// -log 2 - L*delta/2.
double eta_bound(double lipschitz, double delta);

/// -log(e^{f/2} + e^{-f/2}), evaluated as -(|f|/2 + log1p(e^{-|f|})).
double two_class_energy(double fbar);

/// Largest |f(a) - f(b)| / ||a - b||_2 over all sample pairs, skipping
/// coincident points. A lower bound on the true Lipschitz constant.
double empirical_lipschitz(const ScalarField& fbar, const FeatureSet& samples);

struct ProximityPair {
  Vector id_point;
  Vector cov_point;
  std::size_t label = 0;  // 0 or 1
};

struct LipschitzCase {
  ScalarField fbar;
  double lipschitz = 1.0;
  // True when `lipschitz` is a known upper bound (constructed functions).
  // Otherwise the report is flagged estimate-only.
  bool lipschitz_asserted = true;
  std::vector<ProximityPair> pairs;
  double delta = 0.0;
  double eta = 0.0;

  /// Throws ConfigError unless L > 0, delta > 0, labels are 0/1 and every pair
  /// is closer than delta.
  void validate() const;
};

struct Violation {
  std::size_t pair = 0;
  Vector cov_point;
  std::size_t label = 0;
  double fbar_id = 0.0;
  double fbar_cov = 0.0;
  double energy_cov = 0.0;
};

struct PropReport {
  double eta_bound = 0.0;
  double eta = 0.0;
  bool eta_below_bound = false;
  bool estimate_only = false;
  std::vector<bool> premises_hold;     // per pair: ID point correct with |f_bar| > -2 eta - 2 log 2
  std::vector<bool> conclusions_hold;  // per pair: covariate point correct and energy < 0
  std::vector<Violation> violations;   // premise held, conclusion failed

  std::size_t premise_count() const;
  std::size_t conclusion_count() const;
};

bool premise_holds(double fbar_id, std::size_t label, double eta);
bool conclusion_holds(double fbar_cov, std::size_t label);

PropReport verify_proposition(const LipschitzCase& c);

std::string to_json(const PropReport& report);

/// f_bar = logit_0 - logit_1 of a two-class model.
ScalarField model_fbar(const MlpModel& model);

/// Pairs every covariate point with its nearest same-label ID point; delta is
/// set just above the largest pair distance and L to the empirical estimate
/// over all paired points, so the report is estimate-only.
LipschitzCase model_case(const MlpModel& model, const LabeledSet& id, const LabeledSet& cov, double eta);

}  // namespace scone::prop
