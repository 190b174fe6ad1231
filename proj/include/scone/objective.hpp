#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "scone/autodiff.hpp"
#include "scone/data.hpp"
#include "scone/model.hpp"

namespace scone {

/// Constraint levels of the margin-constrained program. eta = 0 is the
/// unmargined (WOODS) program.
struct ConstraintSpec {
  double alpha = 0.05;  // budget for ID samples above the margin
  double tau = 0.0;     // classification-loss budget; 0 means "twice the warm-up loss"
  double eta = 0.0;     // energy margin, <= 0

  /// Checks alpha in (0,1), eta <= 0 and tau >= 0 (0 = resolve at train time).
  void validate() const;
};

/// Energies enter the sigmoid surrogates clamped to this range.
inline constexpr double kEnergyClamp = 60.0;

double sigmoid(double z);
ad::Var sigmoid(ad::Tape& tape, ad::Var z);

// ---------------------------------------------------------------------------
// Surrogate terms on a tape. All of them run the forward pass through the
// bound model, so gradients reach every parameter and the OOD scale w.

/// (1/m) sum_i 1 / (1 + exp(w * E(x_i))) over wild samples.
ad::Var loss_wild(const BoundModel& bound, const WildBatch& wild);

/// (1/n) sum_j 1 / (1 + exp(-w * (E(x_j) - eta))) over ID features.
ad::Var constraint_margin(const BoundModel& bound, const FeatureSet& id_xs, double eta);

/// (1/n) sum_j cross-entropy over labeled ID samples.
ad::Var constraint_cls(const BoundModel& bound, const LabeledSet& id);

/// Inequality-form augmented Lagrangian penalty for a residual c <= 0:
/// lambda*c + rho/2*c^2 when lambda + rho*c >= 0, else -lambda^2/(2 rho).
double alm_penalty(double c, double lambda, double rho);
ad::Var alm_penalty(ad::Tape& tape, ad::Var c, double lambda, double rho);

struct AlmState {
  double lambda1 = 0.0;  // margin constraint
  double lambda2 = 0.0;  // classification constraint
  double rho = 1.0;
  double growth = 2.0;
  double rho_max = 1e4;
  int inner_epochs = 5;

  /// lambda <- max(0, lambda + rho*c) for both constraints, then rho grows by
  /// `growth` (capped at rho_max) unless every positive residual shrank by at
  /// least a factor 0.9 relative to `previous`.
  void update(double c1, double c2, std::optional<std::pair<double, double>> previous);
};

/// The per-term taped values that make up one augmented Lagrangian.
struct AlmTerms {
  ad::Var total;
  ad::Var wild;
  ad::Var margin;
  ad::Var cls;
};

/// loss_wild + penalty(constraint_margin - alpha) + penalty(constraint_cls - tau).
/// The ID batch is forwarded once and shared by both constraints.
AlmTerms alm_terms(const BoundModel& bound, const WildBatch& wild, const LabeledSet& id,
                   const ConstraintSpec& spec, const AlmState& alm);
ad::Var alm_unconstrained_loss(const BoundModel& bound, const WildBatch& wild, const LabeledSet& id,
                               const ConstraintSpec& spec, const AlmState& alm);

/// The unmargined objective written out directly in its original form, kept
/// as a separate code path so the eta = 0 reduction can be checked.
namespace woods {
ad::Var loss_wild(const BoundModel& bound, const WildBatch& wild);
ad::Var constraint_in(const BoundModel& bound, const FeatureSet& id_xs);
}  // namespace woods

// ---------------------------------------------------------------------------
// Tape-free evaluation of the same quantities.

double loss_wild_value(const MlpModel& model, const FeatureSet& wild);
double constraint_margin_value(const MlpModel& model, const FeatureSet& id_xs, double eta);
double constraint_cls_value(const MlpModel& model, const LabeledSet& id);
double alm_loss_value(const MlpModel& model, const FeatureSet& wild, const LabeledSet& id, const ConstraintSpec& spec,
                      const AlmState& alm);

/// Exact indicator version of the program, used as an evaluation oracle.
struct ZeroOneReport {
  double objective = 0.0;  // fraction of wild samples with E <= 0
  double c1 = 0.0;         // fraction of ID samples with E >= eta
  double c2 = 0.0;         // fraction of ID samples misclassified
};

ZeroOneReport zero_one_report(const MlpModel& model, const FeatureSet& wild, const LabeledSet& id,
                              const ConstraintSpec& spec);

// ---------------------------------------------------------------------------
// Training

struct OptimizerSettings {
  std::size_t batch_size = 128;
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  int warmup_epochs = 5;
  int inner_epochs = 5;
  int outer_iterations = 20;
  double rho_init = 1.0;
  double rho_growth = 2.0;
  double rho_max = 1e4;
  double tau_factor = 2.0;  // tau = tau_factor * warm-up loss when ConstraintSpec::tau == 0
  // Learning rate halves at these fractions of the total ALM epochs.
  std::vector<double> lr_milestones{0.5, 0.75, 0.9};
  double lr_decay = 0.5;
  std::size_t reference_wild_size = 2048;
  // The OOD scale is projected onto [min_ood_scale, inf) after every step; a
  // negative scale inverts both sigmoid terms.
  double min_ood_scale = 0.1;
  // Gradients are rescaled to at most this global norm; 0 disables clipping.
  double max_grad_norm = 5.0;

  void validate() const;
};

struct EpochRecord {
  int outer = 0;  // 0 = warm-up
  int epoch = 0;
  double loss_wild = 0.0;
  double c1 = 0.0;
  double c2 = 0.0;
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  double rho = 0.0;
};

/// Full-pool values at the end of one inner phase, before the multiplier
/// update they drive.
struct OuterRecord {
  int outer = 0;
  double objective = 0.0;
  double c1 = 0.0;
  double c2 = 0.0;
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  double rho = 0.0;
};

struct TrainHistory {
  double warmup_loss = 0.0;
  double tau = 0.0;
  std::vector<EpochRecord> epochs;
  std::vector<OuterRecord> outer;
};

/// CSV `outer,epoch,loss_wild,c1,c2,lambda1,lambda2,rho`, one row per epoch.
void write_history_csv(std::ostream& out, const TrainHistory& history);

class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& what, TrainHistory history)
      : std::runtime_error(what), history_(std::move(history)) {}
  const TrainHistory& history() const { return history_; }

 private:
  TrainHistory history_;
};

struct TrainResult {
  MlpModel model;
  TrainHistory history;
  ConstraintSpec spec;  // tau resolved
};

/// Warm-up on cross-entropy, then the outer augmented Lagrangian loop with
/// minibatch SGD + momentum for the inner problems. Deterministic per seed;
/// throws TrainingError (carrying the history so far) on divergence.
TrainResult train(const MlpModel& init, const LabeledSet& id_train, WildMixture& wild, const ConstraintSpec& spec,
                  const OptimizerSettings& opt, std::uint64_t seed);

}  // namespace scone
