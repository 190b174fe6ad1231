#include "scone/objective.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>

#include "scone/errors.hpp"

namespace scone {

void ConstraintSpec::validate() const {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("constraint spec: alpha must lie in (0, 1)");
  if (!(tau >= 0.0) || !std::isfinite(tau)) throw ConfigError("constraint spec: tau must be >= 0");
  if (!(eta <= 0.0) || !std::isfinite(eta)) throw ConfigError("constraint spec: eta must be <= 0");
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

ad::Var sigmoid(ad::Tape& tape, ad::Var z) {
  ad::Var one = tape.lift(1.0);
  if (tape.value(z) >= 0.0) return tape.div(one, tape.add(one, tape.exp(tape.neg(z))));
  ad::Var e = tape.exp(z);
  return tape.div(e, tape.add(one, e));
}

namespace {

double clamp_energy(double e) { return std::clamp(e, -kEnergyClamp, kEnergyClamp); }

ad::Var clamp_energy(ad::Tape& tape, ad::Var e) {
  ad::Var lo = tape.lift(-kEnergyClamp);
  ad::Var above = tape.max2(e, lo);
  return tape.neg(tape.max2(tape.neg(above), lo));
}

ad::Var clamped_energy_of(const BoundModel& bound, const Vector& x) {
  ad::Tape& tape = bound.tape();
  const auto f = forward(bound, x);
  return clamp_energy(tape, energy(tape, f));
}

ad::Var mean(ad::Tape& tape, const std::vector<ad::Var>& terms) {
  if (terms.empty()) throw std::invalid_argument("mean over an empty batch");
  return tape.mul(tape.sum(terms), 1.0 / static_cast<double>(terms.size()));
}

// Shared by the margin and classification constraints: one forward pass per
// ID sample.
struct IdTerms {
  ad::Var margin;
  ad::Var cls;
};

IdTerms id_terms(const BoundModel& bound, const LabeledSet& id, double eta) {
  ad::Tape& tape = bound.tape();
  std::vector<ad::Var> margin;
  std::vector<ad::Var> cls;
  margin.reserve(id.size());
  cls.reserve(id.size());
  for (std::size_t j = 0; j < id.size(); ++j) {
    const auto f = forward(bound, id.xs[j]);
    ad::Var e = clamp_energy(tape, energy(tape, f));
    margin.push_back(sigmoid(tape, tape.mul(bound.ood_scale(), tape.sub(e, tape.lift(eta)))));
    cls.push_back(loss_cls(tape, f, id.ys[j]));
  }
  return {mean(tape, margin), mean(tape, cls)};
}

}  // namespace

ad::Var loss_wild(const BoundModel& bound, const WildBatch& wild) {
  ad::Tape& tape = bound.tape();
  std::vector<ad::Var> terms;
  terms.reserve(wild.size());
  for (const auto& x : wild.xs) {
    ad::Var e = clamped_energy_of(bound, x);
    terms.push_back(sigmoid(tape, tape.neg(tape.mul(bound.ood_scale(), e))));
  }
  return mean(tape, terms);
}

ad::Var constraint_margin(const BoundModel& bound, const FeatureSet& id_xs, double eta) {
  ad::Tape& tape = bound.tape();
  std::vector<ad::Var> terms;
  terms.reserve(id_xs.size());
  for (const auto& x : id_xs) {
    ad::Var e = clamped_energy_of(bound, x);
    terms.push_back(sigmoid(tape, tape.mul(bound.ood_scale(), tape.sub(e, tape.lift(eta)))));
  }
  return mean(tape, terms);
}

ad::Var constraint_cls(const BoundModel& bound, const LabeledSet& id) {
  ad::Tape& tape = bound.tape();
  std::vector<ad::Var> terms;
  terms.reserve(id.size());
  for (std::size_t j = 0; j < id.size(); ++j) terms.push_back(loss_cls(tape, forward(bound, id.xs[j]), id.ys[j]));
  return mean(tape, terms);
}

double alm_penalty(double c, double lambda, double rho) {
  if (lambda + rho * c >= 0.0) return lambda * c + 0.5 * rho * c * c;
  return -lambda * lambda / (2.0 * rho);
}

ad::Var alm_penalty(ad::Tape& tape, ad::Var c, double lambda, double rho) {
  const double cv = tape.value(c);
  if (lambda + rho * cv >= 0.0) {
    ad::Var linear = tape.mul(c, lambda);
    ad::Var quad = tape.mul(tape.mul(c, c), 0.5 * rho);
    return tape.add(linear, quad);
  }
  return tape.lift(-lambda * lambda / (2.0 * rho));
}

void AlmState::update(double c1, double c2, std::optional<std::pair<double, double>> previous) {
  lambda1 = std::max(0.0, lambda1 + rho * c1);
  lambda2 = std::max(0.0, lambda2 + rho * c2);
  if (!previous) return;
  auto stalled = [](double now, double before) {
    const double v = std::max(now, 0.0);
    return v > 0.0 && v > 0.9 * std::max(before, 0.0);
  };
  if (stalled(c1, previous->first) || stalled(c2, previous->second)) rho = std::min(rho * growth, rho_max);
}

AlmTerms alm_terms(const BoundModel& bound, const WildBatch& wild, const LabeledSet& id, const ConstraintSpec& spec,
                   const AlmState& alm) {
  ad::Tape& tape = bound.tape();
  AlmTerms t;
  t.wild = loss_wild(bound, wild);
  const IdTerms it = id_terms(bound, id, spec.eta);
  t.margin = it.margin;
  t.cls = it.cls;
  ad::Var c1 = tape.add(t.margin, -spec.alpha);
  ad::Var c2 = tape.add(t.cls, -spec.tau);
  t.total = tape.add(tape.add(t.wild, alm_penalty(tape, c1, alm.lambda1, alm.rho)),
                     alm_penalty(tape, c2, alm.lambda2, alm.rho));
  return t;
}

ad::Var alm_unconstrained_loss(const BoundModel& bound, const WildBatch& wild, const LabeledSet& id,
                               const ConstraintSpec& spec, const AlmState& alm) {
  return alm_terms(bound, wild, id, spec, alm).total;
}

namespace woods {

ad::Var loss_wild(const BoundModel& bound, const WildBatch& wild) {
  ad::Tape& tape = bound.tape();
  ad::Var one = tape.lift(1.0);
  std::vector<ad::Var> terms;
  for (const auto& x : wild.xs) {
    ad::Var e = clamped_energy_of(bound, x);
    terms.push_back(tape.div(one, tape.add(one, tape.exp(tape.mul(bound.ood_scale(), e)))));
  }
  return mean(tape, terms);
}

ad::Var constraint_in(const BoundModel& bound, const FeatureSet& id_xs) {
  ad::Tape& tape = bound.tape();
  ad::Var one = tape.lift(1.0);
  std::vector<ad::Var> terms;
  for (const auto& x : id_xs) {
    ad::Var e = clamped_energy_of(bound, x);
    terms.push_back(tape.div(one, tape.add(one, tape.exp(tape.neg(tape.mul(bound.ood_scale(), e))))));
  }
  return mean(tape, terms);
}

}  // namespace woods

double loss_wild_value(const MlpModel& model, const FeatureSet& wild) {
  if (wild.empty()) throw std::invalid_argument("loss_wild_value: empty set");
  double s = 0.0;
  for (const auto& x : wild) s += sigmoid(-model.ood_scale * clamp_energy(energy(logits(model, x))));
  return s / static_cast<double>(wild.size());
}

double constraint_margin_value(const MlpModel& model, const FeatureSet& id_xs, double eta) {
  if (id_xs.empty()) throw std::invalid_argument("constraint_margin_value: empty set");
  double s = 0.0;
  for (const auto& x : id_xs) s += sigmoid(model.ood_scale * (clamp_energy(energy(logits(model, x))) - eta));
  return s / static_cast<double>(id_xs.size());
}

double constraint_cls_value(const MlpModel& model, const LabeledSet& id) {
  if (id.empty()) throw std::invalid_argument("constraint_cls_value: empty set");
  double s = 0.0;
  for (std::size_t j = 0; j < id.size(); ++j) s += loss_cls(logits(model, id.xs[j]), id.ys[j]);
  return s / static_cast<double>(id.size());
}

double alm_loss_value(const MlpModel& model, const FeatureSet& wild, const LabeledSet& id, const ConstraintSpec& spec,
                      const AlmState& alm) {
  const double c1 = constraint_margin_value(model, id.xs, spec.eta) - spec.alpha;
  const double c2 = constraint_cls_value(model, id) - spec.tau;
  return loss_wild_value(model, wild) + alm_penalty(c1, alm.lambda1, alm.rho) + alm_penalty(c2, alm.lambda2, alm.rho);
}

ZeroOneReport zero_one_report(const MlpModel& model, const FeatureSet& wild, const LabeledSet& id,
                              const ConstraintSpec& spec) {
  ZeroOneReport r;
  if (!wild.empty()) {
    std::size_t in = 0;
    for (const auto& x : wild)
      if (energy(logits(model, x)) <= 0.0) ++in;
    r.objective = static_cast<double>(in) / static_cast<double>(wild.size());
  }
  if (!id.empty()) {
    std::size_t above = 0;
    std::size_t wrong = 0;
    for (std::size_t j = 0; j < id.size(); ++j) {
      const auto f = logits(model, id.xs[j]);
      if (energy(f) >= spec.eta) ++above;
      if (predict(f) != id.ys[j]) ++wrong;
    }
    r.c1 = static_cast<double>(above) / static_cast<double>(id.size());
    r.c2 = static_cast<double>(wrong) / static_cast<double>(id.size());
  }
  return r;
}

void OptimizerSettings::validate() const {
  if (batch_size == 0) throw ConfigError("optimizer: batch_size must be positive");
  if (!(learning_rate > 0.0)) throw ConfigError("optimizer: learning rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("optimizer: momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("optimizer: weight decay must be >= 0");
  if (warmup_epochs < 0 || inner_epochs < 0 || outer_iterations < 0)
    throw ConfigError("optimizer: epoch counts must be >= 0");
  if (!(rho_init > 0.0) || !(rho_growth > 1.0) || !(rho_max >= rho_init))
    throw ConfigError("optimizer: need rho_init > 0, rho_growth > 1, rho_max >= rho_init");
  if (!(tau_factor > 0.0)) throw ConfigError("optimizer: tau_factor must be positive");
  if (!(max_grad_norm >= 0.0)) throw ConfigError("optimizer: max_grad_norm must be >= 0");
  if (!(min_ood_scale >= 0.0)) throw ConfigError("optimizer: min_ood_scale must be >= 0");
}

void write_history_csv(std::ostream& out, const TrainHistory& h) {
  out << "outer,epoch,loss_wild,c1,c2,lambda1,lambda2,rho\n" << std::setprecision(17);
  for (const auto& e : h.epochs) {
    out << e.outer << ',' << e.epoch << ',' << e.loss_wild << ',' << e.c1 << ',' << e.c2 << ',' << e.lambda1 << ','
        << e.lambda2 << ',' << e.rho << '\n';
  }
}

namespace {

class Trainer {
 public:
  Trainer(const MlpModel& init, const LabeledSet& id_train, WildMixture& wild, const OptimizerSettings& opt,
          std::uint64_t seed)
      : model_(init), id_(id_train), wild_(wild), opt_(opt), rng_(seed) {
    params_ = model_.flat_parameters();
    velocity_.assign(params_.size(), 0.0);
    order_.resize(id_.size());
    std::iota(order_.begin(), order_.end(), std::size_t{0});
  }

  MlpModel& model() { return model_; }
  TrainHistory& history() { return history_; }

  std::size_t steps_per_epoch() const { return (id_.size() + opt_.batch_size - 1) / opt_.batch_size; }

  void shuffle() { std::shuffle(order_.begin(), order_.end(), rng_); }

  LabeledSet id_batch(std::size_t step) const {
    const std::size_t begin = step * opt_.batch_size;
    const std::size_t end = std::min(begin + opt_.batch_size, id_.size());
    return id_.subset(std::span<const std::size_t>(order_).subspan(begin, end - begin));
  }

  // One momentum-SGD step on the gradient held by `bound`'s tape for `root`.
  void step(const BoundModel& bound, ad::Var root, double lr) {
    const double value = tape_.value(root);
    if (!std::isfinite(value)) throw TrainingError("training diverged: loss is not finite", history_);
    const auto grad = bound.gradient(tape_.backward(root));
    const std::size_t last = params_.size() - 1;  // the OOD scale; not decayed
    double norm2 = 0.0;
    for (double g : grad) norm2 += g * g;
    if (!std::isfinite(norm2)) throw TrainingError("training diverged: gradient is not finite", history_);
    const double norm = std::sqrt(norm2);
    const double scale = opt_.max_grad_norm > 0.0 && norm > opt_.max_grad_norm ? opt_.max_grad_norm / norm : 1.0;
    for (std::size_t i = 0; i < params_.size(); ++i) {
      double g = grad[i] * scale;
      if (i != last) g += opt_.weight_decay * params_[i];
      velocity_[i] = opt_.momentum * velocity_[i] + g;
      params_[i] -= lr * velocity_[i];
    }
    params_[last] = std::max(params_[last], opt_.min_ood_scale);
    for (double p : params_)
      if (!std::isfinite(p)) throw TrainingError("training diverged: parameters are not finite", history_);
    model_.set_flat_parameters(params_);
  }

  ad::Tape& tape() { return tape_; }

 private:
  MlpModel model_;
  const LabeledSet& id_;
  WildMixture& wild_;
  const OptimizerSettings& opt_;
  std::mt19937_64 rng_;
  std::vector<double> params_;
  std::vector<double> velocity_;
  std::vector<std::size_t> order_;
  ad::Tape tape_;
  TrainHistory history_;
};

double scheduled_lr(const OptimizerSettings& opt, int epoch, int total) {
  double lr = opt.learning_rate;
  for (double m : opt.lr_milestones)
    if (total > 0 && static_cast<double>(epoch) >= m * total) lr *= opt.lr_decay;
  return lr;
}

}  // namespace

TrainResult train(const MlpModel& init, const LabeledSet& id_train, WildMixture& wild, const ConstraintSpec& spec_in,
                  const OptimizerSettings& opt, std::uint64_t seed) {
  spec_in.validate();
  opt.validate();
  id_train.validate();
  if (id_train.empty()) throw ConfigError("train: empty ID training set");
  if (id_train.dim() != init.input_dim()) throw ShapeError("train: ID features do not match the model input");

  Trainer tr(init, id_train, wild, opt, seed);
  TrainHistory& hist = tr.history();
  ConstraintSpec spec = spec_in;

  // A fixed wild reference sample for reporting the objective.
  const FeatureSet reference = opt.reference_wild_size > 0 ? wild.sample(opt.reference_wild_size).batch.xs : FeatureSet{};
  auto objective_now = [&] { return reference.empty() ? 0.0 : loss_wild_value(tr.model(), reference); };

  for (int epoch = 0; epoch < opt.warmup_epochs; ++epoch) {
    tr.shuffle();
    double cls_sum = 0.0;
    const std::size_t steps = tr.steps_per_epoch();
    for (std::size_t s = 0; s < steps; ++s) {
      const LabeledSet batch = tr.id_batch(s);
      tr.tape().clear();
      BoundModel bound(tr.model(), tr.tape());
      ad::Var loss = constraint_cls(bound, batch);
      cls_sum += tr.tape().value(loss);
      tr.step(bound, loss, opt.learning_rate);
    }
    hist.epochs.push_back({0, epoch, objective_now(), constraint_margin_value(tr.model(), id_train.xs, spec.eta) - spec.alpha,
                           cls_sum / static_cast<double>(steps), 0.0, 0.0, opt.rho_init});
  }
  hist.warmup_loss = constraint_cls_value(tr.model(), id_train);
  if (spec.tau == 0.0) spec.tau = opt.tau_factor * hist.warmup_loss;
  hist.tau = spec.tau;

  AlmState alm;
  alm.rho = opt.rho_init;
  alm.growth = opt.rho_growth;
  alm.rho_max = opt.rho_max;
  alm.inner_epochs = opt.inner_epochs;

  const int total_epochs = opt.outer_iterations * opt.inner_epochs;
  std::optional<std::pair<double, double>> previous;
  int global_epoch = 0;
  for (int outer = 1; outer <= opt.outer_iterations; ++outer) {
    for (int epoch = 0; epoch < opt.inner_epochs; ++epoch, ++global_epoch) {
      const double lr = scheduled_lr(opt, global_epoch, total_epochs);
      tr.shuffle();
      double wild_sum = 0.0;
      double c1_sum = 0.0;
      double c2_sum = 0.0;
      const std::size_t steps = tr.steps_per_epoch();
      for (std::size_t s = 0; s < steps; ++s) {
        const LabeledSet batch = tr.id_batch(s);
        const WildBatch wb = wild.sample(opt.batch_size).batch;
        tr.tape().clear();
        BoundModel bound(tr.model(), tr.tape());
        const AlmTerms t = alm_terms(bound, wb, batch, spec, alm);
        wild_sum += tr.tape().value(t.wild);
        c1_sum += tr.tape().value(t.margin) - spec.alpha;
        c2_sum += tr.tape().value(t.cls) - spec.tau;
        tr.step(bound, t.total, lr);
      }
      const double n = static_cast<double>(steps);
      hist.epochs.push_back({outer, epoch, wild_sum / n, c1_sum / n, c2_sum / n, alm.lambda1, alm.lambda2, alm.rho});
    }
    const double c1 = constraint_margin_value(tr.model(), id_train.xs, spec.eta) - spec.alpha;
    const double c2 = constraint_cls_value(tr.model(), id_train) - spec.tau;
    const double obj = objective_now();
    if (!std::isfinite(c1) || !std::isfinite(c2) || !std::isfinite(obj))
      throw TrainingError("training diverged: non-finite constraint residual", hist);
    hist.outer.push_back({outer, obj, c1, c2, alm.lambda1, alm.lambda2, alm.rho});
    alm.update(c1, c2, previous);
    previous = std::make_pair(c1, c2);
  }

  return {tr.model(), hist, spec};
}

}  // namespace scone
