#include "scone/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include <json.hpp>

#include "scone/objective.hpp"

namespace scone {

double GradcheckReport::max_rel_error() const {
  double m = 0.0;
  for (const auto& t : terms) m = std::max(m, t.max_rel_error);
  return m;
}

std::string GradcheckReport::to_json() const {
  nlohmann::ordered_json j;
  j["models"] = models;
  j["max_parameters"] = max_parameters;
  j["step"] = step;
  j["max_rel_error"] = max_rel_error();
  auto& arr = j["terms"] = nlohmann::ordered_json::array();
  for (const auto& t : terms) arr.push_back({{"name", t.name}, {"coordinates", t.coordinates}, {"max_rel_error", t.max_rel_error}});
  return j.dump(2);
}

namespace {

using TapeLoss = std::function<ad::Var(const BoundModel&)>;
using ValueLoss = std::function<double(const MlpModel&)>;

double compare(const MlpModel& model, const TapeLoss& taped, const ValueLoss& value, double h, std::size_t& coords) {
  ad::Tape tape;
  BoundModel bound(model, tape);
  const auto grad = bound.gradient(tape.backward(taped(bound)));

  MlpModel probe = model;
  std::vector<double> theta = model.flat_parameters();
  double worst = 0.0;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double saved = theta[i];
    theta[i] = saved + h;
    probe.set_flat_parameters(theta);
    const double up = value(probe);
    theta[i] = saved - h;
    probe.set_flat_parameters(theta);
    const double down = value(probe);
    theta[i] = saved;
    const double fd = (up - down) / (2.0 * h);
    worst = std::max(worst, std::abs(grad[i] - fd) / std::max(1.0, std::abs(fd)));
  }
  coords += theta.size();
  return worst;
}

}  // namespace

GradcheckReport run_gradcheck(std::uint64_t seed, std::size_t models, double step) {
  std::mt19937_64 rng(seed);
  auto uniform = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  auto integer = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };

  GradcheckReport report;
  report.models = models;
  report.step = step;
  report.terms = {{"loss_cls", 0, 0.0}, {"loss_wild", 0, 0.0}, {"constraint_margin", 0, 0.0}, {"alm", 0, 0.0}};

  for (std::size_t m = 0; m < models; ++m) {
    const std::size_t d = integer(2, 6);
    const std::size_t k = integer(2, 4);
    std::vector<std::size_t> dims{d};
    const std::size_t depth = integer(1, 2);
    for (std::size_t l = 0; l < depth; ++l) dims.push_back(integer(4, 24));
    dims.push_back(k);
    MlpModel model = init_model(dims, Activation::Tanh, rng());
    for (auto& b : model.biases)
      for (double& v : b) v = uniform(-0.5, 0.5);
    model.ood_scale = uniform(0.5, 2.0);
    report.max_parameters = std::max(report.max_parameters, model.parameter_count());

    LabeledSet id;
    WildBatch wild;
    for (std::size_t i = 0, n = integer(3, 8); i < n; ++i) {
      Vector x(d);
      for (double& v : x) v = uniform(-2.0, 2.0);
      id.xs.push_back(x);
      id.ys.push_back(integer(0, k - 1));
    }
    for (std::size_t i = 0, n = integer(3, 8); i < n; ++i) {
      Vector x(d);
      for (double& v : x) v = uniform(-3.0, 3.0);
      wild.xs.push_back(x);
    }
    ConstraintSpec spec{uniform(0.01, 0.5), uniform(0.05, 1.5), uniform(-5.0, 0.0)};
    AlmState alm;
    alm.lambda1 = uniform(0.0, 2.0);
    alm.lambda2 = uniform(0.0, 2.0);
    alm.rho = uniform(0.5, 10.0);

    const Vector& x0 = id.xs.front();
    const std::size_t y0 = id.ys.front();
    std::size_t* counts[] = {&report.terms[0].coordinates, &report.terms[1].coordinates,
                             &report.terms[2].coordinates, &report.terms[3].coordinates};
    double errs[4];
    errs[0] = compare(
        model, [&](const BoundModel& b) { return loss_cls(b.tape(), forward(b, x0), y0); },
        [&](const MlpModel& p) { return loss_cls(logits(p, x0), y0); }, step, *counts[0]);
    errs[1] = compare(
        model, [&](const BoundModel& b) { return loss_wild(b, wild); },
        [&](const MlpModel& p) { return loss_wild_value(p, wild.xs); }, step, *counts[1]);
    errs[2] = compare(
        model, [&](const BoundModel& b) { return constraint_margin(b, id.xs, spec.eta); },
        [&](const MlpModel& p) { return constraint_margin_value(p, id.xs, spec.eta); }, step, *counts[2]);
    errs[3] = compare(
        model, [&](const BoundModel& b) { return alm_unconstrained_loss(b, wild, id, spec, alm); },
        [&](const MlpModel& p) { return alm_loss_value(p, wild.xs, id, spec, alm); }, step, *counts[3]);
    for (int t = 0; t < 4; ++t) report.terms[t].max_rel_error = std::max(report.terms[t].max_rel_error, errs[t]);
  }
  return report;
}

}  // namespace scone
