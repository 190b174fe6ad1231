#include "scone/propcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <json.hpp>

#include "scone/errors.hpp"

namespace scone::prop {

namespace {

double distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

}  // namespace

double eta_bound(double lipschitz, double delta) {
  if (!(lipschitz > 0.0) || !(delta > 0.0)) throw ConfigError("eta_bound: need L > 0 and delta > 0");
  return -std::numbers::ln2 - 0.5 * lipschitz * delta;
}

double two_class_energy(double fbar) {
  const double a = std::abs(fbar);
  return -(0.5 * a + std::log1p(std::exp(-a)));
}

double empirical_lipschitz(const ScalarField& fbar, const FeatureSet& samples) {
  if (samples.size() < 2) throw std::invalid_argument("empirical_lipschitz: need at least two samples");
  std::vector<double> values;
  values.reserve(samples.size());
  for (const auto& x : samples) values.push_back(fbar(x));
  double best = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    for (std::size_t j = i + 1; j < samples.size(); ++j) {
      const double d = distance(samples[i], samples[j]);
      if (d == 0.0) continue;
      best = std::max(best, std::abs(values[i] - values[j]) / d);
    }
  }
  return best;
}

void LipschitzCase::validate() const {
  if (!fbar) throw ConfigError("lipschitz case: no function given");
  if (!(lipschitz > 0.0) || !(delta > 0.0)) throw ConfigError("lipschitz case: need L > 0 and delta > 0");
  for (const auto& p : pairs) {
    if (p.label > 1) throw ConfigError("lipschitz case: labels must be 0 or 1");
    if (p.id_point.size() != p.cov_point.size()) throw ConfigError("lipschitz case: pair dimensions differ");
    if (!(distance(p.id_point, p.cov_point) < delta)) throw ConfigError("lipschitz case: pair is not delta-close");
  }
}

std::size_t PropReport::premise_count() const {
  return static_cast<std::size_t>(std::count(premises_hold.begin(), premises_hold.end(), true));
}

std::size_t PropReport::conclusion_count() const {
  return static_cast<std::size_t>(std::count(conclusions_hold.begin(), conclusions_hold.end(), true));
}

bool premise_holds(double fbar_id, std::size_t label, double eta) {
  const bool correct = label == 0 ? fbar_id > 0.0 : fbar_id < 0.0;
  return correct && std::abs(fbar_id) > -2.0 * eta - 2.0 * std::numbers::ln2;
}

bool conclusion_holds(double fbar_cov, std::size_t label) {
  const bool correct = label == 0 ? fbar_cov > 0.0 : fbar_cov < 0.0;
  return correct && two_class_energy(fbar_cov) < 0.0;
}

PropReport verify_proposition(const LipschitzCase& c) {
  c.validate();
  PropReport r;
  r.eta = c.eta;
  r.eta_bound = eta_bound(c.lipschitz, c.delta);
  r.eta_below_bound = c.eta < r.eta_bound;
  r.estimate_only = !c.lipschitz_asserted;
  for (std::size_t i = 0; i < c.pairs.size(); ++i) {
    const auto& p = c.pairs[i];
    const double f_id = c.fbar(p.id_point);
    const double f_cov = c.fbar(p.cov_point);
    const bool premise = premise_holds(f_id, p.label, c.eta);
    const bool conclusion = conclusion_holds(f_cov, p.label);
    r.premises_hold.push_back(premise);
    r.conclusions_hold.push_back(conclusion);
    if (premise && !conclusion) r.violations.push_back({i, p.cov_point, p.label, f_id, f_cov, two_class_energy(f_cov)});
  }
  return r;
}

std::string to_json(const PropReport& r) {
  nlohmann::ordered_json j;
  j["eta"] = r.eta;
  j["eta_bound"] = r.eta_bound;
  j["eta_below_bound"] = r.eta_below_bound;
  j["estimate_only"] = r.estimate_only;
  j["pairs"] = r.premises_hold.size();
  j["premises_held"] = r.premise_count();
  j["conclusions_held"] = r.conclusion_count();
  auto& v = j["violations"] = nlohmann::ordered_json::array();
  for (const auto& x : r.violations) {
    nlohmann::ordered_json e;
    e["pair"] = x.pair;
    e["cov_point"] = x.cov_point;
    e["label"] = x.label;
    e["fbar_id"] = x.fbar_id;
    e["fbar_cov"] = x.fbar_cov;
    e["energy_cov"] = x.energy_cov;
    v.push_back(std::move(e));
  }
  return j.dump(2);
}

ScalarField model_fbar(const MlpModel& model) {
  if (model.num_classes() != 2) throw ConfigError("model_fbar: model must have exactly two classes");
  return [&model](std::span<const double> x) {
    const auto f = logits(model, x);
    return f[0] - f[1];
  };
}

LipschitzCase model_case(const MlpModel& model, const LabeledSet& id, const LabeledSet& cov, double eta) {
  if (id.empty() || cov.empty()) throw ConfigError("model_case: empty ID or covariate set");
  LipschitzCase c;
  c.fbar = model_fbar(model);
  c.eta = eta;
  c.lipschitz_asserted = false;
  double max_d = 0.0;
  FeatureSet paired;
  for (std::size_t i = 0; i < cov.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t arg = id.size();
    for (std::size_t j = 0; j < id.size(); ++j) {
      if (id.ys[j] != cov.ys[i]) continue;
      const double d = distance(id.xs[j], cov.xs[i]);
      if (d < best) {
        best = d;
        arg = j;
      }
    }
    if (arg == id.size()) continue;
    c.pairs.push_back({id.xs[arg], cov.xs[i], cov.ys[i]});
    paired.push_back(id.xs[arg]);
    paired.push_back(cov.xs[i]);
    max_d = std::max(max_d, best);
  }
  c.delta = std::nextafter(max_d, std::numeric_limits<double>::infinity()) + 1e-12;
  c.lipschitz = paired.size() >= 2 ? std::max(empirical_lipschitz(c.fbar, paired), 1e-12) : 1.0;
  return c;
}

}  // namespace scone::prop
