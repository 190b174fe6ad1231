#include "scone/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <random>
#include <stdexcept>

#include "scone/errors.hpp"

namespace scone {

const char* activation_name(Activation a) { return a == Activation::Tanh ? "tanh" : "relu"; }

Activation parse_activation(const std::string& name) {
  if (name == "tanh") return Activation::Tanh;
  if (name == "relu") return Activation::Relu;
  throw ConfigError("unknown activation '" + name + "'");
}

std::size_t MlpModel::parameter_count() const {
  std::size_t n = 1;
  for (std::size_t l = 0; l < weights.size(); ++l) n += weights[l].size() + biases[l].size();
  return n;
}

std::vector<double> MlpModel::flat_parameters() const {
  std::vector<double> flat;
  flat.reserve(parameter_count());
  for (std::size_t l = 0; l < weights.size(); ++l) {
    flat.insert(flat.end(), weights[l].begin(), weights[l].end());
    flat.insert(flat.end(), biases[l].begin(), biases[l].end());
  }
  flat.push_back(ood_scale);
  return flat;
}

void MlpModel::set_flat_parameters(std::span<const double> flat) {
  if (flat.size() != parameter_count()) throw ShapeError("set_flat_parameters: wrong parameter count");
  std::size_t k = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    for (double& v : weights[l]) v = flat[k++];
    for (double& v : biases[l]) v = flat[k++];
  }
  ood_scale = flat[k];
}

void MlpModel::validate() const {
  if (layer_dims.size() < 2) throw ShapeError("model needs at least an input and an output layer");
  for (std::size_t d : layer_dims)
    if (d == 0) throw ShapeError("layer dimensions must be positive");
  if (num_classes() < 2) throw ShapeError("model needs K >= 2 classes");
  if (weights.size() != layer_dims.size() - 1 || biases.size() != weights.size())
    throw ShapeError("layer count does not match layer_dims");
  for (std::size_t l = 0; l < weights.size(); ++l) {
    if (weights[l].size() != layer_dims[l] * layer_dims[l + 1] || biases[l].size() != layer_dims[l + 1])
      throw ShapeError("layer " + std::to_string(l) + " parameter shape mismatch");
  }
  for (double v : flat_parameters())
    if (!std::isfinite(v)) throw std::invalid_argument("model has non-finite parameters");
}

MlpModel make_model(std::vector<std::size_t> layer_dims, Activation activation) {
  MlpModel m;
  m.layer_dims = std::move(layer_dims);
  m.activation = activation;
  for (std::size_t l = 0; l + 1 < m.layer_dims.size(); ++l) {
    m.weights.emplace_back(m.layer_dims[l] * m.layer_dims[l + 1], 0.0);
    m.biases.emplace_back(m.layer_dims[l + 1], 0.0);
  }
  m.validate();
  return m;
}

MlpModel init_model(std::vector<std::size_t> layer_dims, Activation activation, std::uint64_t seed) {
  MlpModel m = make_model(std::move(layer_dims), activation);
  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l < m.weights.size(); ++l) {
    const double limit = std::sqrt(6.0 / static_cast<double>(m.layer_dims[l] + m.layer_dims[l + 1]));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (double& v : m.weights[l]) v = dist(rng);
  }
  return m;
}

BoundModel::BoundModel(const MlpModel& model, ad::Tape& tape) : model_(&model), tape_(&tape) {
  model.validate();
  weights_.resize(model.num_layers());
  biases_.resize(model.num_layers());
  for (std::size_t l = 0; l < model.num_layers(); ++l) {
    weights_[l].reserve(model.weights[l].size());
    for (double v : model.weights[l]) weights_[l].push_back(tape.lift(v));
    biases_[l].reserve(model.biases[l].size());
    for (double v : model.biases[l]) biases_[l].push_back(tape.lift(v));
  }
  ood_scale_ = tape.lift(model.ood_scale);
}

std::vector<double> BoundModel::gradient(const ad::Gradients& grads) const {
  std::vector<double> g;
  g.reserve(model_->parameter_count());
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    for (ad::Var v : weights_[l]) g.push_back(grads[v]);
    for (ad::Var v : biases_[l]) g.push_back(grads[v]);
  }
  g.push_back(grads[ood_scale_]);
  return g;
}

std::vector<ad::Var> forward(const BoundModel& bound, std::span<const double> x) {
  const MlpModel& m = bound.model();
  if (x.size() != m.input_dim())
    throw ShapeError("forward: input has dimension " + std::to_string(x.size()) + ", model expects " +
                     std::to_string(m.input_dim()));
  ad::Tape& tape = bound.tape();
  std::vector<ad::Var> act;
  act.reserve(x.size());
  for (double v : x) act.push_back(tape.lift(v));

  std::vector<ad::Var> next;
  for (std::size_t l = 0; l < m.num_layers(); ++l) {
    const std::size_t in = m.layer_dims[l];
    const std::size_t out = m.layer_dims[l + 1];
    const bool hidden = l + 1 < m.num_layers();
    next.clear();
    next.reserve(out);
    std::span<const ad::Var> w(bound.weights_[l]);
    for (std::size_t o = 0; o < out; ++o) {
      ad::Var z = tape.add(tape.dot(w.subspan(o * in, in), act), bound.biases_[l][o]);
      if (hidden) z = m.activation == Activation::Tanh ? tape.tanh(z) : tape.relu(z);
      next.push_back(z);
    }
    act.swap(next);
  }
  return act;
}

std::vector<double> logits(const MlpModel& m, std::span<const double> x) {
  if (x.size() != m.input_dim())
    throw ShapeError("logits: input has dimension " + std::to_string(x.size()) + ", model expects " +
                     std::to_string(m.input_dim()));
  std::vector<double> act(x.begin(), x.end());
  std::vector<double> next;
  for (std::size_t l = 0; l < m.num_layers(); ++l) {
    const std::size_t in = m.layer_dims[l];
    const std::size_t out = m.layer_dims[l + 1];
    const bool hidden = l + 1 < m.num_layers();
    next.assign(out, 0.0);
    for (std::size_t o = 0; o < out; ++o) {
      const double* row = m.weights[l].data() + o * in;
      double z = 0.0;
      for (std::size_t i = 0; i < in; ++i) z += row[i] * act[i];
      z += m.biases[l][o];
      if (hidden) z = m.activation == Activation::Tanh ? std::tanh(z) : (z > 0.0 ? z : 0.0);
      next[o] = z;
    }
    act.swap(next);
  }
  return act;
}

std::size_t predict(std::span<const double> logits) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < logits.size(); ++k)
    if (logits[k] > logits[best]) best = k;
  return best;
}

double energy(std::span<const double> logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  double s = 0.0;
  for (double f : logits) s += std::exp(f - m);
  return -(m + std::log(s));
}

namespace {

// log sum_j exp(logit_j) with the max shift held constant on the tape; the
// shift cancels in the derivative, so gradients are exact softmax weights.
ad::Var log_sum_exp(ad::Tape& tape, std::span<const ad::Var> logits) {
  double m = -std::numeric_limits<double>::infinity();
  for (ad::Var f : logits) m = std::max(m, tape.value(f));
  ad::Var shift = tape.lift(m);
  std::vector<ad::Var> terms;
  terms.reserve(logits.size());
  for (ad::Var f : logits) terms.push_back(tape.exp(tape.sub(f, shift)));
  return tape.add(tape.log(tape.sum(terms)), shift);
}

}  // namespace

ad::Var energy(ad::Tape& tape, std::span<const ad::Var> logits) { return tape.neg(log_sum_exp(tape, logits)); }

Decision detect(double energy_value, const DetectorConfig& cfg) {
  return energy_value > cfg.threshold ? Decision::Out : Decision::In;
}

ad::Var loss_cls(ad::Tape& tape, std::span<const ad::Var> logits, std::size_t label) {
  if (label >= logits.size()) throw std::out_of_range("loss_cls: label out of range");
  return tape.sub(log_sum_exp(tape, logits), logits[label]);
}

double loss_cls(std::span<const double> logits, std::size_t label) {
  if (label >= logits.size()) throw std::out_of_range("loss_cls: label out of range");
  const std::size_t top = predict(logits);
  double rest = 0.0;
  for (std::size_t j = 0; j < logits.size(); ++j)
    if (j != top) rest += std::exp(logits[j] - logits[top]);
  return (logits[top] - logits[label]) + std::log1p(rest);
}

void save_model(std::ostream& out, const MlpModel& m) {
  m.validate();
  out << "scone-mlp 1\n";
  out << "activation " << activation_name(m.activation) << '\n';
  out << "dims " << m.layer_dims.size();
  for (std::size_t d : m.layer_dims) out << ' ' << d;
  out << '\n' << std::setprecision(17);
  out << "ood_scale " << m.ood_scale << '\n';
  for (std::size_t l = 0; l < m.num_layers(); ++l) {
    out << "layer " << l << " weights";
    for (double v : m.weights[l]) out << ' ' << v;
    out << "\nlayer " << l << " biases";
    for (double v : m.biases[l]) out << ' ' << v;
    out << '\n';
  }
}

namespace {

void expect_token(std::istream& in, const std::string& want) {
  std::string tok;
  if (!(in >> tok) || tok != want) throw FormatError("model snapshot: expected '" + want + "', got '" + tok + "'");
}

}  // namespace

MlpModel load_model(std::istream& in) {
  expect_token(in, "scone-mlp");
  int version = 0;
  if (!(in >> version) || version != 1) throw FormatError("model snapshot: unsupported version");
  expect_token(in, "activation");
  std::string act;
  in >> act;
  expect_token(in, "dims");
  std::size_t n = 0;
  if (!(in >> n) || n < 2) throw FormatError("model snapshot: bad dims count");
  std::vector<std::size_t> dims(n);
  for (auto& d : dims)
    if (!(in >> d)) throw FormatError("model snapshot: truncated dims");
  MlpModel m;
  try {
    m = make_model(dims, parse_activation(act));
  } catch (const std::exception& e) {
    throw FormatError(std::string("model snapshot: ") + e.what());
  }
  expect_token(in, "ood_scale");
  if (!(in >> m.ood_scale)) throw FormatError("model snapshot: bad ood_scale");
  for (std::size_t l = 0; l < m.num_layers(); ++l) {
    std::size_t idx = 0;
    expect_token(in, "layer");
    in >> idx;
    expect_token(in, "weights");
    for (double& v : m.weights[l])
      if (!(in >> v)) throw FormatError("model snapshot: truncated weights");
    expect_token(in, "layer");
    in >> idx;
    expect_token(in, "biases");
    for (double& v : m.biases[l])
      if (!(in >> v)) throw FormatError("model snapshot: truncated biases");
  }
  m.validate();
  return m;
}

void save_model(const std::string& path, const MlpModel& model) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  save_model(out, model);
}

MlpModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  return load_model(in);
}

}  // namespace scone
