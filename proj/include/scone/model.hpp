#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "scone/autodiff.hpp"

namespace scone {

enum class Activation { Tanh, Relu };

const char* activation_name(Activation a);
Activation parse_activation(const std::string& name);

/// Dense K-class classifier plus the learnable scale of the sigmoid OOD loss.
///
/// Layer l maps layer_dims[l] -> layer_dims[l+1]; weights[l] is row-major
/// (out x in). The activation is applied after every layer except the last.
/// Class labels are 0-based throughout the library.
struct MlpModel {
  std::vector<std::size_t> layer_dims;
  Activation activation = Activation::Tanh;
  std::vector<std::vector<double>> weights;
  std::vector<std::vector<double>> biases;
  double ood_scale = 1.0;

  std::size_t input_dim() const { return layer_dims.front(); }
  std::size_t num_classes() const { return layer_dims.back(); }
  std::size_t num_layers() const { return weights.size(); }

  /// Weights then biases per layer, then ood_scale.
  std::size_t parameter_count() const;
  std::vector<double> flat_parameters() const;
  void set_flat_parameters(std::span<const double> flat);

  /// Throws ShapeError / std::invalid_argument when invariants fail.
  void validate() const;

  bool operator==(const MlpModel&) const = default;
};

/// Zero-parameter model of the given shape.
MlpModel make_model(std::vector<std::size_t> layer_dims, Activation activation);

/// Glorot-uniform weights in +-sqrt(6/(fan_in+fan_out)), zero biases, w = 1.
MlpModel init_model(std::vector<std::size_t> layer_dims, Activation activation, std::uint64_t seed);

/// The model's parameters lifted as leaves of one tape. Build one binding per
/// tape, run any number of forward passes through it, then read the gradient
/// back in flat_parameters() order.
class BoundModel {
 public:
  BoundModel(const MlpModel& model, ad::Tape& tape);

  const MlpModel& model() const { return *model_; }
  ad::Tape& tape() const { return *tape_; }
  ad::Var ood_scale() const { return ood_scale_; }

  std::vector<double> gradient(const ad::Gradients& grads) const;

 private:
  friend std::vector<ad::Var> forward(const BoundModel&, std::span<const double>);

  const MlpModel* model_;
  ad::Tape* tape_;
  std::vector<std::vector<ad::Var>> weights_;
  std::vector<std::vector<ad::Var>> biases_;
  ad::Var ood_scale_;
};

/// Logit nodes for one input. Throws ShapeError on dimension mismatch.
std::vector<ad::Var> forward(const BoundModel& bound, std::span<const double> x);

/// Tape-free forward pass.
std::vector<double> logits(const MlpModel& model, std::span<const double> x);

/// argmax with ties broken toward the lowest index.
std::size_t predict(std::span<const double> logits);

/// Free energy -log sum_j exp(logit_j), via max-shifted log-sum-exp.
double energy(std::span<const double> logits);
ad::Var energy(ad::Tape& tape, std::span<const ad::Var> logits);

enum class Decision { In, Out };

struct DetectorConfig {
  double threshold = 0.0;
};

/// OUT iff energy > threshold; the boundary itself is IN.
Decision detect(double energy_value, const DetectorConfig& cfg = {});

/// Cross-entropy -log softmax(logits)[label].
ad::Var loss_cls(ad::Tape& tape, std::span<const ad::Var> logits, std::size_t label);
double loss_cls(std::span<const double> logits, std::size_t label);

// Snapshot format (plain text, whitespace separated):
//   scone-mlp 1
//   activation tanh
//   dims 3 2 64 2
//   ood_scale <w>
//   layer 0 weights <out*in values, row-major>
//   layer 0 biases <out values>
//   ...
// Reals are written with 17 significant digits so a reload is exact.
void save_model(std::ostream& out, const MlpModel& model);
MlpModel load_model(std::istream& in);
void save_model(const std::string& path, const MlpModel& model);
MlpModel load_model(const std::string& path);

}  // namespace scone
