#pragma once

// Scalar reverse-mode automatic differentiation.
//
// A Tape records every scalar value produced during a forward pass together
// with the local partial derivatives with respect to its parents. Parents
// always precede their children, so one reverse sweep accumulates adjoints.
// Tapes are rebuilt per forward pass; clear() keeps the allocated capacity.

#include <cstdint>
#include <span>
#include <vector>

namespace scone::ad {

enum class OpKind : std::uint8_t {
  Constant,
  Add,
  Sub,
  Mul,
  Div,
  Exp,
  Log,
  Neg,
  Max2,
  Relu,
  Tanh,
  Sum,  // n-ary sum of parents
  Dot,  // inner product of two equally sized parent lists
};

const char* op_name(OpKind kind);

/// Handle to a node on a Tape. Only meaningful for the tape that created it.
struct Var {
  std::uint32_t index = 0;
};

class Tape;

/// Adjoints produced by Tape::backward. Indexed by the Var handles of the
/// tape it came from; immutable once produced.
class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(std::vector<double> adjoints) : adjoints_(std::move(adjoints)) {}

  double operator[](Var v) const { return v.index < adjoints_.size() ? adjoints_[v.index] : 0.0; }
  std::size_t size() const { return adjoints_.size(); }
  std::span<const double> raw() const { return adjoints_; }

 private:
  std::vector<double> adjoints_;
};

class Tape {
 public:
  Tape() = default;

  /// Constant (leaf) node. Parameters are lifted leaves as well; their
  /// adjoints are what backward() reports as the gradient.
  Var lift(double value);

  Var apply(OpKind kind, Var a);
  Var apply(OpKind kind, Var a, Var b);

  Var add(Var a, Var b) { return apply(OpKind::Add, a, b); }
  Var sub(Var a, Var b) { return apply(OpKind::Sub, a, b); }
  Var mul(Var a, Var b) { return apply(OpKind::Mul, a, b); }
  Var div(Var a, Var b) { return apply(OpKind::Div, a, b); }
  Var exp(Var a) { return apply(OpKind::Exp, a); }
  Var log(Var a) { return apply(OpKind::Log, a); }
  Var neg(Var a) { return apply(OpKind::Neg, a); }
  Var max2(Var a, Var b) { return apply(OpKind::Max2, a, b); }
  Var relu(Var a) { return apply(OpKind::Relu, a); }
  Var tanh(Var a) { return apply(OpKind::Tanh, a); }

  Var sum(std::span<const Var> terms);
  Var dot(std::span<const Var> lhs, std::span<const Var> rhs);

  // Scalar-constant shorthands; each lifts the constant as its own node.
  Var add(Var a, double c) { return add(a, lift(c)); }
  Var mul(Var a, double c) { return mul(a, lift(c)); }

  double value(Var v) const { return values_[v.index]; }
  OpKind kind(Var v) const { return kinds_[v.index]; }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  /// Reverse sweep seeded with d(root)/d(root) = 1.
  Gradients backward(Var root) const;

  void clear();

 private:
  Var push(OpKind kind, double value);
  void edge(Var parent, double partial);

  std::vector<double> values_;
  std::vector<OpKind> kinds_;
  std::vector<std::uint32_t> edge_begin_;  // size() + 1 offsets into parents_/partials_
  std::vector<std::uint32_t> parents_;
  std::vector<double> partials_;
};

}  // namespace scone::ad
