#include "scone/autodiff.hpp"

#include <cmath>
#include <stdexcept>

#include "scone/errors.hpp"

namespace scone::ad {

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Constant: return "constant";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Div: return "div";
    case OpKind::Exp: return "exp";
    case OpKind::Log: return "log";
    case OpKind::Neg: return "neg";
    case OpKind::Max2: return "max2";
    case OpKind::Relu: return "relu";
    case OpKind::Tanh: return "tanh";
    case OpKind::Sum: return "sum";
    case OpKind::Dot: return "dot";
  }
  return "unknown";
}

Var Tape::push(OpKind kind, double value) {
  if (edge_begin_.empty()) edge_begin_.push_back(0);
  Var v{static_cast<std::uint32_t>(values_.size())};
  values_.push_back(value);
  kinds_.push_back(kind);
  edge_begin_.push_back(static_cast<std::uint32_t>(parents_.size()));
  return v;
}

void Tape::edge(Var parent, double partial) {
  parents_.push_back(parent.index);
  partials_.push_back(partial);
  edge_begin_.back() = static_cast<std::uint32_t>(parents_.size());
}

Var Tape::lift(double value) { return push(OpKind::Constant, value); }

Var Tape::apply(OpKind kind, Var a) {
  const double x = value(a);
  const std::size_t id = size();
  switch (kind) {
    case OpKind::Exp: {
      const double y = std::exp(x);
      Var v = push(kind, y);
      edge(a, y);
      return v;
    }
    case OpKind::Log: {
      if (!(x > 0.0)) throw DomainError("log of non-positive value", id);
      Var v = push(kind, std::log(x));
      edge(a, 1.0 / x);
      return v;
    }
    case OpKind::Neg: {
      Var v = push(kind, -x);
      edge(a, -1.0);
      return v;
    }
    case OpKind::Relu: {
      // Subgradient at exactly 0 is 0.
      Var v = push(kind, x > 0.0 ? x : 0.0);
      edge(a, x > 0.0 ? 1.0 : 0.0);
      return v;
    }
    case OpKind::Tanh: {
      const double y = std::tanh(x);
      Var v = push(kind, y);
      edge(a, 1.0 - y * y);
      return v;
    }
    default:
      throw std::invalid_argument(std::string("op '") + op_name(kind) + "' is not unary");
  }
}

Var Tape::apply(OpKind kind, Var a, Var b) {
  const double x = value(a);
  const double y = value(b);
  const std::size_t id = size();
  switch (kind) {
    case OpKind::Add: {
      Var v = push(kind, x + y);
      edge(a, 1.0);
      edge(b, 1.0);
      return v;
    }
    case OpKind::Sub: {
      Var v = push(kind, x - y);
      edge(a, 1.0);
      edge(b, -1.0);
      return v;
    }
    case OpKind::Mul: {
      Var v = push(kind, x * y);
      edge(a, y);
      edge(b, x);
      return v;
    }
    case OpKind::Div: {
      if (y == 0.0) throw DomainError("division by zero", id);
      Var v = push(kind, x / y);
      edge(a, 1.0 / y);
      edge(b, -x / (y * y));
      return v;
    }
    case OpKind::Max2: {
      // Ties go to the first argument.
      const bool first = x >= y;
      Var v = push(kind, first ? x : y);
      edge(a, first ? 1.0 : 0.0);
      edge(b, first ? 0.0 : 1.0);
      return v;
    }
    default:
      throw std::invalid_argument(std::string("op '") + op_name(kind) + "' is not binary");
  }
}

Var Tape::sum(std::span<const Var> terms) {
  double total = 0.0;
  for (Var t : terms) total += value(t);
  Var v = push(OpKind::Sum, total);
  for (Var t : terms) edge(t, 1.0);
  return v;
}

Var Tape::dot(std::span<const Var> lhs, std::span<const Var> rhs) {
  if (lhs.size() != rhs.size()) throw ShapeError("dot: operand lengths differ");
  double total = 0.0;
  for (std::size_t i = 0; i < lhs.size(); ++i) total += value(lhs[i]) * value(rhs[i]);
  Var v = push(OpKind::Dot, total);
  for (std::size_t i = 0; i < lhs.size(); ++i) {
    edge(lhs[i], value(rhs[i]));
    edge(rhs[i], value(lhs[i]));
  }
  return v;
}

Gradients Tape::backward(Var root) const {
  if (root.index >= size()) throw std::out_of_range("backward: root is not on this tape");
  std::vector<double> adj(root.index + 1, 0.0);
  adj[root.index] = 1.0;
  for (std::size_t i = root.index + 1; i-- > 0;) {
    const double g = adj[i];
    if (g == 0.0) continue;
    for (std::uint32_t e = edge_begin_[i]; e < edge_begin_[i + 1]; ++e) {
      adj[parents_[e]] += partials_[e] * g;
    }
  }
  return Gradients(std::move(adj));
}

void Tape::clear() {
  values_.clear();
  kinds_.clear();
  edge_begin_.clear();
  parents_.clear();
  partials_.clear();
}

}  // namespace scone::ad
