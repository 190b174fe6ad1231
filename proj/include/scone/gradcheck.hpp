#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace scone {

struct GradcheckTerm {
  std::string name;
  std::size_t coordinates = 0;
  double max_rel_error = 0.0;
};

struct GradcheckReport {
  std::size_t models = 0;
  std::size_t max_parameters = 0;
  double step = 0.0;
  std::vector<GradcheckTerm> terms;  // loss_cls, loss_wild, constraint_margin, alm

  double max_rel_error() const;
  std::string to_json() const;
};

/// Compares tape gradients of every training loss against central finite
/// differences of the tape-free evaluators, over all parameters of `models`
/// random small tanh MLPs (at most ~2k parameters each). Relative error is
/// |ad - fd| / max(1, |fd|).
GradcheckReport run_gradcheck(std::uint64_t seed, std::size_t models = 20, double step = 1e-6);

}  // namespace scone
