#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace scone::fdcheck {

// Central differences, evaluated independently of any tape.
inline std::vector<double> central_diff(const std::function<double(const std::vector<double>&)>& f,
                                        std::vector<double> x, double h = 1e-6) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f(x);
    x[i] = keep - h;
    const double down = f(x);
    x[i] = keep;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

inline double rel_err(double ad, double fd) { return std::abs(ad - fd) / std::max(1.0, std::abs(fd)); }

inline double max_rel_err(const std::vector<double>& ad, const std::vector<double>& fd) {
  double m = 0;
  for (std::size_t i = 0; i < ad.size(); ++i) m = std::max(m, rel_err(ad[i], fd[i]));
  return m;
}

}  // namespace scone::fdcheck
