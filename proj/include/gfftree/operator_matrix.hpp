#pragma once

// Dense discretization of the one-generation operator
//   L[f](x) = d * Integral_{[h, inf)} f(y) rho_Y(y - x/d) dy
// restricted to the truncated grid: M[i][j] = d * rho_Y(x_j - x_i/d) * w_j.
// Self-adjoint in L2(nu) because rho_nu(x) rho_Y(y - x/d) is symmetric under
// swapping x and y for these variances.

#include <vector>

#include "gfftree/grid.hpp"

namespace gfftree {

class OperatorMatrix {
 public:
  OperatorMatrix() = default;
  explicit OperatorMatrix(GridSpec grid) : grid_(std::move(grid)) {
    const std::size_t n = grid_.size();
    const double s2y = grid_.sigma2_noise();
    const double d = static_cast<double>(grid_.d);
    entries_.resize(n * n);
    for (std::size_t i = 0; i < n; ++i) {
      const double xi_over_d = grid_.nodes[i] / d;
      double* row = entries_.data() + i * n;
      for (std::size_t j = 0; j < n; ++j)
        row[j] = d * gaussian_density(grid_.nodes[j] - xi_over_d, s2y) * grid_.weights[j];
    }
  }

  const GridSpec& grid() const { return grid_; }
  std::size_t size() const { return grid_.size(); }
  double entry(std::size_t i, std::size_t j) const { return entries_[i * size() + j]; }

  GridFunction apply(const GridFunction& f) const {
    check_match(grid_, f);
    const std::size_t n = size();
    GridFunction out(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double* row = entries_.data() + i * n;
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += row[j] * f[j];
      out[i] = s;
    }
    return out;
  }

  GridFunction apply_power(GridFunction f, int n_times) const {
    for (int k = 0; k < n_times; ++k) f = apply(f);
    return f;
  }

 private:
  GridSpec grid_;
  std::vector<double> entries_;
};

inline OperatorMatrix assemble_operator(const GridSpec& grid) {
  return OperatorMatrix(grid);
}

}  // namespace gfftree
