#pragma once

// Critical-level spectral data: the leading eigenpair of the killed operator,
// the critical level where that eigenvalue crosses 1, and every constant the
// recursion and Monte Carlo modules consume downstream.

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <utility>
#include <vector>

#include "gfftree/grid.hpp"
#include "gfftree/operator_matrix.hpp"

namespace gfftree {

struct EigenPair {
  double lambda = 0.0;
  GridFunction chi;
  int iterations = 0;
};

// Power iteration with nu-norm renormalization. Non-negative kernel and a
// positive start keep the iterate non-negative throughout; the sign is fixed
// afterwards so the largest-magnitude entry is positive.
inline EigenPair leading_eigenpair(const OperatorMatrix& op,
                                   const GridFunction* warm_start = nullptr,
                                   int max_iterations = 50000) {
  const GridSpec& g = op.grid();
  GridFunction v = warm_start && warm_start->size() == g.size()
                       ? *warm_start
                       : constant_function(g, 1.0);
  double nrm = nu_norm(g, v);
  if (!(nrm > 0.0)) throw std::runtime_error("leading_eigenpair: zero start vector");
  for (auto& x : v.values) x /= nrm;

  double lambda_prev = 0.0;
  for (int it = 1; it <= max_iterations; ++it) {
    GridFunction w = op.apply(v);
    const double lambda = inner_product(g, v, w);  // Rayleigh quotient, ||v||=1
    GridFunction res = w;
    for (std::size_t i = 0; i < res.size(); ++i) res[i] -= lambda * v[i];
    const double residual = nu_norm(g, res);
    const double wn = nu_norm(g, w);
    if (!(wn > 0.0)) throw std::runtime_error("leading_eigenpair: collapsed iterate");
    for (auto& x : w.values) x /= wn;
    v = std::move(w);
    if (std::abs(lambda - lambda_prev) < 1e-13 * std::max(1.0, std::abs(lambda)) &&
        residual < 1e-9 * std::max(1.0, std::abs(lambda))) {
      std::size_t imax = 0;
      for (std::size_t i = 1; i < v.size(); ++i)
        if (std::abs(v[i]) > std::abs(v[imax])) imax = i;
      if (v[imax] < 0.0)
        for (auto& x : v.values) x = -x;
      return EigenPair{lambda, std::move(v), it};
    }
    lambda_prev = lambda;
  }
  throw std::runtime_error("leading_eigenpair: grid too ill-conditioned to converge");
}

// |second eigenvalue| via one deflation: every iterate is re-projected onto
// the nu-orthogonal complement of chi.
inline double second_eigenvalue(const OperatorMatrix& op, const GridFunction& chi,
                                int max_iterations = 50000) {
  const GridSpec& g = op.grid();
  check_match(g, chi);
  GridFunction v(g.size());
  for (std::size_t i = 0; i < v.size(); ++i)
    v[i] = (i % 2 == 0) ? 1.0 : -1.0;  // generic start with mass off chi
  auto project = [&](GridFunction& f) {
    const double c = inner_product(g, chi, f);
    for (std::size_t i = 0; i < f.size(); ++i) f[i] -= c * chi[i];
  };
  project(v);
  double nrm = nu_norm(g, v);
  if (!(nrm > 0.0)) throw std::runtime_error("second_eigenvalue: degenerate start");
  for (auto& x : v.values) x /= nrm;

  double lambda_prev = 0.0;
  for (int it = 1; it <= max_iterations; ++it) {
    GridFunction w = op.apply(v);
    project(w);
    const double lambda = inner_product(g, v, w);
    GridFunction res = w;
    for (std::size_t i = 0; i < res.size(); ++i) res[i] -= lambda * v[i];
    const double residual = nu_norm(g, res);
    const double wn = nu_norm(g, w);
    if (!(wn > 0.0)) throw std::runtime_error("second_eigenvalue: collapsed iterate");
    for (auto& x : w.values) x /= wn;
    v = std::move(w);
    if (std::abs(std::abs(lambda) - std::abs(lambda_prev)) < 1e-13 &&
        residual < 1e-9) {
      const double gamma = std::abs(lambda);
      if (!(gamma > 0.0) || gamma >= 1.0)
        throw std::runtime_error("second_eigenvalue: gamma outside (0,1), deflation failed");
      return gamma;
    }
    lambda_prev = lambda;
  }
  throw std::runtime_error("second_eigenvalue: no convergence");
}

// Tabulated CDFs of the spine kernel K(x_i, dy) for every grid node x_i.
// The y-points are the grid nodes extended by the domain endpoints h and
// x_max, so each CDF runs from exactly 0 to exactly 1 after renormalization.
// Each y-interval is trapezoid-integrated on a refined sub-partition where
// chi is evaluated exactly through the eigen-identity chi = L[chi]; this
// keeps the raw column masses within 1e-6 of 1.
struct KernelTable {
  std::vector<double> ys;                // h, grid nodes, x_max
  std::vector<std::vector<double>> cdf;  // cdf[i][j] = K(x_i, [h, ys[j]])
  std::vector<double> raw_mass;          // pre-normalization column masses
};

namespace detail {

constexpr int kKernelSubdivisions = 16;

// chi off the nodes via chi(y) = d * Integral chi(z) rho_Y(z - y/d) dz
inline double chi_by_eigen_identity(const GridSpec& g, const GridFunction& chi,
                                    double y) {
  const double d = static_cast<double>(g.d);
  const double s2y = g.sigma2_noise();
  const double mean = y / d;
  double s = 0.0;
  for (std::size_t k = 0; k < g.size(); ++k)
    s += g.weights[k] * chi[k] * gaussian_density(g.nodes[k] - mean, s2y);
  return d * s;
}

// shared refinement of [h, x_max]: every kernel y-interval split into
// kKernelSubdivisions equal pieces
inline std::vector<double> kernel_refined_points(const std::vector<double>& ys) {
  std::vector<double> fine;
  fine.reserve((ys.size() - 1) * kKernelSubdivisions + 1);
  for (std::size_t j = 0; j + 1 < ys.size(); ++j) {
    const double y0 = ys[j], y1 = ys[j + 1];
    for (int s = 0; s < kKernelSubdivisions; ++s)
      fine.push_back(y0 + (y1 - y0) * static_cast<double>(s) / kKernelSubdivisions);
  }
  fine.push_back(ys.back());
  return fine;
}

inline KernelTable build_kernel_table(const GridSpec& g, const GridFunction& chi) {
  const std::size_t n = g.size();
  const double d = static_cast<double>(g.d);
  const double s2y = g.sigma2_noise();

  KernelTable table;
  table.ys.reserve(n + 2);
  table.ys.push_back(g.h);
  table.ys.insert(table.ys.end(), g.nodes.begin(), g.nodes.end());
  table.ys.push_back(g.x_max);

  const std::vector<double> fine = kernel_refined_points(table.ys);
  std::vector<double> chi_fine(fine.size());
  for (std::size_t r = 0; r < fine.size(); ++r)
    chi_fine[r] = chi_by_eigen_identity(g, chi, fine[r]);

  table.cdf.assign(n, std::vector<double>(n + 2, 0.0));
  table.raw_mass.assign(n, 0.0);
  std::vector<double> rho(fine.size());
  for (std::size_t i = 0; i < n; ++i) {
    const double mean = g.nodes[i] / d;
    for (std::size_t r = 0; r < fine.size(); ++r)
      rho[r] = d * chi_fine[r] * gaussian_density(fine[r] - mean, s2y) / chi[i];
    std::vector<double>& F = table.cdf[i];
    double acc = 0.0;
    std::size_t r = 0;
    for (std::size_t j = 0; j + 1 < table.ys.size(); ++j) {
      double piece = 0.0;
      for (int s = 0; s < kKernelSubdivisions; ++s, ++r)
        piece += 0.5 * (rho[r] + rho[r + 1]) * (fine[r + 1] - fine[r]);
      acc += piece;
      F[j + 1] = acc;
    }
    table.raw_mass[i] = acc;
    if (std::abs(acc - 1.0) > 1e-4)
      throw std::runtime_error("kernel table: column mass lost to truncation");
    for (auto& f : F) f /= acc;
  }
  return table;
}

}  // namespace detail

// Integral of chi(y)^power rho_nu(y) over [a, b] by refined trapezoid with
// chi evaluated through the eigen-identity. GL weights cannot be restricted
// to sub-panel windows, so interval masses of the occupation law (power 1)
// and the invariant law pi (power 2) go through this instead.
inline double chi_weighted_interval_mass(const GridSpec& g, const GridFunction& chi,
                                         double a, double b, int chi_power) {
  if (!(b > a)) return 0.0;
  const int steps = 256;
  const double dx = (b - a) / steps;
  double acc = 0.0, prev = 0.0;
  for (int s = 0; s <= steps; ++s) {
    const double y = a + s * dx;
    double c = 1.0;
    const double chi_y = detail::chi_by_eigen_identity(g, chi, y);
    for (int p = 0; p < chi_power; ++p) c *= chi_y;
    const double val = c * gaussian_density(y, g.sigma2_nu());
    if (s > 0) acc += 0.5 * (prev + val) * dx;
    prev = val;
  }
  return acc;
}

// Mean of K(x_i, .) by the same refined trapezoid scheme; an independent
// route to compare against the matrix value L[chi * id](x_i) / chi(x_i).
inline double kernel_column_mean(const GridSpec& g, const GridFunction& chi,
                                 const KernelTable& table, std::size_t i) {
  const double d = static_cast<double>(g.d);
  const double s2y = g.sigma2_noise();
  const std::vector<double> fine = detail::kernel_refined_points(table.ys);
  const double mean_shift = g.nodes[i] / d;
  double acc = 0.0;
  double prev = 0.0;
  for (std::size_t r = 0; r < fine.size(); ++r) {
    const double gy = fine[r] * d * detail::chi_by_eigen_identity(g, chi, fine[r]) *
                      gaussian_density(fine[r] - mean_shift, s2y) / chi[i];
    if (r > 0) acc += 0.5 * (prev + gy) * (fine[r] - fine[r - 1]);
    prev = gy;
  }
  return acc / table.raw_mass[i];
}

struct SpectralModel {
  int d = 0;
  double h_star = 0.0;
  GridSpec grid;
  OperatorMatrix op;  // assembled at h_star
  GridFunction chi;   // unit nu-norm, non-negative, non-decreasing
  double gamma = 0.0;
  double C1 = 0.0;
  double C1_tilde = 0.0;
  GridFunction V;  // one-generation variance of the chi-sum
  double sigma2 = 0.0;
  std::map<double, double> lambda_of_h;
  KernelTable kernel_cdfs;

  PiecewiseLinear chi_fn() const { return PiecewiseLinear(grid, chi); }
  PiecewiseLinear V_fn() const { return PiecewiseLinear(grid, V); }

  // index of the grid node nearest to x
  std::size_t nearest_node(double x) const {
    const auto& xs = grid.nodes;
    auto it = std::lower_bound(xs.begin(), xs.end(), x);
    if (it == xs.begin()) return 0;
    if (it == xs.end()) return xs.size() - 1;
    const std::size_t hi = static_cast<std::size_t>(it - xs.begin());
    return (x - xs[hi - 1] <= xs[hi] - x) ? hi - 1 : hi;
  }
};

// Field-value bin edges with equal mass under the traversal occupation law
// chi * rho_nu / <chi, 1>.
inline std::vector<double> occupation_bin_edges(const SpectralModel& m, int bins) {
  std::vector<double> mass(m.grid.size());
  double total = 0.0;
  for (std::size_t i = 0; i < m.grid.size(); ++i) {
    mass[i] = m.grid.weights[i] * m.grid.nu_density[i] * m.chi[i];
    total += mass[i];
  }
  std::vector<double> edges;
  edges.push_back(m.h_star);
  double acc = 0.0;
  int next = 1;
  for (std::size_t i = 0; i < mass.size() && next < bins; ++i) {
    acc += mass[i];
    if (acc >= total * next / bins) {
      edges.push_back(m.grid.nodes[i]);
      ++next;
    }
  }
  edges.push_back(m.grid.x_max);
  return edges;
}

// beta[f] = f - <chi,f> chi
inline GridFunction project_off_chi(const SpectralModel& m, const GridFunction& f) {
  check_match(m.grid, f);
  const double c = inner_product(m.grid, m.chi, f);
  GridFunction out = f;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= c * m.chi[i];
  return out;
}

inline const std::vector<double>& spine_kernel_cdf(const SpectralModel& m,
                                                   std::size_t x_index) {
  if (x_index >= m.grid.size())
    throw std::invalid_argument("spine_kernel_cdf: node index out of range");
  return m.kernel_cdfs.cdf[x_index];
}

struct ChiRegularityReport {
  double max_slope = 0.0;
  bool monotone = false;
};

inline ChiRegularityReport chi_regularity_report(const SpectralModel& m) {
  ChiRegularityReport r;
  r.monotone = true;
  for (std::size_t i = 0; i + 1 < m.chi.size(); ++i) {
    const double s = (m.chi[i + 1] - m.chi[i]) / (m.grid.nodes[i + 1] - m.grid.nodes[i]);
    r.max_slope = std::max(r.max_slope, s);
    if (s < -1e-9) r.monotone = false;
  }
  return r;
}

namespace detail {

inline double lambda_at_level(int d, double h, int n_points, double tail_tol,
                              GridFunction* chi_warm, GridFunction* chi_out) {
  const GridSpec g = build_grid(d, h, n_points, tail_tol);
  const OperatorMatrix op = assemble_operator(g);
  EigenPair p = leading_eigenpair(op, chi_warm);
  if (chi_out) *chi_out = p.chi;
  return p.lambda;
}

}  // namespace detail

// Locate h* by bisection on lambda(h) - 1 starting from [0,2] (expanding the
// upper end by doubling if needed), then assemble the full critical model.
inline SpectralModel find_h_star(int d, double tol = 1e-12, int n_points = 512,
                                 double tail_tol = 1e-12) {
  if (tol < 1e-12) throw std::invalid_argument("find_h_star: tol must be >= 1e-12");
  SpectralModel m;
  m.d = d;

  GridFunction warm;
  auto lambda_at = [&](double h) {
    const double lam = detail::lambda_at_level(d, h, n_points, tail_tol, &warm, &warm);
    m.lambda_of_h[h] = lam;
    return lam;
  };

  double lo = 0.0, hi = 2.0;
  double f_lo = lambda_at(lo) - 1.0;
  if (f_lo <= 0.0)
    throw std::runtime_error("find_h_star: no bracket, lambda(0) <= 1 (grid truncation too aggressive)");
  double f_hi = lambda_at(hi) - 1.0;
  while (f_hi > 0.0) {
    hi *= 2.0;
    if (hi > 1024.0)
      throw std::runtime_error("find_h_star: no bracket, lambda stays above 1");
    f_hi = lambda_at(hi) - 1.0;
  }
  while (hi - lo > tol) {
    const double mid = 0.5 * (lo + hi);
    if (lambda_at(mid) - 1.0 > 0.0)
      lo = mid;
    else
      hi = mid;
  }
  m.h_star = 0.5 * (lo + hi);

  m.grid = build_grid(d, m.h_star, n_points, tail_tol);
  m.op = assemble_operator(m.grid);
  EigenPair p = leading_eigenpair(m.op, &warm);
  m.lambda_of_h[m.h_star] = p.lambda;
  m.chi = std::move(p.chi);
  m.gamma = second_eigenvalue(m.op, m.chi);

  GridFunction chi_sq(m.grid.size());
  for (std::size_t i = 0; i < chi_sq.size(); ++i) chi_sq[i] = m.chi[i] * m.chi[i];
  const double chi3 = inner_product(m.grid, chi_sq, m.chi);
  m.C1 = 2.0 * d / ((d - 1.0) * chi3);
  m.C1_tilde = m.C1 * (d + 1.0) / d;

  // V = L[chi^2] - chi^2 / d: variance of one generation's chi-sum
  m.V = m.op.apply(chi_sq);
  for (std::size_t i = 0; i < m.V.size(); ++i) m.V[i] -= chi_sq[i] / d;
  m.sigma2 = inner_product(m.grid, m.chi, m.V) /
             inner_product(m.grid, m.chi, constant_function(m.grid, 1.0));

  m.kernel_cdfs = detail::build_kernel_table(m.grid, m.chi);
  return m;
}

// Memoized leading eigenvalue at an arbitrary level, on the model's own
// grid parameters.
inline double lambda_at_level(SpectralModel& m, double h) {
  auto it = m.lambda_of_h.find(h);
  if (it != m.lambda_of_h.end()) return it->second;
  const double lam = detail::lambda_at_level(
      m.d, h, static_cast<int>(m.grid.size()), m.grid.tail_tol, nullptr, nullptr);
  m.lambda_of_h[h] = lam;
  return lam;
}

}  // namespace gfftree
