#pragma once

// Quadrature grid for the killed one-generation operator. Composite
// Gauss-Legendre panels on [h, x_max] carry Lebesgue weights, so integrals
// against the base Gaussian measure nu use nu_density explicitly.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace gfftree {

inline constexpr double kPi = 3.141592653589793238462643383279502884;

inline double gaussian_density(double x, double variance) {
  return std::exp(-0.5 * x * x / variance) / std::sqrt(2.0 * kPi * variance);
}

// P(X >= t) for X ~ N(0, variance)
inline double gaussian_upper_tail(double t, double variance) {
  return 0.5 * std::erfc(t / std::sqrt(2.0 * variance));
}

namespace detail {

// Gauss-Legendre nodes/weights on [-1,1] by Newton on P_n.
inline void gauss_legendre_rule(int order, std::vector<double>& x,
                                std::vector<double>& w) {
  x.assign(order, 0.0);
  w.assign(order, 0.0);
  const int m = (order + 1) / 2;
  for (int i = 0; i < m; ++i) {
    double z = std::cos(kPi * (i + 0.75) / (order + 0.5));
    double pp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = 0.0;
      for (int j = 0; j < order; ++j) {
        const double p2 = p1;
        p1 = p0;
        p0 = ((2.0 * j + 1.0) * z * p1 - j * p2) / (j + 1.0);
      }
      pp = order * (z * p0 - p1) / (z * z - 1.0);
      const double dz = p0 / pp;
      z -= dz;
      if (std::abs(dz) < 1e-16) break;
    }
    x[i] = -z;
    x[order - 1 - i] = z;
    w[i] = 2.0 / ((1.0 - z * z) * pp * pp);
    w[order - 1 - i] = w[i];
  }
}

}  // namespace detail

struct GridSpec {
  int d = 0;
  double h = 0.0;
  double x_max = 0.0;
  double tail_tol = 0.0;
  std::vector<double> nodes;       // strictly increasing, all >= h
  std::vector<double> weights;     // Lebesgue quadrature weights, > 0
  std::vector<double> nu_density;  // density of N(0, d/(d-1)) at nodes

  std::size_t size() const { return nodes.size(); }
  double sigma2_nu() const { return static_cast<double>(d) / (d - 1); }
  double sigma2_noise() const { return static_cast<double>(d + 1) / d; }
};

struct GridFunction {
  std::vector<double> values;

  GridFunction() = default;
  explicit GridFunction(std::size_t n, double fill = 0.0) : values(n, fill) {}

  std::size_t size() const { return values.size(); }
  double& operator[](std::size_t i) { return values[i]; }
  double operator[](std::size_t i) const { return values[i]; }
};

inline void check_match(const GridSpec& g, const GridFunction& f) {
  if (f.size() != g.size())
    throw std::invalid_argument("grid function does not match grid size");
}

// <f,g> in L2(nu) restricted to [h, x_max]
inline double inner_product(const GridSpec& g, const GridFunction& f,
                            const GridFunction& q) {
  check_match(g, f);
  check_match(g, q);
  double s = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i)
    s += g.weights[i] * g.nu_density[i] * f[i] * q[i];
  return s;
}

inline double nu_norm(const GridSpec& g, const GridFunction& f) {
  return std::sqrt(std::max(0.0, inner_product(g, f, f)));
}

inline GridFunction constant_function(const GridSpec& g, double value) {
  return GridFunction(g.size(), value);
}

// nu-mass of [h, x_max] by quadrature
inline double nu_mass(const GridSpec& g) {
  double s = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) s += g.weights[i] * g.nu_density[i];
  return s;
}

// Smallest x_max such that both the nu tail and the worst-case kernel column
// tail past x_max stay below tail_tol. The kernel column from source x has
// mean x/d, worst at x = x_max.
inline double resolve_x_max(int d, double h, double tail_tol) {
  const double s2_nu = static_cast<double>(d) / (d - 1);
  const double s2_y = static_cast<double>(d + 1) / d;
  auto ok = [&](double x) {
    if (x <= h) return false;
    const double nu_tail = gaussian_upper_tail(x, s2_nu);
    const double col_tail = gaussian_upper_tail(x * (1.0 - 1.0 / d), s2_y);
    return nu_tail < tail_tol && col_tail < tail_tol;
  };
  double hi = std::max(1.0, h + 1.0);
  while (!ok(hi)) hi *= 2.0;
  double lo = std::max(0.0, h);
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (ok(mid))
      hi = mid;
    else
      lo = mid;
  }
  return hi;
}

// Composite Gauss-Legendre grid on [h, x_max]; n_points rounds up to a
// multiple of the panel order.
inline GridSpec build_grid(int d, double h, int n_points, double tail_tol) {
  if (d < 2) throw std::invalid_argument("build_grid: d must be >= 2");
  if (n_points < 64) throw std::invalid_argument("build_grid: n_points must be >= 64");
  if (!(tail_tol > 0.0) || tail_tol > 1e-6)
    throw std::invalid_argument("build_grid: tail_tol must lie in (0, 1e-6]");

  constexpr int panel_order = 16;
  GridSpec g;
  g.d = d;
  g.h = h;
  g.tail_tol = tail_tol;
  g.x_max = resolve_x_max(d, h, tail_tol);

  const int n_panels = (n_points + panel_order - 1) / panel_order;
  std::vector<double> ref_x, ref_w;
  detail::gauss_legendre_rule(panel_order, ref_x, ref_w);

  const double width = (g.x_max - g.h) / n_panels;
  g.nodes.reserve(static_cast<std::size_t>(n_panels) * panel_order);
  g.weights.reserve(g.nodes.capacity());
  for (int p = 0; p < n_panels; ++p) {
    const double a = g.h + p * width;
    const double half = 0.5 * width;
    const double mid = a + half;
    for (int i = 0; i < panel_order; ++i) {
      g.nodes.push_back(mid + half * ref_x[i]);
      g.weights.push_back(half * ref_w[i]);
    }
  }
  g.nu_density.resize(g.nodes.size());
  const double s2 = g.sigma2_nu();
  for (std::size_t i = 0; i < g.nodes.size(); ++i)
    g.nu_density[i] = gaussian_density(g.nodes[i], s2);

  // resolution gate: captured nu-mass must match the truncated integral
  const double exact = gaussian_upper_tail(g.h, s2) - gaussian_upper_tail(g.x_max, s2);
  if (std::abs(nu_mass(g) - exact) >= 1e-12)
    throw std::runtime_error("build_grid: resolution insufficient for tail_tol");
  return g;
}

// Piecewise-linear evaluation of a grid function at arbitrary points; above
// the last node the fitted top-of-grid slope extends the linear growth.
// Segment lookup is O(1) through a uniform bucket index over [front, back].
class PiecewiseLinear {
 public:
  PiecewiseLinear() = default;
  PiecewiseLinear(const GridSpec& g, const GridFunction& f) {
    check_match(g, f);
    xs_ = g.nodes;
    ys_ = f.values;
    // least-squares slope over the top 20% of nodes
    const std::size_t n = xs_.size();
    const std::size_t k = std::max<std::size_t>(2, n / 5);
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = n - k; i < n; ++i) {
      sx += xs_[i];
      sy += ys_[i];
      sxx += xs_[i] * xs_[i];
      sxy += xs_[i] * ys_[i];
    }
    const double kk = static_cast<double>(k);
    top_slope_ = (kk * sxy - sx * sy) / (kk * sxx - sx * sx);

    const std::size_t cells = 2 * n;
    inv_cell_ = static_cast<double>(cells) / (xs_.back() - xs_.front());
    bucket_.assign(cells + 1, 0);
    std::size_t i = 0;
    for (std::size_t c = 0; c <= cells; ++c) {
      const double edge = xs_.front() + static_cast<double>(c) / inv_cell_;
      while (i + 1 < n && xs_[i + 1] <= edge) ++i;
      bucket_[c] = i;
    }
  }

  double operator()(double x) const {
    if (x <= xs_.front()) return ys_.front();
    if (x >= xs_.back()) return ys_.back() + top_slope_ * (x - xs_.back());
    std::size_t c = static_cast<std::size_t>((x - xs_.front()) * inv_cell_);
    if (c >= bucket_.size()) c = bucket_.size() - 1;
    std::size_t lo = bucket_[c];
    while (xs_[lo + 1] <= x) ++lo;
    const double t = (x - xs_[lo]) / (xs_[lo + 1] - xs_[lo]);
    return ys_[lo] + t * (ys_[lo + 1] - ys_[lo]);
  }

  double top_slope() const { return top_slope_; }

 private:
  std::vector<double> xs_, ys_;
  std::vector<std::size_t> bucket_;
  double inv_cell_ = 0.0;
  double top_slope_ = 0.0;
};

}  // namespace gfftree
