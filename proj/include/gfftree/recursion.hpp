#pragma once

// Deterministic iteration of the survival recursion
//   u_n = 1 - (1 - L[u_{n-1}]/d)^d,   u_0 = 1 - f0 on [h*, x_max],
// tracked together with its projections a_n = <chi, u_n> and
// b_n = ||u_n - a_n chi||. The one-arm constant, the Kolmogorov slope and
// the Yaglom Laplace transform all come out of these sequences.

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "gfftree/spectral_model.hpp"
#include "gfftree/stats.hpp"

namespace gfftree {

struct RecursionSeries {
  std::string f_tag;            // "zero", "f_lambda:<v>", or "custom"
  std::vector<GridFunction> u;  // u[0] .. u[n_max]
  std::vector<double> a;        // <chi, u_n>
  std::vector<double> b;        // ||beta[u_n]||
};

// boundary family: f_0 = 0, f_lambda = exp(-chi/lambda) for lambda > 0
inline GridFunction boundary_f_lambda(const SpectralModel& m, double lambda) {
  GridFunction f(m.grid.size(), 0.0);
  if (lambda > 0.0)
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = std::exp(-m.chi[i] / lambda);
  return f;
}

inline RecursionSeries iterate_u(const SpectralModel& m, const GridFunction& f0,
                                 int n_max, std::string f_tag = "custom") {
  check_match(m.grid, f0);
  for (double v : f0.values)
    if (!(v >= 0.0 && v <= 1.0))
      throw std::invalid_argument("iterate_u: boundary function must lie in [0,1]");

  RecursionSeries s;
  s.f_tag = std::move(f_tag);
  s.u.reserve(static_cast<std::size_t>(n_max) + 1);
  s.a.reserve(static_cast<std::size_t>(n_max) + 1);
  s.b.reserve(static_cast<std::size_t>(n_max) + 1);

  GridFunction u(m.grid.size());
  for (std::size_t i = 0; i < u.size(); ++i) u[i] = 1.0 - f0[i];

  const double d = static_cast<double>(m.d);
  auto record = [&](const GridFunction& un) {
    s.u.push_back(un);
    const double a_n = inner_product(m.grid, m.chi, un);
    s.a.push_back(a_n);
    GridFunction beta = un;
    for (std::size_t i = 0; i < beta.size(); ++i) beta[i] -= a_n * m.chi[i];
    s.b.push_back(nu_norm(m.grid, beta));
  };
  record(u);

  for (int n = 1; n <= n_max; ++n) {
    GridFunction Lu = m.op.apply(u);
    for (std::size_t i = 0; i < u.size(); ++i) {
      // 1 - (1 - y)^d through expm1/log1p; exact at y = 1, stable for tiny y
      const double y = Lu[i] / d;
      const double v = y >= 1.0 ? 1.0 : -std::expm1(d * std::log1p(-y));
      if (!(v >= -1e-12 && v <= 1.0 + 1e-12))
        throw std::runtime_error("iterate_u: iterate left [0,1], operator inconsistent");
      u[i] = v;
    }
    record(u);
  }
  return s;
}

struct OneArmReport {
  double slope_inverse_a = 0.0;  // fitted d(1/a_n)/dn over the last half
  double rho_hat = 0.0;          // minus the log-log slope of a_n
  double C1_hat = 0.0;
};

// Fits use the last 50% of the series; earlier terms carry the a_0 transient.
inline OneArmReport one_arm_series(const SpectralModel& m, int n_max) {
  if (n_max < 500) throw std::invalid_argument("one_arm_series: n_max must be >= 500");
  const RecursionSeries s = iterate_u(m, constant_function(m.grid, 0.0), n_max, "zero");

  std::vector<double> ns, inv_a, log_n, log_a;
  double prev_inv = 0.0;
  for (int n = 0; n <= n_max; ++n) {
    const double a = s.a[static_cast<std::size_t>(n)];
    if (!(a > 0.0)) throw std::runtime_error("one_arm_series: a_n not positive");
    const double inv = 1.0 / a;
    if (n > 0 && inv <= prev_inv)
      throw std::runtime_error("one_arm_series: 1/a_n not increasing, numeric breakdown");
    prev_inv = inv;
    if (n >= n_max / 2) {
      ns.push_back(n);
      inv_a.push_back(inv);
      log_n.push_back(std::log(static_cast<double>(n)));
      log_a.push_back(std::log(a));
    }
  }
  OneArmReport r;
  r.slope_inverse_a = least_squares(ns, inv_a).slope;
  r.rho_hat = -least_squares(log_n, log_a).slope;
  r.C1_hat = 1.0 / r.slope_inverse_a;
  return r;
}

// Conditional Laplace transform E[exp(-alpha Z_n^{chi,x})] as a grid
// function: 1 - u_n^{n/alpha}(x) / u_n^0(x).
inline GridFunction yaglom_laplace(const SpectralModel& m, double alpha, int n) {
  if (!(alpha > 0.0)) throw std::invalid_argument("yaglom_laplace: alpha must be > 0");
  if (n < 1) throw std::invalid_argument("yaglom_laplace: n must be >= 1");
  const double lambda = static_cast<double>(n) / alpha;
  const RecursionSeries zero = iterate_u(m, constant_function(m.grid, 0.0), n, "zero");
  const RecursionSeries lam = iterate_u(m, boundary_f_lambda(m, lambda), n,
                                        "f_lambda:" + std::to_string(lambda));
  GridFunction out(m.grid.size());
  const GridFunction& u0 = zero.u.back();
  const GridFunction& ul = lam.u.back();
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!(u0[i] > 0.0))
      throw std::runtime_error("yaglom_laplace: vanishing survival probability on grid");
    out[i] = 1.0 - ul[i] / u0[i];
  }
  return out;
}

// L^n[f]
inline GridFunction moment_first(const SpectralModel& m, const GridFunction& f, int n) {
  if (n < 0) throw std::invalid_argument("moment_first: n must be >= 0");
  return m.op.apply_power(f, n);
}

// E_x[ sum_{v,w in N_n^+} f(phi_v) g(phi_w) ]  (unrestricted pairs, v = w
// included), assembled as
//   (d-1)/d * sum_{k<n} L^k[ L^{n-k}f * L^{n-k}g ] + L^n[fg]
// with the k-sum evaluated Horner-style in n-1 extra operator applications.
inline GridFunction moment_second(const SpectralModel& m, const GridFunction& f,
                                  const GridFunction& g, int n) {
  if (n < 1) throw std::invalid_argument("moment_second: n must be >= 1");
  check_match(m.grid, f);
  check_match(m.grid, g);
  const std::size_t size = m.grid.size();

  std::vector<GridFunction> Lf(static_cast<std::size_t>(n) + 1);
  std::vector<GridFunction> Lg(static_cast<std::size_t>(n) + 1);
  Lf[0] = f;
  Lg[0] = g;
  for (int k = 1; k <= n; ++k) {
    Lf[static_cast<std::size_t>(k)] = m.op.apply(Lf[static_cast<std::size_t>(k) - 1]);
    Lg[static_cast<std::size_t>(k)] = m.op.apply(Lg[static_cast<std::size_t>(k) - 1]);
  }
  auto product_at = [&](int k) {
    GridFunction p(size);
    const GridFunction& a = Lf[static_cast<std::size_t>(n - k)];
    const GridFunction& b = Lg[static_cast<std::size_t>(n - k)];
    for (std::size_t i = 0; i < size; ++i) p[i] = a[i] * b[i];
    return p;
  };

  GridFunction acc = product_at(n - 1);
  for (int k = n - 2; k >= 0; --k) {
    acc = m.op.apply(acc);
    const GridFunction p = product_at(k);
    for (std::size_t i = 0; i < size; ++i) acc[i] += p[i];
  }

  GridFunction fg(size);
  for (std::size_t i = 0; i < size; ++i) fg[i] = f[i] * g[i];
  GridFunction diag = m.op.apply_power(fg, n);

  const double ratio = (m.d - 1.0) / m.d;
  GridFunction out(size);
  for (std::size_t i = 0; i < size; ++i) out[i] = ratio * acc[i] + diag[i];
  return out;
}

}  // namespace gfftree
