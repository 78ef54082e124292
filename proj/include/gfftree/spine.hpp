#pragma once

// The size-biased side of the model: the spine chain with kernel
// K(x, dy) = d chi(y)/chi(x) rho_Y(y - x/d) dy, trees carrying one or two
// marked lines of descent, and Monte Carlo verification of the first and
// second moment identities that tie P_x sums to spine expectations.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "gfftree/cluster.hpp"
#include "gfftree/grid.hpp"
#include "gfftree/parallel.hpp"
#include "gfftree/recursion.hpp"
#include "gfftree/rng.hpp"
#include "gfftree/spectral_model.hpp"
#include "gfftree/stats.hpp"

namespace gfftree {

namespace detail {

// inverse CDF of one tabulated kernel column
inline double kernel_quantile(const KernelTable& t, std::size_t col, double u) {
  const std::vector<double>& F = t.cdf[col];
  const std::vector<double>& ys = t.ys;
  std::size_t lo = 0, hi = F.size() - 1;
  while (hi - lo > 1) {
    const std::size_t mid = (lo + hi) / 2;
    if (F[mid] < u)
      lo = mid;
    else
      hi = mid;
  }
  const double df = F[hi] - F[lo];
  if (df <= 0.0) return ys[hi];
  return ys[lo] + (u - F[lo]) / df * (ys[hi] - ys[lo]);
}

}  // namespace detail

// One draw from K(x, .): inverse-CDF of the tabulated columns, comonotone
// blend between the two bracketing grid nodes in x.
inline double sample_kernel(const SpectralModel& m, double x, RandomStream& rng) {
  if (x < m.h_star) throw std::invalid_argument("sample_kernel: x below h*");
  const double u = rng.next_unit();
  const auto& nodes = m.grid.nodes;
  if (x <= nodes.front()) return detail::kernel_quantile(m.kernel_cdfs, 0, u);
  if (x >= nodes.back())
    return detail::kernel_quantile(m.kernel_cdfs, nodes.size() - 1, u);
  std::size_t lo = 0, hi = nodes.size() - 1;
  while (hi - lo > 1) {
    const std::size_t mid = (lo + hi) / 2;
    if (nodes[mid] <= x)
      lo = mid;
    else
      hi = mid;
  }
  const double t = (x - nodes[lo]) / (nodes[hi] - nodes[lo]);
  return (1.0 - t) * detail::kernel_quantile(m.kernel_cdfs, lo, u) +
         t * detail::kernel_quantile(m.kernel_cdfs, hi, u);
}

struct SpinePath {
  std::vector<double> xi;  // xi[0] = x, length n+1
};

inline SpinePath sample_spine_chain(const SpectralModel& m, RandomStream& rng,
                                    double x, int n) {
  if (x < m.h_star) throw std::invalid_argument("sample_spine_chain: x below h*");
  SpinePath p;
  p.xi.reserve(static_cast<std::size_t>(n) + 1);
  p.xi.push_back(x);
  for (int k = 0; k < n; ++k) p.xi.push_back(sample_kernel(m, p.xi.back(), rng));
  return p;
}

// A cluster grown under Q_x^k: marked nodes redraw their value from the
// kernel, unmarked subtrees grow with the plain killed dynamics.
struct QTree {
  Cluster cluster;
  std::vector<std::uint8_t> marks;                  // per arena node
  std::vector<std::array<std::int32_t, 2>> spine;   // node index of mark j at gen g
  int k = 1;
};

inline QTree sample_q_tree(const SpectralModel& m, RandomStream& rng, double x,
                           int n, int k) {
  if (k != 1 && k != 2) throw std::invalid_argument("sample_q_tree: k must be 1 or 2");
  if (x < m.h_star) throw std::invalid_argument("sample_q_tree: x below h*");
  const int d = m.d;
  const double h = m.h_star;
  const double sigma_y = std::sqrt((d + 1.0) / d);

  QTree q;
  q.k = k;
  Cluster& c = q.cluster;
  c.nodes.push_back(ClusterNode{x, -1, -1, 0, 0});
  c.gen_begin = {0, 1};
  q.marks.push_back(static_cast<std::uint8_t>(k));
  q.spine.push_back({0, k == 2 ? 0 : -1});

  std::size_t cursor = 0;
  while (cursor < c.nodes.size()) {
    const int g = c.nodes[cursor].generation;
    if (g >= n) break;
    const double pv = c.nodes[cursor].value;
    const double drift = pv / d;
    const int mk = q.marks[cursor];

    int dest[2] = {-1, -1};
    if (mk > 0) {
      // every mark on this node moves to a uniform child slot
      int which = 0;
      for (int j = 0; j < k; ++j)
        if (q.spine[static_cast<std::size_t>(g)][static_cast<std::size_t>(j)] ==
            static_cast<std::int32_t>(cursor))
          dest[which++] = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(d)));
    }

    if (q.spine.size() == static_cast<std::size_t>(g) + 1 && mk > 0)
      q.spine.push_back({-1, -1});

    std::int32_t first = -1, kept = 0;
    for (int slot = 0; slot < d; ++slot) {
      int slot_marks = 0;
      for (int j = 0; j < 2; ++j)
        if (dest[j] == slot) ++slot_marks;
      double v;
      if (slot_marks > 0) {
        v = sample_kernel(m, pv, rng);  // marked child: kernel redraw, never killed
      } else {
        v = drift + sigma_y * rng.next_gaussian();
        if (v < h) continue;
      }
      const std::int32_t idx = static_cast<std::int32_t>(c.nodes.size());
      if (first < 0) first = idx;
      c.nodes.push_back(ClusterNode{v, static_cast<std::int32_t>(cursor), -1, 0, g + 1});
      q.marks.push_back(static_cast<std::uint8_t>(slot_marks));
      if (slot_marks > 0) {
        int which = 0;
        for (int j = 0; j < k; ++j)
          if (q.spine[static_cast<std::size_t>(g)][static_cast<std::size_t>(j)] ==
              static_cast<std::int32_t>(cursor)) {
            if (dest[which] == slot)
              q.spine[static_cast<std::size_t>(g) + 1][static_cast<std::size_t>(j)] = idx;
            ++which;
          }
      }
      ++kept;
    }
    c.nodes[cursor].first_child = first;
    c.nodes[cursor].n_children = kept;
    if (kept > 0) {
      if (c.gen_begin.size() == static_cast<std::size_t>(g) + 2)
        c.gen_begin.push_back(c.gen_begin.back());
      c.gen_begin.back() = static_cast<std::int32_t>(c.nodes.size());
    }
    ++cursor;
  }
  return q;
}

struct MomentComparison {
  EstimatorResult lhs;   // plain P_x Monte Carlo
  EstimatorResult rhs;   // spine representation Monte Carlo
  double matrix_truth = 0.0;
  double z_lhs_rhs = 0.0;
  double z_lhs_truth = 0.0;
  double z_rhs_truth = 0.0;
};

namespace detail {

// Degenerate estimators (a literally constant weight, e.g. f = chi on the
// spine side) report a standard error at the level of summation roundoff;
// floor the denominator at that scale so exact agreement never divides by 0.
inline double z_score(double diff, double se, double scale) {
  const double floor_se = 1e-9 * (1.0 + std::abs(scale));
  return diff / std::max(se, floor_se);
}

inline void check_agreement(MomentComparison& c, const char* what) {
  c.z_lhs_rhs = z_score(c.lhs.mean - c.rhs.mean,
                        std::hypot(c.lhs.std_error, c.rhs.std_error), c.matrix_truth);
  c.z_lhs_truth = z_score(c.lhs.mean - c.matrix_truth, c.lhs.std_error, c.matrix_truth);
  c.z_rhs_truth = z_score(c.rhs.mean - c.matrix_truth, c.rhs.std_error, c.matrix_truth);
  if (std::abs(c.z_lhs_rhs) > 5.0 || std::abs(c.z_lhs_truth) > 5.0 ||
      std::abs(c.z_rhs_truth) > 5.0)
    throw std::runtime_error(std::string(what) + ": sides disagree beyond 5 SE");
}

}  // namespace detail

// E_x[sum_{N_n^+} f] three ways: P_x MC, Q_x MC of f(xi_n) chi(x)/chi(xi_n),
// and the operator power L^n[f](x).
inline MomentComparison verify_many_to_few_1(const SpectralModel& m, double x, int n,
                                             const GridFunction& f, long long reps,
                                             std::uint64_t seed,
                                             const ParallelConfig& par = {}) {
  if (n < 0 || n > 12) throw std::invalid_argument("verify_many_to_few_1: need 0 <= n <= 12");
  const PiecewiseLinear f_interp(m.grid, f);
  const PiecewiseLinear chi = m.chi_fn();

  MomentComparison cmp;
  cmp.lhs = generation_sum_estimate(m, x, n, f_interp, reps, seed, par);

  const double chi_x = chi(x);
  auto chunk_fn = [&](long long b, long long e) {
    Accumulator acc;
    for (long long r = b; r < e; ++r) {
      RandomStream rng(seed, 0x51C0FFEEull + static_cast<std::uint64_t>(r));
      double xi = x;
      for (int kstep = 0; kstep < n; ++kstep) xi = sample_kernel(m, xi, rng);
      acc.add(f_interp(xi) * chi_x / chi(xi));
    }
    return acc;
  };
  Accumulator rhs = parallel_reduce<Accumulator>(
      reps, par, chunk_fn, [](Accumulator& a, Accumulator&& b) { a.merge(b); });
  cmp.rhs = make_result(rhs, seed);

  cmp.matrix_truth = PiecewiseLinear(m.grid, moment_first(m, f, n))(x);
  detail::check_agreement(cmp, "many-to-few k=1");
  return cmp;
}

// E_x[sum_{v,w in N_n^+} f(v) g(w)] three ways. The spine side stratifies
// over the exact split-time law: each summand of
//   chi(x) (d-1)/d sum_{k<n} Q_x[ chi(xi_k) Q_{xi_k}[f/chi] Q_{xi_k}[g/chi] ]
// is estimated with a shared chain to k and two independent continuations,
// plus the diagonal term chi(x) Q_x[fg/chi (xi_n)].
inline MomentComparison verify_many_to_few_2(const SpectralModel& m, double x, int n,
                                             const GridFunction& f,
                                             const GridFunction& g, long long reps,
                                             std::uint64_t seed,
                                             const ParallelConfig& par = {}) {
  if (n < 1 || n > 8) throw std::invalid_argument("verify_many_to_few_2: need 1 <= n <= 8");
  const PiecewiseLinear f_interp(m.grid, f);
  const PiecewiseLinear g_interp(m.grid, g);
  const PiecewiseLinear chi = m.chi_fn();
  const double chi_x = chi(x);

  MomentComparison cmp;
  cmp.lhs = generation_pair_sum_estimate(m, x, n, f_interp, g_interp, reps, seed, par);

  const long long per_stratum = std::max<long long>(1, reps / (n + 1));
  double rhs_mean = 0.0, rhs_var = 0.0;
  long long rhs_reps = 0;
  for (int k = 0; k <= n; ++k) {
    const bool diagonal = (k == n);
    auto chunk_fn = [&, k](long long b, long long e) {
      Accumulator acc;
      for (long long r = b; r < e; ++r) {
        RandomStream rng(seed, (static_cast<std::uint64_t>(k) << 40) + 0xABCD0000ull +
                                   static_cast<std::uint64_t>(r));
        double xi = x;
        for (int s = 0; s < k; ++s) xi = sample_kernel(m, xi, rng);
        if (diagonal) {
          acc.add(f_interp(xi) * g_interp(xi) / chi(xi));
        } else {
          double y1 = xi, y2 = xi;
          for (int s = k; s < n; ++s) y1 = sample_kernel(m, y1, rng);
          for (int s = k; s < n; ++s) y2 = sample_kernel(m, y2, rng);
          acc.add(chi(xi) * (f_interp(y1) / chi(y1)) * (g_interp(y2) / chi(y2)));
        }
      }
      return acc;
    };
    Accumulator acc = parallel_reduce<Accumulator>(
        per_stratum, par, chunk_fn, [](Accumulator& a, Accumulator&& b) { a.merge(b); });
    const double w = diagonal ? chi_x : chi_x * (m.d - 1.0) / m.d;
    rhs_mean += w * acc.mean();
    const double se = acc.std_error();
    rhs_var += w * w * se * se;
    rhs_reps += acc.n;
  }
  cmp.rhs = EstimatorResult{rhs_mean, std::sqrt(rhs_var), rhs_reps, seed,
                            "stratified split-time"};

  cmp.matrix_truth = PiecewiseLinear(m.grid, moment_second(m, f, g, n))(x);
  detail::check_agreement(cmp, "many-to-few k=2");
  return cmp;
}

// Split time of the two marks in a k=2 tree: max{g : sigma_g^1 == sigma_g^2},
// or n when the marks never separate within depth n.
inline int q_tree_split_time(const QTree& q) {
  if (q.k != 2) throw std::invalid_argument("q_tree_split_time: needs k = 2");
  int s = 0;
  for (std::size_t g = 0; g < q.spine.size(); ++g)
    if (q.spine[g][0] == q.spine[g][1] && q.spine[g][0] >= 0) s = static_cast<int>(g);
  return s;
}

struct ConditionedLawReport {
  int K = 0;
  int n = 0;
  double tv_distance = 0.0;      // empirical conditioned law vs Q law
  double z_weight_identity = 0.0;  // direct Q sampling vs chi-reweighted P sampling
  long long accepted = 0;
};

// Compare P_x[ . | N_n^+ != empty] with Q_x on a fixed finite partition of
// generation-K observables: cells are (|N_K^+| capped at 4) x (4 bins of
// sum chi / chi(x)).
inline ConditionedLawReport conditioned_law_vs_Q(const SpectralModel& m, double x,
                                                 int K, int n, long long reps,
                                                 std::uint64_t seed,
                                                 const ParallelConfig& par = {}) {
  if (K < 0 || K > 3) throw std::invalid_argument("conditioned_law_vs_Q: need K <= 3");
  if (n < K) throw std::invalid_argument("conditioned_law_vs_Q: need n >= K");
  const PiecewiseLinear chi = m.chi_fn();
  if (m.C1 * chi(x) / std::max(1, n) < 1e-4)
    throw std::runtime_error("conditioned_law_vs_Q: acceptance below 1e-4, lower n");
  const double chi_x = chi(x);
  const int size_classes = 4, bin_classes = 4;
  const int n_cells = size_classes * bin_classes;

  auto classify = [&](const std::vector<double>& genK) {
    if (K == 0 || genK.empty()) return 0;  // trivial partition
    const int sc = std::min<int>(size_classes, static_cast<int>(genK.size())) - 1;
    double s = 0.0;
    for (double v : genK) s += chi(v);
    const double ratio = s / chi_x;
    int bc = ratio < 0.5 ? 0 : ratio < 1.0 ? 1 : ratio < 2.0 ? 2 : 3;
    return sc * bin_classes + bc;
  };

  struct Partial {
    std::vector<long long> p_counts, q_counts;
    Accumulator reweight[16];
    long long accepted = 0;
  };
  const double sigma_y = std::sqrt((m.d + 1.0) / m.d);
  const double h = m.h_star;
  const int d = m.d;

  // The P-side replicate doubles as the unconditioned sample for the
  // reweighting identity; the Q-side draws from a disjoint stream block.
  auto chunk_fn = [&](long long b, long long e) {
    Partial p;
    p.p_counts.assign(static_cast<std::size_t>(n_cells), 0);
    p.q_counts.assign(static_cast<std::size_t>(n_cells), 0);
    std::vector<double> cur, next, genK;
    for (long long r = b; r < e; ++r) {
      {
        RandomStream rng(seed, static_cast<std::uint64_t>(r));
        cur.assign(1, x);
        for (int g = 0; g < n && !cur.empty(); ++g) {
          if (g == K) genK = cur;
          detail::step_frontier(rng, d, h, sigma_y, cur, next);
          cur.swap(next);
        }
        if (n == K) genK = cur;
        const int cell = classify(genK);
        if (!cur.empty()) {
          ++p.p_counts[static_cast<std::size_t>(cell)];
          ++p.accepted;
        }
        double w = 0.0;
        for (double v : genK) w += chi(v);
        for (int c = 0; c < n_cells; ++c)
          p.reweight[c].add(c == cell && !genK.empty() ? w / chi_x : 0.0);
        genK.clear();
      }
      {
        RandomStream rng(seed, 0x9000000000000000ull + static_cast<std::uint64_t>(r));
        QTree q = sample_q_tree(m, rng, x, K, 1);
        std::vector<double> vals;
        if (q.cluster.generations() > K)
          for (std::int32_t i = q.cluster.gen_begin[static_cast<std::size_t>(K)];
               i < q.cluster.gen_begin[static_cast<std::size_t>(K) + 1]; ++i)
            vals.push_back(q.cluster.nodes[static_cast<std::size_t>(i)].value);
        ++p.q_counts[static_cast<std::size_t>(classify(vals))];
      }
    }
    return p;
  };

  Partial total = parallel_reduce<Partial>(
      reps, par, chunk_fn, [&](Partial& a, Partial&& b) {
        if (a.p_counts.empty()) {
          a.p_counts.assign(static_cast<std::size_t>(n_cells), 0);
          a.q_counts.assign(static_cast<std::size_t>(n_cells), 0);
        }
        for (int c = 0; c < n_cells; ++c) {
          a.p_counts[static_cast<std::size_t>(c)] += b.p_counts[static_cast<std::size_t>(c)];
          a.q_counts[static_cast<std::size_t>(c)] += b.q_counts[static_cast<std::size_t>(c)];
          a.reweight[c].merge(b.reweight[c]);
        }
        a.accepted += b.accepted;
      });

  ConditionedLawReport rep;
  rep.K = K;
  rep.n = n;
  rep.accepted = total.accepted;
  if (total.accepted < 1)
    throw std::runtime_error("conditioned_law_vs_Q: no accepted replicates");
  double tv = 0.0;
  double worst_z = 0.0;
  for (int c = 0; c < n_cells; ++c) {
    const double pc = static_cast<double>(total.p_counts[static_cast<std::size_t>(c)]) /
                      static_cast<double>(total.accepted);
    const double qc = static_cast<double>(total.q_counts[static_cast<std::size_t>(c)]) /
                      static_cast<double>(reps);
    tv += std::abs(pc - qc);
    // weight identity: Q[B] = E_x[1_B sum chi / chi(x)]
    const Accumulator& rw = total.reweight[c];
    const double se_q = std::sqrt(qc * (1.0 - qc) / static_cast<double>(reps));
    const double se = std::sqrt(se_q * se_q + rw.std_error() * rw.std_error());
    if (se > 0.0) worst_z = std::max(worst_z, std::abs(rw.mean() - qc) / se);
  }
  rep.tv_distance = 0.5 * tv;
  rep.z_weight_identity = worst_z;
  return rep;
}

// Under plain P_x sampling with one uniformly walked mark, d^n chi(xi_n)
// (zero in the cemetery) has expectation chi(x).
inline EstimatorResult zeta_mark_estimate(const SpectralModel& m, double x, int n,
                                          long long reps, std::uint64_t seed,
                                          const ParallelConfig& par = {}) {
  const double sigma_y = std::sqrt((m.d + 1.0) / m.d);
  const double h = m.h_star;
  const int d = m.d;
  const PiecewiseLinear chi = m.chi_fn();
  const double weight = std::pow(static_cast<double>(d), n);
  auto chunk_fn = [&](long long b, long long e) {
    Accumulator acc;
    for (long long r = b; r < e; ++r) {
      RandomStream rng(seed, static_cast<std::uint64_t>(r));
      double v = x;
      bool alive = true;
      for (int g = 0; g < n && alive; ++g) {
        const std::uint64_t slot = rng.next_below(static_cast<std::uint64_t>(d));
        (void)slot;  // slots are exchangeable; one child draw decides the walk
        v = v / d + sigma_y * rng.next_gaussian();
        if (v < h) alive = false;
      }
      acc.add(alive ? weight * chi(v) : 0.0);
    }
    return acc;
  };
  Accumulator total = parallel_reduce<Accumulator>(
      reps, par, chunk_fn, [](Accumulator& a, Accumulator&& b) { a.merge(b); });
  return make_result(total, seed);
}

}  // namespace gfftree
