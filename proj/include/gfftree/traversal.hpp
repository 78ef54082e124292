#pragma once

// Depth-first traversal of an i.i.d. forest of clusters and the statistics
// built on it: the chi-weighted martingale S over unexplored siblings, the
// height process H, the tree index Lambda, per-vertex sibling sums S-bar on
// conditioned clusters, bad-vertex fractions and the two distance matrices.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "gfftree/cluster.hpp"
#include "gfftree/grid.hpp"
#include "gfftree/parallel.hpp"
#include "gfftree/rng.hpp"
#include "gfftree/spectral_model.hpp"
#include "gfftree/stats.hpp"

namespace gfftree {

struct TraversalTrace {
  std::vector<double> S;          // S_k at visit k (S_1 = 0 for x-rooted forests)
  std::vector<double> phi;        // field value of the k-th visited vertex
  std::vector<std::int32_t> H;    // generation of the k-th visited vertex
  std::vector<std::int64_t> Lambda;  // index of the tree being explored
  std::size_t n_steps() const { return S.size(); }
};

namespace detail {

struct PendingSibling {
  double value;
  double chi;  // cached so push and pop move stack_chi by the same amount
  std::int32_t depth;
};

// Visits n_steps vertices of the lazily generated forest; visit receives
// (step k [1-based], phi, H, Lambda, S_k, S_{k+1} - S_k, stack chi-sum).
template <class Visit>
void traverse_forest(const SpectralModel& m, RandomStream& rng, double x,
                     long long n_steps, Visit&& visit) {
  const int d = m.d;
  if (d > 16) throw std::invalid_argument("traverse_forest: d > 16 unsupported");
  const double h = m.h_star;
  const double sigma_y = std::sqrt((d + 1.0) / d);
  const PiecewiseLinear chi = m.chi_fn();

  std::vector<PendingSibling> stack;
  double stack_chi = 0.0;  // sum of chi over Y(v_k), maintained incrementally
  double S = 0.0;
  std::int64_t lambda = 1;
  double value = x;
  double value_chi = chi(x);
  std::int32_t depth = 0;
  double kept_vals[16], kept_chi[16];

  for (long long k = 1; k <= n_steps; ++k) {
    // children of the visited vertex, in generation order
    const double drift = value / d;
    int kept = 0;
    for (int j = 0; j < d; ++j) {
      const double v = drift + sigma_y * rng.next_gaussian();
      if (v >= h) kept_vals[kept++] = v;
    }
    double child_chi = 0.0;
    for (int j = 0; j < kept; ++j) {
      kept_chi[j] = chi(kept_vals[j]);
      child_chi += kept_chi[j];
    }
    const double dS = -value_chi + child_chi;

    visit(k, value, depth, lambda, S, dS, stack_chi);
    S += dS;

    if (kept > 0) {
      for (int j = kept - 1; j >= 1; --j) {
        stack.push_back(PendingSibling{kept_vals[j], kept_chi[j],
                                       static_cast<std::int32_t>(depth + 1)});
        stack_chi += kept_chi[j];
      }
      value = kept_vals[0];
      value_chi = kept_chi[0];
      ++depth;
    } else if (!stack.empty()) {
      value = stack.back().value;
      value_chi = stack.back().chi;
      depth = stack.back().depth;
      stack_chi -= stack.back().chi;
      stack.pop_back();
    } else {
      ++lambda;
      value = x;
      value_chi = chi(x);
      depth = 0;
      stack_chi = 0.0;  // exact reset, no float drift across trees
    }
  }
}

}  // namespace detail

inline TraversalTrace run_traversal(const SpectralModel& m, RandomStream& rng,
                                    double x, long long n_steps) {
  if (x < m.h_star) throw std::invalid_argument("run_traversal: x below h*");
  if (n_steps < 1) throw std::invalid_argument("run_traversal: n_steps < 1");
  TraversalTrace t;
  t.S.reserve(static_cast<std::size_t>(n_steps));
  t.phi.reserve(static_cast<std::size_t>(n_steps));
  t.H.reserve(static_cast<std::size_t>(n_steps));
  t.Lambda.reserve(static_cast<std::size_t>(n_steps));
  detail::traverse_forest(m, rng, x, n_steps,
                          [&](long long, double phi, std::int32_t hh, std::int64_t lam,
                              double S, double, double) {
                            t.S.push_back(S);
                            t.phi.push_back(phi);
                            t.H.push_back(hh);
                            t.Lambda.push_back(lam);
                          });
  return t;
}

// m_n^f = (1/n) sum f(phi_{v_i})
template <class F>
double traversal_lln(const TraversalTrace& t, const F& f) {
  if (t.n_steps() == 0) throw std::invalid_argument("traversal_lln: empty trace");
  double s = 0.0;
  for (double v : t.phi) s += f(v);
  return s / static_cast<double>(t.n_steps());
}

struct MartingaleSuiteReport {
  std::vector<double> bin_increment_mean;  // per field-value bin
  std::vector<double> bin_increment_se;
  std::vector<double> bin_v_mean;       // spectral V per bin
  std::vector<double> bin_ds2_mean;     // squared increment per bin
  double regression_slope = 0.0;        // dS^2 against V
  double var_S_over_n = 0.0;            // Var(S_n)/n across traces
  double var_S_over_n_se = 0.0;
  double mean_S = 0.0;
  double mean_S_se = 0.0;
  double ds4_first_half = 0.0;          // fourth-moment stability
  double ds4_second_half = 0.0;
  long long traces = 0;
  std::vector<double> trace_S;   // final S_n per trace, replicate order
  std::vector<double> trace_qv;  // sum of squared increments per trace
};

inline MartingaleSuiteReport martingale_suite(const SpectralModel& m, double x,
                                              long long n_steps, long long traces,
                                              std::uint64_t seed, int bins = 20,
                                              const ParallelConfig& par = {}) {
  const std::vector<double> edges = occupation_bin_edges(m, bins);
  const PiecewiseLinear Vfn = m.V_fn();
  auto bin_of = [&](double v) {
    const auto it = std::upper_bound(edges.begin() + 1, edges.end() - 1, v);
    return static_cast<int>(it - edges.begin()) - 1;
  };

  struct Partial {
    std::vector<Accumulator> inc, ds2, vv;
    Accumulator s_final;
    Accumulator ds4_first, ds4_second;
    std::vector<double> trace_S, trace_qv;
  };
  auto chunk_fn = [&](long long b, long long e) {
    Partial p;
    p.inc.assign(static_cast<std::size_t>(bins), {});
    p.ds2.assign(static_cast<std::size_t>(bins), {});
    p.vv.assign(static_cast<std::size_t>(bins), {});
    for (long long r = b; r < e; ++r) {
      RandomStream rng(seed, static_cast<std::uint64_t>(r));
      double s_last = 0.0, qv = 0.0;
      detail::traverse_forest(
          m, rng, x, n_steps,
          [&](long long k, double phi, std::int32_t, std::int64_t, double S, double dS,
              double) {
            const int bi = bin_of(phi);
            p.inc[static_cast<std::size_t>(bi)].add(dS);
            p.ds2[static_cast<std::size_t>(bi)].add(dS * dS);
            p.vv[static_cast<std::size_t>(bi)].add(Vfn(phi));
            (k <= n_steps / 2 ? p.ds4_first : p.ds4_second).add(dS * dS * dS * dS);
            s_last = S + dS;
            qv += dS * dS;
          });
      p.s_final.add(s_last);
      p.trace_S.push_back(s_last);
      p.trace_qv.push_back(qv);
    }
    return p;
  };
  Partial total = parallel_reduce<Partial>(
      traces, par, chunk_fn, [&](Partial& a, Partial&& b) {
        if (a.inc.empty()) {
          a.inc.assign(static_cast<std::size_t>(bins), {});
          a.ds2.assign(static_cast<std::size_t>(bins), {});
          a.vv.assign(static_cast<std::size_t>(bins), {});
        }
        for (int i = 0; i < bins; ++i) {
          a.inc[static_cast<std::size_t>(i)].merge(b.inc[static_cast<std::size_t>(i)]);
          a.ds2[static_cast<std::size_t>(i)].merge(b.ds2[static_cast<std::size_t>(i)]);
          a.vv[static_cast<std::size_t>(i)].merge(b.vv[static_cast<std::size_t>(i)]);
        }
        a.s_final.merge(b.s_final);
        a.ds4_first.merge(b.ds4_first);
        a.ds4_second.merge(b.ds4_second);
        a.trace_S.insert(a.trace_S.end(), b.trace_S.begin(), b.trace_S.end());
        a.trace_qv.insert(a.trace_qv.end(), b.trace_qv.begin(), b.trace_qv.end());
      });

  MartingaleSuiteReport rep;
  rep.traces = traces;
  std::vector<double> xs, ys;
  for (int i = 0; i < bins; ++i) {
    const Accumulator& inc = total.inc[static_cast<std::size_t>(i)];
    rep.bin_increment_mean.push_back(inc.mean());
    rep.bin_increment_se.push_back(inc.std_error());
    rep.bin_v_mean.push_back(total.vv[static_cast<std::size_t>(i)].mean());
    rep.bin_ds2_mean.push_back(total.ds2[static_cast<std::size_t>(i)].mean());
    xs.push_back(rep.bin_v_mean.back());
    ys.push_back(rep.bin_ds2_mean.back());
  }
  rep.regression_slope = least_squares(xs, ys).slope;
  rep.mean_S = total.s_final.mean();
  rep.mean_S_se = total.s_final.std_error();
  const double var = total.s_final.variance();
  rep.var_S_over_n = var / static_cast<double>(n_steps);
  // SE of a variance estimate ~ var * sqrt(2/(n-1))
  rep.var_S_over_n_se = rep.var_S_over_n *
                        std::sqrt(2.0 / std::max<long long>(1, traces - 1));
  rep.ds4_first_half = total.ds4_first.mean();
  rep.ds4_second_half = total.ds4_second.mean();
  rep.trace_S = std::move(total.trace_S);
  rep.trace_qv = std::move(total.trace_qv);
  return rep;
}

// E[Lambda_n] estimates for the sqrt(n) scaling check.
inline EstimatorResult lambda_at_step(const SpectralModel& m, double x,
                                      long long n_steps, long long traces,
                                      std::uint64_t seed,
                                      const ParallelConfig& par = {}) {
  auto chunk_fn = [&](long long b, long long e) {
    Accumulator acc;
    for (long long r = b; r < e; ++r) {
      RandomStream rng(seed, static_cast<std::uint64_t>(r));
      std::int64_t last = 1;
      detail::traverse_forest(m, rng, x, n_steps,
                              [&](long long, double, std::int32_t, std::int64_t lam,
                                  double, double, double) { last = lam; });
      acc.add(static_cast<double>(last));
    }
    return acc;
  };
  Accumulator total = parallel_reduce<Accumulator>(
      traces, par, chunk_fn, [](Accumulator& a, Accumulator&& b) { a.merge(b); });
  return make_result(total, seed);
}

struct SupSbarSample {
  double sup = 0.0;
  bool reached = false;     // sup crossed the threshold (early stop)
  bool budget_hit = false;  // tree larger than the node budget
};

// sup over one tree's traversal of the stack chi-sum (= sup_m S-bar_m),
// stopping early once it crosses `threshold`.
inline SupSbarSample single_tree_sup_sbar(const SpectralModel& m, RandomStream& rng,
                                          double x, double threshold,
                                          long long node_budget = 8000000) {
  const int d = m.d;
  const double h = m.h_star;
  const double sigma_y = std::sqrt((d + 1.0) / d);
  const PiecewiseLinear chi = m.chi_fn();

  SupSbarSample out;
  std::vector<detail::PendingSibling> stack;
  double stack_chi = 0.0;
  double value = x;
  std::int32_t depth = 0;
  double kept_vals[16], kept_chi[16];
  for (long long visited = 0; visited < node_budget; ++visited) {
    out.sup = std::max(out.sup, stack_chi);
    if (stack_chi >= threshold) {
      out.reached = true;
      return out;
    }
    const double drift = value / d;
    int kept = 0;
    for (int j = 0; j < d; ++j) {
      const double v = drift + sigma_y * rng.next_gaussian();
      if (v >= h) kept_vals[kept++] = v;
    }
    if (kept > 0) {
      for (int j = kept - 1; j >= 1; --j) {
        kept_chi[j] = chi(kept_vals[j]);
        stack.push_back(detail::PendingSibling{kept_vals[j], kept_chi[j],
                                               static_cast<std::int32_t>(depth + 1)});
        stack_chi += kept_chi[j];
      }
      value = kept_vals[0];
      ++depth;
    } else if (!stack.empty()) {
      value = stack.back().value;
      depth = stack.back().depth;
      stack_chi -= stack.back().chi;
      stack.pop_back();
    } else {
      return out;  // tree exhausted
    }
  }
  out.budget_hit = true;
  return out;
}

struct ConditionedTree {
  Cluster cluster;
  long long tries = 0;      // rejection attempts including the accepted one
  long long cap_hits = 0;   // discarded oversized samples
};

// A cluster conditioned on N_n^+ != empty, by plain rejection. Samples that
// outgrow node_cap are discarded and counted; they are rare for desk-scale n.
inline ConditionedTree conditioned_tree(const SpectralModel& m, RandomStream& rng,
                                        double x, int n,
                                        std::int64_t node_cap = 4000000) {
  if (n < 1 || n > 100)
    throw std::invalid_argument("conditioned_tree: need 1 <= n <= 100 (acceptance rate)");
  const double p_est = m.C1 * m.chi_fn()(x) / n;
  if (p_est < 1e-4)
    throw std::runtime_error("conditioned_tree: acceptance below 1e-4, lower n");

  ConditionedTree out;
  for (;;) {
    ++out.tries;
    Cluster c = sample_cluster(rng, m.d, m.h_star, x, 1 << 30, node_cap);
    if (c.truncated_at) {
      ++out.cap_hits;
      continue;
    }
    if (c.generations() > n) {  // height >= n: generation n exists
      out.cluster = std::move(c);
      return out;
    }
  }
}

// Per-vertex S-bar: sum over ancestors' later siblings of chi, computed in
// one top-down pass (children of a node are contiguous in the arena).
inline std::vector<double> sbar_values(const Cluster& c, const SpectralModel& m) {
  const PiecewiseLinear chi = m.chi_fn();
  std::vector<double> sbar(c.size(), 0.0);
  for (std::size_t i = 0; i < c.size(); ++i) {
    const ClusterNode& node = c.nodes[i];
    if (node.n_children <= 0) continue;
    const std::int32_t fc = node.first_child;
    double suffix = 0.0;
    for (std::int32_t j = node.n_children - 1; j >= 0; --j) {
      sbar[static_cast<std::size_t>(fc + j)] = sbar[i] + suffix;
      suffix += chi(c.nodes[static_cast<std::size_t>(fc + j)].value);
    }
  }
  return sbar;
}

// |N_n^{(eta,R)}| / |N_n^+|: fraction of generation-n vertices having an
// ancestor at generation >= R whose S-bar/H ratio strays from 1/C1 by more
// than eta.
inline double bad_fraction(const Cluster& c, const SpectralModel& m, double eta,
                           int R, int n) {
  if (R < 1) throw std::invalid_argument("bad_fraction: R must be >= 1");
  if (c.generations() <= n || c.gen_count(n) == 0)
    throw std::invalid_argument("bad_fraction: cluster does not reach generation n");
  const std::vector<double> sbar = sbar_values(c, m);
  const double target = 1.0 / m.C1;

  std::vector<std::uint8_t> bad(c.size(), 0);
  long long bad_count = 0, total = 0;
  for (std::size_t i = 1; i < c.size(); ++i) {
    const ClusterNode& node = c.nodes[i];
    const std::size_t parent = static_cast<std::size_t>(node.parent);
    const int hp = c.nodes[parent].generation;
    bool b = bad[parent] != 0;
    if (!b && hp >= R)
      b = std::abs(sbar[parent] / hp - target) > eta;
    bad[i] = b ? 1 : 0;
    if (node.generation == n) {
      ++total;
      if (b) ++bad_count;
    }
  }
  return static_cast<double>(bad_count) / static_cast<double>(total);
}

inline std::int32_t most_recent_common_ancestor(const Cluster& c, std::int32_t a,
                                                std::int32_t b) {
  while (c.nodes[static_cast<std::size_t>(a)].generation >
         c.nodes[static_cast<std::size_t>(b)].generation)
    a = c.nodes[static_cast<std::size_t>(a)].parent;
  while (c.nodes[static_cast<std::size_t>(b)].generation >
         c.nodes[static_cast<std::size_t>(a)].generation)
    b = c.nodes[static_cast<std::size_t>(b)].parent;
  while (a != b) {
    a = c.nodes[static_cast<std::size_t>(a)].parent;
    b = c.nodes[static_cast<std::size_t>(b)].parent;
  }
  return a;
}

struct DistanceMatrices {
  std::vector<std::vector<double>> DH;  // tree distance / n
  std::vector<std::vector<double>> DS;  // S-bar distance / n
  int k = 0;
  int n = 0;
};

inline DistanceMatrices distance_matrices(const Cluster& c, const SpectralModel& m,
                                          RandomStream& rng, int k, int n) {
  if (k < 2) throw std::invalid_argument("distance_matrices: k must be >= 2");
  if (c.size() == 0) throw std::invalid_argument("distance_matrices: empty cluster");
  const std::vector<double> sbar = sbar_values(c, m);

  std::vector<std::int32_t> picks(static_cast<std::size_t>(k));
  for (auto& p : picks)
    p = static_cast<std::int32_t>(rng.next_below(static_cast<std::uint64_t>(c.size())));

  DistanceMatrices dm;
  dm.k = k;
  dm.n = n;
  dm.DH.assign(static_cast<std::size_t>(k), std::vector<double>(static_cast<std::size_t>(k), 0.0));
  dm.DS = dm.DH;
  for (int i = 0; i < k; ++i)
    for (int j = i + 1; j < k; ++j) {
      const std::int32_t a = picks[static_cast<std::size_t>(i)];
      const std::int32_t b = picks[static_cast<std::size_t>(j)];
      const std::int32_t w = most_recent_common_ancestor(c, a, b);
      const double dh = c.nodes[static_cast<std::size_t>(a)].generation +
                        c.nodes[static_cast<std::size_t>(b)].generation -
                        2.0 * c.nodes[static_cast<std::size_t>(w)].generation;
      const double ds = sbar[static_cast<std::size_t>(a)] + sbar[static_cast<std::size_t>(b)] -
                        2.0 * sbar[static_cast<std::size_t>(w)];
      dm.DH[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = dh / n;
      dm.DH[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)] = dh / n;
      dm.DS[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = ds / n;
      dm.DS[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)] = ds / n;
    }
  return dm;
}

// || C1^{-1} DH - DS ||_Frobenius
inline double matrix_coupling_norm(const DistanceMatrices& dm, const SpectralModel& m) {
  double s = 0.0;
  for (int i = 0; i < dm.k; ++i)
    for (int j = 0; j < dm.k; ++j) {
      const double diff = dm.DH[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] / m.C1 -
                          dm.DS[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
      s += diff * diff;
    }
  return std::sqrt(s);
}

}  // namespace gfftree
