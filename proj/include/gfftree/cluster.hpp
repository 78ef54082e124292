#pragma once

// Sampling of the level-set cluster as a killed branching process: every
// vertex spawns d children with value parent/d + Y, Y ~ N(0, (d+1)/d), and
// children below the level are killed before birth. Clusters are arena
// encoded in breadth-first order, so generations are contiguous and the
// children of a node form one contiguous block.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "gfftree/grid.hpp"
#include "gfftree/parallel.hpp"
#include "gfftree/rng.hpp"
#include "gfftree/spectral_model.hpp"
#include "gfftree/stats.hpp"

namespace gfftree {

struct ClusterNode {
  double value = 0.0;
  std::int32_t parent = -1;
  std::int32_t first_child = -1;
  std::int32_t n_children = 0;
  std::int32_t generation = 0;
};

struct Cluster {
  std::vector<ClusterNode> nodes;       // BFS order
  std::vector<std::int32_t> gen_begin;  // gen g occupies [gen_begin[g], gen_begin[g+1])
  std::optional<int> truncated_at;      // generations >= this may be incomplete

  std::size_t size() const { return nodes.size(); }
  int generations() const { return static_cast<int>(gen_begin.size()) - 1; }
  std::int32_t gen_count(int g) const {
    if (g < 0 || g >= generations()) return 0;
    return gen_begin[static_cast<std::size_t>(g) + 1] - gen_begin[static_cast<std::size_t>(g)];
  }
};

inline Cluster sample_cluster(RandomStream& rng, int d, double h,
                              std::optional<double> root_value, int gen_cap,
                              std::int64_t node_cap) {
  if (gen_cap < 0 || node_cap < 1)
    throw std::invalid_argument("sample_cluster: caps must be positive");
  const double sigma_y = std::sqrt((d + 1.0) / d);

  Cluster c;
  const double root =
      root_value ? *root_value : std::sqrt(static_cast<double>(d) / (d - 1)) * rng.next_gaussian();
  if (root < h) {
    c.gen_begin = {0};
    return c;  // empty: the root itself is below the level
  }
  c.nodes.push_back(ClusterNode{root, -1, -1, 0, 0});
  c.gen_begin = {0, 1};

  std::size_t cursor = 0;
  while (cursor < c.nodes.size()) {
    ClusterNode& parent = c.nodes[cursor];
    const int g = parent.generation;
    if (g >= gen_cap) {
      c.truncated_at = g + 1;  // first generation left incomplete
      break;                   // BFS order: every later node is as deep
    }
    if (static_cast<std::int64_t>(c.nodes.size()) + d > node_cap) {
      c.truncated_at = g + 1;
      break;
    }
    const double drift = parent.value / d;
    std::int32_t first = -1, kept = 0;
    for (int j = 0; j < d; ++j) {
      const double v = drift + sigma_y * rng.next_gaussian();
      if (v >= h) {
        if (first < 0) first = static_cast<std::int32_t>(c.nodes.size());
        c.nodes.push_back(
            ClusterNode{v, static_cast<std::int32_t>(cursor), -1, 0, g + 1});
        ++kept;
      }
    }
    // parent reference may be stale after push_back
    c.nodes[cursor].first_child = first;
    c.nodes[cursor].n_children = kept;
    if (kept > 0) {
      if (c.gen_begin.size() == static_cast<std::size_t>(g) + 2)
        c.gen_begin.push_back(c.gen_begin.back());
      c.gen_begin.back() = static_cast<std::int32_t>(c.nodes.size());
    }
    ++cursor;
  }
  return c;
}

namespace detail {

// One generation step of the frontier-only simulation; returns the next
// generation's surviving values.
inline void step_frontier(RandomStream& rng, int d, double h, double sigma_y,
                          const std::vector<double>& cur, std::vector<double>& next) {
  next.clear();
  for (double v : cur) {
    const double drift = v / d;
    for (int j = 0; j < d; ++j) {
      const double w = drift + sigma_y * rng.next_gaussian();
      if (w >= h) next.push_back(w);
    }
  }
}

}  // namespace detail

// P_x[N_n^+ != empty] by direct simulation.
inline EstimatorResult estimate_survival(const SpectralModel& m, double x, int n,
                                         long long reps, std::uint64_t seed,
                                         const ParallelConfig& par = {}) {
  if (x < m.h_star) throw std::invalid_argument("estimate_survival: x below h*");
  if (n < 0 || reps < 1) throw std::invalid_argument("estimate_survival: bad n/reps");
  const double sigma_y = std::sqrt((m.d + 1.0) / m.d);
  const double h = m.h_star;
  const int d = m.d;

  auto chunk_fn = [&](long long b, long long e) {
    Accumulator acc;
    std::vector<double> cur, next;
    for (long long r = b; r < e; ++r) {
      RandomStream rng(seed, static_cast<std::uint64_t>(r));
      cur.assign(1, x);
      int g = 0;
      while (g < n && !cur.empty()) {
        detail::step_frontier(rng, d, h, sigma_y, cur, next);
        cur.swap(next);
        ++g;
      }
      acc.add(cur.empty() ? 0.0 : 1.0);
    }
    return acc;
  };
  Accumulator total = parallel_reduce<Accumulator>(
      reps, par, chunk_fn, [](Accumulator& a, Accumulator&& b) { a.merge(b); });

  const double chi_x = m.chi_fn()(x);
  EstimatorResult res = make_result(total, seed);
  res.meta = "n_phat_over_C1chi=" + std::to_string(n * res.mean / (m.C1 * chi_x));
  if (total.sum == 0.0 && reps < 10LL * std::max(1, n)) res.meta += ";underpowered";
  return res;
}

// MC estimate of E_x[ sum_{v in N_n^+} f(phi_v) ].
template <class F>
EstimatorResult generation_sum_estimate(const SpectralModel& m, double x, int n,
                                        const F& f, long long reps, std::uint64_t seed,
                                        const ParallelConfig& par = {}) {
  const double sigma_y = std::sqrt((m.d + 1.0) / m.d);
  const double h = m.h_star;
  const int d = m.d;
  auto chunk_fn = [&](long long b, long long e) {
    Accumulator acc;
    std::vector<double> cur, next;
    for (long long r = b; r < e; ++r) {
      RandomStream rng(seed, static_cast<std::uint64_t>(r));
      cur.assign(1, x);
      for (int g = 0; g < n && !cur.empty(); ++g) {
        detail::step_frontier(rng, d, h, sigma_y, cur, next);
        cur.swap(next);
      }
      double s = 0.0;
      for (double v : cur) s += f(v);
      acc.add(s);
    }
    return acc;
  };
  Accumulator total = parallel_reduce<Accumulator>(
      reps, par, chunk_fn, [](Accumulator& a, Accumulator&& b) { a.merge(b); });
  return make_result(total, seed);
}

// MC estimate of E_x[ (sum f)(sum g) ] over N_n^+ (unrestricted pair sum).
template <class F, class G>
EstimatorResult generation_pair_sum_estimate(const SpectralModel& m, double x, int n,
                                             const F& f, const G& g, long long reps,
                                             std::uint64_t seed,
                                             const ParallelConfig& par = {}) {
  const double sigma_y = std::sqrt((m.d + 1.0) / m.d);
  const double h = m.h_star;
  const int d = m.d;
  auto chunk_fn = [&](long long b, long long e) {
    Accumulator acc;
    std::vector<double> cur, next;
    for (long long r = b; r < e; ++r) {
      RandomStream rng(seed, static_cast<std::uint64_t>(r));
      cur.assign(1, x);
      for (int gg = 0; gg < n && !cur.empty(); ++gg) {
        detail::step_frontier(rng, d, h, sigma_y, cur, next);
        cur.swap(next);
      }
      double sf = 0.0, sg = 0.0;
      for (double v : cur) {
        sf += f(v);
        sg += g(v);
      }
      acc.add(sf * sg);
    }
    return acc;
  };
  Accumulator total = parallel_reduce<Accumulator>(
      reps, par, chunk_fn, [](Accumulator& a, Accumulator&& b) { a.merge(b); });
  return make_result(total, seed);
}

struct SizeTailReport {
  std::vector<double> thresholds;  // m values, two decades, log spaced
  std::vector<double> p_hat;       // P[|C| > m]
  double slope = 0.0;              // log-log regression slope
  long long truncated = 0;         // replicates that hit node_cap
  bool flagged = false;            // truncation reached into the fit range
  long long reps = 0;
};

// Tail of |C_o intersect T^+| from x-rooted clusters; slope target -1/2.
inline SizeTailReport size_tail_exponent(const SpectralModel& m, double x,
                                         long long reps, std::uint64_t seed,
                                         std::int64_t node_cap = 100000,
                                         const ParallelConfig& par = {}) {
  if (node_cap < 100000)
    throw std::invalid_argument("size_tail_exponent: node_cap must be >= 1e5");
  if (reps < 100000)
    throw std::runtime_error("size_tail_exponent: need >= 1e5 replicates for a two-decade tail");
  const double m_lo = 100.0, m_hi = 10000.0;
  std::vector<double> thresholds;
  for (int j = 0; j <= 16; ++j) thresholds.push_back(m_lo * std::pow(10.0, j / 8.0));

  struct Partial {
    std::vector<long long> exceed;
    long long truncated = 0;
  };
  const double sigma_y = std::sqrt((m.d + 1.0) / m.d);
  const double h = m.h_star;
  const int d = m.d;
  auto chunk_fn = [&](long long b, long long e) {
    Partial p;
    p.exceed.assign(thresholds.size(), 0);
    std::vector<double> cur, next;
    for (long long r = b; r < e; ++r) {
      RandomStream rng(seed, static_cast<std::uint64_t>(r));
      cur.assign(1, x);
      std::int64_t size = 1;
      bool truncated = false;
      while (!cur.empty()) {
        if (size >= node_cap) {
          truncated = true;
          break;
        }
        detail::step_frontier(rng, d, h, sigma_y, cur, next);
        cur.swap(next);
        size += static_cast<std::int64_t>(cur.size());
      }
      if (truncated) ++p.truncated;
      for (std::size_t j = 0; j < thresholds.size(); ++j)
        if (static_cast<double>(size) > thresholds[j]) ++p.exceed[j];
    }
    return p;
  };
  Partial total = parallel_reduce<Partial>(reps, par, chunk_fn,
                                           [](Partial& a, Partial&& b) {
                                             if (a.exceed.empty())
                                               a.exceed.assign(b.exceed.size(), 0);
                                             for (std::size_t i = 0; i < b.exceed.size(); ++i)
                                               a.exceed[i] += b.exceed[i];
                                             a.truncated += b.truncated;
                                           });

  SizeTailReport rep;
  rep.thresholds = thresholds;
  rep.reps = reps;
  rep.truncated = total.truncated;
  std::vector<double> lx, ly;
  for (std::size_t j = 0; j < thresholds.size(); ++j) {
    const double p = static_cast<double>(total.exceed[j]) / static_cast<double>(reps);
    rep.p_hat.push_back(p);
    if (p > 0.0) {
      lx.push_back(std::log(thresholds[j]));
      ly.push_back(std::log(p));
    }
  }
  if (lx.size() < 5) throw std::runtime_error("size_tail_exponent: tail too sparse");
  rep.slope = least_squares(lx, ly).slope;
  // cap inside the fit range would bias the top-decade counts
  rep.flagged = static_cast<double>(node_cap) <= m_hi &&
                total.truncated > 0.01 * static_cast<double>(total.exceed.back());
  return rep;
}

struct ConditionalSample {
  std::vector<double> z;      // (1/n) sum_{N_n^+} f per accepted replicate
  std::vector<double> ratio;  // sum f / sum chi per accepted replicate
  long long reps = 0;
  long long accepted = 0;
};

// Samples of Z_n^{f,x} under P_x[ . | N_n^+ != empty ], by plain rejection.
template <class F>
ConditionalSample conditional_generation_statistic(const SpectralModel& m, double x,
                                                   int n, const F& f, long long reps,
                                                   std::uint64_t seed,
                                                   const ParallelConfig& par = {}) {
  if (n < 1 || reps < 1)
    throw std::invalid_argument("conditional_generation_statistic: bad n/reps");
  const double p_est = m.C1 * m.chi_fn()(x) / n;
  if (p_est < 1e-4)
    throw std::runtime_error(
        "conditional_generation_statistic: acceptance below 1e-4, lower n");

  struct Partial {
    std::vector<double> z, ratio;
    long long accepted = 0;
  };
  const double sigma_y = std::sqrt((m.d + 1.0) / m.d);
  const double h = m.h_star;
  const int d = m.d;
  const PiecewiseLinear chi = m.chi_fn();
  auto chunk_fn = [&](long long b, long long e) {
    Partial p;
    std::vector<double> cur, next;
    for (long long r = b; r < e; ++r) {
      RandomStream rng(seed, static_cast<std::uint64_t>(r));
      cur.assign(1, x);
      for (int g = 0; g < n && !cur.empty(); ++g) {
        detail::step_frontier(rng, d, h, sigma_y, cur, next);
        cur.swap(next);
      }
      if (cur.empty()) continue;
      double sf = 0.0, schi = 0.0;
      for (double v : cur) {
        sf += f(v);
        schi += chi(v);
      }
      p.z.push_back(sf / n);
      p.ratio.push_back(sf / schi);
      ++p.accepted;
    }
    return p;
  };
  Partial total = parallel_reduce<Partial>(
      reps, par, chunk_fn, [](Partial& a, Partial&& b) {
        a.z.insert(a.z.end(), b.z.begin(), b.z.end());
        a.ratio.insert(a.ratio.end(), b.ratio.begin(), b.ratio.end());
        a.accepted += b.accepted;
      });

  ConditionalSample out;
  out.z = std::move(total.z);
  out.ratio = std::move(total.ratio);
  out.reps = reps;
  out.accepted = total.accepted;
  if (out.accepted > 0 &&
      static_cast<double>(out.accepted) < 1e-4 * static_cast<double>(reps))
    throw std::runtime_error(
        "conditional_generation_statistic: acceptance below 1e-4, lower n");
  return out;
}

}  // namespace gfftree
