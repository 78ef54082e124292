#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gfftree/recursion.hpp"
#include "gfftree/traversal.hpp"
#include "oracles.hpp"

using namespace gfftree;

namespace {
const ParallelConfig kPar{2, 64};
}

TEST_CASE("trace structure: start, height steps, tree indices") {
  const SpectralModel& m = oracles::model_d2();
  const double x = m.h_star + 1.0;
  RandomStream rng(61, 0);
  const TraversalTrace t = run_traversal(m, rng, x, 20000);

  CHECK(t.S[0] == 0.0);  // S_1 = chi(x) - chi(x)
  CHECK(t.H[0] == 0);
  CHECK(t.Lambda[0] == 1);
  for (std::size_t k = 1; k < t.n_steps(); ++k) {
    CHECK(t.H[k] <= t.H[k - 1] + 1);
    CHECK(t.H[k] >= 0);
    const std::int64_t dl = t.Lambda[k] - t.Lambda[k - 1];
    CHECK(dl >= 0);
    CHECK(dl <= 1);
    // H returns to zero exactly when Lambda increments
    CHECK((dl == 1) == (t.H[k] == 0));
    CHECK(t.phi[k] >= m.h_star);
  }
}

TEST_CASE("definitional identity for S against the sibling stack") {
  const SpectralModel& m = oracles::model_d2();
  const double x = m.h_star + 1.0;
  const PiecewiseLinear chi = m.chi_fn();
  RandomStream rng(62, 0);
  RandomStream pick(63, 0);
  // recompute S_k = chi(phi_k) - Lambda_k chi(x) + sum_{Y(v_k)} chi on ~1%
  // random spot checks
  detail::traverse_forest(m, rng, x, 50000,
                          [&](long long, double phi, std::int32_t, std::int64_t lam,
                              double S, double, double stack_chi) {
                            if (pick.next_unit() > 0.01) return;
                            const double definitional =
                                chi(phi) - static_cast<double>(lam) * chi(x) + stack_chi;
                            CHECK(std::abs(S - definitional) < 1e-8);
                          });
}

TEST_CASE("increments satisfy the child-sum identity") {
  const SpectralModel& m = oracles::model_d2();
  const double x = m.h_star + 1.0;
  RandomStream rng(64, 0);
  const TraversalTrace t = run_traversal(m, rng, x, 5000);
  // replay with the same stream gives the same dS sequence
  RandomStream rng2(64, 0);
  std::vector<double> ds;
  detail::traverse_forest(m, rng2, x, 5000,
                          [&](long long, double, std::int32_t, std::int64_t, double,
                              double d, double) { ds.push_back(d); });
  for (std::size_t k = 0; k + 1 < t.n_steps(); ++k)
    CHECK(t.S[k + 1] == doctest::Approx(t.S[k] + ds[k]).epsilon(1e-12));
}

TEST_CASE("martingale nullity per field bin and the variance identity") {
  const SpectralModel& m = oracles::model_d2();
  const double x = m.h_star + 1.0;
  const MartingaleSuiteReport rep = martingale_suite(m, x, 2000, 3000, 65, 20, kPar);

  for (std::size_t b = 0; b < rep.bin_increment_mean.size(); ++b)
    CHECK(std::abs(rep.bin_increment_mean[b]) < 3.0 * rep.bin_increment_se[b]);

  // E[(dS)^2 | bin] = E[V | bin]: compare binwise within 5 relative percent
  for (std::size_t b = 0; b < rep.bin_ds2_mean.size(); ++b)
    CHECK(rep.bin_ds2_mean[b] == doctest::Approx(rep.bin_v_mean[b]).epsilon(0.05));

  // overall mean of S_n vanishes
  CHECK(std::abs(rep.mean_S) < 3.0 * rep.mean_S_se);

  // fourth moments of increments are finite and stable across the trace
  CHECK(std::isfinite(rep.ds4_first_half));
  CHECK(rep.ds4_first_half / rep.ds4_second_half > 0.5);
  CHECK(rep.ds4_first_half / rep.ds4_second_half < 2.0);

  // variance growth is near sigma^2 already at moderate depth
  CHECK(rep.var_S_over_n == doctest::Approx(m.sigma2).epsilon(0.10));
}

TEST_CASE("d = 3 traversal keeps the martingale and variance identities") {
  const SpectralModel& m = oracles::model_d3();
  const double x = m.h_star + 1.0;
  const MartingaleSuiteReport rep = martingale_suite(m, x, 1500, 2000, 78, 16, kPar);
  for (std::size_t b = 0; b < rep.bin_increment_mean.size(); ++b)
    CHECK(std::abs(rep.bin_increment_mean[b]) < 3.0 * rep.bin_increment_se[b]);
  for (std::size_t b = 0; b < rep.bin_ds2_mean.size(); ++b)
    CHECK(rep.bin_ds2_mean[b] == doctest::Approx(rep.bin_v_mean[b]).epsilon(0.05));
  CHECK(std::abs(rep.mean_S) < 3.0 * rep.mean_S_se);
  CHECK(rep.var_S_over_n == doctest::Approx(m.sigma2).epsilon(0.12));
}

TEST_CASE("law of large numbers along the traversal") {
  const SpectralModel& m = oracles::model_d2();
  const double x = m.h_star + 1.0;
  RandomStream rng(66, 0);
  const TraversalTrace t = run_traversal(m, rng, x, 100000);

  CHECK(traversal_lln(t, [](double) { return 1.0; }) == 1.0);

  const GridFunction ones = constant_function(m.grid, 1.0);
  const double denom = inner_product(m.grid, m.chi, ones);
  const PiecewiseLinear chi = m.chi_fn();
  const double cap = chi(m.h_star + 3.0);
  GridFunction capped(m.grid.size());
  for (std::size_t i = 0; i < capped.size(); ++i) capped[i] = std::min(m.chi[i], cap);
  const double target = inner_product(m.grid, m.chi, capped) / denom;
  const PiecewiseLinear capped_fn(m.grid, capped);
  CHECK(std::abs(traversal_lln(t, capped_fn) / target - 1.0) < 0.02);

  // indicator of a field bin matches the occupation quadrature within 3 SE
  const double lo = m.h_star + 0.5, hi_edge = m.h_star + 1.5;
  const double bin_mass = chi_weighted_interval_mass(m.grid, m.chi, lo, hi_edge, 1);
  const double bin_target = bin_mass / denom;
  Accumulator traces;
  for (int r = 0; r < 24; ++r) {
    RandomStream rr(67, static_cast<std::uint64_t>(r));
    const TraversalTrace tt = run_traversal(m, rr, x, 10000);
    traces.add(traversal_lln(
        tt, [&](double v) { return v >= lo && v < hi_edge ? 1.0 : 0.0; }));
  }
  CHECK(std::abs(traces.mean() - bin_target) < 3.0 * traces.std_error());
}

TEST_CASE("tree index scales like sqrt(n)") {
  const SpectralModel& m = oracles::model_d2();
  const double x = m.h_star + 1.0;
  std::vector<double> normalized;
  int idx = 0;
  for (long long n : {1000LL, 10000LL, 100000LL}) {
    EstimatorResult lam = lambda_at_step(m, x, n, idx == 2 ? 100 : 400, 68 + idx, kPar);
    normalized.push_back(lam.mean / std::sqrt(static_cast<double>(n)));
    ++idx;
  }
  const double lo = std::min({normalized[0], normalized[1], normalized[2]});
  const double hi = std::max({normalized[0], normalized[1], normalized[2]});
  CHECK(hi / lo < 1.5);
}

TEST_CASE("sup of S-bar over n trees follows the excursion tail") {
  const SpectralModel& m = oracles::model_d2();
  const double x = m.h_star + 1.0;
  const int n = 200;
  const double y = 1.0 / m.C1;
  const double threshold = n * y;
  const long long forests = 10000;

  auto chunk_fn = [&](long long b, long long e) {
    Accumulator acc;
    for (long long f = b; f < e; ++f) {
      RandomStream rng(71, static_cast<std::uint64_t>(f));
      bool any = false;
      for (int i = 0; i < n && !any; ++i)
        any = single_tree_sup_sbar(m, rng, x, threshold).reached;
      acc.add(any ? 1.0 : 0.0);
    }
    return acc;
  };
  Accumulator hit = parallel_reduce<Accumulator>(
      forests, kPar, chunk_fn, [](Accumulator& a, Accumulator&& b) { a.merge(b); });

  const double target = 1.0 - std::exp(-m.chi_fn()(x) / y);
  CHECK(std::abs(hit.mean() - target) < 3.0 * hit.std_error());
}

TEST_CASE("conditioned trees reach the target generation and scale like n^2") {
  const SpectralModel& m = oracles::model_d2();
  const double x = m.h_star + 1.0;
  RandomStream rng(72, 0);

  std::vector<double> med_over_n2;
  for (int n : {20, 40, 80}) {
    std::vector<double> sizes;
    for (int c = 0; c < 120; ++c) {
      const ConditionedTree ct = conditioned_tree(m, rng, x, n);
      CHECK(ct.cluster.generations() > n);
      CHECK(ct.cluster.gen_count(n) >= 1);
      sizes.push_back(static_cast<double>(ct.cluster.size()));
    }
    med_over_n2.push_back(median(sizes) / (static_cast<double>(n) * n));
  }
  const double lo = std::min({med_over_n2[0], med_over_n2[1], med_over_n2[2]});
  const double hi = std::max({med_over_n2[0], med_over_n2[1], med_over_n2[2]});
  CHECK(hi / lo < 2.0);

  CHECK_THROWS_AS(conditioned_tree(m, rng, x, 101), std::invalid_argument);
}

TEST_CASE("sup of S-bar on conditioned trees clears the C1 threshold") {
  const SpectralModel& m = oracles::model_d2();
  const double x = m.h_star + 1.0;
  const int n = 80;
  const long long clusters = 800;  // true clearing probability is ~0.933
  auto chunk_fn = [&](long long b, long long e) {
    Accumulator acc;
    for (long long c = b; c < e; ++c) {
      RandomStream rng(73, static_cast<std::uint64_t>(c));
      const ConditionedTree ct = conditioned_tree(m, rng, x, n);
      const std::vector<double> sbar = sbar_values(ct.cluster, m);
      double sup = 0.0;
      for (double v : sbar) sup = std::max(sup, v);
      acc.add(sup >= n / m.C1 ? 1.0 : 0.0);
    }
    return acc;
  };
  Accumulator cleared = parallel_reduce<Accumulator>(
      clusters, kPar, chunk_fn, [](Accumulator& a, Accumulator&& b) { a.merge(b); });
  CHECK(cleared.mean() >= 0.9);
}

TEST_CASE("per-vertex S-bar equals the traversal stack sums") {
  const SpectralModel& m = oracles::model_d2();
  RandomStream rng(74, 0);
  const PiecewiseLinear chi = m.chi_fn();
  for (int rep = 0; rep < 50; ++rep) {
    Cluster c = sample_cluster(rng, 2, m.h_star, m.h_star + 1.0, 40, 100000);
    if (c.size() < 3) continue;
    const std::vector<double> sbar = sbar_values(c, m);
    // brute force: climb ancestors, add chi over later siblings
    for (std::size_t v = 0; v < c.size(); v += 7) {
      double expect = 0.0;
      for (std::int32_t w = static_cast<std::int32_t>(v); w > 0;
           w = c.nodes[static_cast<std::size_t>(w)].parent) {
        const ClusterNode& parent = c.nodes[static_cast<std::size_t>(
            c.nodes[static_cast<std::size_t>(w)].parent)];
        bool after = false;
        for (std::int32_t j = 0; j < parent.n_children; ++j) {
          const std::int32_t sib = parent.first_child + j;
          if (after) expect += chi(c.nodes[static_cast<std::size_t>(sib)].value);
          if (sib == w) after = true;
        }
      }
      CHECK(sbar[v] == doctest::Approx(expect).epsilon(1e-9));
    }
  }
}

TEST_CASE("bad fractions: degenerate R, monotonicity, small at scale") {
  const SpectralModel& m = oracles::model_d2();
  const double x = m.h_star + 1.0;
  RandomStream rng(75, 0);
  const int n = 80;

  Accumulator frac_eta25, frac_eta50, frac_eta100;
  Accumulator frac_r10, frac_r20, frac_r40;
  const int clusters = 300;
  for (int c = 0; c < clusters; ++c) {
    const ConditionedTree ct = conditioned_tree(m, rng, x, n);
    CHECK(bad_fraction(ct.cluster, m, 0.5, n + 1, n) == 0.0);  // R > n
    frac_eta25.add(bad_fraction(ct.cluster, m, 0.25, 20, n));
    frac_eta50.add(bad_fraction(ct.cluster, m, 0.5, 20, n));
    frac_eta100.add(bad_fraction(ct.cluster, m, 1.0, 20, n));
    frac_r10.add(bad_fraction(ct.cluster, m, 0.5, 10, n));
    frac_r20.add(bad_fraction(ct.cluster, m, 0.5, 20, n));
    frac_r40.add(bad_fraction(ct.cluster, m, 0.5, 40, n));
  }
  // nesting in eta
  CHECK(frac_eta25.mean() >= frac_eta50.mean());
  CHECK(frac_eta50.mean() >= frac_eta100.mean());
  // decreasing in R on average
  CHECK(frac_r10.mean() >= frac_r20.mean());
  CHECK(frac_r20.mean() >= frac_r40.mean());
  // small at desk scale
  CHECK(frac_eta50.mean() < 0.2);
}

TEST_CASE("ratio concentration sharpens with depth") {
  const SpectralModel& m = oracles::model_d2();
  const double x = m.h_star + 1.0;
  RandomStream rng(76, 0);
  const double target = 1.0 / m.C1;

  std::vector<double> deviant_fraction;
  for (int n : {20, 80}) {
    long long total = 0, deviant = 0;
    for (int c = 0; c < 150; ++c) {
      const ConditionedTree ct = conditioned_tree(m, rng, x, n);
      const std::vector<double> sbar = sbar_values(ct.cluster, m);
      for (std::size_t v = 0; v < ct.cluster.size(); ++v) {
        const int h = ct.cluster.nodes[v].generation;
        if (h < n / 2 || h > n) continue;
        ++total;
        if (std::abs(sbar[v] / h - target) > 0.25) ++deviant;
      }
    }
    deviant_fraction.push_back(static_cast<double>(deviant) /
                               static_cast<double>(total));
  }
  CHECK(deviant_fraction[1] < deviant_fraction[0]);
}

TEST_CASE("distance matrices: symmetry, mrca oracle, coupling trend") {
  const SpectralModel& m = oracles::model_d2();
  const double x = m.h_star + 1.0;
  RandomStream rng(77, 0);

  // mrca against brute force on random pairs
  for (int rep = 0; rep < 20; ++rep) {
    const Cluster c = sample_cluster(rng, 2, m.h_star, x, 40, 100000);
    if (c.size() < 2) continue;
    for (int pair = 0; pair < 5; ++pair) {
      const std::int32_t a =
          static_cast<std::int32_t>(rng.next_below(static_cast<std::uint64_t>(c.size())));
      const std::int32_t b =
          static_cast<std::int32_t>(rng.next_below(static_cast<std::uint64_t>(c.size())));
      CHECK(most_recent_common_ancestor(c, a, b) == oracles::brute_force_mrca(c, a, b));
    }
  }

  // structural checks and the coupling median trend
  std::vector<double> medians;
  for (int n : {20, 40, 80}) {
    std::vector<double> norms;
    for (int c = 0; c < 150; ++c) {
      const ConditionedTree ct = conditioned_tree(m, rng, x, n);
      const DistanceMatrices dm = distance_matrices(ct.cluster, m, rng, 2, n);
      CHECK(dm.DH[0][0] == 0.0);
      CHECK(dm.DS[1][1] == 0.0);
      CHECK(dm.DH[0][1] == dm.DH[1][0]);
      CHECK(dm.DS[0][1] == dm.DS[1][0]);
      CHECK(dm.DH[0][1] >= 0.0);
      CHECK(dm.DS[0][1] >= 0.0);
      norms.push_back(matrix_coupling_norm(dm, m));
    }
    medians.push_back(median(norms));
  }
  CHECK(medians[2] < medians[0]);
  CHECK(medians[2] < 0.3);
}
