#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>
#include <vector>

#include "gfftree/parallel.hpp"
#include "gfftree/rng.hpp"
#include "gfftree/stats.hpp"

using namespace gfftree;

TEST_CASE("streams are deterministic and scheduling independent") {
  RandomStream a(42, 7), b(42, 7);
  for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());

  // distinct streams and seeds decorrelate
  RandomStream c(42, 8), d(43, 7);
  int same = 0;
  RandomStream a2(42, 7);
  for (int i = 0; i < 1000; ++i) {
    const std::uint64_t r = a2.next_u64();
    if (r == c.next_u64()) ++same;
    if (r == d.next_u64()) ++same;
  }
  CHECK(same == 0);
}

TEST_CASE("unit draws live in (0,1] and gaussians have the right moments") {
  RandomStream rng(1, 0);
  Accumulator acc;
  double min_u = 1.0;
  for (int i = 0; i < 200000; ++i) {
    const double u = rng.next_unit();
    CHECK(u > 0.0);
    CHECK(u <= 1.0);
    min_u = std::min(min_u, u);
    acc.add(rng.next_gaussian());
  }
  CHECK(std::abs(acc.mean()) < 3.0 * acc.std_error());
  CHECK(acc.variance() == doctest::Approx(1.0).epsilon(0.02));
  CHECK(min_u < 0.01);
}

TEST_CASE("parallel_reduce is bit-identical across worker counts") {
  auto fn = [](long long b, long long e) {
    Accumulator acc;
    for (long long r = b; r < e; ++r) {
      RandomStream rng(99, static_cast<std::uint64_t>(r));
      acc.add(rng.next_gaussian() * rng.next_unit());
    }
    return acc;
  };
  auto merge = [](Accumulator& a, Accumulator&& b) { a.merge(b); };
  const Accumulator w1 = parallel_reduce<Accumulator>(50000, {1, 512}, fn, merge);
  const Accumulator w8 = parallel_reduce<Accumulator>(50000, {8, 512}, fn, merge);
  CHECK(w1.n == w8.n);
  CHECK(w1.sum == w8.sum);      // bitwise, not approximate
  CHECK(w1.sumsq == w8.sumsq);
}

TEST_CASE("parallel_reduce propagates worker exceptions") {
  auto fn = [](long long b, long long) -> int {
    if (b >= 1024) throw std::runtime_error("boom");
    return 1;
  };
  CHECK_THROWS_AS(parallel_reduce<int>(10000, {4, 256}, fn,
                                       [](int& a, int&& b) { a += b; }),
                  std::runtime_error);
}

TEST_CASE("least squares recovers a planted line") {
  std::vector<double> xs, ys;
  for (int i = 0; i < 50; ++i) {
    xs.push_back(i);
    ys.push_back(3.5 * i - 2.0);
  }
  const LinearFit f = least_squares(xs, ys);
  CHECK(f.slope == doctest::Approx(3.5).epsilon(1e-12));
  CHECK(f.intercept == doctest::Approx(-2.0).epsilon(1e-9));
}

TEST_CASE("ks distance against exp(1) separates null from alternative") {
  RandomStream rng(5, 0);
  std::vector<double> exp_sample, uniform_sample;
  for (int i = 0; i < 20000; ++i) {
    exp_sample.push_back(-std::log(rng.next_unit()));
    uniform_sample.push_back(rng.next_unit());
  }
  CHECK(ks_distance_exp1(exp_sample) < 0.02);
  CHECK(ks_distance_exp1(uniform_sample) > 0.2);

  // two-sample: same law vs shifted law
  std::vector<double> exp_sample2;
  for (int i = 0; i < 20000; ++i) exp_sample2.push_back(-std::log(rng.next_unit()));
  CHECK(ks_distance_two_sample(exp_sample, exp_sample2) < 0.03);
  for (auto& v : exp_sample2) v += 0.5;
  CHECK(ks_distance_two_sample(exp_sample, exp_sample2) > 0.2);
}

TEST_CASE("chi-square p-values match reference points") {
  // classical table: P[Chi2_10 > 18.307] = 0.05, P[Chi2_4 > 13.2767] = 0.01
  CHECK(chi_square_pvalue(18.307, 10) == doctest::Approx(0.05).epsilon(1e-3));
  CHECK(chi_square_pvalue(13.2767, 4) == doctest::Approx(0.01).epsilon(1e-3));

  // uniform counts against the uniform law pass at 1%
  RandomStream rng(6, 0);
  std::vector<long long> counts(10, 0);
  for (int i = 0; i < 100000; ++i)
    ++counts[static_cast<std::size_t>(rng.next_below(10))];
  const ChiSquareResult r = chi_square_gof(counts, std::vector<double>(10, 0.1));
  CHECK(r.p_value > 0.01);
}

TEST_CASE("accumulator merge matches serial accumulation") {
  // merging reorders float additions, so values agree to rounding while the
  // bitwise contract lives in the fixed chunk order of parallel_reduce
  Accumulator all, left, right;
  RandomStream rng(7, 0);
  for (int i = 0; i < 1000; ++i) {
    const double v = rng.next_gaussian();
    all.add(v);
    (i < 500 ? left : right).add(v);
  }
  left.merge(right);
  CHECK(left.n == all.n);
  CHECK(left.sum == doctest::Approx(all.sum).epsilon(1e-13));
  CHECK(left.sumsq == doctest::Approx(all.sumsq).epsilon(1e-13));
}
