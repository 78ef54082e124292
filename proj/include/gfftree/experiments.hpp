#pragma once

// Experiment driver behind the CLI: validated configuration in, stable CSV
// and JSON files out. Every experiment draws from counter-based streams and
// merges in fixed chunk order, so (config, master_seed) determines every
// output byte regardless of the worker count.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "gfftree/cluster.hpp"
#include "gfftree/csv.hpp"
#include "gfftree/model_json.hpp"
#include "gfftree/recursion.hpp"
#include "gfftree/spine.hpp"
#include "gfftree/stats.hpp"
#include "gfftree/traversal.hpp"

namespace gfftree {

inline constexpr const char* kToolVersion = "gfftree 0.1.0";

struct ExperimentConfig {
  std::string kind;  // spectral | recursion | simulate | spine | traversal | yaglom
  int d = 2;
  int n_points = 512;
  double tail_tol = 1e-12;
  int n = 0;                    // kind-specific depth/step parameter
  std::optional<double> x;     // root value; defaults to h* + 1
  std::vector<double> alphas;  // Yaglom exponents
  long long reps = 0;
  double eta = 0.5;
  int r_cut = 20;
  int k = 2;
  std::uint64_t master_seed = 1;
  int workers = 1;
  std::filesystem::path out_dir = ".";

  void validate() const {
    const bool known = kind == "spectral" || kind == "recursion" || kind == "simulate" ||
                       kind == "spine" || kind == "traversal" || kind == "yaglom";
    if (!known) throw std::invalid_argument("config: unknown experiment kind " + kind);
    if (d < 2) throw std::invalid_argument("config: d must be >= 2");
    if (n_points < 64) throw std::invalid_argument("config: n_points must be >= 64");
    if (!(tail_tol > 0.0) || tail_tol > 1e-6)
      throw std::invalid_argument("config: tail_tol must lie in (0, 1e-6]");
    if (workers < 1 || workers > 256)
      throw std::invalid_argument("config: workers must lie in [1, 256]");
    if (kind == "recursion" && n < 500)
      throw std::invalid_argument("config: recursion needs n >= 500");
    if (kind != "spectral" && kind != "recursion") {
      if (n < 1) throw std::invalid_argument("config: n must be >= 1");
      if (reps < 1) throw std::invalid_argument("config: reps must be >= 1");
    }
    if (kind == "yaglom" || kind == "recursion") {
      for (double a : alphas)
        if (!(a > 0.0)) throw std::invalid_argument("config: alpha must be > 0");
    }
    if (kind == "traversal") {
      if (eta <= 0.0) throw std::invalid_argument("config: eta must be > 0");
      if (r_cut < 1) throw std::invalid_argument("config: r-cut must be >= 1");
      if (k < 2) throw std::invalid_argument("config: k must be >= 2");
    }
    if (x && kind != "spectral" && kind != "recursion" && *x < 0.0)
      throw std::invalid_argument("config: x must be >= 0 (critical level is positive)");
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["kind"] = kind;
    j["d"] = d;
    j["grid"] = {{"n_points", n_points}, {"tail_tol", tail_tol}};
    j["n"] = n;
    if (x) j["x"] = *x;
    j["alphas"] = alphas;
    j["reps"] = reps;
    j["eta"] = eta;
    j["r_cut"] = r_cut;
    j["k"] = k;
    j["master_seed"] = master_seed;
    j["workers"] = workers;
    return j;
  }
};

struct RunManifest {
  nlohmann::json config_echo;
  std::string model_fingerprint;
  std::string tool_version = kToolVersion;
  double wall_time_s = 0.0;
  std::vector<std::string> outputs;
};

namespace detail {

inline void write_manifest(const RunManifest& man, const std::filesystem::path& dir) {
  nlohmann::json j;
  j["config"] = man.config_echo;
  j["model_fingerprint"] = man.model_fingerprint;
  j["tool_version"] = man.tool_version;
  j["wall_time_s"] = man.wall_time_s;
  j["outputs"] = man.outputs;
  std::ofstream out(dir / "manifest.json");
  out << j.dump(2) << "\n";
}

inline std::vector<int> survival_depths(int n) {
  std::vector<int> ns;
  for (int v = std::max(1, n / 8); v < n; v *= 2) ns.push_back(v);
  ns.push_back(n);
  return ns;
}

}  // namespace detail

inline RunManifest run(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  std::filesystem::create_directories(cfg.out_dir);

  RunManifest man;
  man.config_echo = cfg.to_json();

  SpectralModel model = load_or_build_model(cfg.d, cfg.n_points, cfg.tail_tol,
                                            cfg.out_dir / "cache");
  man.model_fingerprint = model_fingerprint_hex(model_to_json(model));
  const double x = cfg.x ? *cfg.x : model.h_star + 1.0;
  const ParallelConfig par{cfg.workers, 4096};
  auto emit = [&](const std::string& name) { man.outputs.push_back(name); };

  if (cfg.kind == "spectral") {
    save_model(model, cfg.out_dir / "model.json");
    emit("model.json");
  } else if (cfg.kind == "recursion") {
    const RecursionSeries zero =
        iterate_u(model, constant_function(model.grid, 0.0), cfg.n, "zero");
    std::vector<RecursionSeries> lam_series;
    for (double a : cfg.alphas)
      lam_series.push_back(iterate_u(model, boundary_f_lambda(model, cfg.n / a), cfg.n,
                                     "f_lambda:n/alpha"));
    const std::size_t ix = model.nearest_node(x);

    std::vector<std::string> header = {"n", "a_n", "b_n", "inv_a_slope_estimate"};
    for (double a : cfg.alphas) header.push_back("yaglom_alpha_" + format_double_17(a));
    CsvWriter csv(header);
    for (int nn = 0; nn <= cfg.n; ++nn) {
      std::vector<CsvWriter::Cell> row;
      row.emplace_back(static_cast<long long>(nn));
      row.emplace_back(zero.a[static_cast<std::size_t>(nn)]);
      row.emplace_back(zero.b[static_cast<std::size_t>(nn)]);
      const double slope =
          nn > 0 ? (1.0 / zero.a[static_cast<std::size_t>(nn)] - 1.0 / zero.a[0]) / nn : 0.0;
      row.emplace_back(slope);
      for (const auto& s : lam_series) {
        const double u0 = zero.u[static_cast<std::size_t>(nn)][ix];
        row.emplace_back(1.0 - s.u[static_cast<std::size_t>(nn)][ix] / u0);
      }
      csv.add_row(std::move(row));
    }
    csv.write(cfg.out_dir / "recursion.csv");
    emit("recursion.csv");
  } else if (cfg.kind == "simulate") {
    CsvWriter surv({"n", "p_hat", "se", "n_phat_over_C1chi"});
    const double chi_x = model.chi_fn()(x);
    for (int nn : detail::survival_depths(cfg.n)) {
      EstimatorResult r = estimate_survival(model, x, nn, cfg.reps, cfg.master_seed, par);
      surv.add_row({static_cast<long long>(nn), r.mean, r.std_error,
                    nn * r.mean / (model.C1 * chi_x)});
    }
    surv.write(cfg.out_dir / "survival.csv");
    emit("survival.csv");

    SizeTailReport tail =
        size_tail_exponent(model, x, cfg.reps, cfg.master_seed + 1, 100000, par);
    CsvWriter tail_csv({"m", "p_hat"});
    for (std::size_t j = 0; j < tail.thresholds.size(); ++j)
      tail_csv.add_row({tail.thresholds[j], tail.p_hat[j]});
    tail_csv.write(cfg.out_dir / "tail.csv");
    emit("tail.csv");
  } else if (cfg.kind == "yaglom") {
    const PiecewiseLinear chi = model.chi_fn();
    ConditionalSample sample = conditional_generation_statistic(
        model, x, cfg.n, chi, cfg.reps, cfg.master_seed, par);
    CsvWriter zcsv({"z"});
    for (double z : sample.z) zcsv.add_row({z * model.C1});
    zcsv.write(cfg.out_dir / "yaglom_samples.csv");
    emit("yaglom_samples.csv");

    std::vector<double> rescaled;
    Accumulator laplace_mc;
    for (double z : sample.z) {
      rescaled.push_back(z * model.C1);
      laplace_mc.add(std::exp(-z));
    }
    const std::vector<double> alphas = cfg.alphas.empty() ? std::vector<double>{1.0}
                                                          : cfg.alphas;
    CsvWriter sum({"statistic", "value"});
    sum.add_row({std::string("accepted"), static_cast<double>(sample.accepted)});
    sum.add_row({std::string("ks_vs_exp1"), ks_distance_exp1(rescaled)});
    sum.add_row({std::string("laplace_mc_alpha1"), laplace_mc.mean()});
    sum.add_row({std::string("laplace_mc_alpha1_se"), laplace_mc.std_error()});
    const GridFunction lap = yaglom_laplace(model, 1.0, cfg.n);
    sum.add_row({std::string("laplace_recursion_alpha1"),
                 PiecewiseLinear(model.grid, lap)(x)});
    for (double a : alphas)
      sum.add_row({"limit_C1_over_C1_plus_alpha_" + format_double_17(a),
                   model.C1 / (model.C1 + a)});
    sum.write(cfg.out_dir / "yaglom_summary.csv");
    emit("yaglom_summary.csv");
  } else if (cfg.kind == "spine") {
    // stationary histogram of xi_n against pi = chi^2 nu
    const int n_bins = 24;
    const std::vector<double> edges = occupation_bin_edges(model, n_bins);
    struct Partial {
      std::vector<long long> counts;
    };
    auto chunk_fn = [&](long long b, long long e) {
      Partial p;
      p.counts.assign(n_bins, 0);
      for (long long r = b; r < e; ++r) {
        RandomStream rng(cfg.master_seed, static_cast<std::uint64_t>(r));
        SpinePath path = sample_spine_chain(model, rng, x, cfg.n);
        const double v = path.xi.back();
        int bi = 0;
        while (bi + 1 < n_bins && v >= edges[static_cast<std::size_t>(bi) + 1]) ++bi;
        ++p.counts[static_cast<std::size_t>(bi)];
      }
      return p;
    };
    Partial hist = parallel_reduce<Partial>(
        cfg.reps, par, chunk_fn, [&](Partial& a, Partial&& b) {
          if (a.counts.empty()) a.counts.assign(n_bins, 0);
          for (int i = 0; i < n_bins; ++i)
            a.counts[static_cast<std::size_t>(i)] += b.counts[static_cast<std::size_t>(i)];
        });

    CsvWriter hcsv({"bin_lo", "bin_hi", "empirical", "pi_predicted"});
    for (int i = 0; i < n_bins; ++i) {
      const double mass = chi_weighted_interval_mass(
          model.grid, model.chi, edges[static_cast<std::size_t>(i)],
          edges[static_cast<std::size_t>(i) + 1], 2);
      hcsv.add_row({edges[static_cast<std::size_t>(i)], edges[static_cast<std::size_t>(i) + 1],
                    static_cast<double>(hist.counts[static_cast<std::size_t>(i)]) /
                        static_cast<double>(cfg.reps),
                    mass});
    }
    hcsv.write(cfg.out_dir / "spine_hist.csv");
    emit("spine_hist.csv");

    // many-to-few comparisons for f, g in {1, chi}
    CsvWriter mtf({"quantity", "lhs", "lhs_se", "rhs", "rhs_se", "truth", "z_lhs_rhs",
                   "z_lhs_truth", "z_rhs_truth"});
    const GridFunction ones = constant_function(model.grid, 1.0);
    auto add_cmp = [&](const std::string& name, const MomentComparison& c) {
      mtf.add_row({name, c.lhs.mean, c.lhs.std_error, c.rhs.mean, c.rhs.std_error,
                   c.matrix_truth, c.z_lhs_rhs, c.z_lhs_truth, c.z_rhs_truth});
    };
    const int n1 = std::min(cfg.n, 12), n2 = std::min(cfg.n, 8);
    add_cmp("first_moment_f=1",
            verify_many_to_few_1(model, x, n1, ones, cfg.reps, cfg.master_seed + 2, par));
    add_cmp("first_moment_f=chi",
            verify_many_to_few_1(model, x, n1, model.chi, cfg.reps, cfg.master_seed + 3, par));
    add_cmp("second_moment_f=g=1",
            verify_many_to_few_2(model, x, n2, ones, ones, cfg.reps, cfg.master_seed + 4, par));
    add_cmp("second_moment_f=g=chi",
            verify_many_to_few_2(model, x, n2, model.chi, model.chi, cfg.reps,
                                 cfg.master_seed + 5, par));
    mtf.write(cfg.out_dir / "many_to_few.csv");
    emit("many_to_few.csv");
  } else if (cfg.kind == "traversal") {
    const long long traces = std::max<long long>(1, cfg.reps);
    MartingaleSuiteReport mart =
        martingale_suite(model, x, cfg.n, traces, cfg.master_seed, 20, par);
    CsvWriter mcsv({"bin", "increment_mean", "increment_se", "v_mean", "ds2_mean"});
    for (std::size_t i = 0; i < mart.bin_increment_mean.size(); ++i)
      mcsv.add_row({static_cast<long long>(i), mart.bin_increment_mean[i],
                    mart.bin_increment_se[i], mart.bin_v_mean[i], mart.bin_ds2_mean[i]});
    mcsv.write(cfg.out_dir / "martingale.csv");
    emit("martingale.csv");

    CsvWriter tsum({"trace", "n", "S_n", "quadratic_variation"});
    for (std::size_t t = 0; t < mart.trace_S.size(); ++t)
      tsum.add_row({static_cast<long long>(t), static_cast<long long>(cfg.n),
                    mart.trace_S[t], mart.trace_qv[t]});
    tsum.write(cfg.out_dir / "trace_summary.csv");
    emit("trace_summary.csv");

    CsvWriter stats({"statistic", "value"});
    stats.add_row({std::string("mean_S_n"), mart.mean_S});
    stats.add_row({std::string("mean_S_n_se"), mart.mean_S_se});
    stats.add_row({std::string("var_S_over_n"), mart.var_S_over_n});
    stats.add_row({std::string("sigma2_model"), model.sigma2});
    stats.add_row({std::string("dS2_regression_slope"), mart.regression_slope});
    stats.write(cfg.out_dir / "traversal_stats.csv");
    emit("traversal_stats.csv");

    // LLN along one long trace
    RandomStream lln_rng(cfg.master_seed, 0xFEEDull);
    TraversalTrace tr = run_traversal(model, lln_rng, x, cfg.n);
    const PiecewiseLinear chi = model.chi_fn();
    GridFunction capped(model.grid.size());
    const double cap = chi(model.h_star + 3.0);
    for (std::size_t i = 0; i < capped.size(); ++i)
      capped[i] = std::min(model.chi[i], cap);
    const GridFunction ones = constant_function(model.grid, 1.0);
    const double denom = inner_product(model.grid, model.chi, ones);
    CsvWriter lcsv({"f", "m_n", "target"});
    lcsv.add_row({std::string("one"), traversal_lln(tr, [](double) { return 1.0; }), 1.0});
    const PiecewiseLinear capped_fn(model.grid, capped);
    lcsv.add_row({std::string("min_chi_cap"), traversal_lln(tr, capped_fn),
                  inner_product(model.grid, model.chi, capped) / denom});
    lcsv.write(cfg.out_dir / "lln.csv");
    emit("lln.csv");

    // bad fractions and matrix norms on conditioned clusters
    CsvWriter bcsv({"eta", "R", "n", "fraction"});
    CsvWriter dcsv({"n", "frobenius"});
    const int n_cond = std::min(cfg.n > 100 ? 80 : cfg.n, 100);
    struct CondPartial {
      std::vector<double> fractions, norms;
    };
    const long long clusters = std::min<long long>(cfg.reps, 500);
    auto cond_fn = [&](long long b, long long e) {
      CondPartial p;
      for (long long r = b; r < e; ++r) {
        RandomStream rng(cfg.master_seed, 0xC0D0ull + static_cast<std::uint64_t>(r));
        ConditionedTree ct = conditioned_tree(model, rng, x, n_cond);
        p.fractions.push_back(bad_fraction(ct.cluster, model, cfg.eta, cfg.r_cut, n_cond));
        DistanceMatrices dm = distance_matrices(ct.cluster, model, rng, cfg.k, n_cond);
        p.norms.push_back(matrix_coupling_norm(dm, model));
      }
      return p;
    };
    CondPartial cond = parallel_reduce<CondPartial>(
        clusters, par, cond_fn, [](CondPartial& a, CondPartial&& b) {
          a.fractions.insert(a.fractions.end(), b.fractions.begin(), b.fractions.end());
          a.norms.insert(a.norms.end(), b.norms.begin(), b.norms.end());
        });
    for (double fr : cond.fractions)
      bcsv.add_row({cfg.eta, static_cast<long long>(cfg.r_cut),
                    static_cast<long long>(n_cond), fr});
    for (double nm : cond.norms) dcsv.add_row({static_cast<long long>(n_cond), nm});
    bcsv.write(cfg.out_dir / "badfrac.csv");
    emit("badfrac.csv");
    dcsv.write(cfg.out_dir / "matnorm.csv");
    emit("matnorm.csv");
  }

  man.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  detail::write_manifest(man, cfg.out_dir);
  man.outputs.push_back("manifest.json");
  return man;
}

}  // namespace gfftree
