#pragma once

// JSON serialization of the spectral model and a content-hash keyed cache.
// The document carries exactly the derived data; the operator matrix and
// kernel tables are rebuilt deterministically from it on load, so a
// round-trip reproduces every constant bit for bit.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "gfftree/spectral_model.hpp"

namespace gfftree {

inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline nlohmann::json model_to_json(const SpectralModel& m) {
  nlohmann::json j;
  j["d"] = m.d;
  j["h_star"] = m.h_star;
  j["gamma"] = m.gamma;
  j["C1"] = m.C1;
  j["C1_tilde"] = m.C1_tilde;
  j["sigma2"] = m.sigma2;
  j["grid"] = {{"nodes", m.grid.nodes},
               {"weights", m.grid.weights},
               {"x_max", m.grid.x_max},
               {"tail_tol", m.grid.tail_tol}};
  j["chi"] = m.chi.values;
  j["V"] = m.V.values;
  return j;
}

inline std::string model_fingerprint_hex(const nlohmann::json& model_doc) {
  std::ostringstream os;
  os << std::hex << fnv1a64(model_doc.dump());
  return os.str();
}

inline SpectralModel model_from_json(const nlohmann::json& j) {
  SpectralModel m;
  m.d = j.at("d").get<int>();
  m.h_star = j.at("h_star").get<double>();
  m.gamma = j.at("gamma").get<double>();
  m.C1 = j.at("C1").get<double>();
  m.C1_tilde = j.at("C1_tilde").get<double>();
  m.sigma2 = j.at("sigma2").get<double>();
  m.grid.d = m.d;
  m.grid.h = m.h_star;
  m.grid.x_max = j.at("grid").at("x_max").get<double>();
  m.grid.tail_tol = j.at("grid").at("tail_tol").get<double>();
  m.grid.nodes = j.at("grid").at("nodes").get<std::vector<double>>();
  m.grid.weights = j.at("grid").at("weights").get<std::vector<double>>();
  m.grid.nu_density.resize(m.grid.nodes.size());
  for (std::size_t i = 0; i < m.grid.nodes.size(); ++i)
    m.grid.nu_density[i] = gaussian_density(m.grid.nodes[i], m.grid.sigma2_nu());
  m.chi.values = j.at("chi").get<std::vector<double>>();
  m.V.values = j.at("V").get<std::vector<double>>();
  check_match(m.grid, m.chi);
  check_match(m.grid, m.V);
  m.lambda_of_h[m.h_star] = 1.0;
  m.op = assemble_operator(m.grid);
  m.kernel_cdfs = detail::build_kernel_table(m.grid, m.chi);
  return m;
}

inline void save_model(const SpectralModel& m, const std::filesystem::path& file) {
  nlohmann::json doc;
  doc["model"] = model_to_json(m);
  doc["fingerprint"] = model_fingerprint_hex(doc["model"]);
  std::ofstream out(file);
  if (!out) throw std::runtime_error("save_model: cannot write " + file.string());
  out << doc.dump(2) << "\n";
}

// Cache keyed by grid parameters; a corrupt or fingerprint-mismatched file
// triggers a rebuild with a warning on stderr.
inline SpectralModel load_or_build_model(int d, int n_points, double tail_tol,
                                         const std::filesystem::path& cache_dir) {
  std::filesystem::create_directories(cache_dir);
  std::ostringstream key;
  key << "d=" << d << ";n_points=" << n_points << ";tail_tol=" << tail_tol;
  std::ostringstream name;
  name << "model-" << std::hex << fnv1a64(key.str()) << ".json";
  const std::filesystem::path file = cache_dir / name.str();

  if (std::filesystem::exists(file)) {
    try {
      std::ifstream in(file);
      nlohmann::json doc = nlohmann::json::parse(in);
      if (doc.at("fingerprint").get<std::string>() !=
          model_fingerprint_hex(doc.at("model")))
        throw std::runtime_error("fingerprint mismatch");
      SpectralModel m = model_from_json(doc.at("model"));
      if (m.d != d) throw std::runtime_error("cache key collision");
      return m;
    } catch (const std::exception& e) {
      std::cerr << "warning: model cache " << file << " unusable (" << e.what()
                << "), rebuilding\n";
    }
  }
  SpectralModel m = find_h_star(d, 1e-12, n_points, tail_tol);
  save_model(m, file);
  return m;
}

}  // namespace gfftree
