#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "sage/agent.hpp"
#include "sage/case_model.hpp"
#include "sage/dose_engine.hpp"
#include "sage/serialization.hpp"

namespace sage::test {

inline std::filesystem::path data_path(const std::string& name) { return std::filesystem::path(SAGE_TEST_DATA) / name; }

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class TempDir {
 public:
  TempDir() {
    static std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("sage-test-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

// The default cranial case, generated once per process.
inline const Case& standard_case() {
  static const Case c = [] {
    auto spec = standard_case_spec();
    spec.id = "fixture";
    return generate_synthetic_case(spec);
  }();
  return c;
}

inline const DoseInfluence& standard_influence() {
  static const DoseInfluence inf = compute_influence(standard_case());
  return inf;
}

inline std::string policy_reply(const std::string& name) { return read_file(data_path("policy/" + name + ".txt")); }

// Small cube grid with one structure per role needed by the evaluator.
inline VoxelGrid cube_grid(int n, double spacing) {
  return VoxelGrid({n, n, n}, {spacing, spacing, spacing}, {0.0, 0.0, 0.0});
}

inline DoseDistribution uniform_dose(const VoxelGrid& g, double value) {
  return DoseDistribution{g, std::vector<double>(g.size(), value)};
}

inline SessionConfig quiet_config(std::uint64_t seed = 1) {
  SessionConfig cfg;
  cfg.seed = seed;
  cfg.clock_ms = [] { return 0.0; };
  cfg.sleep = [](double) {};
  cfg.warn = [](const std::string&) {};
  return cfg;
}

}  // namespace sage::test
