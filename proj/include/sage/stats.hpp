#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sage/plan_evaluator.hpp"

namespace sage {

struct PairedSample {
  std::string endpoint;
  std::vector<std::pair<double, double>> pairs;
};

enum class TestMethod { Exact, NormalApproximation };
std::string_view to_string(TestMethod m) noexcept;

struct TestResult {
  std::string endpoint;
  double statistic = 0.0;  // W = min(W+, W-)
  double w_plus = 0.0;
  double w_minus = 0.0;
  double p_value = 1.0;
  int n_effective = 0;
  int n_zero = 0;
  TestMethod method = TestMethod::Exact;
};

inline constexpr int kExactWilcoxonMaxN = 15;

/// Two-sided paired signed-rank test on a - b. Zero differences are dropped;
/// exact null distribution when n_effective <= 15 and |differences| are tie
/// free, otherwise normal approximation with tie and continuity correction.
TestResult wilcoxon_signed_rank(const PairedSample& sample);
TestResult wilcoxon_signed_rank(const std::string& endpoint, const std::vector<double>& differences);

/// Number of sign assignments with W+ == s, for s = 0..n(n+1)/2.
std::vector<double> signed_rank_counts(int n);

/// Benjamini-Hochberg step-up adjusted values, in input order.
std::vector<double> bh_adjust(const std::vector<double>& p_values);

struct PairedSummary {
  double median_difference = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  int n_boot = 0;
  std::uint64_t seed = 0;
};

inline constexpr int kDefaultBootstrap = 10000;

/// Sample quantile, Hyndman-Fan type 7 (linear between order statistics).
double quantile_type7(std::vector<double> values, double q);

/// Bootstrap medians of `differences`. Contract: Rng(seed); for each
/// replicate b, for each position i draw index Rng::below(n); the replicate
/// value is the median of the drawn values.
std::vector<double> bootstrap_medians(const std::vector<double>& differences, int n_boot, std::uint64_t seed);

/// Median of a - b with a 95% percentile-bootstrap interval (type-7 quantiles
/// of the bootstrap medians at 0.025 and 0.975).
PairedSummary paired_summary(const PairedSample& sample, int n_boot, std::uint64_t seed);

/// Long-format metrics: patient id -> metric id -> value. NaN marks an
/// undefined metric.
struct MetricsTable {
  std::string variant;
  std::map<std::string, std::map<std::string, double>> values;
  void set(const std::string& patient, const std::string& metric, double v) { values[patient][metric] = v; }
};

/// Reads a CSV with header patient,variant,metric,value. Returns one table per
/// variant, in order of first appearance.
std::vector<MetricsTable> read_metrics_csv(const std::filesystem::path& path);
std::vector<MetricsTable> parse_metrics_csv(const std::string& text);
std::string metrics_csv(const std::vector<MetricsTable>& tables);
/// Adds every metric of `report` for a patient.
void add_report(MetricsTable& table, const std::string& patient, const MetricsReport& report);

struct EndpointFamilies {
  std::vector<std::string> primary;
  std::vector<std::string> secondary;
  static EndpointFamilies standard();
  static EndpointFamilies from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct EndpointResult {
  std::string endpoint;
  std::string family;
  int n_pairs = 0;
  int n_dropped = 0;  // pairs with an undefined value
  bool degenerate = false;
  std::optional<TestResult> test;
  std::optional<double> q_value;
  bool significant = false;
  std::optional<PairedSummary> summary;
};

struct FamilyResult {
  std::string family;
  std::vector<EndpointResult> endpoints;
};

inline constexpr double kFdrLevel = 0.05;

/// Per endpoint: Wilcoxon on a - b, BH within each family (degenerate
/// endpoints excluded from the family's m), bootstrap summary with seed
/// mix_seed(seed ^ fnv1a(endpoint)).
std::vector<FamilyResult> endpoint_family_analysis(const MetricsTable& a, const MetricsTable& b,
                                                   const EndpointFamilies& families, int n_boot, std::uint64_t seed);
std::string family_results_csv(const std::vector<FamilyResult>& results);
nlohmann::json family_results_json(const std::vector<FamilyResult>& results);

struct PlotRow {
  std::string row_type;  // "point" or "summary"
  std::string patient;
  std::string group;
  double value = 0.0;
  double median = 0.0;
  double q1 = 0.0;
  double q3 = 0.0;
};

/// One point row per (patient, group) with a defined value, then one summary
/// row per group with median and type-7 quartiles.
std::vector<PlotRow> emit_plot_data(const std::vector<MetricsTable>& tables, const std::string& endpoint);
std::string plot_data_csv(const std::vector<PlotRow>& rows);

}  // namespace sage
