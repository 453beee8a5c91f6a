#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sage/case_model.hpp"
#include "sage/dose_engine.hpp"

namespace sage {

/// Cumulative DVH with exact voxel counting. counts[k] is the number of
/// structure voxels with dose >= k * bin_width; the last entry is always 0.
struct DvhCurve {
  std::string structure;
  double bin_width_gy = 0.1;
  std::size_t total = 0;
  std::vector<std::size_t> counts;

  double threshold(std::size_t k) const noexcept { return static_cast<double>(k) * bin_width_gy; }
  double fraction(std::size_t k) const noexcept {
    return static_cast<double>(counts[k]) / static_cast<double>(total);
  }
};

DvhCurve compute_dvh(const DoseDistribution& dose, const StructureMask& mask, double bin_width_gy);

double coverage(const DoseDistribution& dose, const StructureMask& ptv, double prescription_gy);

/// Paddick conformity index TV_PIV^2 / (TV * PIV); 0 when nothing reaches
/// the prescription.
double conformity_index(const DoseDistribution& dose, const StructureMask& ptv, double prescription_gy);

/// RTOG ratio PIV / TV, reported alongside the Paddick index.
double rtog_conformity_index(const DoseDistribution& dose, const StructureMask& ptv, double prescription_gy);

/// Paddick gradient index V(50% Rx) / V(100% Rx). Throws undefined-metric
/// when no voxel reaches the prescription.
double gradient_index(const DoseDistribution& dose, double prescription_gy);

/// Volume (cc) of brain minus GTV receiving at least 12 Gy.
double v12_normal_brain(const DoseDistribution& dose, const StructureMask& brain, const StructureMask& gtv,
                        double threshold_gy = 12.0);

struct MetricsReport {
  double coverage_pct = 0.0;
  double dmax_gy = 0.0;
  double ci = 0.0;
  double rtog_ci = 0.0;
  std::optional<double> gi;
  double v12_cc = 0.0;
  std::map<StructureRole, double> oar_dmax_gy;

  /// Looks up a metric by id (coverage_pct, dmax_gy, ci, rtog_ci, gi, v12_cc,
  /// brainstem_dmax_gy, optic_chiasm_dmax_gy, optic_nerve_l_dmax_gy, ...).
  /// Undefined GI comes back as NaN; unknown or absent ids as nullopt.
  std::optional<double> value(std::string_view metric_id) const;

  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

/// Metric id for the maximum dose of a serial OAR, e.g. "cochlea_r_dmax_gy".
std::string oar_metric_id(StructureRole role);

inline constexpr std::array<std::string_view, 4> kPrimaryEndpoints = {"coverage_pct", "dmax_gy", "ci", "gi"};
/// Six serial-OAR maxima plus normal-brain V12.
std::vector<std::string> secondary_endpoints();
/// Every metric id a report can produce.
std::vector<std::string> all_metric_ids();

MetricsReport evaluate_plan(const DoseDistribution& dose, const Case& c);

enum class Comparator { Greater, Less, GreaterEqual, LessEqual };

std::string_view to_string(Comparator c) noexcept;
Comparator comparator_from_string(std::string_view s);

struct Goal {
  std::string metric;
  Comparator comparator = Comparator::Less;
  double threshold = 0.0;
  std::string units;

  friend bool operator==(const Goal&, const Goal&) = default;
};

struct GoalSet {
  std::vector<Goal> goals;
};

/// Built-in copy of config/goals.json: coverage > 95 %, Dmax < 21.6 Gy,
/// V12 < 10 cc, brainstem < 12 Gy, chiasm and lateral OARs < 9 Gy.
GoalSet standard_goals();

void validate_goal_set(const GoalSet& goals);

struct GoalResult {
  Goal goal;
  double value = 0.0;
  bool passed = false;
};

struct GoalCheck {
  std::vector<GoalResult> results;
  bool overall = false;

  int passed_count() const noexcept;
};

GoalCheck check_goals(const MetricsReport& report, const GoalSet& goals);

}  // namespace sage
