#include "sage/plan_evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "sage/error.hpp"

namespace sage {

namespace {

void require_nonempty(const StructureMask& mask) {
  if (mask.empty()) throw Error(ErrorKind::EmptyStructure, "structure '" + mask.name + "' is empty");
}

void require_match(const DoseDistribution& dose, const StructureMask& mask) {
  if (dose.grid.dims() != mask.dims || dose.dose.size() != dose.grid.size()) {
    throw Error(ErrorKind::GeometryError, "dose grid does not match structure '" + mask.name + "'");
  }
}

std::size_t count_at_least(const DoseDistribution& dose, const std::vector<std::uint32_t>& voxels, double level) {
  std::size_t n = 0;
  for (auto v : voxels) n += dose.dose[v] >= level;
  return n;
}

std::size_t count_at_least(const DoseDistribution& dose, double level) {
  std::size_t n = 0;
  for (double d : dose.dose) n += d >= level;
  return n;
}

}  // namespace

DvhCurve compute_dvh(const DoseDistribution& dose, const StructureMask& mask, double bin_width_gy) {
  require_nonempty(mask);
  require_match(dose, mask);
  if (!(bin_width_gy > 0.0)) throw Error(ErrorKind::InvalidArgument, "bin width must be > 0");

  double dmax = 0.0;
  for (auto v : mask.voxels) dmax = std::max(dmax, dose.dose[v]);
  DvhCurve curve{mask.name, bin_width_gy, mask.voxels.size(), {}};
  auto bin_of = [&](double d) {
    // Largest k with k * bin_width <= d, consistent with threshold().
    auto k = static_cast<std::size_t>(std::max(0.0, std::floor(d / bin_width_gy)));
    while (k > 0 && static_cast<double>(k) * bin_width_gy > d) --k;
    while (static_cast<double>(k + 1) * bin_width_gy <= d) ++k;
    return k;
  };
  const std::size_t top = bin_of(dmax) + 1;
  std::vector<std::size_t> hist(top + 1, 0);
  for (auto v : mask.voxels) ++hist[bin_of(std::max(0.0, dose.dose[v]))];
  curve.counts.assign(top + 1, 0);
  std::size_t running = 0;
  for (std::size_t k = top + 1; k-- > 0;) {
    running += hist[k];
    curve.counts[k] = running;
  }
  return curve;
}

double coverage(const DoseDistribution& dose, const StructureMask& ptv, double prescription_gy) {
  require_nonempty(ptv);
  require_match(dose, ptv);
  return 100.0 * static_cast<double>(count_at_least(dose, ptv.voxels, prescription_gy)) /
         static_cast<double>(ptv.voxels.size());
}

double conformity_index(const DoseDistribution& dose, const StructureMask& ptv, double prescription_gy) {
  require_nonempty(ptv);
  require_match(dose, ptv);
  const auto piv = count_at_least(dose, prescription_gy);
  if (piv == 0) return 0.0;
  const auto tv_piv = static_cast<double>(count_at_least(dose, ptv.voxels, prescription_gy));
  return tv_piv * tv_piv / (static_cast<double>(ptv.voxels.size()) * static_cast<double>(piv));
}

double rtog_conformity_index(const DoseDistribution& dose, const StructureMask& ptv, double prescription_gy) {
  require_nonempty(ptv);
  require_match(dose, ptv);
  return static_cast<double>(count_at_least(dose, prescription_gy)) / static_cast<double>(ptv.voxels.size());
}

double gradient_index(const DoseDistribution& dose, double prescription_gy) {
  const auto v100 = count_at_least(dose, prescription_gy);
  if (v100 == 0) throw Error(ErrorKind::UndefinedMetric, "no voxel reaches the prescription dose");
  return static_cast<double>(count_at_least(dose, 0.5 * prescription_gy)) / static_cast<double>(v100);
}

double v12_normal_brain(const DoseDistribution& dose, const StructureMask& brain, const StructureMask& gtv,
                        double threshold_gy) {
  require_nonempty(brain);
  require_match(dose, brain);
  const auto normal = subtract_masks(brain, gtv);
  return static_cast<double>(count_at_least(dose, normal.voxels, threshold_gy)) * dose.grid.voxel_volume_cc();
}

std::string oar_metric_id(StructureRole role) {
  switch (role) {
    case StructureRole::Brainstem: return "brainstem_dmax_gy";
    case StructureRole::OpticChiasm: return "optic_chiasm_dmax_gy";
    case StructureRole::OpticNerveL: return "optic_nerve_l_dmax_gy";
    case StructureRole::OpticNerveR: return "optic_nerve_r_dmax_gy";
    case StructureRole::CochleaL: return "cochlea_l_dmax_gy";
    case StructureRole::CochleaR: return "cochlea_r_dmax_gy";
    default: return std::string(to_string(role)) + "_dmax_gy";
  }
}

std::vector<std::string> secondary_endpoints() {
  return {oar_metric_id(StructureRole::Brainstem), oar_metric_id(StructureRole::OpticChiasm), "v12_cc",
          oar_metric_id(StructureRole::OpticNerveL), oar_metric_id(StructureRole::OpticNerveR),
          oar_metric_id(StructureRole::CochleaL), oar_metric_id(StructureRole::CochleaR)};
}

std::vector<std::string> all_metric_ids() {
  std::vector<std::string> ids = {"coverage_pct", "dmax_gy", "ci", "rtog_ci", "gi", "v12_cc"};
  for (auto r : kSerialOars) ids.push_back(oar_metric_id(r));
  return ids;
}

std::optional<double> MetricsReport::value(std::string_view id) const {
  if (id == "coverage_pct") return coverage_pct;
  if (id == "dmax_gy") return dmax_gy;
  if (id == "ci") return ci;
  if (id == "rtog_ci") return rtog_ci;
  if (id == "gi") return gi.value_or(std::numeric_limits<double>::quiet_NaN());
  if (id == "v12_cc") return v12_cc;
  for (const auto& [role, d] : oar_dmax_gy) {
    if (oar_metric_id(role) == id) return d;
  }
  return std::nullopt;
}

MetricsReport evaluate_plan(const DoseDistribution& dose, const Case& c) {
  const auto& ptv = c.require(StructureRole::PTV);
  const double rx = c.prescription_gy;
  MetricsReport r;
  r.coverage_pct = coverage(dose, ptv, rx);
  r.dmax_gy = dose.max();
  r.ci = conformity_index(dose, ptv, rx);
  r.rtog_ci = rtog_conformity_index(dose, ptv, rx);
  if (count_at_least(dose, rx) > 0) r.gi = gradient_index(dose, rx);
  const StructureMask none{"none", StructureRole::GTV, c.grid.dims(), {}};
  const StructureMask* gtv = nullptr;
  for (const auto& s : c.structures) {
    if (s.role == StructureRole::GTV) gtv = &s;
  }
  r.v12_cc = v12_normal_brain(dose, c.require(StructureRole::Brain), gtv ? *gtv : none);
  for (const auto& s : c.structures) {
    if (std::find(kSerialOars.begin(), kSerialOars.end(), s.role) == kSerialOars.end() || s.empty()) continue;
    double m = 0.0;
    for (auto v : s.voxels) m = std::max(m, dose.dose[v]);
    r.oar_dmax_gy[s.role] = m;
  }
  return r;
}

std::string_view to_string(Comparator c) noexcept {
  switch (c) {
    case Comparator::Greater: return ">";
    case Comparator::Less: return "<";
    case Comparator::GreaterEqual: return ">=";
    case Comparator::LessEqual: return "<=";
  }
  return "?";
}

Comparator comparator_from_string(std::string_view s) {
  if (s == ">") return Comparator::Greater;
  if (s == "<") return Comparator::Less;
  if (s == ">=") return Comparator::GreaterEqual;
  if (s == "<=") return Comparator::LessEqual;
  throw Error(ErrorKind::InvalidGoalSet, "unknown comparator '" + std::string(s) + "'");
}

GoalSet standard_goals() {
  return {{
      {"coverage_pct", Comparator::Greater, 95.0, "%"},
      {"dmax_gy", Comparator::Less, 21.6, "Gy"},
      {"v12_cc", Comparator::Less, 10.0, "cc"},
      {"brainstem_dmax_gy", Comparator::Less, 12.0, "Gy"},
      {"optic_chiasm_dmax_gy", Comparator::Less, 9.0, "Gy"},
      {"optic_nerve_l_dmax_gy", Comparator::Less, 9.0, "Gy"},
      {"optic_nerve_r_dmax_gy", Comparator::Less, 9.0, "Gy"},
      {"cochlea_l_dmax_gy", Comparator::Less, 9.0, "Gy"},
      {"cochlea_r_dmax_gy", Comparator::Less, 9.0, "Gy"},
  }};
}

void validate_goal_set(const GoalSet& goals) {
  const auto ids = all_metric_ids();
  for (const auto& g : goals.goals) {
    if (std::find(ids.begin(), ids.end(), g.metric) == ids.end()) {
      throw Error(ErrorKind::InvalidGoalSet, "unknown metric '" + g.metric + "'");
    }
    if (!(g.threshold > 0.0)) throw Error(ErrorKind::InvalidGoalSet, "goal thresholds must be positive");
  }
}

int GoalCheck::passed_count() const noexcept {
  return static_cast<int>(std::count_if(results.begin(), results.end(), [](const GoalResult& r) { return r.passed; }));
}

GoalCheck check_goals(const MetricsReport& report, const GoalSet& goals) {
  validate_goal_set(goals);
  GoalCheck out;
  out.overall = true;
  for (const auto& g : goals.goals) {
    const auto v = report.value(g.metric);
    if (!v) throw Error(ErrorKind::InvalidGoalSet, "metric '" + g.metric + "' missing from report");
    bool pass = false;
    switch (g.comparator) {
      case Comparator::Greater: pass = *v > g.threshold; break;
      case Comparator::Less: pass = *v < g.threshold; break;
      case Comparator::GreaterEqual: pass = *v >= g.threshold; break;
      case Comparator::LessEqual: pass = *v <= g.threshold; break;
    }
    out.results.push_back({g, *v, pass});
    out.overall = out.overall && pass;
  }
  return out;
}

}  // namespace sage
