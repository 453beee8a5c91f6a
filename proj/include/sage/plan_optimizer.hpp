#pragma once

#include <span>
#include <string>
#include <vector>

#include "sage/case_model.hpp"
#include "sage/dose_engine.hpp"

namespace sage {

enum class ObjectiveKind { Upper, Lower };

std::string_view to_string(ObjectiveKind kind) noexcept;
ObjectiveKind objective_kind_from_string(std::string_view s);

/// Dose-volume objective. Upper: at most `volume_pct` of the structure above
/// `dose_gy`. Lower: at least `volume_pct` of the structure at or above
/// `dose_gy`. `priority` is the integer knob (0-100) the planner turns.
struct Objective {
  std::string structure;
  ObjectiveKind kind = ObjectiveKind::Upper;
  double dose_gy = 0.0;
  double volume_pct = 0.0;
  int priority = 0;

  friend bool operator==(const Objective&, const Objective&) = default;
};

using ObjectiveSet = std::vector<Objective>;

/// Throws invalid-objectives on out-of-range fields or names that do not
/// resolve to a structure of `c`.
void validate_objectives(const ObjectiveSet& objectives, const Case& c);

struct RingSpec {
  double inner_margin_mm = 0.0;
  double outer_margin_mm = 3.0;
};

/// Shell of non-PTV voxels whose center lies at a distance in (inner, outer]
/// from the PTV boundary, taken as the midpoints of the faces separating PTV
/// voxels from the outside.
StructureMask create_ring(const Case& c, const RingSpec& spec, std::string name = "Ring");

/// Weighted penalty: sum over objectives of priority times the mean over the
/// structure of squared violations, where only violations beyond the
/// objective's volume allowance count (the most extreme ones first).
double objective_cost(const DoseDistribution& dose, const Case& c, const ObjectiveSet& objectives);

/// Unweighted per-objective violation terms (cost = sum priority * term).
std::vector<double> objective_violations(const DoseDistribution& dose, const Case& c,
                                         const ObjectiveSet& objectives);

struct OptimizerResult {
  std::vector<double> weights;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  int steps = 0;
};

inline constexpr int kDefaultInnerSteps = 200;

/// Projected gradient descent on the beam weights (weights >= 0). Starts
/// from `start` when given (warm start), otherwise from unit weights. Never
/// returns a cost above the starting cost.
OptimizerResult optimize_weights(const DoseInfluence& influence, const Case& c, const ObjectiveSet& objectives,
                                 int max_steps = kDefaultInnerSteps, std::span<const double> start = {});

}  // namespace sage
