#include "sage/plan_optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "sage/error.hpp"

namespace sage {

std::string_view to_string(ObjectiveKind kind) noexcept {
  return kind == ObjectiveKind::Upper ? "upper" : "lower";
}

ObjectiveKind objective_kind_from_string(std::string_view s) {
  if (s == "upper") return ObjectiveKind::Upper;
  if (s == "lower") return ObjectiveKind::Lower;
  throw Error(ErrorKind::InvalidObjectives, "objective kind must be 'upper' or 'lower'");
}

void validate_objectives(const ObjectiveSet& objectives, const Case& c) {
  for (const auto& o : objectives) {
    if (!c.find(o.structure)) {
      throw Error(ErrorKind::InvalidObjectives, "unknown structure '" + o.structure + "'");
    }
    if (!(o.dose_gy >= 0.0) || !std::isfinite(o.dose_gy)) {
      throw Error(ErrorKind::InvalidObjectives, "objective dose must be >= 0");
    }
    if (!(o.volume_pct >= 0.0 && o.volume_pct <= 100.0)) {
      throw Error(ErrorKind::InvalidObjectives, "objective volume must be in [0, 100]");
    }
    if (o.priority < 0 || o.priority > 100) {
      throw Error(ErrorKind::InvalidObjectives, "objective priority must be in [0, 100]");
    }
  }
}

StructureMask create_ring(const Case& c, const RingSpec& spec, std::string name) {
  if (!(spec.inner_margin_mm >= 0.0) || !(spec.inner_margin_mm < spec.outer_margin_mm)) {
    throw Error(ErrorKind::InvalidSpec, "ring needs 0 <= inner < outer");
  }
  const auto& grid = c.grid;
  const auto& ptv = c.require(StructureRole::PTV);
  const auto bits = to_bitmap(ptv, grid.size());
  const auto& d = grid.dims();

  std::vector<Vec3> surface;
  int lo[3] = {d[0], d[1], d[2]};
  int hi[3] = {-1, -1, -1};
  for (auto v : ptv.voxels) {
    const auto [i, j, k] = grid.coords(v);
    lo[0] = std::min(lo[0], i), lo[1] = std::min(lo[1], j), lo[2] = std::min(lo[2], k);
    hi[0] = std::max(hi[0], i), hi[1] = std::max(hi[1], j), hi[2] = std::max(hi[2], k);
    // Boundary faces: midpoints between a PTV voxel and each outside neighbour.
    const int nb[6][3] = {{-1, 0, 0}, {1, 0, 0}, {0, -1, 0}, {0, 1, 0}, {0, 0, -1}, {0, 0, 1}};
    for (const auto& n : nb) {
      const int a = i + n[0], b = j + n[1], e = k + n[2];
      if (grid.in_bounds(a, b, e) && bits[grid.index(a, b, e)]) continue;
      const Vec3 h = grid.spacing();
      surface.push_back(grid.center(i, j, k) + Vec3{0.5 * n[0] * h.x, 0.5 * n[1] * h.y, 0.5 * n[2] * h.z});
    }
  }

  const Vec3 h = grid.spacing();
  const int pad[3] = {static_cast<int>(std::ceil(spec.outer_margin_mm / h.x)) + 1,
                      static_cast<int>(std::ceil(spec.outer_margin_mm / h.y)) + 1,
                      static_cast<int>(std::ceil(spec.outer_margin_mm / h.z)) + 1};
  const double inner2 = spec.inner_margin_mm * spec.inner_margin_mm;
  const double outer2 = spec.outer_margin_mm * spec.outer_margin_mm;
  StructureMask ring{std::move(name), StructureRole::Ring, d, {}};
  for (int k = std::max(0, lo[2] - pad[2]); k <= std::min(d[2] - 1, hi[2] + pad[2]); ++k) {
    for (int j = std::max(0, lo[1] - pad[1]); j <= std::min(d[1] - 1, hi[1] + pad[1]); ++j) {
      for (int i = std::max(0, lo[0] - pad[0]); i <= std::min(d[0] - 1, hi[0] + pad[0]); ++i) {
        const auto idx = grid.index(i, j, k);
        if (bits[idx]) continue;
        const Vec3 p = grid.center(i, j, k);
        double best = std::numeric_limits<double>::infinity();
        for (const auto& s : surface) {
          const Vec3 q = p - s;
          best = std::min(best, dot(q, q));
          if (best <= inner2) break;
        }
        if (best > inner2 && best <= outer2) ring.voxels.push_back(idx);
      }
    }
  }
  return ring;
}

namespace {

struct Term {
  const std::vector<std::uint32_t>* voxels = nullptr;
  ObjectiveKind kind = ObjectiveKind::Upper;
  double dose = 0.0;
  double coef = 0.0;     // priority / structure size
  std::size_t allowed = 0;  // violating voxels tolerated by the volume level
};

std::vector<Term> make_terms(const Case& c, const ObjectiveSet& objectives, bool skip_zero_priority) {
  validate_objectives(objectives, c);
  std::vector<Term> terms;
  for (const auto& o : objectives) {
    if (skip_zero_priority && o.priority == 0) continue;
    const auto* mask = c.find(o.structure);
    const auto n = mask->voxels.size();
    Term t;
    t.voxels = &mask->voxels;
    t.kind = o.kind;
    t.dose = o.dose_gy;
    t.coef = n == 0 ? 0.0 : static_cast<double>(o.priority) / static_cast<double>(n);
    const double frac = o.volume_pct / 100.0 * static_cast<double>(n);
    if (o.kind == ObjectiveKind::Upper) {
      t.allowed = static_cast<std::size_t>(std::floor(frac + 1e-9));
    } else {
      t.allowed = n - std::min(n, static_cast<std::size_t>(std::ceil(frac - 1e-9)));
    }
    terms.push_back(t);
  }
  return terms;
}

struct Penalized {
  std::uint32_t voxel;
  double excess;
};

// Violations of one term beyond its allowance, most extreme first-selected.
void penalized_voxels(const Term& t, std::span<const double> dose, std::vector<Penalized>& out) {
  out.clear();
  for (auto v : *t.voxels) {
    const double e = t.kind == ObjectiveKind::Upper ? dose[v] - t.dose : t.dose - dose[v];
    if (e > 0.0) out.push_back({v, e});
  }
  if (out.size() <= t.allowed) {
    out.clear();
    return;
  }
  const auto keep = out.size() - t.allowed;
  if (t.allowed > 0) {
    std::nth_element(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(keep - 1), out.end(),
                     [](const Penalized& a, const Penalized& b) {
                       return a.excess > b.excess || (a.excess == b.excess && a.voxel < b.voxel);
                     });
    out.resize(keep);
  }
}

double term_violation(const Term& t, std::span<const double> dose, std::vector<Penalized>& scratch) {
  penalized_voxels(t, dose, scratch);
  double s = 0.0;
  for (const auto& p : scratch) s += p.excess * p.excess;
  return s;
}

class CostModel {
 public:
  CostModel(const Case& c, const ObjectiveSet& objectives) : terms_(make_terms(c, objectives, true)) {}

  /// Cost at `dose`; also records the penalized voxels for gradient and
  /// curvature evaluation.
  double evaluate(std::span<const double> dose) {
    active_.resize(terms_.size());
    double cost = 0.0;
    for (std::size_t n = 0; n < terms_.size(); ++n) {
      penalized_voxels(terms_[n], dose, active_[n]);
      double s = 0.0;
      for (const auto& p : active_[n]) s += p.excess * p.excess;
      cost += terms_[n].coef * s;
    }
    return cost;
  }

  /// d cost / d dose at the last evaluated point, scattered into `residual`.
  void residual(std::span<double> residual) const {
    for (std::size_t n = 0; n < terms_.size(); ++n) {
      const double sign = terms_[n].kind == ObjectiveKind::Upper ? 1.0 : -1.0;
      for (const auto& p : active_[n]) residual[p.voxel] += 2.0 * terms_[n].coef * sign * p.excess;
    }
  }

  void clear_residual(std::span<double> residual) const {
    for (const auto& a : active_) {
      for (const auto& p : a) residual[p.voxel] = 0.0;
    }
  }

  /// Second-order coefficient of the cost along a dose change `delta`, with
  /// the penalized sets frozen.
  double curvature(std::span<const double> delta) const {
    double q = 0.0;
    for (std::size_t n = 0; n < terms_.size(); ++n) {
      double s = 0.0;
      for (const auto& p : active_[n]) s += delta[p.voxel] * delta[p.voxel];
      q += terms_[n].coef * s;
    }
    return q;
  }

  /// Voxels read by the cost, sorted and unique.
  std::vector<std::uint32_t> support() const {
    std::vector<std::uint32_t> all;
    for (const auto& t : terms_) all.insert(all.end(), t.voxels->begin(), t.voxels->end());
    std::sort(all.begin(), all.end());
    all.erase(std::unique(all.begin(), all.end()), all.end());
    return all;
  }

 private:
  std::vector<Term> terms_;
  std::vector<std::vector<Penalized>> active_;
};

bool has_ptv_lower(const Case& c, const ObjectiveSet& objectives) {
  const auto& ptv = c.require(StructureRole::PTV);
  return std::any_of(objectives.begin(), objectives.end(), [&](const Objective& o) {
    return o.kind == ObjectiveKind::Lower && o.structure == ptv.name;
  });
}

}  // namespace

double objective_cost(const DoseDistribution& dose, const Case& c, const ObjectiveSet& objectives) {
  if (dose.dose.size() != c.grid.size()) throw Error(ErrorKind::InvalidArgument, "dose does not match case grid");
  CostModel model(c, objectives);
  return model.evaluate(dose.dose);
}

std::vector<double> objective_violations(const DoseDistribution& dose, const Case& c,
                                         const ObjectiveSet& objectives) {
  if (dose.dose.size() != c.grid.size()) throw Error(ErrorKind::InvalidArgument, "dose does not match case grid");
  const auto terms = make_terms(c, objectives, false);
  std::vector<double> out;
  std::vector<Penalized> scratch;
  for (const auto& t : terms) {
    const double n = static_cast<double>(t.voxels->size());
    out.push_back(n == 0.0 ? 0.0 : term_violation(t, dose.dose, scratch) / n);
  }
  return out;
}

OptimizerResult optimize_weights(const DoseInfluence& influence, const Case& c, const ObjectiveSet& objectives,
                                 int max_steps, std::span<const double> start) {
  if (max_steps < 1) throw Error(ErrorKind::InvalidArgument, "max_steps must be >= 1");
  if (objectives.empty() || !has_ptv_lower(c, objectives)) {
    throw Error(ErrorKind::InvalidObjectives, "objectives need a lower objective on the PTV");
  }
  const std::size_t beams = influence.beam_count();
  if (influence.grid.size() != c.grid.size()) throw Error(ErrorKind::InvalidArgument, "influence does not match case");

  OptimizerResult result;
  if (start.empty()) {
    result.weights.assign(beams, 1.0);
  } else {
    if (start.size() != beams) throw Error(ErrorKind::InvalidWeights, "start weights length mismatch");
    result.weights.assign(start.begin(), start.end());
    for (double w : result.weights) {
      if (!(w >= 0.0) || !std::isfinite(w)) throw Error(ErrorKind::InvalidWeights, "start weights must be >= 0");
    }
  }
  auto& w = result.weights;

  CostModel model(c, objectives);
  const auto support = model.support();
  std::vector<double> dose(c.grid.size(), 0.0);
  accumulate_dose(influence, w, dose);
  double cost = model.evaluate(dose);
  result.initial_cost = cost;

  std::vector<double> residual(c.grid.size(), 0.0);
  std::vector<double> grad(beams);
  std::vector<double> delta(c.grid.size(), 0.0);
  std::vector<double> trial_dose(c.grid.size(), 0.0);
  std::vector<double> trial_w(beams);
  std::vector<double> descent(beams);
  int stalls = 0;

  for (int step = 0; step < max_steps && cost > 0.0; ++step) {
    model.residual(residual);
    double gnorm2 = 0.0;
    for (std::size_t b = 0; b < beams; ++b) {
      const auto& beam = influence.beams[b];
      double g = 0.0;
      for (std::size_t n = 0; n < beam.voxels.size(); ++n) g += beam.dose[n] * residual[beam.voxels[n]];
      // Components pushing an active bound further out are dropped.
      if (w[b] <= 0.0 && g > 0.0) g = 0.0;
      grad[b] = g;
      gnorm2 += g * g;
    }
    model.clear_residual(residual);
    if (gnorm2 == 0.0) break;

    // Dose change per unit step along -grad, then the minimizer of the local
    // quadratic model as the first trial step.
    std::fill(delta.begin(), delta.end(), 0.0);
    for (std::size_t b = 0; b < beams; ++b) descent[b] = -grad[b];
    accumulate_dose(influence, descent, delta);
    const double q = model.curvature(delta);
    double t = q > 0.0 ? gnorm2 / (2.0 * q) : 1.0;

    bool accepted = false;
    double trial_cost = cost;
    for (int tries = 0; tries < 50 && !accepted; ++tries, t *= 0.5) {
      bool clamped = false;
      for (std::size_t b = 0; b < beams; ++b) {
        const double x = w[b] - t * grad[b];
        trial_w[b] = x > 0.0 ? x : 0.0;
        clamped = clamped || x < 0.0;
      }
      if (clamped) {
        std::fill(trial_dose.begin(), trial_dose.end(), 0.0);
        accumulate_dose(influence, trial_w, trial_dose);
      } else {
        for (auto v : support) trial_dose[v] = dose[v] + t * delta[v];
      }
      trial_cost = model.evaluate(trial_dose);
      if (trial_cost <= cost) accepted = true;
    }
    if (!accepted) break;
    w.swap(trial_w);
    for (auto v : support) dose[v] = trial_dose[v];
    const double gain = cost - trial_cost;
    cost = trial_cost;
    result.steps = step + 1;
    stalls = gain <= 1e-9 * result.initial_cost ? stalls + 1 : 0;
    if (stalls >= 3) break;
  }
  result.final_cost = cost;
  return result;
}

}  // namespace sage
