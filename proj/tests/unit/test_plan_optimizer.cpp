#include <doctest.h>

#include <cmath>
#include <numbers>

#include "sage/error.hpp"
#include "sage/plan_optimizer.hpp"
#include "sage/random.hpp"
#include "test_support.hpp"

using namespace sage;

namespace {

template <typename F>
ErrorKind kind_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::Transport;
}

// Ten voxels in a row, all PTV and brain.
Case row_case() {
  Case c;
  c.id = "row";
  c.grid = VoxelGrid({10, 1, 1}, {1.0, 1.0, 1.0}, {0.0, 0.0, 0.0});
  StructureMask ptv{"PTV", StructureRole::PTV, c.grid.dims(), {}};
  for (std::uint32_t v = 0; v < 10; ++v) ptv.voxels.push_back(v);
  StructureMask brain = ptv;
  brain.name = "Brain";
  brain.role = StructureRole::Brain;
  c.structures = {ptv, brain};
  return c;
}

Case one_beam_case() {
  CaseSpec spec;
  spec.id = "one-beam";
  spec.dims = {33, 33, 33};
  spec.spacing_mm = {1.5, 1.5, 1.5};
  spec.ptv_radius_mm = 4.0;
  spec.brain = {{0.0, 0.0, 0.0}, {20.0, 20.0, 20.0}};
  Case c = generate_synthetic_case(spec);
  c.beams = {BeamSpec{{0.0, 0.0, 1.0}, {0.0, 0.0, 0.0}, 8.0}};
  return c;
}

Objective obj(std::string s, ObjectiveKind k, double dose, double vol, int p) { return {std::move(s), k, dose, vol, p}; }

}  // namespace

TEST_SUITE("plan_optimizer") {
  TEST_CASE("objective_cost examples") {
    const Case c = row_case();
    const auto d17 = test::uniform_dose(c.grid, 17.0);
    CHECK(objective_cost(d17, c, {obj("PTV", ObjectiveKind::Lower, 18.0, 100.0, 50)}) == doctest::Approx(50.0));
    CHECK(objective_cost(d17, c, {obj("PTV", ObjectiveKind::Lower, 16.0, 100.0, 50),
                                  obj("PTV", ObjectiveKind::Upper, 18.0, 0.0, 50)}) == 0.0);

    // doses 1..10, upper 5 Gy with 30% allowed: 5 violators, 3 tolerated,
    // the two most extreme (excess 5 and 4) count: 20 / 10 * (25 + 16).
    DoseDistribution ramp{c.grid, {}};
    for (int v = 1; v <= 10; ++v) ramp.dose.push_back(v);
    CHECK(objective_cost(ramp, c, {obj("PTV", ObjectiveKind::Upper, 5.0, 30.0, 20)}) == doctest::Approx(82.0));
    // lower 8 Gy on 90%: violators 1..7, one tolerated, drop the smallest
    // shortfall (voxel at 7): shortfalls 7..2 squared sum to 139.
    CHECK(objective_cost(ramp, c, {obj("PTV", ObjectiveKind::Lower, 8.0, 90.0, 10)}) == doctest::Approx(139.0));
  }

  TEST_CASE("cost is linear in the priorities") {
    const Case& c = test::standard_case();
    const auto& inf = test::standard_influence();
    const auto dose = compose_dose(inf, std::vector<double>(inf.beam_count(), 1.0));
    ObjectiveSet set = {obj("PTV", ObjectiveKind::Lower, 19.0, 100.0, 30), obj("PTV", ObjectiveKind::Upper, 19.5, 0.0, 20),
                        obj("Brainstem", ObjectiveKind::Upper, 1.0, 0.0, 10)};
    const double base = objective_cost(dose, c, set);
    CHECK(base > 0.0);
    for (auto& o : set) o.priority *= 2;
    CHECK(objective_cost(dose, c, set) == doctest::Approx(2.0 * base).epsilon(1e-12));
  }

  TEST_CASE("objective validation") {
    const Case c = row_case();
    const auto d = test::uniform_dose(c.grid, 1.0);
    CHECK(kind_of([&] { objective_cost(d, c, {obj("Nope", ObjectiveKind::Upper, 1.0, 0.0, 1)}); }) ==
          ErrorKind::InvalidObjectives);
    CHECK(kind_of([&] { objective_cost(d, c, {obj("PTV", ObjectiveKind::Upper, 1.0, 101.0, 1)}); }) ==
          ErrorKind::InvalidObjectives);
    CHECK(kind_of([&] { objective_cost(d, c, {obj("PTV", ObjectiveKind::Upper, -1.0, 0.0, 1)}); }) ==
          ErrorKind::InvalidObjectives);
    CHECK(kind_of([&] { objective_cost(d, c, {obj("PTV", ObjectiveKind::Upper, 1.0, 0.0, 101)}); }) ==
          ErrorKind::InvalidObjectives);
    const auto& inf = test::standard_influence();
    CHECK(kind_of([&] {
            optimize_weights(inf, test::standard_case(), {obj("PTV", ObjectiveKind::Upper, 20.0, 0.0, 50)});
          }) == ErrorKind::InvalidObjectives);
    CHECK(kind_of([&] {
            optimize_weights(inf, test::standard_case(), {obj("PTV", ObjectiveKind::Lower, 18.0, 100.0, 50)}, 0);
          }) == ErrorKind::InvalidArgument);
  }

  TEST_CASE("one beam: the weight reaches the closed-form scaling") {
    const Case c = one_beam_case();
    const auto inf = compute_influence(c);
    const auto& ptv = c.require(StructureRole::PTV);
    const auto unit = compose_dose(inf, std::vector<double>{1.0});
    double min_unit = INFINITY;
    for (auto v : ptv.voxels) min_unit = std::min(min_unit, unit.dose[v]);
    const double w_star = 18.0 / min_unit;  // smallest weight with every PTV voxel >= 18 Gy

    const auto r = optimize_weights(inf, c, {obj("PTV", ObjectiveKind::Lower, 18.0, 100.0, 50)}, 1000);
    CHECK(r.final_cost <= r.initial_cost);
    CHECK(r.weights[0] == doctest::Approx(w_star).epsilon(0.01));
    const auto dose = compose_dose(inf, r.weights);
    double mean = 0.0;
    for (auto v : ptv.voxels) mean += dose.dose[v];
    mean /= static_cast<double>(ptv.voxels.size());
    CHECK(mean >= 18.0 * 0.99);
  }

  TEST_CASE("zero-priority objectives do not change the solution") {
    const Case& c = test::standard_case();
    const auto& inf = test::standard_influence();
    const ObjectiveSet only = {obj("PTV", ObjectiveKind::Lower, 19.0, 100.0, 60)};
    ObjectiveSet padded = only;
    padded.push_back(obj("Brainstem", ObjectiveKind::Upper, 0.5, 0.0, 0));
    padded.push_back(obj("PTV", ObjectiveKind::Upper, 18.5, 0.0, 0));
    const auto a = optimize_weights(inf, c, only, 20);
    const auto b = optimize_weights(inf, c, padded, 20);
    CHECK(a.weights == b.weights);
    CHECK(a.final_cost == b.final_cost);
  }

  TEST_CASE("a single step never raises the cost") {
    const Case& c = test::standard_case();
    const auto& inf = test::standard_influence();
    const ObjectiveSet set = {obj("PTV", ObjectiveKind::Lower, 19.2, 100.0, 80), obj("PTV", ObjectiveKind::Upper, 20.6, 0.0, 50)};
    const auto r = optimize_weights(inf, c, set, 1);
    CHECK(r.steps <= 1);
    CHECK(r.final_cost <= r.initial_cost);
    CHECK(objective_cost(compose_dose(inf, r.weights), c, set) == doctest::Approx(r.final_cost).epsilon(1e-9));
  }

  TEST_CASE("property: descent on random instances, from cold and warm starts") {
    const Case& c = test::standard_case();
    const auto& inf = test::standard_influence();
    const char* oars[] = {"Brainstem", "OpticChiasm", "CochleaL", "CochleaR", "OpticNerveL"};
    Rng rng(21);
    for (int trial = 0; trial < 6; ++trial) {
      ObjectiveSet set = {obj("PTV", ObjectiveKind::Lower, rng.uniform(16.0, 21.0), rng.uniform(80.0, 100.0),
                              static_cast<int>(rng.below(101)))};
      set.push_back(obj("PTV", ObjectiveKind::Upper, rng.uniform(19.0, 23.0), rng.uniform(0.0, 5.0), static_cast<int>(rng.below(101))));
      for (int k = 0; k < 3; ++k) {
        set.push_back(obj(oars[rng.below(5)], ObjectiveKind::Upper, rng.uniform(0.0, 8.0), 0.0, static_cast<int>(rng.below(101))));
      }
      std::vector<double> start(inf.beam_count());
      for (auto& w : start) w = rng.uniform(0.0, 2.0);
      const auto before = objective_cost(compose_dose(inf, start), c, set);
      const auto r = optimize_weights(inf, c, set, 15, start);
      CHECK(r.initial_cost == doctest::Approx(before).epsilon(1e-9));
      CHECK(r.final_cost <= r.initial_cost);
      for (double w : r.weights) REQUIRE(w >= 0.0);
      const auto cold = optimize_weights(inf, c, set, 15);
      CHECK(cold.final_cost <= cold.initial_cost);
    }
  }

  TEST_CASE("property: raising a priority never raises its own violation (one beam)") {
    const Case c = one_beam_case();
    const auto inf = compute_influence(c);
    double previous = INFINITY;
    for (int p : {5, 10, 20, 40, 80, 100}) {
      const ObjectiveSet set = {obj("PTV", ObjectiveKind::Lower, 18.0, 100.0, 50), obj("PTV", ObjectiveKind::Upper, 17.0, 0.0, p)};
      const auto r = optimize_weights(inf, c, set, 2000);
      const double own = objective_violations(compose_dose(inf, r.weights), c, set)[1];
      CHECK(own <= previous * (1.0 + 1e-6));
      previous = own;
    }
  }

  TEST_CASE("create_ring") {
    CaseSpec spec;
    spec.id = "ring";
    spec.dims = {40, 40, 40};
    spec.spacing_mm = {1.0, 1.0, 1.0};
    spec.ptv_radius_mm = 10.0;
    spec.brain = {{0.0, 0.0, 0.0}, {18.0, 18.0, 18.0}};
    const Case c = generate_synthetic_case(spec);
    const auto ring = create_ring(c, {0.0, 2.0});
    const auto& ptv = c.require(StructureRole::PTV);
    CHECK(ring.role == StructureRole::Ring);
    CHECK(intersect_masks(ring, ptv).empty());
    CHECK(ring.voxels.back() < c.grid.size());
    const double shell = 4.0 / 3.0 * std::numbers::pi * (12.0 * 12.0 * 12.0 - 1000.0) / 1000.0;
    CHECK(std::fabs(structure_volume(ring, c.grid) - shell) / shell <= 0.10);
    CHECK(kind_of([&] { create_ring(c, {5.0, 3.0}); }) == ErrorKind::InvalidSpec);
    CHECK(kind_of([&] { create_ring(c, {2.0, 2.0}); }) == ErrorKind::InvalidSpec);
  }

  TEST_CASE("property: rings stay outside the PTV and inside the grid") {
    const Case& c = test::standard_case();
    const auto& ptv = c.require(StructureRole::PTV);
    Rng rng(8);
    for (int trial = 0; trial < 8; ++trial) {
      const double inner = rng.uniform(0.0, 6.0);
      const double outer = inner + rng.uniform(0.5, 10.0);
      const auto ring = create_ring(c, {inner, outer});
      CHECK(intersect_masks(ring, ptv).empty());
      CHECK(std::is_sorted(ring.voxels.begin(), ring.voxels.end()));
      if (!ring.voxels.empty()) CHECK(ring.voxels.back() < c.grid.size());
    }
  }
}
