#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "sage/error.hpp"
#include "sage/plan_evaluator.hpp"
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

StructureMask mask_of(const VoxelGrid& g, std::string name, StructureRole role, std::uint32_t first, std::uint32_t count) {
  StructureMask m{std::move(name), role, g.dims(), {}};
  for (std::uint32_t v = first; v < first + count; ++v) m.voxels.push_back(v);
  return m;
}

std::vector<char> dense(const VoxelGrid& g, const StructureMask& m) { return oracle::membership(g.size(), m.voxels); }

}  // namespace

TEST_SUITE("plan_evaluator") {
  TEST_CASE("DVH of a handful of voxels") {
    const VoxelGrid g({4, 1, 1}, {1.0, 1.0, 1.0}, {0.0, 0.0, 0.0});
    const DoseDistribution d{g, {0.0, 0.1, 0.25, 1.0}};
    const auto m = mask_of(g, "S", StructureRole::PTV, 0, 4);
    const auto curve = compute_dvh(d, m, 0.1);
    REQUIRE(curve.counts.size() == 12);
    CHECK(curve.counts[0] == 4);
    CHECK(curve.counts[1] == 3);
    CHECK(curve.counts[2] == 2);
    for (std::size_t k = 3; k <= 10; ++k) CHECK(curve.counts[k] == 1);
    CHECK(curve.counts[11] == 0);
    CHECK(curve.total == 4);
    CHECK(curve.fraction(2) == doctest::Approx(0.5));
    CHECK(kind_of([&] { compute_dvh(d, m, 0.0); }) == ErrorKind::InvalidArgument);
    CHECK(kind_of([&] { compute_dvh(d, StructureMask{"E", StructureRole::PTV, g.dims(), {}}, 0.1); }) ==
          ErrorKind::EmptyStructure);
    StructureMask wrong = m;
    wrong.dims = {2, 2, 1};
    CHECK(kind_of([&] { compute_dvh(d, wrong, 0.1); }) == ErrorKind::GeometryError);
  }

  TEST_CASE("coverage and conformity by construction") {
    const auto g = test::cube_grid(20, 2.5);
    const auto ptv = mask_of(g, "PTV", StructureRole::PTV, 0, 1000);
    DoseDistribution d = test::uniform_dose(g, 5.0);
    for (auto v : ptv.voxels) d.dose[v] = 20.0;
    CHECK(coverage(d, ptv, 18.0) == doctest::Approx(100.0));
    CHECK(conformity_index(d, ptv, 18.0) == doctest::Approx(1.0));
    CHECK(rtog_conformity_index(d, ptv, 18.0) == doctest::Approx(1.0));

    // prescription isodose twice the target
    for (std::uint32_t v = 1000; v < 2000; ++v) d.dose[v] = 18.0;
    CHECK(conformity_index(d, ptv, 18.0) == doctest::Approx(0.5));
    CHECK(rtog_conformity_index(d, ptv, 18.0) == doctest::Approx(2.0));

    // 970 of 1000 covered
    for (std::uint32_t v = 0; v < 30; ++v) d.dose[v] = 17.9;
    CHECK(coverage(d, ptv, 18.0) == doctest::Approx(97.0));

    const DoseDistribution cold = test::uniform_dose(g, 1.0);
    CHECK(conformity_index(cold, ptv, 18.0) == 0.0);
    CHECK(coverage(cold, ptv, 18.0) == 0.0);
  }

  TEST_CASE("gradient index") {
    const auto g = test::cube_grid(10, 1.0);
    DoseDistribution d = test::uniform_dose(g, 0.0);
    for (std::uint32_t v = 0; v < 100; ++v) d.dose[v] = 18.0;
    for (std::uint32_t v = 100; v < 350; ++v) d.dose[v] = 9.0;
    CHECK(gradient_index(d, 18.0) == doctest::Approx(3.5));
    CHECK(kind_of([&] { gradient_index(test::uniform_dose(g, 17.0), 18.0); }) == ErrorKind::UndefinedMetric);
  }

  TEST_CASE("V12 of normal brain") {
    const auto g = test::cube_grid(20, 2.5);
    const auto brain = mask_of(g, "Brain", StructureRole::Brain, 0, 4000);
    const auto gtv = mask_of(g, "GTV", StructureRole::GTV, 0, 200);
    DoseDistribution d = test::uniform_dose(g, 0.0);
    for (std::uint32_t v = 0; v < 1000; ++v) d.dose[v] = 12.0;
    // 1000 hot voxels, 200 of them inside the GTV: 800 * 15.625 mm^3
    CHECK(v12_normal_brain(d, brain, gtv) == doctest::Approx(12.5));
    const StructureMask none{"none", StructureRole::GTV, g.dims(), {}};
    CHECK(v12_normal_brain(d, brain, none) == doctest::Approx(15.625));
  }

  TEST_CASE("check_goals") {
    MetricsReport r;
    r.coverage_pct = 96.0;
    r.dmax_gy = 21.6;
    r.v12_cc = 4.0;
    r.oar_dmax_gy[StructureRole::Brainstem] = 8.0;
    GoalSet goals{{{"coverage_pct", Comparator::Greater, 95.0, "%"},
                   {"dmax_gy", Comparator::Less, 21.6, "Gy"},
                   {"dmax_gy", Comparator::LessEqual, 21.6, "Gy"},
                   {"brainstem_dmax_gy", Comparator::Less, 12.0, "Gy"}}};
    const auto check = check_goals(r, goals);
    REQUIRE(check.results.size() == 4);
    CHECK(check.results[0].passed);
    CHECK_FALSE(check.results[1].passed);
    CHECK(check.results[2].passed);
    CHECK(check.results[3].value == 8.0);
    CHECK_FALSE(check.overall);
    CHECK(check.passed_count() == 3);

    r.coverage_pct = 95.0;
    CHECK_FALSE(check_goals(r, {{{"coverage_pct", Comparator::Greater, 95.0, "%"}}}).overall);
    CHECK(check_goals(r, {{{"coverage_pct", Comparator::GreaterEqual, 95.0, "%"}}}).overall);
    CHECK(check_goals(r, {}).overall);

    CHECK(kind_of([&] { check_goals(r, {{{"bogus", Comparator::Less, 1.0, ""}}}); }) == ErrorKind::InvalidGoalSet);
    CHECK(kind_of([&] { check_goals(r, {{{"dmax_gy", Comparator::Less, 0.0, "Gy"}}}); }) == ErrorKind::InvalidGoalSet);
    // the chiasm is absent from this report
    CHECK(kind_of([&] { check_goals(r, {{{"optic_chiasm_dmax_gy", Comparator::Less, 9.0, "Gy"}}}); }) ==
          ErrorKind::InvalidGoalSet);
    CHECK(kind_of([] { comparator_from_string("=="); }) == ErrorKind::InvalidGoalSet);
  }

  TEST_CASE("standard goals") {
    const auto goals = standard_goals();
    CHECK(goals.goals.size() == 9);
    CHECK_NOTHROW(validate_goal_set(goals));
    CHECK(goals.goals[0].metric == "coverage_pct");
    CHECK(goals.goals[0].threshold == 95.0);
  }

  TEST_CASE("evaluate_plan on the fixture case") {
    const Case& c = test::standard_case();
    const auto& inf = test::standard_influence();
    const auto dose = compose_dose(inf, std::vector<double>(inf.beam_count(), 1.0));
    const auto r = evaluate_plan(dose, c);
    CHECK(r.oar_dmax_gy.size() == 6);
    const auto ptv = dense(c.grid, c.require(StructureRole::PTV));
    const auto normal = dense(c.grid, subtract_masks(c.require(StructureRole::Brain), c.require(StructureRole::GTV)));
    const auto o = oracle::metrics(dose.dose, ptv, normal, c.prescription_gy, c.grid.voxel_volume_cc());
    CHECK(r.coverage_pct == o.coverage_pct);
    CHECK(r.ci == o.ci);
    REQUIRE(r.gi.has_value());
    CHECK(*r.gi == o.gi);
    CHECK(r.v12_cc == o.v12_cc);
    CHECK(r.value("cochlea_r_dmax_gy").has_value());
    CHECK_FALSE(r.value("nope").has_value());
    CHECK(all_metric_ids().size() == 12);
    CHECK(secondary_endpoints().size() == 7);
  }

  TEST_CASE("property: metrics and DVH agree with independent counting") {
    Rng rng(99);
    for (int trial = 0; trial < 40; ++trial) {
      const int n = 6 + static_cast<int>(rng.below(10));
      const auto g = test::cube_grid(n, rng.uniform(1.0, 3.0));
      DoseDistribution d{g, std::vector<double>(g.size())};
      for (auto& x : d.dose) x = rng.uniform() < 0.2 ? 0.0 : rng.uniform(0.0, 25.0);
      StructureMask ptv{"PTV", StructureRole::PTV, g.dims(), {}};
      StructureMask brain{"Brain", StructureRole::Brain, g.dims(), {}};
      StructureMask gtv{"GTV", StructureRole::GTV, g.dims(), {}};
      for (std::uint32_t v = 0; v < g.size(); ++v) {
        if (rng.uniform() < 0.3) ptv.voxels.push_back(v);
        if (rng.uniform() < 0.8) brain.voxels.push_back(v);
        if (rng.uniform() < 0.1) gtv.voxels.push_back(v);
      }
      if (ptv.empty()) ptv.voxels.push_back(0);
      if (brain.empty()) brain.voxels.push_back(0);
      const double rx = rng.uniform(10.0, 22.0);

      const auto in_ptv = dense(g, ptv);
      const auto in_normal = dense(g, subtract_masks(brain, gtv));
      const auto o = oracle::metrics(d.dose, in_ptv, in_normal, rx, g.voxel_volume_cc());
      CHECK(coverage(d, ptv, rx) == o.coverage_pct);
      const double ci = conformity_index(d, ptv, rx);
      CHECK(ci == o.ci);
      CHECK(ci >= 0.0);
      CHECK(ci <= 1.0);
      if (std::isnan(o.gi)) {
        CHECK(kind_of([&] { gradient_index(d, rx); }) == ErrorKind::UndefinedMetric);
      } else {
        const double gi = gradient_index(d, rx);
        CHECK(gi == o.gi);
        CHECK(gi >= 1.0);
      }
      CHECK(v12_normal_brain(d, brain, gtv) == o.v12_cc);

      const double bw = 0.5;
      const auto curve = compute_dvh(d, ptv, bw);
      CHECK(curve.counts == oracle::dvh_counts(d.dose, in_ptv, bw));
      CHECK(curve.counts.front() == ptv.voxels.size());
      CHECK(curve.counts.back() == 0);
      for (std::size_t k = 1; k < curve.counts.size(); ++k) REQUIRE(curve.counts[k] <= curve.counts[k - 1]);
      // coverage at a prescription lying on a bin edge reads off the curve
      const std::size_t k18 = 36;
      const double at18 = k18 < curve.counts.size() ? 100.0 * curve.fraction(k18) : 0.0;
      CHECK(coverage(d, ptv, 18.0) == doctest::Approx(at18).epsilon(1e-12));
    }
  }
}
