#include <doctest.h>

#include <cmath>

#include "sage/dose_engine.hpp"
#include "sage/error.hpp"
#include "sage/random.hpp"
#include "test_support.hpp"

using namespace sage;

namespace {

// 41^3 grid at 1.5 mm centered on the origin, spherical brain of 25 mm, PTV of
// 5 mm at the center and a single beam along +z through the center.
Case single_beam_case() {
  CaseSpec spec;
  spec.id = "single";
  spec.dims = {41, 41, 41};
  spec.spacing_mm = {1.5, 1.5, 1.5};
  spec.ptv_center_mm = {0.0, 0.0, 0.0};
  spec.ptv_radius_mm = 5.0;
  spec.brain = {{0.0, 0.0, 0.0}, {25.0, 25.0, 25.0}};
  Case c = generate_synthetic_case(spec);
  c.beams = {BeamSpec{{0.0, 0.0, 1.0}, {0.0, 0.0, 0.0}, 6.0}};
  return c;
}

double dose_at(const BeamInfluence& b, std::uint32_t v) {
  for (std::size_t i = 0; i < b.voxels.size(); ++i) {
    if (b.voxels[i] == v) return b.dose[i];
  }
  return 0.0;
}

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

}  // namespace

TEST_SUITE("dose_engine") {
  TEST_CASE("kernel values match the closed form") {
    const Case c = single_beam_case();
    const EngineConstants k;
    const auto inf = compute_influence(c, k);
    REQUIRE(inf.beam_count() == 1);
    const auto& g = c.grid;
    const int mid = 20;
    // Depth oracle: walk back along -z through brain voxels to the last one
    // inside; the surface is that voxel's lower cell face.
    const auto brain_bits = to_bitmap(c.require(StructureRole::Brain), g.size());
    int last = mid;
    while (last - 1 >= 0 && brain_bits[g.index(mid, mid, last - 1)]) --last;
    const double surface_z = g.center(mid, mid, last).z - 0.5 * g.spacing().z;
    const double depth_iso = 0.0 - surface_z;
    const double sigma = k.sigma_fraction * 6.0;

    const double at_iso = dose_at(inf.beams[0], g.index(mid, mid, mid));
    CHECK(at_iso == doctest::Approx(inf.d0 * std::exp(-k.mu_per_mm * depth_iso)).epsilon(1e-9));
    // calibration puts the PTV centroid at the prescription
    CHECK(at_iso == doctest::Approx(c.prescription_gy).epsilon(1e-12));

    const double deeper = dose_at(inf.beams[0], g.index(mid, mid, mid + 5));
    CHECK(deeper == doctest::Approx(inf.d0 * std::exp(-k.mu_per_mm * (depth_iso + 7.5))).epsilon(1e-9));

    const double r = 4.5;
    const double off = dose_at(inf.beams[0], g.index(mid + 3, mid, mid));
    CHECK(off == doctest::Approx(inf.d0 * std::exp(-k.mu_per_mm * depth_iso) * std::exp(-(r / sigma) * (r / sigma)))
                     .epsilon(1e-9));

    const double far = dose_at(inf.beams[0], g.index(mid + 6, mid, mid));  // r = 9 mm = 3 sigma
    CHECK(far <= std::exp(-9.0) * at_iso);
  }

  TEST_CASE("entries are finite and nonnegative, and the influence is pure") {
    const auto& inf = test::standard_influence();
    for (const auto& b : inf.beams) {
      CHECK(std::is_sorted(b.voxels.begin(), b.voxels.end()));
      for (double d : b.dose) {
        REQUIRE(std::isfinite(d));
        REQUIRE(d >= 0.0);
      }
    }
    const auto again = compute_influence(test::standard_case());
    REQUIRE(again.beam_count() == inf.beam_count());
    CHECK(again.d0 == inf.d0);
    for (std::size_t b = 0; b < inf.beam_count(); ++b) {
      CHECK(again.beams[b].voxels == inf.beams[b].voxels);
      CHECK(again.beams[b].dose == inf.beams[b].dose);
    }
  }

  TEST_CASE("unit weights give the prescription at the PTV centroid") {
    const Case& c = test::standard_case();
    const auto& inf = test::standard_influence();
    const auto dose = compose_dose(inf, std::vector<double>(inf.beam_count(), 1.0));
    Vec3 centroid{};
    const auto& ptv = c.require(StructureRole::PTV);
    for (auto v : ptv.voxels) centroid = centroid + c.grid.center(v);
    centroid = (1.0 / static_cast<double>(ptv.voxels.size())) * centroid;
    CHECK(dose.dose[*c.grid.locate(centroid)] == doctest::Approx(c.prescription_gy).epsilon(1e-9));
  }

  TEST_CASE("zero beams is an invalid case") {
    Case c = single_beam_case();
    c.beams.clear();
    CHECK(kind_of([&] { compute_influence(c); }) == ErrorKind::InvalidCase);
  }

  TEST_CASE("compose_dose examples and errors") {
    const auto& inf = test::standard_influence();
    const auto n = inf.beam_count();
    const auto zero = compose_dose(inf, std::vector<double>(n, 0.0));
    CHECK(zero.max() == 0.0);
    CHECK(kind_of([&] { compose_dose(inf, std::vector<double>(n + 1, 1.0)); }) == ErrorKind::InvalidWeights);
    std::vector<double> neg(n, 1.0);
    neg[3] = -0.1;
    CHECK(kind_of([&] { compose_dose(inf, neg); }) == ErrorKind::InvalidWeights);
    std::vector<double> nan_w(n, 1.0);
    nan_w[0] = std::nan("");
    CHECK(kind_of([&] { compose_dose(inf, nan_w); }) == ErrorKind::InvalidWeights);
  }

  TEST_CASE("property: linearity, superposition and monotonicity") {
    const auto& inf = test::standard_influence();
    const auto n = inf.beam_count();
    Rng rng(3);
    for (int trial = 0; trial < 5; ++trial) {
      std::vector<double> w1(n), w2(n), sum(n), twice(n);
      for (std::size_t b = 0; b < n; ++b) {
        w1[b] = rng.uniform(0.0, 2.0);
        w2[b] = rng.uniform(0.0, 2.0);
        sum[b] = w1[b] + w2[b];
        twice[b] = 2.0 * w1[b];
      }
      const auto d1 = compose_dose(inf, w1);
      const auto d2 = compose_dose(inf, w2);
      const auto ds = compose_dose(inf, sum);
      const auto dt = compose_dose(inf, twice);
      double worst_sum = 0.0, worst_scale = 0.0;
      for (std::size_t v = 0; v < d1.dose.size(); ++v) {
        worst_sum = std::max(worst_sum, std::fabs(ds.dose[v] - d1.dose[v] - d2.dose[v]));
        worst_scale = std::max(worst_scale, std::fabs(dt.dose[v] - 2.0 * d1.dose[v]));
      }
      CHECK(worst_sum <= 1e-9);
      CHECK(worst_scale <= 1e-9);

      auto bumped = w1;
      bumped[rng.below(n)] += rng.uniform(0.01, 1.0);
      const auto db = compose_dose(inf, bumped);
      bool monotone = true;
      for (std::size_t v = 0; v < d1.dose.size(); ++v) monotone = monotone && db.dose[v] >= d1.dose[v];
      CHECK(monotone);
    }
  }

  TEST_CASE("influence cache round trip and key mismatch") {
    test::TempDir dir;
    const Case c = single_beam_case();
    const auto inf = cached_influence(c, dir.path());
    CHECK(std::filesystem::exists(dir / "single.inf"));
    const auto loaded = load_influence(dir / "single.inf", c);
    REQUIRE(loaded.has_value());
    CHECK(loaded->d0 == inf.d0);
    CHECK(loaded->beams[0].voxels == inf.beams[0].voxels);
    CHECK(loaded->beams[0].dose == inf.beams[0].dose);
    EngineConstants other;
    other.mu_per_mm = 0.005;
    CHECK_FALSE(load_influence(dir / "single.inf", c, other).has_value());
    Case moved = c;
    moved.beams[0].aperture_radius_mm = 4.0;
    CHECK_FALSE(load_influence(dir / "single.inf", moved).has_value());
  }
}
