#include "sage/case_model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "sage/error.hpp"
#include "sage/random.hpp"

namespace sage {

VoxelGrid::VoxelGrid(GridDims dims, Vec3 spacing_mm, Vec3 origin_mm)
    : dims_(dims), spacing_(spacing_mm), origin_(origin_mm) {
  if (dims[0] < 1 || dims[1] < 1 || dims[2] < 1) {
    throw Error(ErrorKind::InvalidSpec, "grid dims must be >= 1");
  }
  if (!(spacing_mm.x > 0.0 && spacing_mm.y > 0.0 && spacing_mm.z > 0.0)) {
    throw Error(ErrorKind::InvalidSpec, "grid spacing must be > 0");
  }
}

std::optional<std::uint32_t> VoxelGrid::locate(Vec3 p) const noexcept {
  const int i = static_cast<int>(std::floor((p.x - origin_.x) / spacing_.x + 0.5));
  const int j = static_cast<int>(std::floor((p.y - origin_.y) / spacing_.y + 0.5));
  const int k = static_cast<int>(std::floor((p.z - origin_.z) / spacing_.z + 0.5));
  if (!in_bounds(i, j, k)) return std::nullopt;
  return index(i, j, k);
}

Vec3 VoxelGrid::extent_min() const noexcept { return origin_ - 0.5 * spacing_; }

Vec3 VoxelGrid::extent_max() const noexcept {
  return {origin_.x + (dims_[0] - 0.5) * spacing_.x, origin_.y + (dims_[1] - 0.5) * spacing_.y,
          origin_.z + (dims_[2] - 0.5) * spacing_.z};
}

namespace {

constexpr std::array<std::pair<StructureRole, std::string_view>, 10> kRoleNames = {{
    {StructureRole::PTV, "PTV"},
    {StructureRole::GTV, "GTV"},
    {StructureRole::Brain, "Brain"},
    {StructureRole::Brainstem, "Brainstem"},
    {StructureRole::OpticChiasm, "OpticChiasm"},
    {StructureRole::OpticNerveL, "OpticNerveL"},
    {StructureRole::OpticNerveR, "OpticNerveR"},
    {StructureRole::CochleaL, "CochleaL"},
    {StructureRole::CochleaR, "CochleaR"},
    {StructureRole::Ring, "Ring"},
}};

}  // namespace

std::string_view to_string(StructureRole role) noexcept {
  for (const auto& [r, name] : kRoleNames) {
    if (r == role) return name;
  }
  return "?";
}

StructureRole role_from_string(std::string_view name) {
  for (const auto& [r, n] : kRoleNames) {
    if (n == name) return r;
  }
  throw Error(ErrorKind::InvalidArgument, "unknown structure role '" + std::string(name) + "'");
}

bool StructureMask::contains(std::uint32_t index) const noexcept {
  return std::binary_search(voxels.begin(), voxels.end(), index);
}

std::vector<std::uint8_t> to_bitmap(const StructureMask& mask, std::size_t grid_size) {
  std::vector<std::uint8_t> bits(grid_size, 0);
  for (auto v : mask.voxels) {
    if (v < grid_size) bits[v] = 1;
  }
  return bits;
}

const StructureMask* Case::find(std::string_view name) const noexcept {
  for (const auto& s : structures) {
    if (s.name == name) return &s;
  }
  return nullptr;
}

const StructureMask& Case::require(StructureRole role) const {
  for (const auto& s : structures) {
    if (s.role == role) return s;
  }
  throw Error(ErrorKind::InvalidCase,
              "case '" + id + "' has no " + std::string(to_string(role)) + " structure");
}

void validate_case(const Case& c) {
  const auto n = c.grid.size();
  int ptv = 0;
  int brain = 0;
  for (const auto& s : c.structures) {
    if (s.dims != c.grid.dims()) {
      throw Error(ErrorKind::GeometryError, "structure '" + s.name + "' has mismatched dims");
    }
    if (!std::is_sorted(s.voxels.begin(), s.voxels.end()) ||
        std::adjacent_find(s.voxels.begin(), s.voxels.end()) != s.voxels.end()) {
      throw Error(ErrorKind::InvalidCase, "structure '" + s.name + "' voxels not sorted/unique");
    }
    if (!s.voxels.empty() && s.voxels.back() >= n) {
      throw Error(ErrorKind::GeometryError, "structure '" + s.name + "' has out-of-bounds voxels");
    }
    ptv += s.role == StructureRole::PTV;
    brain += s.role == StructureRole::Brain;
  }
  if (ptv != 1 || brain != 1) {
    throw Error(ErrorKind::InvalidCase, "case needs exactly one PTV and one Brain");
  }
  if (c.require(StructureRole::PTV).empty()) {
    throw Error(ErrorKind::InvalidCase, "PTV is empty");
  }
  if (!(c.prescription_gy > 0.0)) {
    throw Error(ErrorKind::InvalidCase, "prescription must be > 0");
  }
  const auto& brain_mask = c.require(StructureRole::Brain);
  for (const auto& s : c.structures) {
    if (s.role != StructureRole::GTV) continue;
    if (!std::includes(brain_mask.voxels.begin(), brain_mask.voxels.end(), s.voxels.begin(),
                       s.voxels.end())) {
      throw Error(ErrorKind::InvalidCase, "Brain does not contain the GTV");
    }
  }
  for (const auto& b : c.beams) {
    if (std::abs(norm(b.direction) - 1.0) > 1e-9 || !(b.aperture_radius_mm > 0.0)) {
      throw Error(ErrorKind::InvalidCase, "beam direction must be unit and aperture > 0");
    }
  }
}

StructureMask voxelize_ellipsoid(const VoxelGrid& grid, const Ellipsoid& shape, std::string name,
                                 StructureRole role) {
  const Vec3 r = shape.radii_mm;
  if (!(r.x > 0.0 && r.y > 0.0 && r.z > 0.0)) {
    throw Error(ErrorKind::InvalidSpec, "radius of '" + name + "' must be > 0");
  }
  StructureMask mask{std::move(name), role, grid.dims(), {}};
  const Vec3 o = grid.origin();
  const Vec3 h = grid.spacing();
  const auto& d = grid.dims();
  auto lo = [](double v, int n) { return std::clamp(static_cast<int>(std::floor(v)), 0, n - 1); };
  auto hi = [](double v, int n) { return std::clamp(static_cast<int>(std::ceil(v)), 0, n - 1); };
  const int i0 = lo((shape.center_mm.x - r.x - o.x) / h.x, d[0]);
  const int i1 = hi((shape.center_mm.x + r.x - o.x) / h.x, d[0]);
  const int j0 = lo((shape.center_mm.y - r.y - o.y) / h.y, d[1]);
  const int j1 = hi((shape.center_mm.y + r.y - o.y) / h.y, d[1]);
  const int k0 = lo((shape.center_mm.z - r.z - o.z) / h.z, d[2]);
  const int k1 = hi((shape.center_mm.z + r.z - o.z) / h.z, d[2]);
  for (int k = k0; k <= k1; ++k) {
    for (int j = j0; j <= j1; ++j) {
      for (int i = i0; i <= i1; ++i) {
        const Vec3 p = grid.center(i, j, k) - shape.center_mm;
        const double q = (p.x / r.x) * (p.x / r.x) + (p.y / r.y) * (p.y / r.y) +
                         (p.z / r.z) * (p.z / r.z);
        if (q <= 1.0) mask.voxels.push_back(grid.index(i, j, k));
      }
    }
  }
  return mask;
}

double structure_volume(const StructureMask& mask, const VoxelGrid& grid) {
  if (mask.dims != grid.dims()) {
    throw Error(ErrorKind::GeometryError, "mask '" + mask.name + "' does not match grid");
  }
  if (!mask.voxels.empty() && mask.voxels.back() >= grid.size()) {
    throw Error(ErrorKind::GeometryError, "mask '" + mask.name + "' has out-of-bounds voxels");
  }
  return static_cast<double>(mask.voxels.size()) * grid.voxel_volume_cc();
}

StructureMask subtract_masks(const StructureMask& a, const StructureMask& b) {
  if (a.dims != b.dims) throw Error(ErrorKind::GeometryError, "subtract: grid mismatch");
  StructureMask out{a.name, a.role, a.dims, {}};
  std::set_difference(a.voxels.begin(), a.voxels.end(), b.voxels.begin(), b.voxels.end(),
                      std::back_inserter(out.voxels));
  return out;
}

StructureMask intersect_masks(const StructureMask& a, const StructureMask& b) {
  if (a.dims != b.dims) throw Error(ErrorKind::GeometryError, "intersect: grid mismatch");
  StructureMask out{a.name, a.role, a.dims, {}};
  std::set_intersection(a.voxels.begin(), a.voxels.end(), b.voxels.begin(), b.voxels.end(),
                        std::back_inserter(out.voxels));
  return out;
}

CaseSpec standard_case_spec(Vec3 ptv_center_mm, double ptv_radius_mm) {
  CaseSpec spec;
  spec.ptv_center_mm = ptv_center_mm;
  spec.ptv_radius_mm = ptv_radius_mm;
  // x: patient left (+), y: anterior (+), z: superior (+).
  spec.oars = {
      {StructureRole::Brainstem, {{0.0, -18.0, -30.0}, {10.0, 10.0, 18.0}}},
      {StructureRole::OpticChiasm, {{0.0, 22.0, -18.0}, {7.0, 4.0, 3.0}}},
      {StructureRole::OpticNerveL, {{12.0, 40.0, -18.0}, {3.0, 12.0, 3.0}}},
      {StructureRole::OpticNerveR, {{-12.0, 40.0, -18.0}, {3.0, 12.0, 3.0}}},
      {StructureRole::CochleaL, {{42.0, -10.0, -28.0}, {3.5, 3.5, 3.5}}},
      {StructureRole::CochleaR, {{-42.0, -10.0, -28.0}, {3.5, 3.5, 3.5}}},
  };
  return spec;
}

namespace {

std::vector<Vec3> spread_directions(int count, std::uint64_t seed) {
  // Spherical Fibonacci points, then one uniformly random rotation.
  std::vector<Vec3> dirs;
  dirs.reserve(static_cast<std::size_t>(count));
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  for (int n = 0; n < count; ++n) {
    const double z = 1.0 - (2.0 * n + 1.0) / count;
    const double rho = std::sqrt(std::max(0.0, 1.0 - z * z));
    dirs.push_back({rho * std::cos(golden * n), rho * std::sin(golden * n), z});
  }
  Rng rng(mix_seed(seed));
  const double u1 = rng.uniform();
  const double u2 = rng.uniform() * 2.0 * std::numbers::pi;
  const double u3 = rng.uniform() * 2.0 * std::numbers::pi;
  const double a = std::sqrt(1.0 - u1);
  const double b = std::sqrt(u1);
  const double qw = a * std::sin(u2);
  const double qx = a * std::cos(u2);
  const double qy = b * std::sin(u3);
  const double qz = b * std::cos(u3);
  for (auto& d : dirs) {
    const Vec3 u{qx, qy, qz};
    const Vec3 t = 2.0 * cross(u, d);
    d = normalized(d + qw * t + cross(u, t));
  }
  return dirs;
}

std::vector<Vec3> shot_lattice(Vec3 center, double reach, double spacing) {
  std::vector<Vec3> shots;
  const int n = static_cast<int>(std::floor(reach / spacing));
  for (int k = -n; k <= n; ++k) {
    for (int j = -n; j <= n; ++j) {
      for (int i = -n; i <= n; ++i) {
        const Vec3 off{i * spacing, j * spacing, k * spacing};
        if (norm(off) <= reach) shots.push_back(center + off);
      }
    }
  }
  return shots;
}

}  // namespace

Case generate_synthetic_case(const CaseSpec& spec) {
  if (!(spec.ptv_radius_mm > 0.0)) throw Error(ErrorKind::InvalidSpec, "PTV radius must be > 0");
  if (!(spec.gtv_margin_mm >= 0.0)) throw Error(ErrorKind::InvalidSpec, "GTV margin must be >= 0");
  if (!(spec.prescription_gy > 0.0)) throw Error(ErrorKind::InvalidSpec, "prescription must be > 0");
  const auto& arr = spec.beams;
  if (arr.direction_count < 1 || !(arr.aperture_radius_mm > 0.0) || !(arr.shot_spacing_mm > 0.0) ||
      !(arr.shot_margin_mm >= 0.0)) {
    throw Error(ErrorKind::InvalidSpec, "invalid beam arrangement");
  }

  const Vec3 origin = spec.origin_mm.value_or(
      Vec3{-0.5 * (spec.dims[0] - 1) * spec.spacing_mm.x, -0.5 * (spec.dims[1] - 1) * spec.spacing_mm.y,
           -0.5 * (spec.dims[2] - 1) * spec.spacing_mm.z});
  const VoxelGrid grid(spec.dims, spec.spacing_mm, origin);

  const Vec3 lo = grid.extent_min();
  const Vec3 hi = grid.extent_max();
  const Vec3 c = spec.ptv_center_mm;
  const double r = spec.ptv_radius_mm;
  if (c.x - r < lo.x || c.y - r < lo.y || c.z - r < lo.z || c.x + r > hi.x || c.y + r > hi.y ||
      c.z + r > hi.z) {
    throw Error(ErrorKind::GeometryError, "PTV sphere extends outside the grid");
  }

  Case out;
  out.id = spec.id;
  out.grid = grid;
  out.prescription_gy = spec.prescription_gy;

  auto ptv = voxelize_ellipsoid(grid, {c, {r, r, r}}, "PTV", StructureRole::PTV);
  if (ptv.empty()) throw Error(ErrorKind::GeometryError, "PTV contains no voxel centers");
  const double gtv_r = std::max(r - spec.gtv_margin_mm, 0.5 * r);
  auto gtv = voxelize_ellipsoid(grid, {c, {gtv_r, gtv_r, gtv_r}}, "GTV", StructureRole::GTV);
  auto brain = voxelize_ellipsoid(grid, spec.brain, "Brain", StructureRole::Brain);
  if (!std::includes(brain.voxels.begin(), brain.voxels.end(), ptv.voxels.begin(), ptv.voxels.end())) {
    throw Error(ErrorKind::GeometryError, "PTV is not inside the brain");
  }

  out.structures.push_back(std::move(ptv));
  out.structures.push_back(std::move(gtv));
  out.structures.push_back(std::move(brain));
  for (const auto& [role, shape] : spec.oars) {
    out.structures.push_back(voxelize_ellipsoid(grid, shape, std::string(to_string(role)), role));
  }

  const auto dirs = spread_directions(arr.direction_count, arr.seed);
  for (const auto& shot : shot_lattice(c, r + arr.shot_margin_mm, arr.shot_spacing_mm)) {
    for (const auto& d : dirs) out.beams.push_back({d, shot, arr.aperture_radius_mm});
  }
  validate_case(out);
  return out;
}

std::vector<CaseSpec> sample_cohort(const CohortSpec& cohort, int count, std::uint64_t seed) {
  if (count < 0) throw Error(ErrorKind::InvalidArgument, "cohort count must be >= 0");
  if (!(cohort.min_ptv_radius_mm > 0.0) || cohort.max_ptv_radius_mm < cohort.min_ptv_radius_mm) {
    throw Error(ErrorKind::InvalidSpec, "invalid PTV radius range");
  }
  Rng rng(mix_seed(seed));
  std::vector<CaseSpec> specs;
  const Ellipsoid& brain = cohort.base.brain;
  for (int n = 0; n < count; ++n) {
    bool placed = false;
    for (int attempt = 0; attempt < 100000 && !placed; ++attempt) {
      const double radius = rng.uniform(cohort.min_ptv_radius_mm, cohort.max_ptv_radius_mm);
      const Vec3 p{rng.uniform(-1.0, 1.0) * brain.radii_mm.x, rng.uniform(-1.0, 1.0) * brain.radii_mm.y,
                   rng.uniform(-1.0, 1.0) * brain.radii_mm.z};
      const double shrink = radius + cohort.brain_margin_mm;
      const Vec3 inner{brain.radii_mm.x - shrink, brain.radii_mm.y - shrink, brain.radii_mm.z - shrink};
      if (inner.x <= 0.0 || inner.y <= 0.0 || inner.z <= 0.0) continue;
      const double q = (p.x / inner.x) * (p.x / inner.x) + (p.y / inner.y) * (p.y / inner.y) +
                       (p.z / inner.z) * (p.z / inner.z);
      if (q > 1.0) continue;
      const Vec3 center = brain.center_mm + p;
      bool clear = true;
      for (const auto& [role, oar] : cohort.base.oars) {
        const double reach = std::max({oar.radii_mm.x, oar.radii_mm.y, oar.radii_mm.z});
        if (norm(center - oar.center_mm) - reach - radius < cohort.min_oar_gap_mm) clear = false;
      }
      if (!clear) continue;
      CaseSpec spec = cohort.base;
      char buf[32];
      std::snprintf(buf, sizeof buf, "-%03d", n);
      spec.id = cohort.base.id + buf;
      spec.ptv_center_mm = center;
      spec.ptv_radius_mm = radius;
      spec.beams.seed = mix_seed(seed ^ static_cast<std::uint64_t>(n + 1));
      specs.push_back(std::move(spec));
      placed = true;
    }
    if (!placed) throw Error(ErrorKind::InvalidSpec, "could not place a PTV satisfying the cohort constraints");
  }
  return specs;
}

}  // namespace sage
