#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sage/geometry.hpp"

namespace sage {

using GridDims = std::array<int, 3>;

/// Regular dose grid. Voxel (i, j, k) has its center at
/// origin + (i*sx, j*sy, k*sz); linear index is i + nx*(j + ny*k).
class VoxelGrid {
 public:
  VoxelGrid() = default;
  VoxelGrid(GridDims dims, Vec3 spacing_mm, Vec3 origin_mm);

  const GridDims& dims() const noexcept { return dims_; }
  const Vec3& spacing() const noexcept { return spacing_; }
  const Vec3& origin() const noexcept { return origin_; }

  std::size_t size() const noexcept {
    return static_cast<std::size_t>(dims_[0]) * dims_[1] * dims_[2];
  }
  double voxel_volume_cc() const noexcept {
    return spacing_.x * spacing_.y * spacing_.z / 1000.0;
  }

  std::uint32_t index(int i, int j, int k) const noexcept {
    return static_cast<std::uint32_t>(i + dims_[0] * (j + dims_[1] * k));
  }
  std::array<int, 3> coords(std::uint32_t index) const noexcept {
    const int i = static_cast<int>(index % dims_[0]);
    const int j = static_cast<int>((index / dims_[0]) % dims_[1]);
    const int k = static_cast<int>(index / (static_cast<std::uint32_t>(dims_[0]) * dims_[1]));
    return {i, j, k};
  }
  Vec3 center(int i, int j, int k) const noexcept {
    return {origin_.x + i * spacing_.x, origin_.y + j * spacing_.y, origin_.z + k * spacing_.z};
  }
  Vec3 center(std::uint32_t index) const noexcept {
    const auto c = coords(index);
    return center(c[0], c[1], c[2]);
  }
  bool in_bounds(int i, int j, int k) const noexcept {
    return i >= 0 && j >= 0 && k >= 0 && i < dims_[0] && j < dims_[1] && k < dims_[2];
  }
  /// Index of the voxel whose cell contains `p`, if any.
  std::optional<std::uint32_t> locate(Vec3 p) const noexcept;

  /// Lower and upper corners of the region covered by voxel cells.
  Vec3 extent_min() const noexcept;
  Vec3 extent_max() const noexcept;

  friend bool operator==(const VoxelGrid&, const VoxelGrid&) = default;

 private:
  GridDims dims_{1, 1, 1};
  Vec3 spacing_{1.0, 1.0, 1.0};
  Vec3 origin_{};
};

enum class StructureRole {
  PTV,
  GTV,
  Brain,
  Brainstem,
  OpticChiasm,
  OpticNerveL,
  OpticNerveR,
  CochleaL,
  CochleaR,
  Ring,
};

std::string_view to_string(StructureRole role) noexcept;
StructureRole role_from_string(std::string_view name);

/// The six point organs at risk whose maximum dose is reported.
inline constexpr std::array<StructureRole, 6> kSerialOars = {
    StructureRole::Brainstem, StructureRole::OpticChiasm, StructureRole::OpticNerveL,
    StructureRole::OpticNerveR, StructureRole::CochleaL, StructureRole::CochleaR};

/// A named set of voxels on a grid with the given dims. `voxels` is sorted
/// and free of duplicates.
struct StructureMask {
  std::string name;
  StructureRole role = StructureRole::PTV;
  GridDims dims{1, 1, 1};
  std::vector<std::uint32_t> voxels;

  bool empty() const noexcept { return voxels.empty(); }
  bool contains(std::uint32_t index) const noexcept;

  friend bool operator==(const StructureMask&, const StructureMask&) = default;
};

/// Dense membership bitmap for fast lookups over a whole grid.
std::vector<std::uint8_t> to_bitmap(const StructureMask& mask, std::size_t grid_size);

/// One static beam. Geometry is an input of the planning problem and is never
/// optimized.
struct BeamSpec {
  Vec3 direction{0.0, 0.0, 1.0};
  Vec3 isocenter{};
  double aperture_radius_mm = 6.0;

  friend bool operator==(const BeamSpec&, const BeamSpec&) = default;
};

struct Case {
  std::string id;
  VoxelGrid grid;
  std::vector<StructureMask> structures;
  double prescription_gy = 18.0;
  std::vector<BeamSpec> beams;

  const StructureMask* find(std::string_view name) const noexcept;
  /// First structure with the role; throws invalid-case when absent.
  const StructureMask& require(StructureRole role) const;

  friend bool operator==(const Case&, const Case&) = default;
};

/// Checks the case invariants: bounds, exactly one PTV and one Brain, Brain
/// containing the GTV, positive prescription and valid beams.
void validate_case(const Case& c);

struct Ellipsoid {
  Vec3 center_mm{};
  Vec3 radii_mm{1.0, 1.0, 1.0};
};

/// Static field layout: `direction_count` directions spread over the sphere
/// (rotated by `seed`), each aimed at every isocenter of a cubic shot lattice
/// filling the PTV. Total beams = directions x shots.
struct BeamArrangement {
  int direction_count = 8;
  std::uint64_t seed = 1;
  double aperture_radius_mm = 6.0;
  double shot_spacing_mm = 4.5;
  /// Shots are placed up to ptv_radius + shot_margin from the PTV center, so
  /// some fields reach past the target and spill depends on the objectives.
  double shot_margin_mm = 3.0;
};

struct CaseSpec {
  std::string id = "case";
  GridDims dims{64, 64, 64};
  Vec3 spacing_mm{2.5, 2.5, 2.5};
  /// When unset the grid is centered on the coordinate origin.
  std::optional<Vec3> origin_mm;
  Vec3 ptv_center_mm{};
  double ptv_radius_mm = 8.0;
  double gtv_margin_mm = 1.0;
  Ellipsoid brain{{0.0, 0.0, 0.0}, {62.0, 70.0, 58.0}};
  std::vector<std::pair<StructureRole, Ellipsoid>> oars;
  double prescription_gy = 18.0;
  BeamArrangement beams;
};

/// A spec with the standard cranial layout: brain, brainstem, chiasm, optic
/// nerves and cochleae, and a PTV at `ptv_center_mm`.
CaseSpec standard_case_spec(Vec3 ptv_center_mm = {20.0, 20.0, 15.0}, double ptv_radius_mm = 8.0);

Case generate_synthetic_case(const CaseSpec& spec);

/// Voxelizes an ellipsoid with the center-inside rule.
StructureMask voxelize_ellipsoid(const VoxelGrid& grid, const Ellipsoid& shape, std::string name,
                                 StructureRole role);

double structure_volume(const StructureMask& mask, const VoxelGrid& grid);
StructureMask subtract_masks(const StructureMask& a, const StructureMask& b);
StructureMask intersect_masks(const StructureMask& a, const StructureMask& b);

/// Template for a randomized cohort. PTV centers and radii are drawn so the
/// target stays inside the brain and at least `min_oar_gap_mm` from every OAR
/// bounding sphere.
struct CohortSpec {
  CaseSpec base = standard_case_spec();
  double min_ptv_radius_mm = 5.0;
  double max_ptv_radius_mm = 10.0;
  double min_oar_gap_mm = 8.0;
  double brain_margin_mm = 15.0;
};

std::vector<CaseSpec> sample_cohort(const CohortSpec& cohort, int count, std::uint64_t seed);

}  // namespace sage
