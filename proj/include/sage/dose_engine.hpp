#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "sage/case_model.hpp"

namespace sage {

/// Analytic pencil kernel: D0 * exp(-mu * depth) * exp(-(r / sigma)^2), with
/// sigma = sigma_fraction * aperture radius.
struct EngineConstants {
  double mu_per_mm = 0.004;
  double sigma_fraction = 0.5;
  /// Entries below this fraction of a beam's maximum are dropped.
  double cutoff_fraction = 1e-3;

  friend bool operator==(const EngineConstants&, const EngineConstants&) = default;
};

/// Sparse dose per unit weight of one beam (Gy).
struct BeamInfluence {
  std::vector<std::uint32_t> voxels;
  std::vector<double> dose;
};

struct DoseInfluence {
  std::string case_id;
  VoxelGrid grid;
  EngineConstants constants;
  /// Calibration factor that puts equal unit weights at prescription dose at
  /// the PTV centroid.
  double d0 = 1.0;
  std::vector<BeamInfluence> beams;

  std::size_t beam_count() const noexcept { return beams.size(); }
  std::size_t nonzeros() const noexcept;
};

struct DoseDistribution {
  VoxelGrid grid;
  std::vector<double> dose;

  double max() const noexcept;
};

/// Distance from `isocenter` back along `-direction` to where the ray leaves
/// the mask (the patient surface). Zero if the isocenter is outside the mask.
double entry_distance(const VoxelGrid& grid, const std::vector<std::uint8_t>& mask_bits, Vec3 isocenter,
                      Vec3 direction);

/// Builds the per-beam influence. Work is split across threads by beam; the
/// result does not depend on the thread count.
DoseInfluence compute_influence(const Case& c, const EngineConstants& constants = {});

DoseDistribution compose_dose(const DoseInfluence& influence, std::span<const double> weights);

/// dose += sum_b weights[b] * influence_b, unchecked. `dose` must span the
/// grid; weights may be negative (used for search directions).
void accumulate_dose(const DoseInfluence& influence, std::span<const double> weights,
                     std::span<double> dose);

/// Key for the on-disk influence cache: case id, grid, beams and constants.
std::uint64_t influence_cache_key(const Case& c, const EngineConstants& constants);

void save_influence(const std::filesystem::path& path, const DoseInfluence& influence, std::uint64_t key);
/// Returns nullopt when the file is missing, from another version or keyed
/// differently than `c` + `constants`.
std::optional<DoseInfluence> load_influence(const std::filesystem::path& path, const Case& c,
                                            const EngineConstants& constants = {});

/// Loads `<cache_dir>/<case id>.inf` when it matches, otherwise computes and
/// writes it. An empty cache_dir disables caching.
DoseInfluence cached_influence(const Case& c, const std::filesystem::path& cache_dir,
                               const EngineConstants& constants = {});

}  // namespace sage
