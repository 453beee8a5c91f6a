#include "sage/dose_engine.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <thread>

#include "sage/error.hpp"

namespace sage {

std::size_t DoseInfluence::nonzeros() const noexcept {
  std::size_t n = 0;
  for (const auto& b : beams) n += b.voxels.size();
  return n;
}

double DoseDistribution::max() const noexcept {
  double m = 0.0;
  for (double d : dose) m = std::max(m, d);
  return m;
}

double entry_distance(const VoxelGrid& grid, const std::vector<std::uint8_t>& mask_bits, Vec3 isocenter,
                      Vec3 direction) {
  auto inside = [&](double t) {
    const auto idx = grid.locate(isocenter - t * direction);
    return idx && mask_bits[*idx] != 0;
  };
  if (!inside(0.0)) return 0.0;
  const auto& h = grid.spacing();
  const double step = 0.25 * std::min({h.x, h.y, h.z});
  double t = 0.0;
  while (inside(t + step)) t += step;
  double lo = t;
  double hi = t + step;
  for (int n = 0; n < 60; ++n) {
    const double mid = 0.5 * (lo + hi);
    (inside(mid) ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

namespace {

// Kernel without D0 for every brain voxel; entries below the cutoff dropped.
BeamInfluence beam_kernel(const VoxelGrid& grid, const std::vector<std::uint32_t>& brain,
                          const std::vector<std::uint8_t>& brain_bits, const BeamSpec& beam,
                          const EngineConstants& k) {
  const double sigma = k.sigma_fraction * beam.aperture_radius_mm;
  const double inv_sigma2 = 1.0 / (sigma * sigma);
  const double t_entry = entry_distance(grid, brain_bits, beam.isocenter, beam.direction);
  BeamInfluence out;
  double peak = 0.0;
  for (auto v : brain) {
    const Vec3 p = grid.center(v) - beam.isocenter;
    const double t = dot(p, beam.direction);
    const double off2 = std::max(0.0, dot(p, p) - t * t);
    const double g = off2 * inv_sigma2;
    // exp(-12) is far below any cutoff reachable inside a 1 m path.
    if (g > 12.0) continue;
    const double depth = std::max(0.0, t_entry + t);
    const double value = std::exp(-k.mu_per_mm * depth) * std::exp(-g);
    peak = std::max(peak, value);
    out.voxels.push_back(v);
    out.dose.push_back(value);
  }
  const double floor = k.cutoff_fraction * peak;
  std::size_t w = 0;
  for (std::size_t r = 0; r < out.voxels.size(); ++r) {
    if (out.dose[r] >= floor) {
      out.voxels[w] = out.voxels[r];
      out.dose[w] = out.dose[r];
      ++w;
    }
  }
  out.voxels.resize(w);
  out.dose.resize(w);
  return out;
}

}  // namespace

DoseInfluence compute_influence(const Case& c, const EngineConstants& constants) {
  if (c.beams.empty()) throw Error(ErrorKind::InvalidCase, "case '" + c.id + "' has no beams");
  if (!(constants.mu_per_mm >= 0.0) || !(constants.sigma_fraction > 0.0) ||
      !(constants.cutoff_fraction >= 0.0 && constants.cutoff_fraction < 1.0)) {
    throw Error(ErrorKind::InvalidArgument, "invalid engine constants");
  }
  const auto& brain = c.require(StructureRole::Brain);
  const auto brain_bits = to_bitmap(brain, c.grid.size());

  DoseInfluence out;
  out.case_id = c.id;
  out.grid = c.grid;
  out.constants = constants;
  out.beams.resize(c.beams.size());

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t b = next++; b < c.beams.size(); b = next++) {
      out.beams[b] = beam_kernel(c.grid, brain.voxels, brain_bits, c.beams[b], constants);
    }
  };
  const unsigned threads = std::clamp(std::thread::hardware_concurrency(), 1u, 16u);
  {
    std::vector<std::jthread> pool;
    for (unsigned t = 1; t < threads; ++t) pool.emplace_back(worker);
    worker();
  }

  // Calibrate D0 on the voxel holding the PTV centroid.
  const auto& ptv = c.require(StructureRole::PTV);
  Vec3 centroid{};
  for (auto v : ptv.voxels) centroid = centroid + c.grid.center(v);
  centroid = (1.0 / static_cast<double>(ptv.voxels.size())) * centroid;
  const auto ref = c.grid.locate(centroid);
  double at_ref = 0.0;
  if (ref) {
    for (const auto& b : out.beams) {
      auto it = std::lower_bound(b.voxels.begin(), b.voxels.end(), *ref);
      if (it != b.voxels.end() && *it == *ref) at_ref += b.dose[static_cast<std::size_t>(it - b.voxels.begin())];
    }
  }
  if (!(at_ref > 0.0)) throw Error(ErrorKind::InvalidCase, "no beam reaches the PTV centroid");
  out.d0 = c.prescription_gy / at_ref;
  for (auto& b : out.beams) {
    for (auto& d : b.dose) d *= out.d0;
  }
  return out;
}

void accumulate_dose(const DoseInfluence& influence, std::span<const double> weights, std::span<double> dose) {
  for (std::size_t b = 0; b < influence.beams.size(); ++b) {
    const double w = weights[b];
    if (w == 0.0) continue;
    const auto& beam = influence.beams[b];
    for (std::size_t n = 0; n < beam.voxels.size(); ++n) dose[beam.voxels[n]] += w * beam.dose[n];
  }
}

DoseDistribution compose_dose(const DoseInfluence& influence, std::span<const double> weights) {
  if (weights.size() != influence.beam_count()) {
    throw Error(ErrorKind::InvalidWeights, "expected " + std::to_string(influence.beam_count()) +
                                               " weights, got " + std::to_string(weights.size()));
  }
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw Error(ErrorKind::InvalidWeights, "weights must be finite and >= 0");
  }
  DoseDistribution out{influence.grid, std::vector<double>(influence.grid.size(), 0.0)};
  accumulate_dose(influence, weights, out.dose);
  return out;
}

namespace {

constexpr char kMagic[8] = {'S', 'A', 'G', 'E', 'I', 'N', 'F', '1'};
constexpr std::uint32_t kCacheVersion = 1;

struct Fnv {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= c[i];
      h *= 0x100000001b3ULL;
    }
  }
  void f64(double v) { bytes(&v, sizeof v); }
};

template <class T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
template <class T>
bool get(std::istream& is, T& v) {
  return static_cast<bool>(is.read(reinterpret_cast<char*>(&v), sizeof v));
}

}  // namespace

std::uint64_t influence_cache_key(const Case& c, const EngineConstants& k) {
  Fnv f;
  f.bytes(c.id.data(), c.id.size());
  for (int d : c.grid.dims()) f.bytes(&d, sizeof d);
  for (double v : {c.grid.spacing().x, c.grid.spacing().y, c.grid.spacing().z, c.grid.origin().x,
                   c.grid.origin().y, c.grid.origin().z, c.prescription_gy, k.mu_per_mm, k.sigma_fraction,
                   k.cutoff_fraction}) {
    f.f64(v);
  }
  for (const auto& b : c.beams) {
    for (double v : {b.direction.x, b.direction.y, b.direction.z, b.isocenter.x, b.isocenter.y,
                     b.isocenter.z, b.aperture_radius_mm}) {
      f.f64(v);
    }
  }
  const auto& brain = c.require(StructureRole::Brain).voxels;
  f.bytes(brain.data(), brain.size() * sizeof(std::uint32_t));
  return f.h;
}

void save_influence(const std::filesystem::path& path, const DoseInfluence& inf, std::uint64_t key) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorKind::IoError, "cannot write " + path.string());
  os.write(kMagic, sizeof kMagic);
  put(os, kCacheVersion);
  put(os, key);
  put(os, inf.d0);
  put(os, static_cast<std::uint64_t>(inf.beams.size()));
  for (const auto& b : inf.beams) {
    put(os, static_cast<std::uint64_t>(b.voxels.size()));
    os.write(reinterpret_cast<const char*>(b.voxels.data()),
             static_cast<std::streamsize>(b.voxels.size() * sizeof(std::uint32_t)));
    os.write(reinterpret_cast<const char*>(b.dose.data()), static_cast<std::streamsize>(b.dose.size() * sizeof(double)));
  }
  if (!os) throw Error(ErrorKind::IoError, "failed writing " + path.string());
}

std::optional<DoseInfluence> load_influence(const std::filesystem::path& path, const Case& c,
                                            const EngineConstants& constants) {
  const std::uint64_t key = influence_cache_key(c, constants);
  std::ifstream is(path, std::ios::binary);
  if (!is) return std::nullopt;
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t stored_key = 0;
  std::uint64_t count = 0;
  DoseInfluence inf;
  inf.case_id = c.id;
  inf.grid = c.grid;
  inf.constants = constants;
  if (!is.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0) return std::nullopt;
  if (!get(is, version) || version != kCacheVersion) return std::nullopt;
  if (!get(is, stored_key) || stored_key != key) return std::nullopt;
  if (!get(is, inf.d0) || !get(is, count)) return std::nullopt;
  inf.beams.resize(count);
  for (auto& b : inf.beams) {
    std::uint64_t n = 0;
    if (!get(is, n)) return std::nullopt;
    b.voxels.resize(n);
    b.dose.resize(n);
    is.read(reinterpret_cast<char*>(b.voxels.data()), static_cast<std::streamsize>(n * sizeof(std::uint32_t)));
    is.read(reinterpret_cast<char*>(b.dose.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!is) return std::nullopt;
  }
  if (inf.beams.size() != c.beams.size()) return std::nullopt;
  return inf;
}

DoseInfluence cached_influence(const Case& c, const std::filesystem::path& cache_dir,
                               const EngineConstants& constants) {
  if (cache_dir.empty()) return compute_influence(c, constants);
  const auto path = cache_dir / (c.id + ".inf");
  if (auto hit = load_influence(path, c, constants)) return std::move(*hit);
  auto inf = compute_influence(c, constants);
  std::filesystem::create_directories(cache_dir);
  save_influence(path, inf, influence_cache_key(c, constants));
  return inf;
}

}  // namespace sage
