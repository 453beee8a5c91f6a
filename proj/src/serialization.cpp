#include "sage/serialization.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "sage/error.hpp"

namespace sage {

void to_json(json& j, const Vec3& v) { j = json::array({v.x, v.y, v.z}); }

void from_json(const json& j, Vec3& v) {
  if (!j.is_array() || j.size() != 3) throw Error(ErrorKind::InvalidSpec, "expected a 3-vector");
  v = {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

void to_json(json& j, const VoxelGrid& g) {
  j = json{{"dims", g.dims()}, {"spacing_mm", g.spacing()}, {"origin_mm", g.origin()}};
}

void from_json(const json& j, VoxelGrid& g) {
  g = VoxelGrid(j.at("dims").get<GridDims>(), j.at("spacing_mm").get<Vec3>(), j.at("origin_mm").get<Vec3>());
}

void to_json(json& j, const BeamSpec& b) {
  j = json{{"direction", b.direction}, {"isocenter_mm", b.isocenter}, {"aperture_radius_mm", b.aperture_radius_mm}};
}

void from_json(const json& j, BeamSpec& b) {
  b.direction = j.at("direction").get<Vec3>();
  b.isocenter = j.at("isocenter_mm").get<Vec3>();
  b.aperture_radius_mm = j.at("aperture_radius_mm").get<double>();
}

void to_json(json& j, const StructureMask& m) {
  const std::uint32_t slice = static_cast<std::uint32_t>(m.dims[0]) * static_cast<std::uint32_t>(m.dims[1]);
  json slices = json::array();
  std::size_t n = 0;
  while (n < m.voxels.size()) {
    const std::uint32_t z = m.voxels[n] / slice;
    json runs = json::array();
    while (n < m.voxels.size() && m.voxels[n] / slice == z) {
      const std::uint32_t start = m.voxels[n];
      std::uint32_t len = 1;
      while (n + len < m.voxels.size() && m.voxels[n + len] == start + len && (start + len) / slice == z) ++len;
      runs.push_back({start - z * slice, len});
      n += len;
    }
    slices.push_back({{"z", z}, {"runs", std::move(runs)}});
  }
  j = json{{"name", m.name}, {"role", std::string(to_string(m.role))}, {"dims", m.dims}, {"slices", std::move(slices)}};
}

void from_json(const json& j, StructureMask& m) {
  m.name = j.at("name").get<std::string>();
  m.role = role_from_string(j.at("role").get<std::string>());
  m.dims = j.at("dims").get<GridDims>();
  m.voxels.clear();
  const std::uint64_t slice = static_cast<std::uint64_t>(m.dims[0]) * static_cast<std::uint64_t>(m.dims[1]);
  for (const auto& s : j.at("slices")) {
    const auto z = s.at("z").get<std::uint64_t>();
    for (const auto& run : s.at("runs")) {
      const auto start = run.at(0).get<std::uint64_t>();
      const auto len = run.at(1).get<std::uint64_t>();
      if (start + len > slice) throw Error(ErrorKind::InvalidCase, "run leaves its slice in " + m.name);
      for (std::uint64_t t = 0; t < len; ++t) m.voxels.push_back(static_cast<std::uint32_t>(z * slice + start + t));
    }
  }
}

void to_json(json& j, const Case& c) {
  j = json{{"id", c.id},
           {"grid", c.grid},
           {"prescription_gy", c.prescription_gy},
           {"structures", c.structures},
           {"beams", c.beams}};
}

void from_json(const json& j, Case& c) {
  c.id = j.at("id").get<std::string>();
  c.grid = j.at("grid").get<VoxelGrid>();
  c.prescription_gy = j.at("prescription_gy").get<double>();
  c.structures = j.at("structures").get<std::vector<StructureMask>>();
  c.beams = j.at("beams").get<std::vector<BeamSpec>>();
}

void to_json(json& j, const Ellipsoid& e) { j = json{{"center_mm", e.center_mm}, {"radii_mm", e.radii_mm}}; }

void from_json(const json& j, Ellipsoid& e) {
  e.center_mm = j.at("center_mm").get<Vec3>();
  e.radii_mm = j.at("radii_mm").get<Vec3>();
}

void to_json(json& j, const BeamArrangement& a) {
  j = json{{"direction_count", a.direction_count},
           {"seed", a.seed},
           {"aperture_radius_mm", a.aperture_radius_mm},
           {"shot_spacing_mm", a.shot_spacing_mm},
           {"shot_margin_mm", a.shot_margin_mm}};
}

void from_json(const json& j, BeamArrangement& a) {
  a = BeamArrangement{};
  a.direction_count = j.value("direction_count", a.direction_count);
  a.seed = j.value("seed", a.seed);
  a.aperture_radius_mm = j.value("aperture_radius_mm", a.aperture_radius_mm);
  a.shot_spacing_mm = j.value("shot_spacing_mm", a.shot_spacing_mm);
  a.shot_margin_mm = j.value("shot_margin_mm", a.shot_margin_mm);
}

void to_json(json& j, const CaseSpec& s) {
  json oars = json::array();
  for (const auto& [role, shape] : s.oars) {
    json o = shape;
    o["role"] = std::string(to_string(role));
    oars.push_back(std::move(o));
  }
  j = json{{"id", s.id},
           {"dims", s.dims},
           {"spacing_mm", s.spacing_mm},
           {"ptv_center_mm", s.ptv_center_mm},
           {"ptv_radius_mm", s.ptv_radius_mm},
           {"gtv_margin_mm", s.gtv_margin_mm},
           {"brain", s.brain},
           {"oars", std::move(oars)},
           {"prescription_gy", s.prescription_gy},
           {"beams", s.beams}};
  if (s.origin_mm) j["origin_mm"] = *s.origin_mm;
}

void from_json(const json& j, CaseSpec& s) {
  s = CaseSpec{};
  s.id = j.value("id", s.id);
  if (j.contains("dims")) s.dims = j.at("dims").get<GridDims>();
  if (j.contains("spacing_mm")) s.spacing_mm = j.at("spacing_mm").get<Vec3>();
  if (j.contains("origin_mm")) s.origin_mm = j.at("origin_mm").get<Vec3>();
  if (j.contains("ptv_center_mm")) s.ptv_center_mm = j.at("ptv_center_mm").get<Vec3>();
  s.ptv_radius_mm = j.value("ptv_radius_mm", s.ptv_radius_mm);
  s.gtv_margin_mm = j.value("gtv_margin_mm", s.gtv_margin_mm);
  if (j.contains("brain")) s.brain = j.at("brain").get<Ellipsoid>();
  if (j.contains("oars")) {
    for (const auto& o : j.at("oars")) s.oars.emplace_back(role_from_string(o.at("role").get<std::string>()), o.get<Ellipsoid>());
  }
  s.prescription_gy = j.value("prescription_gy", s.prescription_gy);
  if (j.contains("beams")) s.beams = j.at("beams").get<BeamArrangement>();
}

void to_json(json& j, const CohortSpec& s) {
  j = json{{"base", s.base},
           {"min_ptv_radius_mm", s.min_ptv_radius_mm},
           {"max_ptv_radius_mm", s.max_ptv_radius_mm},
           {"min_oar_gap_mm", s.min_oar_gap_mm},
           {"brain_margin_mm", s.brain_margin_mm}};
}

void from_json(const json& j, CohortSpec& s) {
  s = CohortSpec{};
  if (j.contains("base")) s.base = j.at("base").get<CaseSpec>();
  s.min_ptv_radius_mm = j.value("min_ptv_radius_mm", s.min_ptv_radius_mm);
  s.max_ptv_radius_mm = j.value("max_ptv_radius_mm", s.max_ptv_radius_mm);
  s.min_oar_gap_mm = j.value("min_oar_gap_mm", s.min_oar_gap_mm);
  s.brain_margin_mm = j.value("brain_margin_mm", s.brain_margin_mm);
}

void to_json(json& j, const Objective& o) {
  j = json{{"structure", o.structure},
           {"kind", std::string(to_string(o.kind))},
           {"dose_gy", o.dose_gy},
           {"volume_pct", o.volume_pct},
           {"priority", o.priority}};
}

void from_json(const json& j, Objective& o) {
  o.structure = j.at("structure").get<std::string>();
  o.kind = objective_kind_from_string(j.at("kind").get<std::string>());
  o.dose_gy = j.at("dose_gy").get<double>();
  o.volume_pct = j.at("volume_pct").get<double>();
  o.priority = j.at("priority").get<int>();
}

void to_json(json& j, const RingSpec& r) {
  j = json{{"inner_mm", r.inner_margin_mm}, {"outer_mm", r.outer_margin_mm}};
}

void from_json(const json& j, RingSpec& r) {
  r.inner_margin_mm = j.at("inner_mm").get<double>();
  r.outer_margin_mm = j.at("outer_mm").get<double>();
}

void to_json(json& j, const MetricsReport& r) {
  j = json::object();
  for (const auto& id : all_metric_ids()) {
    const auto v = r.value(id);
    if (v && !std::isnan(*v)) {
      j[id] = *v;
    } else {
      j[id] = nullptr;
    }
  }
}

void from_json(const json& j, MetricsReport& r) {
  r = MetricsReport{};
  auto num = [&](const char* key) { return j.at(key).get<double>(); };
  r.coverage_pct = num("coverage_pct");
  r.dmax_gy = num("dmax_gy");
  r.ci = num("ci");
  r.rtog_ci = num("rtog_ci");
  if (!j.at("gi").is_null()) r.gi = num("gi");
  r.v12_cc = num("v12_cc");
  for (auto role : kSerialOars) {
    const auto id = oar_metric_id(role);
    if (j.contains(id) && !j.at(id).is_null()) r.oar_dmax_gy[role] = j.at(id).get<double>();
  }
}

void to_json(json& j, const Goal& g) {
  j = json{{"metric", g.metric},
           {"comparator", std::string(to_string(g.comparator))},
           {"threshold", g.threshold},
           {"units", g.units}};
}

void from_json(const json& j, Goal& g) {
  g.metric = j.at("metric").get<std::string>();
  g.comparator = comparator_from_string(j.at("comparator").get<std::string>());
  g.threshold = j.at("threshold").get<double>();
  g.units = j.value("units", std::string{});
}

void to_json(json& j, const GoalSet& g) { j = json{{"goals", g.goals}}; }

void from_json(const json& j, GoalSet& g) { g.goals = j.at("goals").get<std::vector<Goal>>(); }

void to_json(json& j, const DvhCurve& c) {
  json points = json::array();
  for (std::size_t k = 0; k < c.counts.size(); ++k) points.push_back({c.threshold(k), 100.0 * c.fraction(k)});
  j = json{{"structure", c.structure}, {"bin_width_gy", c.bin_width_gy}, {"voxels", c.total}, {"points", std::move(points)}};
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
    out << text;
    if (!out) throw Error(ErrorKind::IoError, "write failed for " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

json read_json_file(const std::filesystem::path& path) {
  const auto text = read_text_file(path);
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::IoError, path.string() + ": " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const json& j, int indent) {
  write_text_file(path, j.dump(indent) + "\n");
}

Case read_case(const std::filesystem::path& path) {
  const auto j = read_json_file(path);
  Case c;
  try {
    c = j.get<Case>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::InvalidCase, path.string() + ": " + e.what());
  }
  validate_case(c);
  return c;
}

void write_case(const std::filesystem::path& path, const Case& c) { write_json_file(path, json(c), -1); }

GoalSet read_goal_set(const std::filesystem::path& path) {
  const auto j = read_json_file(path);
  GoalSet g;
  try {
    g = j.get<GoalSet>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::InvalidGoalSet, path.string() + ": " + e.what());
  }
  validate_goal_set(g);
  return g;
}

}  // namespace sage
