#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "sage/case_model.hpp"
#include "sage/dose_engine.hpp"
#include "sage/plan_evaluator.hpp"
#include "sage/plan_optimizer.hpp"

namespace sage {

using json = nlohmann::json;

void to_json(json& j, const Vec3& v);
void from_json(const json& j, Vec3& v);
void to_json(json& j, const VoxelGrid& g);
void from_json(const json& j, VoxelGrid& g);
void to_json(json& j, const BeamSpec& b);
void from_json(const json& j, BeamSpec& b);

/// Voxels are stored run-length encoded per z-slice:
/// {"slices": [{"z": k, "runs": [[start, length], ...]}]} with start an
/// in-slice index i + nx*j.
void to_json(json& j, const StructureMask& m);
void from_json(const json& j, StructureMask& m);

void to_json(json& j, const Case& c);
void from_json(const json& j, Case& c);

void to_json(json& j, const Ellipsoid& e);
void from_json(const json& j, Ellipsoid& e);
void to_json(json& j, const BeamArrangement& a);
void from_json(const json& j, BeamArrangement& a);
void to_json(json& j, const CaseSpec& s);
void from_json(const json& j, CaseSpec& s);
void to_json(json& j, const CohortSpec& s);
void from_json(const json& j, CohortSpec& s);

/// {"structure", "kind", "dose_gy", "volume_pct", "priority"}
void to_json(json& j, const Objective& o);
void from_json(const json& j, Objective& o);

void to_json(json& j, const RingSpec& r);
void from_json(const json& j, RingSpec& r);

/// Flat object keyed by metric id; an undefined GI is null.
void to_json(json& j, const MetricsReport& r);
void from_json(const json& j, MetricsReport& r);

void to_json(json& j, const Goal& g);
void from_json(const json& j, Goal& g);
void to_json(json& j, const GoalSet& g);
void from_json(const json& j, GoalSet& g);

void to_json(json& j, const DvhCurve& c);

json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const json& j, int indent = 2);
void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

Case read_case(const std::filesystem::path& path);
void write_case(const std::filesystem::path& path, const Case& c);
GoalSet read_goal_set(const std::filesystem::path& path);

}  // namespace sage
