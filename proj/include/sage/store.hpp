#pragma once

#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sage/agent.hpp"
#include "sage/case_model.hpp"
#include "sage/dose_engine.hpp"

namespace sage {

/// Directory of sessions, one subdirectory per session id:
///   session.json    PlanningSession
///   case.json       the planned case
///   trace.jsonl     one line per policy invocation, append-only
///   dose_r<N>.bin   dose of the selected plan of round N
///   decisions.json  review decisions
///   meta.json       creation order
class SessionStore {
 public:
  explicit SessionStore(std::filesystem::path root);

  const std::filesystem::path& root() const noexcept { return root_; }
  std::filesystem::path dir(const std::string& id) const;
  std::filesystem::path trace_path(const std::string& id) const;
  std::filesystem::path cache_dir() const { return root_ / ".cache"; }

  /// Newest first.
  std::vector<std::string> ids() const;
  bool exists(const std::string& id) const;

  PlanningSession load(const std::string& id) const;
  Case load_case(const std::string& id) const;
  std::optional<DoseDistribution> load_dose(const std::string& id, int round) const;
  nlohmann::json decisions(const std::string& id) const;

  /// Registers a new session directory; throws conflict when it exists.
  void create(const PlanningSession& session, const Case& c);
  void save(const PlanningSession& session);
  void save_dose(const std::string& id, int round, const DoseDistribution& dose);
  void append_trace(const std::string& id, const std::string& line);
  void append_decision(const std::string& id, const nlohmann::json& decision);

 private:
  void check_id(const std::string& id) const;
  std::filesystem::path root_;
  mutable std::mutex trace_mutex_;
};

void write_dose(const std::filesystem::path& path, const DoseDistribution& dose);
DoseDistribution read_dose(const std::filesystem::path& path);

/// Runs a planning session with its trace streamed into the store and saves
/// the session, the case and the selected dose.
PlanningSession plan_into_store(SessionStore& store, const Case& c, const DoseInfluence& influence, PolicyAdapter& policy,
                                const GoalSet& goals, SessionConfig config);

/// Runs the refinement round of `session` (as loaded, awaiting review) and
/// saves the result.
PlanningSession refine_in_store(SessionStore& store, PlanningSession session, const Case& c, const DoseInfluence& influence,
                                PolicyAdapter& policy, const GoalSet& goals, const std::string& refinement_text,
                                SessionConfig config);

}  // namespace sage
