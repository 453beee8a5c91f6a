#pragma once

#include <condition_variable>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "sage/agent.hpp"
#include "sage/store.hpp"
#include "sage/trace_analyzer.hpp"

namespace sage {

enum class Verdict { Accept, Refine };
std::string_view to_string(Verdict v) noexcept;
Verdict verdict_from_string(std::string_view s);

struct ReviewDecision {
  std::string session_id;
  Verdict verdict = Verdict::Accept;
  std::optional<std::string> refinement_text;
  std::string reviewer_id;
  std::string timestamp;  // filled in by the service when empty
};

struct SessionSummary {
  std::string session_id;
  std::string case_id;
  SessionStatus status = SessionStatus::Running;
  int round = 1;
  std::optional<int> selected_iteration;
  std::optional<MetricsReport> metrics;
  std::vector<GoalResult> goals;
  bool goals_met = false;
  std::string termination;
};
nlohmann::json summary_to_json(const SessionSummary& s);
SessionSummary summarize(const PlanningSession& s);

struct ReviewConfig {
  GoalSet goals = standard_goals();
  SessionConfig session;  // iteration cap, inner steps, standard text, ...
  bool allow_multiple_refinements = false;
  /// Builds the policy used for refinement from the stored policy name.
  std::function<std::unique_ptr<PolicyAdapter>(const std::string& policy_name)> policy_factory;
  std::function<std::string()> now;  // ISO-8601 timestamps
  MarkerLexicon lexicon = MarkerLexicon::standard();
  double dvh_bin_gy = 0.1;
};

/// Default factory: "scripted" and "canned" map to ScriptedPolicy, anything
/// else to RemotePolicy configured from the environment.
std::unique_ptr<PolicyAdapter> default_policy_factory(const std::string& policy_name);

/// Review workflow over a SessionStore. Decisions are serialized; the first
/// decision on a reviewable round wins and later ones conflict. Refinement
/// runs on a background thread while the session reads as Refined.
class ReviewService {
 public:
  ReviewService(std::filesystem::path store_root, ReviewConfig config = {});
  ~ReviewService();
  ReviewService(const ReviewService&) = delete;
  ReviewService& operator=(const ReviewService&) = delete;

  std::vector<SessionSummary> list_sessions() const;
  /// Summary, metrics, DVH curves of the selected plan, per-iteration trace
  /// with category tags, decisions and the default refinement text.
  nlohmann::json get_session(const std::string& id) const;
  SessionSummary submit_decision(ReviewDecision decision);

  /// Blocks until no refinement is running.
  void wait_idle();
  const ReviewConfig& config() const noexcept { return config_; }
  SessionStore& store() noexcept { return store_; }

 private:
  void run_refinement(PlanningSession session, std::string text);

  SessionStore store_;
  ReviewConfig config_;
  mutable std::mutex mutex_;  // guards decisions and status changes
  std::condition_variable idle_cv_;
  int running_ = 0;
  std::vector<std::thread> workers_;
};

}  // namespace sage
