#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "sage/case_model.hpp"
#include "sage/dose_engine.hpp"
#include "sage/plan_evaluator.hpp"
#include "sage/plan_optimizer.hpp"
#include "sage/policy.hpp"

namespace sage {

inline constexpr int kMaxIterations = 10;
inline constexpr std::string_view kStandardRefinementText =
    "Improve the conformity of this plan while maintaining target coverage and all organ-at-risk constraints.";

enum class SessionStatus { Running, GoalsMet, IterationCapReached, AwaitingReview, Accepted, Refined, Failed };
std::string_view to_string(SessionStatus s) noexcept;
SessionStatus session_status_from_string(std::string_view s);

struct MemoryEntry {
  int round = 1;
  int iteration = 1;
  ObjectiveSet objectives;
  std::vector<RingRequest> rings;
  MetricsReport metrics;
  int goals_passed = 0;
  int goals_total = 0;
  double deficiency = 0.0;
};

/// Prior (objectives, metrics) pairs of a session. Append-only.
class MemoryStore {
 public:
  void append(MemoryEntry entry) { entries_.push_back(std::move(entry)); }
  const std::vector<MemoryEntry>& entries() const noexcept { return entries_; }
  bool empty() const noexcept { return entries_.empty(); }
  std::size_t size() const noexcept { return entries_.size(); }

 private:
  std::vector<MemoryEntry> entries_;
};

/// One policy invocation within an iteration.
struct PolicyAttempt {
  int attempt = 1;
  std::string prompt;
  std::string raw_output;
  std::string rationale;
  bool format_error = false;
  bool transport_error = false;
  std::string error;
  double duration_ms = 0.0;
};

struct IterationRecord {
  int index = 1;  // 1-based within the round
  std::vector<PolicyAttempt> attempts;
  std::string rationale;
  /// Set iff the policy output parsed; otherwise the iteration is a format
  /// error and carries no plan.
  std::optional<ObjectiveSet> objectives;
  std::vector<RingRequest> rings;
  std::vector<double> weights;
  std::optional<MetricsReport> metrics;
  std::vector<GoalResult> goal_results;
  bool goals_met = false;
  double wall_time_ms = 0.0;

  bool format_error() const noexcept { return !objectives.has_value(); }
  const std::string& prompt() const;
  const std::string& raw_output() const;
};

struct RoundRecord {
  int number = 1;
  std::optional<std::string> refinement_text;
  bool refinement_text_standard = true;
  std::vector<IterationRecord> iterations;
  /// 0-based position in `iterations` of the selected plan.
  std::optional<std::size_t> selected;
  /// GoalsMet, IterationCapReached or Failed once the round has finished.
  SessionStatus termination = SessionStatus::Running;
};

struct PlanningSession {
  std::string session_id;
  std::string case_id;
  std::string policy;
  std::uint64_t seed = 0;
  SessionStatus status = SessionStatus::Running;
  std::vector<RoundRecord> rounds;
  MemoryStore memory;
  std::string failure;

  int round() const noexcept { return static_cast<int>(rounds.size()); }
  const RoundRecord& current() const;
  RoundRecord& current();
  /// The selected iteration of the current round, if any.
  const IterationRecord* selected_iteration() const;
};

/// Emits one trace line per policy invocation.
using TraceSink = std::function<void(const std::string& line)>;

struct SessionConfig {
  int max_iterations = kMaxIterations;
  std::size_t memory_k = 5;
  std::uint64_t seed = 1;
  int inner_steps = kDefaultInnerSteps;
  std::string session_id;  // derived from case id and seed when empty
  std::string standard_refinement_text = std::string(kStandardRefinementText);
  bool allow_multiple_refinements = false;
  int max_transport_failures = 3;
  /// Backoff before retrying a failed transport call: base * 2^(n-1).
  double backoff_base_ms = 500.0;
  std::function<void(double ms)> sleep;
  /// Monotonic milliseconds; injectable so traces are reproducible.
  std::function<double()> clock_ms;
  TraceSink trace;
  std::function<void(const std::string&)> warn;
};

/// Inputs for the prompt beyond the case itself.
struct PromptState {
  int round = 1;
  std::optional<std::string> refinement_text;
  std::optional<MetricsReport> current_metrics;
  std::optional<ObjectiveSet> current_objectives;
  std::vector<RingRequest> rings;
  std::size_t memory_k = 5;
};

std::string system_prompt();

/// Sections: "## Clinical scenario", "## Prescription", "## Clinical goals",
/// "## Current plan", "## Memory" (only with prior iterations), "## Refinement
/// request" (round 2) and "## Output format".
std::string build_prompt(const Case& c, const GoalSet& goals, const MemoryStore& memory, const PromptState& state);

/// Normalized deficiency: sum over failed goals of |violation| / threshold.
double goal_deficiency(const std::vector<GoalResult>& results);

/// Lexicographic choice: most goals passed, then smallest deficiency, then
/// highest CI, then earliest. Throws no-valid-plan when no iteration has
/// metrics.
std::size_t select_best(const std::vector<IterationRecord>& iterations);
std::size_t select_best(const PlanningSession& session);

/// Case with the session's ring structures appended.
Case planning_case(const Case& c, const std::vector<RingRequest>& rings);

PlanningSession run_session(const Case& c, const DoseInfluence& influence, PolicyAdapter& policy,
                            const GoalSet& goals, const SessionConfig& config = {});

/// Adds a refinement round seeded with the best round-1 plan. Requires status
/// AwaitingReview and, unless allowed by config, a single-round session.
void refine_session(PlanningSession& session, const Case& c, const DoseInfluence& influence, PolicyAdapter& policy,
                    const GoalSet& goals, const std::string& refinement_text, const SessionConfig& config = {});

nlohmann::json session_to_json(const PlanningSession& session);
PlanningSession session_from_json(const nlohmann::json& j);

}  // namespace sage
