#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sage/case_model.hpp"
#include "sage/plan_evaluator.hpp"
#include "sage/plan_optimizer.hpp"

namespace sage {

class MemoryStore;

/// A ring structure the policy asked for, built with create_ring.
struct RingRequest {
  std::string name;
  RingSpec spec;
  friend bool operator==(const RingRequest& a, const RingRequest& b) {
    return a.name == b.name && a.spec.inner_margin_mm == b.spec.inner_margin_mm &&
           a.spec.outer_margin_mm == b.spec.outer_margin_mm;
  }
};

/// Structured view of the planning state handed to policies next to the
/// prompt text. Remote policies only see the prompt.
struct PlanningContext {
  const Case* planning_case = nullptr;  // includes active rings
  const GoalSet* goals = nullptr;
  const MemoryStore* memory = nullptr;
  int round = 1;
  int iteration = 1;
  std::optional<MetricsReport> latest_metrics;
  std::optional<ObjectiveSet> current_objectives;
  std::vector<RingRequest> rings;
  std::optional<std::string> refinement_text;
};

struct PolicyRequest {
  std::string system_prompt;
  std::string prompt;
  std::uint64_t seed = 0;
  int attempt = 1;
  PlanningContext context;
};

/// Produces the raw text reply for one planning step. Transport problems are
/// reported by throwing Error(ErrorKind::Transport).
class PolicyAdapter {
 public:
  virtual ~PolicyAdapter() = default;
  virtual std::string complete(const PolicyRequest& request) = 0;
  virtual std::string name() const = 0;
};

struct ParsedOutput {
  ObjectiveSet objectives;
  std::vector<RingRequest> rings;
  std::string rationale;
};

struct ParseResult {
  std::optional<ParsedOutput> output;
  std::string rationale;  // free text, present even when parsing failed
  std::string error;      // empty on success
  bool ok() const noexcept { return output.has_value(); }
};

/// Extracts the last ```json fenced block (an objective array, or an object
/// with "objectives" and optional "rings") and the surrounding rationale.
/// Structure names must resolve against `c` plus any rings declared in
/// `known_rings` or in the block itself, and a lower PTV objective is required.
ParseResult parse_policy_output(const std::string& text, const Case& c,
                                const std::vector<RingRequest>& known_rings = {});

/// Renders the reply format every policy uses.
std::string format_policy_output(const std::string& rationale, const ObjectiveSet& objectives,
                                 const std::vector<RingRequest>& rings);

/// Deterministic planner heuristic. Round 1 opens coverage-first; each
/// failing goal then nudges the matching objective. On refinement it adds a
/// tight ring around the PTV and relaxes the PTV floor toward the
/// prescription.
class ScriptedPolicy : public PolicyAdapter {
 public:
  struct Options {
    double ptv_floor_factor = 1.065;       // round-1 PTV lower dose / Rx
    double ptv_refine_floor_factor = 1.025;  // round-2 PTV lower dose / Rx
    double ptv_cap_factor = 1.145;         // PTV upper dose / Rx
    double ring_factor = 0.945;            // ring upper dose / Rx on refine
    double oar_headroom_gy = 3.0;          // OAR upper dose below the goal
    bool refine_aware = true;
  };
  ScriptedPolicy() = default;
  explicit ScriptedPolicy(Options options) : options_(options) {}
  std::string complete(const PolicyRequest& request) override;
  std::string name() const override { return "scripted"; }

 private:
  Options options_;
};

/// Replays fixed replies in order; the last one repeats once exhausted.
class CannedPolicy : public PolicyAdapter {
 public:
  explicit CannedPolicy(std::vector<std::string> replies) : replies_(std::move(replies)) {}
  std::string complete(const PolicyRequest& request) override;
  std::string name() const override { return "canned"; }
  int calls() const noexcept { return calls_; }

 private:
  std::vector<std::string> replies_;
  int calls_ = 0;
};

/// OpenAI-style chat-completion client.
class RemotePolicy : public PolicyAdapter {
 public:
  struct Config {
    std::string url;  // e.g. http://host:8000/v1/chat/completions
    std::string model;
    std::string api_key;
    double temperature = 0.4;
    int top_k = 2;
    std::chrono::seconds timeout{600};
  };
  explicit RemotePolicy(Config config);
  /// Reads SAGE_POLICY_URL, SAGE_POLICY_MODEL and SAGE_POLICY_API_KEY.
  static Config config_from_env();
  std::string complete(const PolicyRequest& request) override;
  std::string name() const override { return "remote:" + config_.model; }
  /// JSON body posted for `request`.
  std::string request_body(const PolicyRequest& request) const;
  /// Reply text from a chat-completion response body; reasoning content, when
  /// the server returns it separately, is prepended.
  static std::string reply_text(const std::string& response_body);
  const Config& config() const noexcept { return config_; }

 private:
  Config config_;
};

}  // namespace sage
