#include "sage/review_service.hpp"

#include <chrono>
#include <cmath>

#include "sage/error.hpp"
#include "sage/hash.hpp"
#include "sage/serialization.hpp"

namespace sage {

using nlohmann::json;

namespace {

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json goal_rows(const std::vector<GoalResult>& results) {
  json rows = json::array();
  for (const auto& r : results) {
    rows.push_back({{"metric", r.goal.metric},
                    {"comparator", std::string(to_string(r.goal.comparator))},
                    {"threshold", r.goal.threshold},
                    {"units", r.goal.units},
                    {"value", std::isnan(r.value) ? json(nullptr) : json(r.value)},
                    {"passed", r.passed}});
  }
  return rows;
}

}  // namespace

std::string_view to_string(Verdict v) noexcept { return v == Verdict::Accept ? "Accept" : "Refine"; }

Verdict verdict_from_string(std::string_view s) {
  if (s == "Accept" || s == "accept") return Verdict::Accept;
  if (s == "Refine" || s == "refine") return Verdict::Refine;
  throw Error(ErrorKind::InvalidArgument, "verdict must be Accept or Refine");
}

SessionSummary summarize(const PlanningSession& s) {
  SessionSummary out;
  out.session_id = s.session_id;
  out.case_id = s.case_id;
  out.status = s.status;
  out.round = s.round();
  if (!s.rounds.empty()) out.termination = std::string(to_string(s.rounds.back().termination));
  if (const auto* it = s.selected_iteration()) {
    out.selected_iteration = it->index;
    out.metrics = it->metrics;
    out.goals = it->goal_results;
    out.goals_met = it->goals_met;
  }
  return out;
}

json summary_to_json(const SessionSummary& s) {
  return {{"session_id", s.session_id},
          {"case_id", s.case_id},
          {"status", std::string(to_string(s.status))},
          {"round", s.round},
          {"termination", s.termination},
          {"selected_iteration", s.selected_iteration ? json(*s.selected_iteration) : json(nullptr)},
          {"metrics", s.metrics ? json(*s.metrics) : json(nullptr)},
          {"goals", goal_rows(s.goals)},
          {"goals_met", s.goals_met}};
}

std::unique_ptr<PolicyAdapter> default_policy_factory(const std::string& name) {
  if (name == "scripted" || name == "canned") return std::make_unique<ScriptedPolicy>();
  return std::make_unique<RemotePolicy>(RemotePolicy::config_from_env());
}

ReviewService::ReviewService(std::filesystem::path store_root, ReviewConfig config)
    : store_(std::move(store_root)), config_(std::move(config)) {
  if (!config_.policy_factory) config_.policy_factory = default_policy_factory;
  if (!config_.now) config_.now = utc_now;
  config_.session.allow_multiple_refinements = config_.allow_multiple_refinements;
}

ReviewService::~ReviewService() {
  for (auto& t : workers_) {
    if (t.joinable()) t.join();
  }
}

std::vector<SessionSummary> ReviewService::list_sessions() const {
  std::vector<SessionSummary> out;
  for (const auto& id : store_.ids()) out.push_back(summarize(store_.load(id)));
  return out;
}

json ReviewService::get_session(const std::string& id) const {
  const PlanningSession s = store_.load(id);
  json detail;
  detail["summary"] = summary_to_json(summarize(s));
  detail["policy"] = s.policy;
  detail["failure"] = s.failure;
  detail["default_refinement_text"] = config_.session.standard_refinement_text;
  detail["refinement_allowed"] =
      s.status == SessionStatus::AwaitingReview && (s.rounds.size() < 2 || config_.allow_multiple_refinements);

  json rounds = json::array();
  for (const auto& r : s.rounds) {
    json jr{{"round", r.number},
            {"refinement_text", r.refinement_text ? json(*r.refinement_text) : json(nullptr)},
            {"refinement_text_standard", r.refinement_text_standard},
            {"termination", std::string(to_string(r.termination))},
            {"selected_iteration", r.selected ? json(r.iterations[*r.selected].index) : json(nullptr)}};
    json its = json::array();
    for (const auto& it : r.iterations) {
      json utts = json::array();
      for (const auto& sentence : split_sentences(it.rationale)) {
        json cats = json::array();
        for (auto c : config_.lexicon.classify(sentence)) cats.push_back(std::string(to_string(c)));
        utts.push_back({{"text", sentence}, {"categories", cats}});
      }
      json attempts = json::array();
      for (const auto& a : it.attempts) {
        attempts.push_back({{"attempt", a.attempt},
                            {"prompt", a.prompt},
                            {"prompt_sha256", sha256_hex(a.prompt)},
                            {"raw_output", a.raw_output},
                            {"format_error", a.format_error},
                            {"transport_error", a.transport_error},
                            {"error", a.error}});
      }
      json rings = json::array();
      for (const auto& ring : it.rings) {
        rings.push_back({{"name", ring.name}, {"inner_mm", ring.spec.inner_margin_mm}, {"outer_mm", ring.spec.outer_margin_mm}});
      }
      its.push_back({{"index", it.index},
                     {"format_error", it.format_error()},
                     {"rationale", it.rationale},
                     {"utterances", utts},
                     {"objectives", it.objectives ? json(*it.objectives) : json(nullptr)},
                     {"rings", rings},
                     {"metrics", it.metrics ? json(*it.metrics) : json(nullptr)},
                     {"goals", goal_rows(it.goal_results)},
                     {"goals_met", it.goals_met},
                     {"wall_time_ms", it.wall_time_ms},
                     {"attempts", attempts}});
    }
    jr["iterations"] = std::move(its);
    rounds.push_back(std::move(jr));
  }
  detail["rounds"] = std::move(rounds);

  json dvh = json::array();
  if (s.selected_iteration()) {
    if (const auto dose = store_.load_dose(id, s.round())) {
      const Case c = store_.load_case(id);
      for (const auto& st : c.structures) {
        if (st.empty()) continue;
        dvh.push_back(compute_dvh(*dose, st, config_.dvh_bin_gy));
      }
    }
  }
  detail["dvh_round"] = s.round();
  detail["dvh"] = std::move(dvh);
  detail["decisions"] = store_.decisions(id);
  return detail;
}

SessionSummary ReviewService::submit_decision(ReviewDecision d) {
  std::unique_lock lock(mutex_);
  if (d.reviewer_id.empty()) throw Error(ErrorKind::InvalidArgument, "reviewer id is required");
  PlanningSession s = store_.load(d.session_id);
  if (s.status != SessionStatus::AwaitingReview) {
    throw Error(ErrorKind::Conflict, "session '" + s.session_id + "' is " + std::string(to_string(s.status)) + "; no decision pending");
  }
  if (d.timestamp.empty()) d.timestamp = config_.now();
  json record{{"session_id", d.session_id},
              {"round", s.round()},
              {"verdict", std::string(to_string(d.verdict))},
              {"reviewer_id", d.reviewer_id},
              {"timestamp", d.timestamp}};

  if (d.verdict == Verdict::Accept) {
    s.status = SessionStatus::Accepted;
    store_.save(s);
    store_.append_decision(s.session_id, record);
    return summarize(s);
  }

  if (s.rounds.size() >= 2 && !config_.allow_multiple_refinements) {
    throw Error(ErrorKind::Conflict, "session '" + s.session_id + "' was already refined; only Accept is possible");
  }
  if (!d.refinement_text || d.refinement_text->empty()) {
    throw Error(ErrorKind::InvalidArgument, "Refine needs a non-empty refinement text");
  }
  const bool standard = *d.refinement_text == config_.session.standard_refinement_text;
  record["refinement_text"] = *d.refinement_text;
  record["refinement_text_standard"] = standard;
  PlanningSession marked = s;
  marked.status = SessionStatus::Refined;
  store_.save(marked);
  store_.append_decision(s.session_id, record);
  ++running_;
  workers_.emplace_back([this, s = std::move(s), text = *d.refinement_text]() mutable { run_refinement(std::move(s), std::move(text)); });
  return summarize(marked);
}

void ReviewService::run_refinement(PlanningSession session, std::string text) {
  const std::string id = session.session_id;
  try {
    auto policy = config_.policy_factory(session.policy);
    const Case c = store_.load_case(id);
    const auto influence = cached_influence(c, store_.cache_dir());
    refine_in_store(store_, std::move(session), c, influence, *policy, config_.goals, text, config_.session);
  } catch (const std::exception& e) {
    try {
      std::lock_guard lock(mutex_);
      auto s = store_.load(id);
      s.status = SessionStatus::Failed;
      s.failure = std::string("refinement failed: ") + e.what();
      store_.save(s);
    } catch (...) {
    }
  }
  {
    std::lock_guard lock(mutex_);
    --running_;
  }
  idle_cv_.notify_all();
}

void ReviewService::wait_idle() {
  std::unique_lock lock(mutex_);
  idle_cv_.wait(lock, [&] { return running_ == 0; });
}

}  // namespace sage
