#include "sage/agent.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <thread>

#include "sage/error.hpp"
#include "sage/hash.hpp"
#include "sage/random.hpp"
#include "sage/serialization.hpp"

namespace sage {

using nlohmann::json;

namespace {

constexpr std::pair<SessionStatus, std::string_view> kStatusNames[] = {
    {SessionStatus::Running, "Running"},
    {SessionStatus::GoalsMet, "GoalsMet"},
    {SessionStatus::IterationCapReached, "IterationCapReached"},
    {SessionStatus::AwaitingReview, "AwaitingReview"},
    {SessionStatus::Accepted, "Accepted"},
    {SessionStatus::Refined, "Refined"},
    {SessionStatus::Failed, "Failed"},
};

std::string fmt(double v, int digits = 1) {
  if (std::isnan(v)) return "undefined";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

const char* comparator_symbol(Comparator c) {
  switch (c) {
    case Comparator::Greater: return ">";
    case Comparator::Less: return "<";
    case Comparator::GreaterEqual: return ">=";
    case Comparator::LessEqual: return "<=";
  }
  return "?";
}

std::string describe_objective(const Objective& o) {
  return o.structure + " " + std::string(to_string(o.kind)) + " " + fmt(o.dose_gy, 2) + " Gy @ " + fmt(o.volume_pct, 0) +
         "% p" + std::to_string(o.priority);
}

std::string describe_metrics(const MetricsReport& m) {
  std::string s = "coverage " + fmt(m.coverage_pct) + "%, Dmax " + fmt(m.dmax_gy, 2) + " Gy, CI " + fmt(m.ci, 3) +
                  ", GI " + (m.gi ? fmt(*m.gi, 2) : std::string("undefined")) + ", V12Gy " + fmt(m.v12_cc, 2) + " cc";
  for (const auto& [role, d] : m.oar_dmax_gy) s += ", " + std::string(to_string(role)) + " " + fmt(d, 2) + " Gy";
  return s;
}

Vec3 centroid(const StructureMask& mask, const VoxelGrid& grid) {
  Vec3 c{};
  for (auto v : mask.voxels) c = c + grid.center(v);
  return mask.voxels.empty() ? c : (1.0 / static_cast<double>(mask.voxels.size())) * c;
}

// Ranks a candidate; smaller is better.
struct Score {
  int passed = 0;
  double deficiency = 0.0;
  double ci = 0.0;
  bool better_than(const Score& o) const {
    if (passed != o.passed) return passed > o.passed;
    if (deficiency != o.deficiency) return deficiency < o.deficiency;
    return ci > o.ci;
  }
};

std::vector<Goal> applicable_goals(const GoalSet& goals, const MetricsReport& m) {
  std::vector<Goal> out;
  for (const auto& g : goals.goals) {
    if (m.value(g.metric)) out.push_back(g);
  }
  return out;
}

double default_clock() {
  using namespace std::chrono;
  return duration<double, std::milli>(steady_clock::now().time_since_epoch()).count();
}

}  // namespace

std::string_view to_string(SessionStatus s) noexcept {
  for (const auto& [k, n] : kStatusNames) {
    if (k == s) return n;
  }
  return "?";
}

SessionStatus session_status_from_string(std::string_view s) {
  for (const auto& [k, n] : kStatusNames) {
    if (n == s) return k;
  }
  throw Error(ErrorKind::InvalidArgument, "unknown session status '" + std::string(s) + "'");
}

const std::string& IterationRecord::prompt() const {
  static const std::string empty;
  return attempts.empty() ? empty : attempts.front().prompt;
}

const std::string& IterationRecord::raw_output() const {
  static const std::string empty;
  return attempts.empty() ? empty : attempts.back().raw_output;
}

const RoundRecord& PlanningSession::current() const {
  if (rounds.empty()) throw Error(ErrorKind::ProtocolError, "session has no rounds");
  return rounds.back();
}

RoundRecord& PlanningSession::current() {
  if (rounds.empty()) throw Error(ErrorKind::ProtocolError, "session has no rounds");
  return rounds.back();
}

const IterationRecord* PlanningSession::selected_iteration() const {
  if (rounds.empty() || !rounds.back().selected) return nullptr;
  return &rounds.back().iterations.at(*rounds.back().selected);
}

std::string system_prompt() {
  return "You are an expert medical physicist planning single-fraction stereotactic radiosurgery. "
         "You adjust dose-volume objectives and their integer priorities for an inverse optimizer, "
         "observe the resulting plan metrics, and iterate until every clinical goal is met. "
         "Explain your reasoning before giving the objective set.";
}

std::string build_prompt(const Case& c, const GoalSet& goals, const MemoryStore& memory, const PromptState& state) {
  if (state.round >= 2 && (!state.refinement_text || state.refinement_text->empty())) {
    throw Error(ErrorKind::ProtocolError, "round 2 prompt needs refinement text");
  }
  const auto& ptv = c.require(StructureRole::PTV);
  const double vol = structure_volume(ptv, c.grid);
  const Vec3 pc = centroid(ptv, c.grid);
  const double r_eq = std::cbrt(3.0 * vol * 1000.0 / (4.0 * M_PI));
  std::ostringstream p;

  p << "## Clinical scenario\n";
  p << "Case " << c.id << ": single brain metastasis treated with stereotactic radiosurgery.\n";
  p << "PTV volume " << fmt(vol, 2) << " cc, centroid (" << fmt(pc.x) << ", " << fmt(pc.y) << ", " << fmt(pc.z)
    << ") mm, equivalent radius " << fmt(r_eq) << " mm.\n";
  p << "Beams: " << c.beams.size() << " static fields with fixed geometry; only objectives are adjustable.\n";
  for (auto role : kSerialOars) {
    for (const auto& s : c.structures) {
      if (s.role != role || s.empty()) continue;
      double best = std::numeric_limits<double>::infinity();
      for (auto v : s.voxels) best = std::min(best, norm(c.grid.center(v) - pc));
      p << "- " << s.name << ": " << fmt(std::max(0.0, best - r_eq)) << " mm from the PTV surface\n";
    }
  }
  p << "Available structures:";
  for (const auto& s : c.structures) p << ' ' << s.name;
  p << "\n";
  if (!state.rings.empty()) {
    p << "Active rings:";
    for (const auto& r : state.rings) {
      p << ' ' << r.name << " (" << fmt(r.spec.inner_margin_mm) << "-" << fmt(r.spec.outer_margin_mm) << " mm)";
    }
    p << "\n";
  }

  p << "\n## Prescription\n" << fmt(c.prescription_gy) << " Gy to the PTV in a single fraction.\n";

  p << "\n## Clinical goals\n| metric | goal |\n|---|---|\n";
  for (const auto& g : goals.goals) {
    p << "| " << g.metric << " | " << comparator_symbol(g.comparator) << ' ' << fmt(g.threshold) << ' ' << g.units << " |\n";
  }

  p << "\n## Current plan\n";
  if (!state.current_objectives) {
    p << "No objectives have been set yet.";
    if (state.current_metrics) p << " Metrics for uniform beam weights: " << describe_metrics(*state.current_metrics) << ".";
    p << "\n";
  } else {
    p << "Objectives:\n";
    for (const auto& o : *state.current_objectives) p << "- " << describe_objective(o) << "\n";
    if (state.current_metrics) {
      p << "Metrics:\n";
      for (const auto& g : goals.goals) {
        const auto v = state.current_metrics->value(g.metric);
        if (!v) continue;
        const bool pass = check_goals(*state.current_metrics, GoalSet{{g}}).overall;
        p << "- " << g.metric << " = " << fmt(*v, 2) << " (" << (pass ? "PASS" : "FAIL") << ")\n";
      }
      p << "- ci = " << fmt(state.current_metrics->ci, 3) << "\n";
      p << "- gi = " << (state.current_metrics->gi ? fmt(*state.current_metrics->gi, 2) : std::string("undefined")) << "\n";
    }
  }

  if (!memory.empty()) {
    const auto& e = memory.entries();
    const std::size_t k = std::min(state.memory_k, e.size());
    p << "\n## Memory\nMost recent selections and outcomes:\n";
    for (std::size_t n = e.size() - k; n < e.size(); ++n) {
      p << "- round " << e[n].round << " iteration " << e[n].iteration << ": ";
      for (std::size_t q = 0; q < e[n].objectives.size(); ++q) {
        p << (q ? "; " : "") << describe_objective(e[n].objectives[q]);
      }
      p << " -> " << describe_metrics(e[n].metrics) << "; goals met " << e[n].goals_passed << "/" << e[n].goals_total << "\n";
    }
    std::size_t best = 0;
    for (std::size_t n = 1; n < e.size(); ++n) {
      const Score a{e[n].goals_passed, e[n].deficiency, e[n].metrics.ci};
      const Score b{e[best].goals_passed, e[best].deficiency, e[best].metrics.ci};
      if (a.better_than(b)) best = n;
    }
    p << "Best so far: round " << e[best].round << " iteration " << e[best].iteration << " with goals met "
      << e[best].goals_passed << "/" << e[best].goals_total << " (" << describe_metrics(e[best].metrics) << ")\n";
  }

  if (state.round >= 2) p << "\n## Refinement request\n" << *state.refinement_text << "\n";

  p << "\n## Output format\n"
       "Explain your reasoning in plain sentences, then give the complete objective set as one fenced JSON block:\n"
       "```json\n"
       "{\"rings\": [{\"name\": \"Ring_0_3\", \"inner_mm\": 0, \"outer_mm\": 3}],\n"
       " \"objectives\": [{\"structure\": \""
    << ptv.name
    << "\", \"kind\": \"lower\", \"dose_gy\": 18.5, \"volume_pct\": 100, \"priority\": 80}]}\n"
       "```\n"
       "kind is \"upper\" or \"lower\"; dose_gy >= 0; volume_pct in 0-100; priority is an integer in 0-100. "
       "Use only available structure names or rings you declare; rings are optional and measured in mm from the PTV "
       "surface. Include a lower objective on "
    << ptv.name << ".\n";
  return p.str();
}

double goal_deficiency(const std::vector<GoalResult>& results) {
  double total = 0.0;
  for (const auto& r : results) {
    if (r.passed) continue;
    if (std::isnan(r.value)) {
      total += 1.0;
      continue;
    }
    double violation = 0.0;
    switch (r.goal.comparator) {
      case Comparator::Greater:
      case Comparator::GreaterEqual: violation = r.goal.threshold - r.value; break;
      case Comparator::Less:
      case Comparator::LessEqual: violation = r.value - r.goal.threshold; break;
    }
    total += std::max(0.0, violation / r.goal.threshold);
  }
  return total;
}

std::size_t select_best(const std::vector<IterationRecord>& iterations) {
  std::optional<std::size_t> best;
  Score best_score;
  for (std::size_t n = 0; n < iterations.size(); ++n) {
    const auto& it = iterations[n];
    if (!it.metrics) continue;
    int passed = 0;
    for (const auto& r : it.goal_results) passed += r.passed;
    const Score s{passed, goal_deficiency(it.goal_results), it.metrics->ci};
    if (!best || s.better_than(best_score)) {
      best = n;
      best_score = s;
    }
  }
  if (!best) throw Error(ErrorKind::NoValidPlan, "no iteration produced a plan");
  return *best;
}

std::size_t select_best(const PlanningSession& session) { return select_best(session.current().iterations); }

Case planning_case(const Case& c, const std::vector<RingRequest>& rings) {
  Case out = c;
  for (const auto& r : rings) {
    if (out.find(r.name)) continue;
    out.structures.push_back(create_ring(out, r.spec, r.name));
  }
  return out;
}

namespace {

struct RoundState {
  std::optional<ObjectiveSet> objectives;
  std::vector<RingRequest> rings;
  std::vector<double> weights;
  std::optional<MetricsReport> metrics;
};

json attempt_trace(const PlanningSession& s, const RoundRecord& round, const IterationRecord& it,
                   const PolicyAttempt& a, bool final_attempt) {
  json j;
  j["session_id"] = s.session_id;
  j["case_id"] = s.case_id;
  j["round"] = round.number;
  j["index"] = it.index;
  j["attempt"] = a.attempt;
  j["prompt_sha256"] = sha256_hex(a.prompt);
  j["raw_output"] = a.raw_output;
  j["rationale"] = a.rationale;
  if (final_attempt && it.objectives) {
    j["objectives"] = *it.objectives;
    json rings = json::array();
    for (const auto& r : it.rings) rings.push_back({{"name", r.name}, {"inner_mm", r.spec.inner_margin_mm}, {"outer_mm", r.spec.outer_margin_mm}});
    j["rings"] = rings;
  } else {
    j["objectives"] = nullptr;
    j["rings"] = nullptr;
  }
  j["metrics"] = final_attempt && it.metrics ? json(*it.metrics) : json(nullptr);
  j["goals_met"] = final_attempt && it.goals_met;
  j["format_error"] = a.format_error;
  j["transport_error"] = a.transport_error;
  j["error"] = a.error;
  j["duration_ms"] = a.duration_ms;
  return j;
}

class RoundRunner {
 public:
  RoundRunner(PlanningSession& session, const Case& c, const DoseInfluence& influence, PolicyAdapter& policy,
              const GoalSet& goals, const SessionConfig& config)
      : s_(session), case_(c), influence_(influence), policy_(policy), goals_(goals), config_(config) {
    clock_ = config.clock_ms ? config.clock_ms : std::function<double()>(default_clock);
  }

  void run(RoundState st) {
    RoundRecord& round = s_.current();
    Case pc = planning_case(case_, st.rings);
    int transport_failures = 0;
    for (int index = 1; index <= config_.max_iterations; ++index) {
      IterationRecord rec;
      rec.index = index;
      const double t0 = clock_();
      PromptState ps{round.number, round.refinement_text, st.metrics, st.objectives, st.rings, config_.memory_k};
      const std::string prompt = build_prompt(pc, goals_, s_.memory, ps);

      std::optional<ParsedOutput> parsed;
      std::string last_error;
      int invocation = 0;
      for (int format_attempt = 1; format_attempt <= 2 && !parsed;) {
        PolicyRequest req;
        req.system_prompt = system_prompt();
        req.prompt = format_attempt == 1 ? prompt
                                         : prompt + "\n## Format error\nYour previous reply could not be used (" + last_error +
                                               "). Reply again with the complete objective set in one fenced JSON block "
                                               "as described above.\n";
        req.attempt = ++invocation;
        req.seed = mix_seed(config_.seed ^ mix_seed(static_cast<std::uint64_t>(round.number) * 1000003u +
                                                    static_cast<std::uint64_t>(index) * 101u +
                                                    static_cast<std::uint64_t>(invocation)));
        req.context = PlanningContext{&pc, &goals_, &s_.memory, round.number, index, st.metrics,
                                      st.objectives, st.rings, round.refinement_text};
        PolicyAttempt a;
        a.attempt = req.attempt;
        a.prompt = req.prompt;
        const double c0 = clock_();
        try {
          a.raw_output = policy_.complete(req);
          a.duration_ms = clock_() - c0;
          transport_failures = 0;
        } catch (const Error& e) {
          if (e.kind() != ErrorKind::Transport) throw;
          a.duration_ms = clock_() - c0;
          a.transport_error = true;
          a.error = e.what();
          rec.attempts.push_back(std::move(a));
          if (++transport_failures >= config_.max_transport_failures) {
            finish_failed(round, std::move(rec), t0, "policy transport failed " + std::to_string(transport_failures) +
                                                         " times in a row: " + e.what());
            return;
          }
          const double wait = config_.backoff_base_ms * std::pow(2.0, transport_failures - 1);
          if (config_.sleep) {
            config_.sleep(wait);
          } else if (wait > 0.0) {
            std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(wait));
          }
          continue;
        }
        auto result = parse_policy_output(a.raw_output, pc, st.rings);
        rec.rationale = result.rationale;
        a.rationale = result.rationale;
        if (result.ok()) {
          parsed = std::move(result.output);
        } else {
          a.format_error = true;
          a.error = result.error;
          last_error = result.error;
          ++format_attempt;
        }
        rec.attempts.push_back(std::move(a));
      }

      if (parsed) {
        if (!parsed->rings.empty()) {
          for (auto& r : parsed->rings) st.rings.push_back(r);
          pc = planning_case(case_, st.rings);
        }
        if (st.weights.empty()) st.weights.assign(influence_.beam_count(), 1.0);
        const auto opt = optimize_weights(influence_, pc, parsed->objectives, config_.inner_steps, st.weights);
        const auto dose = compose_dose(influence_, opt.weights);
        const auto metrics = evaluate_plan(dose, pc);
        const auto check = check_goals(metrics, GoalSet{applicable_goals(goals_, metrics)});
        rec.objectives = parsed->objectives;
        rec.rings = st.rings;
        rec.weights = opt.weights;
        rec.metrics = metrics;
        rec.goal_results = check.results;
        rec.goals_met = check.overall;
        st.objectives = parsed->objectives;
        st.weights = opt.weights;
        st.metrics = metrics;
        s_.memory.append({round.number, index, parsed->objectives, st.rings, metrics, check.passed_count(),
                          static_cast<int>(check.results.size()), goal_deficiency(check.results)});
      }
      rec.wall_time_ms = clock_() - t0;
      emit(round, rec);
      const bool met = rec.goals_met;
      round.iterations.push_back(std::move(rec));
      if (met) {
        round.termination = SessionStatus::GoalsMet;
        break;
      }
    }
    if (round.termination != SessionStatus::GoalsMet) round.termination = SessionStatus::IterationCapReached;
    try {
      round.selected = select_best(round.iterations);
      s_.status = SessionStatus::AwaitingReview;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::NoValidPlan) throw;
      s_.status = SessionStatus::Failed;
      s_.failure = std::string("no-valid-plan: ") + e.what();
    }
  }

 private:
  void emit(const RoundRecord& round, const IterationRecord& rec) {
    if (!config_.trace) return;
    for (std::size_t n = 0; n < rec.attempts.size(); ++n) {
      config_.trace(attempt_trace(s_, round, rec, rec.attempts[n], n + 1 == rec.attempts.size()).dump());
    }
  }

  void finish_failed(RoundRecord& round, IterationRecord rec, double t0, std::string why) {
    rec.wall_time_ms = clock_() - t0;
    emit(round, rec);
    round.iterations.push_back(std::move(rec));
    round.termination = SessionStatus::Failed;
    s_.status = SessionStatus::Failed;
    s_.failure = std::move(why);
    try {
      round.selected = select_best(round.iterations);
    } catch (const Error&) {
      round.selected.reset();
    }
  }

  PlanningSession& s_;
  const Case& case_;
  const DoseInfluence& influence_;
  PolicyAdapter& policy_;
  const GoalSet& goals_;
  const SessionConfig& config_;
  std::function<double()> clock_;
};

void check_influence(const Case& c, const DoseInfluence& influence) {
  if (influence.beam_count() != c.beams.size() || !(influence.grid == c.grid)) {
    throw Error(ErrorKind::InvalidCase, "dose influence does not belong to case '" + c.id + "'");
  }
}

}  // namespace

PlanningSession run_session(const Case& c, const DoseInfluence& influence, PolicyAdapter& policy, const GoalSet& goals,
                            const SessionConfig& config) {
  if (config.max_iterations < 1) throw Error(ErrorKind::InvalidArgument, "max_iterations must be >= 1");
  validate_goal_set(goals);
  validate_case(c);
  check_influence(c, influence);
  PlanningSession s;
  s.session_id = config.session_id.empty() ? c.id + "-s" + std::to_string(config.seed) : config.session_id;
  s.case_id = c.id;
  s.policy = policy.name();
  s.seed = config.seed;
  s.status = SessionStatus::Running;
  s.rounds.push_back(RoundRecord{1, std::nullopt, true, {}, std::nullopt, SessionStatus::Running});

  RoundState st;
  st.weights.assign(influence.beam_count(), 1.0);
  st.metrics = evaluate_plan(compose_dose(influence, st.weights), c);
  RoundRunner(s, c, influence, policy, goals, config).run(std::move(st));
  return s;
}

void refine_session(PlanningSession& session, const Case& c, const DoseInfluence& influence, PolicyAdapter& policy,
                    const GoalSet& goals, const std::string& refinement_text, const SessionConfig& config) {
  if (session.status != SessionStatus::AwaitingReview) {
    throw Error(ErrorKind::ProtocolError, "session '" + session.session_id + "' is " +
                                              std::string(to_string(session.status)) + ", not awaiting review");
  }
  if (session.rounds.size() >= 2 && !config.allow_multiple_refinements) {
    throw Error(ErrorKind::ProtocolError, "session '" + session.session_id + "' was already refined");
  }
  if (refinement_text.empty()) throw Error(ErrorKind::ProtocolError, "refinement text is empty");
  if (session.case_id != c.id) throw Error(ErrorKind::InvalidCase, "case does not match session");
  if (config.max_iterations < 1) throw Error(ErrorKind::InvalidArgument, "max_iterations must be >= 1");
  check_influence(c, influence);
  const IterationRecord* best = session.selected_iteration();
  if (!best) throw Error(ErrorKind::NoValidPlan, "session has no selected plan to refine");

  const bool standard = refinement_text == config.standard_refinement_text;
  if (!standard && config.warn) {
    config.warn("refinement text for session '" + session.session_id + "' differs from the standard text");
  }
  RoundState st;
  st.objectives = best->objectives;
  st.rings = best->rings;
  st.weights = best->weights;
  st.metrics = best->metrics;
  session.status = SessionStatus::Refined;
  session.rounds.push_back(RoundRecord{session.round() + 1, refinement_text, standard, {}, std::nullopt, SessionStatus::Running});
  RoundRunner(session, c, influence, policy, goals, config).run(std::move(st));
}

// ---------------------------------------------------------------------------
// JSON

namespace {

json rings_json(const std::vector<RingRequest>& rings) {
  json a = json::array();
  for (const auto& r : rings) a.push_back({{"name", r.name}, {"inner_mm", r.spec.inner_margin_mm}, {"outer_mm", r.spec.outer_margin_mm}});
  return a;
}

std::vector<RingRequest> rings_from(const json& a) {
  std::vector<RingRequest> out;
  for (const auto& r : a) out.push_back({r.at("name").get<std::string>(), {r.at("inner_mm").get<double>(), r.at("outer_mm").get<double>()}});
  return out;
}

json goal_results_json(const std::vector<GoalResult>& results) {
  json a = json::array();
  for (const auto& r : results) {
    json g = r.goal;
    g["value"] = std::isnan(r.value) ? json(nullptr) : json(r.value);
    g["passed"] = r.passed;
    a.push_back(std::move(g));
  }
  return a;
}

std::vector<GoalResult> goal_results_from(const json& a) {
  std::vector<GoalResult> out;
  for (const auto& g : a) {
    out.push_back({g.get<Goal>(), g.at("value").is_null() ? std::numeric_limits<double>::quiet_NaN() : g.at("value").get<double>(),
                   g.at("passed").get<bool>()});
  }
  return out;
}

}  // namespace

json session_to_json(const PlanningSession& s) {
  json j;
  j["session_id"] = s.session_id;
  j["case_id"] = s.case_id;
  j["policy"] = s.policy;
  j["seed"] = s.seed;
  j["status"] = std::string(to_string(s.status));
  j["failure"] = s.failure;
  json rounds = json::array();
  for (const auto& r : s.rounds) {
    json jr;
    jr["round"] = r.number;
    jr["refinement_text"] = r.refinement_text ? json(*r.refinement_text) : json(nullptr);
    jr["refinement_text_standard"] = r.refinement_text_standard;
    jr["termination"] = std::string(to_string(r.termination));
    jr["selected_iteration"] = r.selected ? json(r.iterations[*r.selected].index) : json(nullptr);
    json its = json::array();
    for (const auto& it : r.iterations) {
      json ji;
      ji["index"] = it.index;
      json attempts = json::array();
      for (const auto& a : it.attempts) {
        attempts.push_back({{"attempt", a.attempt},
                            {"prompt", a.prompt},
                            {"raw_output", a.raw_output},
                            {"rationale", a.rationale},
                            {"format_error", a.format_error},
                            {"transport_error", a.transport_error},
                            {"error", a.error},
                            {"duration_ms", a.duration_ms}});
      }
      ji["attempts"] = std::move(attempts);
      ji["rationale"] = it.rationale;
      ji["format_error"] = it.format_error();
      ji["objectives"] = it.objectives ? json(*it.objectives) : json(nullptr);
      ji["rings"] = rings_json(it.rings);
      ji["weights"] = it.weights;
      ji["metrics"] = it.metrics ? json(*it.metrics) : json(nullptr);
      ji["goal_results"] = goal_results_json(it.goal_results);
      ji["goals_met"] = it.goals_met;
      ji["wall_time_ms"] = it.wall_time_ms;
      its.push_back(std::move(ji));
    }
    jr["iterations"] = std::move(its);
    rounds.push_back(std::move(jr));
  }
  j["rounds"] = std::move(rounds);
  json memory = json::array();
  for (const auto& e : s.memory.entries()) {
    memory.push_back({{"round", e.round},
                      {"iteration", e.iteration},
                      {"objectives", e.objectives},
                      {"rings", rings_json(e.rings)},
                      {"metrics", e.metrics},
                      {"goals_passed", e.goals_passed},
                      {"goals_total", e.goals_total},
                      {"deficiency", e.deficiency}});
  }
  j["memory"] = std::move(memory);
  return j;
}

PlanningSession session_from_json(const json& j) {
  try {
    PlanningSession s;
    s.session_id = j.at("session_id").get<std::string>();
    s.case_id = j.at("case_id").get<std::string>();
    s.policy = j.value("policy", std::string{});
    s.seed = j.value("seed", std::uint64_t{0});
    s.status = session_status_from_string(j.at("status").get<std::string>());
    s.failure = j.value("failure", std::string{});
    for (const auto& jr : j.at("rounds")) {
      RoundRecord r;
      r.number = jr.at("round").get<int>();
      if (!jr.at("refinement_text").is_null()) r.refinement_text = jr.at("refinement_text").get<std::string>();
      r.refinement_text_standard = jr.value("refinement_text_standard", true);
      r.termination = session_status_from_string(jr.at("termination").get<std::string>());
      for (const auto& ji : jr.at("iterations")) {
        IterationRecord it;
        it.index = ji.at("index").get<int>();
        for (const auto& a : ji.at("attempts")) {
          it.attempts.push_back({a.at("attempt").get<int>(), a.at("prompt").get<std::string>(),
                                 a.at("raw_output").get<std::string>(), a.value("rationale", std::string{}),
                                 a.at("format_error").get<bool>(),
                                 a.value("transport_error", false), a.value("error", std::string{}),
                                 a.value("duration_ms", 0.0)});
        }
        it.rationale = ji.value("rationale", std::string{});
        if (!ji.at("objectives").is_null()) it.objectives = ji.at("objectives").get<ObjectiveSet>();
        it.rings = rings_from(ji.at("rings"));
        it.weights = ji.at("weights").get<std::vector<double>>();
        if (!ji.at("metrics").is_null()) it.metrics = ji.at("metrics").get<MetricsReport>();
        it.goal_results = goal_results_from(ji.at("goal_results"));
        it.goals_met = ji.at("goals_met").get<bool>();
        it.wall_time_ms = ji.value("wall_time_ms", 0.0);
        r.iterations.push_back(std::move(it));
      }
      if (!jr.at("selected_iteration").is_null()) {
        const int idx = jr.at("selected_iteration").get<int>();
        for (std::size_t n = 0; n < r.iterations.size(); ++n) {
          if (r.iterations[n].index == idx) r.selected = n;
        }
      }
      s.rounds.push_back(std::move(r));
    }
    for (const auto& e : j.at("memory")) {
      s.memory.append({e.at("round").get<int>(), e.at("iteration").get<int>(), e.at("objectives").get<ObjectiveSet>(),
                       rings_from(e.at("rings")), e.at("metrics").get<MetricsReport>(), e.at("goals_passed").get<int>(),
                       e.at("goals_total").get<int>(), e.at("deficiency").get<double>()});
    }
    return s;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::IoError, std::string("malformed session: ") + e.what());
  }
}

}  // namespace sage
