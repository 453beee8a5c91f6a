// Command-line front end: case generation, planning, refinement, trace
// analysis, statistics and the review server.

#include <pthread.h>

#include <cmath>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "sage/agent.hpp"
#include "sage/error.hpp"
#include "sage/review_http.hpp"
#include "sage/review_service.hpp"
#include "sage/serialization.hpp"
#include "sage/stats.hpp"
#include "sage/store.hpp"
#include "sage/trace_analyzer.hpp"

namespace fs = std::filesystem;
using namespace sage;

namespace {

GoalSet goals_from(const std::string& path) { return path.empty() ? standard_goals() : read_goal_set(path); }

std::unique_ptr<PolicyAdapter> make_policy(const std::string& name, bool refine_aware) {
  if (name == "scripted") {
    ScriptedPolicy::Options o;
    o.refine_aware = refine_aware;
    return std::make_unique<ScriptedPolicy>(o);
  }
  if (name == "remote") return std::make_unique<RemotePolicy>(RemotePolicy::config_from_env());
  throw Error(ErrorKind::InvalidArgument, "unknown policy '" + name + "' (scripted or remote)");
}

void print_summary(const PlanningSession& s) {
  const auto* it = s.selected_iteration();
  std::printf("%s round %d: %s after %zu iteration(s)", s.session_id.c_str(), s.round(),
              std::string(to_string(s.current().termination)).c_str(), s.current().iterations.size());
  if (it && it->metrics) {
    const auto& m = *it->metrics;
    std::printf(", selected #%d coverage %.2f%% dmax %.2f Gy CI %.3f GI %.2f V12 %.2f cc", it->index, m.coverage_pct,
                m.dmax_gy, m.ci, m.gi.value_or(std::nan("")), m.v12_cc);
  }
  std::printf(" [%s]\n", std::string(to_string(s.status)).c_str());
  if (!s.failure.empty()) std::printf("  failure: %s\n", s.failure.c_str());
}

std::vector<fs::path> find_traces(const fs::path& root) {
  std::vector<fs::path> out;
  if (fs::is_regular_file(root)) return {root};
  if (!fs::is_directory(root)) throw Error(ErrorKind::IoError, "no such log directory " + root.string());
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file() && e.path().extension() == ".jsonl") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<TraceAnalysis> analyze_all(const fs::path& root, const MarkerLexicon& lexicon) {
  std::vector<TraceAnalysis> out;
  for (const auto& p : find_traces(root)) out.push_back(analyze_session(p, lexicon));
  return out;
}

std::string counts_csv(const std::vector<TraceAnalysis>& analyses) {
  std::string out = "session_id,case_id,invocations,format_errors";
  for (auto c : kAllCategories) out += "," + std::string(to_string(c));
  out += ",total\n";
  for (const auto& a : analyses) {
    out += a.session_id + "," + a.case_id + "," + std::to_string(a.invocations) + "," + std::to_string(a.format_errors);
    for (auto c : kAllCategories) {
      const auto it = a.counts.find(c);
      out += "," + std::to_string(it == a.counts.end() ? 0 : it->second);
    }
    out += "," + std::to_string(a.total_instances()) + "\n";
  }
  return out;
}

ReviewConfig review_config(const std::string& goals_path, bool multiple, int max_iterations) {
  ReviewConfig cfg;
  cfg.goals = goals_from(goals_path);
  cfg.allow_multiple_refinements = multiple;
  cfg.session.max_iterations = max_iterations;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SRS planning agent toolkit"};
  app.require_subcommand(1);

  // generate-cases
  auto* gen = app.add_subcommand("generate-cases", "Write a synthetic cohort of case files");
  std::string gen_spec, gen_out;
  int gen_count = 20;
  std::uint64_t gen_seed = 7;
  gen->add_option("--spec", gen_spec, "Cohort spec JSON (defaults to the standard cranial layout)");
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--count", gen_count, "Number of cases")->check(CLI::PositiveNumber);
  gen->add_option("--seed", gen_seed, "Random seed");

  // plan
  auto* plan = app.add_subcommand("plan", "Run a planning session into a session store");
  std::string plan_case, plan_policy = "scripted", plan_out, plan_goals, plan_id;
  std::uint64_t plan_seed = 1;
  int plan_iters = kMaxIterations;
  bool plan_fixed_clock = false, plan_no_refine_aware = false;
  plan->add_option("--case", plan_case, "Case JSON")->required();
  plan->add_option("--policy", plan_policy, "scripted or remote");
  plan->add_option("--out", plan_out, "Session store directory")->required();
  plan->add_option("--goals", plan_goals, "Goal set JSON");
  plan->add_option("--seed", plan_seed, "Session seed");
  plan->add_option("--session-id", plan_id, "Session id (default <case>-s<seed>)");
  plan->add_option("--max-iterations", plan_iters, "Iteration cap")->check(CLI::PositiveNumber);
  plan->add_flag("--fixed-clock", plan_fixed_clock, "Record zero durations so traces are reproducible");
  plan->add_flag("--no-refine-aware", plan_no_refine_aware, "Scripted policy ignores refinement requests");

  // refine
  auto* refine = app.add_subcommand("refine", "Send a session awaiting review to the refinement round");
  std::string ref_session, ref_text = std::string(kStandardRefinementText), ref_goals, ref_reviewer = "cli";
  bool ref_multiple = false;
  refine->add_option("--session", ref_session, "Session directory inside a store")->required();
  refine->add_option("--text", ref_text, "Refinement request");
  refine->add_option("--goals", ref_goals, "Goal set JSON");
  refine->add_option("--reviewer", ref_reviewer, "Reviewer id recorded with the decision");
  refine->add_flag("--allow-multiple-refinements", ref_multiple);

  // accept
  auto* accept = app.add_subcommand("accept", "Accept a session awaiting review");
  std::string acc_session, acc_reviewer = "cli";
  accept->add_option("--session", acc_session, "Session directory inside a store")->required();
  accept->add_option("--reviewer", acc_reviewer, "Reviewer id recorded with the decision");

  // export-metrics
  auto* exp = app.add_subcommand("export-metrics", "Write selected-plan metrics of a store as long-format CSV");
  std::string exp_store, exp_out, exp_variant;
  int exp_round = 1;
  exp->add_option("--store", exp_store, "Session store directory")->required();
  exp->add_option("--round", exp_round, "Round whose selected plan is exported")->check(CLI::PositiveNumber);
  exp->add_option("--variant", exp_variant, "Variant label (default r<round>)");
  exp->add_option("--out", exp_out, "Output CSV")->required();

  // analyze-traces
  auto* an = app.add_subcommand("analyze-traces", "Classify rationale sentences in trace logs");
  std::string an_logs, an_lexicon, an_out, an_compare;
  double an_fraction = 0.1;
  std::uint64_t an_seed = 1;
  an->add_option("--logs", an_logs, "Directory searched for *.jsonl traces")->required();
  an->add_option("--lexicon", an_lexicon, "Lexicon JSON (defaults to the standard markers)");
  an->add_option("--sample-fraction", an_fraction, "Share of utterances sampled for manual review")
      ->check(CLI::Range(0.0, 1.0));
  an->add_option("--seed", an_seed, "Sampling seed");
  an->add_option("--compare", an_compare, "Second variant's log directory");
  an->add_option("--out", an_out, "Output directory")->required();

  // stats
  auto* st = app.add_subcommand("stats", "Paired endpoint comparison of two variants");
  std::string st_a, st_b, st_families, st_out;
  std::uint64_t st_seed = 1;
  int st_boot = 10000;
  st->add_option("--a", st_a, "Metrics CSV of variant A")->required();
  st->add_option("--b", st_b, "Metrics CSV of variant B")->required();
  st->add_option("--families", st_families, "Endpoint families JSON (defaults to the standard families)");
  st->add_option("--seed", st_seed, "Bootstrap seed");
  st->add_option("--n-boot", st_boot, "Bootstrap replicates")->check(CLI::Range(1000, 10000000));
  st->add_option("--out", st_out, "Output directory")->required();

  // serve
  auto* sv = app.add_subcommand("serve", "Serve the review API over a session store");
  std::string sv_store, sv_host = "127.0.0.1", sv_static, sv_goals;
  int sv_port = 8080, sv_iters = kMaxIterations;
  bool sv_multiple = false;
  sv->add_option("--store", sv_store, "Session store directory")->required();
  sv->add_option("--port", sv_port, "Port (0 picks a free one)");
  sv->add_option("--host", sv_host, "Bind address");
  sv->add_option("--static", sv_static, "Directory of UI assets served at /");
  sv->add_option("--goals", sv_goals, "Goal set JSON");
  sv->add_option("--max-iterations", sv_iters, "Iteration cap for refinement rounds")->check(CLI::PositiveNumber);
  sv->add_flag("--allow-multiple-refinements", sv_multiple);

  // defaults
  auto* defs = app.add_subcommand("defaults", "Write the built-in goals, lexicon, families and cohort spec as JSON");
  std::string defs_out;
  defs->add_option("--out", defs_out, "Output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*defs) {
      const fs::path out(defs_out);
      fs::create_directories(out);
      write_json_file(out / "goals.json", standard_goals());
      write_json_file(out / "lexicon.json", MarkerLexicon::standard().to_json());
      write_json_file(out / "families.json", EndpointFamilies::standard().to_json());
      write_json_file(out / "cohort.json", CohortSpec{});
      std::printf("wrote defaults to %s\n", defs_out.c_str());
    } else if (*gen) {
      CohortSpec cohort;
      if (!gen_spec.empty()) cohort = read_json_file(gen_spec).get<CohortSpec>();
      fs::create_directories(gen_out);
      nlohmann::json manifest = nlohmann::json::array();
      for (const auto& spec : sample_cohort(cohort, gen_count, gen_seed)) {
        const Case c = generate_synthetic_case(spec);
        const auto file = c.id + ".json";
        write_case(fs::path(gen_out) / file, c);
        manifest.push_back({{"id", c.id}, {"file", file}, {"spec", spec}});
      }
      write_json_file(fs::path(gen_out) / "manifest.json", {{"seed", gen_seed}, {"cases", manifest}});
      std::printf("wrote %d case(s) to %s\n", gen_count, gen_out.c_str());
    } else if (*plan) {
      const Case c = read_case(plan_case);
      SessionStore store(plan_out);
      auto policy = make_policy(plan_policy, !plan_no_refine_aware);
      SessionConfig cfg;
      cfg.seed = plan_seed;
      cfg.session_id = plan_id;
      cfg.max_iterations = plan_iters;
      cfg.warn = [](const std::string& m) { std::fprintf(stderr, "warning: %s\n", m.c_str()); };
      if (plan_fixed_clock) cfg.clock_ms = [] { return 0.0; };
      const auto influence = cached_influence(c, store.cache_dir());
      print_summary(plan_into_store(store, c, influence, *policy, goals_from(plan_goals), cfg));
    } else if (*refine || *accept) {
      const fs::path dir = fs::absolute(*refine ? ref_session : acc_session).lexically_normal();
      const fs::path d = dir.has_filename() ? dir : dir.parent_path();
      auto cfg = review_config(ref_goals, ref_multiple, kMaxIterations);
      cfg.session.warn = [](const std::string& m) { std::fprintf(stderr, "warning: %s\n", m.c_str()); };
      ReviewService service(d.parent_path(), cfg);
      ReviewDecision decision;
      decision.session_id = d.filename().string();
      if (*refine) {
        decision.verdict = Verdict::Refine;
        decision.refinement_text = ref_text;
        decision.reviewer_id = ref_reviewer;
      } else {
        decision.reviewer_id = acc_reviewer;
      }
      service.submit_decision(decision);
      service.wait_idle();
      const auto s = service.store().load(decision.session_id);
      print_summary(s);
      if (s.status == SessionStatus::Failed) return 1;
    } else if (*exp) {
      SessionStore store(exp_store);
      MetricsTable table;
      table.variant = exp_variant.empty() ? "r" + std::to_string(exp_round) : exp_variant;
      int n = 0;
      for (const auto& id : store.ids()) {
        const auto s = store.load(id);
        if (s.round() < exp_round) continue;
        const auto& r = s.rounds[static_cast<std::size_t>(exp_round - 1)];
        if (!r.selected || !r.iterations[*r.selected].metrics) continue;
        add_report(table, s.case_id, *r.iterations[*r.selected].metrics);
        ++n;
      }
      write_text_file(exp_out, metrics_csv({table}));
      std::printf("exported %d patient(s) as variant %s\n", n, table.variant.c_str());
    } else if (*an) {
      const auto lexicon = an_lexicon.empty() ? MarkerLexicon::standard() : MarkerLexicon::load(an_lexicon);
      const auto analyses = analyze_all(an_logs, lexicon);
      const fs::path out(an_out);
      fs::create_directories(out);
      TraceAnalysis total;
      nlohmann::json sessions = nlohmann::json::array();
      for (const auto& a : analyses) {
        merge_into(total, a);
        sessions.push_back(analysis_to_json(a));
      }
      total.session_id = "all";
      write_json_file(out / "analysis.json", {{"sessions", sessions}, {"total", analysis_to_json(total)}});
      write_text_file(out / "counts.csv", counts_csv(analyses));
      write_text_file(out / "review_sample.csv", review_sample_csv(sample_for_review(analyses, an_fraction, an_seed)));
      if (!an_compare.empty()) {
        const auto other = analyze_all(an_compare, lexicon);
        write_text_file(out / "comparison.csv", comparison_csv(compare_variants(analyses, other)));
      }
      std::printf("analyzed %zu trace(s), %zu utterance(s), %d marker instance(s)\n", analyses.size(),
                  total.utterances.size(), total.total_instances());
    } else if (*st) {
      const auto ta = read_metrics_csv(st_a);
      const auto tb = read_metrics_csv(st_b);
      if (ta.size() != 1 || tb.size() != 1) {
        throw Error(ErrorKind::InvalidArgument, "each metrics CSV must hold exactly one variant");
      }
      const auto families =
          st_families.empty() ? EndpointFamilies::standard() : EndpointFamilies::from_json(read_json_file(st_families));
      const auto results = endpoint_family_analysis(ta[0], tb[0], families, st_boot, st_seed);
      const fs::path out(st_out);
      fs::create_directories(out / "plots");
      write_text_file(out / "results.csv", family_results_csv(results));
      write_json_file(out / "results.json", family_results_json(results));
      for (const auto& f : results) {
        for (const auto& e : f.endpoints) {
          write_text_file(out / "plots" / (e.endpoint + ".csv"), plot_data_csv(emit_plot_data({ta[0], tb[0]}, e.endpoint)));
          std::printf("%-10s %-28s n=%-3d p=%-10.4g q=%-10.4g %s\n", f.family.c_str(), e.endpoint.c_str(), e.n_pairs,
                      e.test ? e.test->p_value : std::nan(""), e.q_value ? *e.q_value : std::nan(""),
                      e.degenerate ? "degenerate" : (e.significant ? "significant" : ""));
        }
      }
    } else if (*sv) {
      ReviewService service(sv_store, review_config(sv_goals, sv_multiple, sv_iters));
      std::optional<fs::path> assets;
      if (!sv_static.empty()) assets = sv_static;
      sigset_t stop_signals;
      sigemptyset(&stop_signals);
      sigaddset(&stop_signals, SIGINT);
      sigaddset(&stop_signals, SIGTERM);
      pthread_sigmask(SIG_BLOCK, &stop_signals, nullptr);
      ReviewServer server(service, assets);
      const int port = server.start(sv_host, sv_port);
      std::printf("serving %s on http://%s:%d\n", sv_store.c_str(), sv_host.c_str(), port);
      std::fflush(stdout);
      int sig = 0;
      sigwait(&stop_signals, &sig);
      server.stop();
      service.wait_idle();
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  return 0;
}
