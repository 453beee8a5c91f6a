#include "sage/policy.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include <json.hpp>

#include "sage/agent.hpp"
#include "sage/error.hpp"
#include "sage/random.hpp"
#include "sage/serialization.hpp"

namespace sage {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

void erase_all(std::string& s, std::string_view what) {
  for (auto p = s.find(what); p != std::string::npos; p = s.find(what, p)) s.erase(p, what.size());
}

struct Block {
  std::size_t begin = 0;  // position of the opening fence
  std::size_t end = 0;    // one past the closing fence
  std::string body;
};

// Locates the last fenced block tagged json (or untagged and starting with a
// bracket). An opening fence without a closing one is reported as truncated.
std::optional<Block> find_block(const std::string& text, std::string& error) {
  std::optional<Block> found;
  std::size_t pos = 0;
  while (true) {
    const auto open = text.find("```", pos);
    if (open == std::string::npos) break;
    const auto line_end = text.find('\n', open + 3);
    if (line_end == std::string::npos) {
      error = "truncated structured block";
      return std::nullopt;
    }
    std::string tag = trim(std::string_view(text).substr(open + 3, line_end - open - 3));
    std::transform(tag.begin(), tag.end(), tag.begin(), [](unsigned char ch) { return std::tolower(ch); });
    const auto close = text.find("```", line_end + 1);
    if (close == std::string::npos) {
      if (tag == "json") {
        error = "truncated structured block";
        return std::nullopt;
      }
      break;
    }
    std::string body = text.substr(line_end + 1, close - line_end - 1);
    const std::string t = trim(body);
    if (tag == "json" || (tag.empty() && !t.empty() && (t.front() == '[' || t.front() == '{'))) {
      found = Block{open, close + 3, std::move(body)};
    }
    pos = close + 3;
  }
  if (!found) error = "no structured block found";
  return found;
}

bool integral(const nlohmann::json& v) {
  if (v.is_number_integer()) return true;
  if (!v.is_number_float()) return false;
  const double d = v.get<double>();
  return std::isfinite(d) && std::floor(d) == d;
}

double finite_number(const nlohmann::json& o, const char* key, const std::string& where) {
  if (!o.contains(key)) throw std::invalid_argument(where + ": missing '" + key + "'");
  const auto& v = o.at(key);
  if (!v.is_number()) throw std::invalid_argument(where + ": '" + key + "' must be a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) throw std::invalid_argument(where + ": '" + key + "' must be finite");
  return d;
}

ParsedOutput parse_block(const nlohmann::json& j, const Case& c, const std::vector<RingRequest>& known_rings) {
  const nlohmann::json* objectives = nullptr;
  ParsedOutput out;
  if (j.is_array()) {
    objectives = &j;
  } else if (j.is_object()) {
    if (!j.contains("objectives") || !j.at("objectives").is_array()) {
      throw std::invalid_argument("object must contain an 'objectives' array");
    }
    objectives = &j.at("objectives");
    if (j.contains("rings")) {
      if (!j.at("rings").is_array()) throw std::invalid_argument("'rings' must be an array");
      for (std::size_t n = 0; n < j.at("rings").size(); ++n) {
        const auto& r = j.at("rings")[n];
        const std::string where = "rings[" + std::to_string(n) + "]";
        if (!r.is_object() || !r.contains("name") || !r.at("name").is_string()) {
          throw std::invalid_argument(where + ": missing string 'name'");
        }
        RingRequest req{r.at("name").get<std::string>(),
                        {finite_number(r, "inner_mm", where), finite_number(r, "outer_mm", where)}};
        if (req.name.empty()) throw std::invalid_argument(where + ": empty name");
        if (!(req.spec.inner_margin_mm >= 0.0 && req.spec.inner_margin_mm < req.spec.outer_margin_mm)) {
          throw std::invalid_argument(where + ": need 0 <= inner_mm < outer_mm");
        }
        const auto known = std::find_if(known_rings.begin(), known_rings.end(),
                                        [&](const RingRequest& k) { return k.name == req.name; });
        if (known != known_rings.end()) {
          if (!(*known == req)) throw std::invalid_argument(where + ": ring '" + req.name + "' already defined differently");
          continue;
        }
        if (c.find(req.name)) throw std::invalid_argument(where + ": name '" + req.name + "' is taken");
        for (const auto& prev : out.rings) {
          if (prev.name == req.name) throw std::invalid_argument(where + ": duplicate ring '" + req.name + "'");
        }
        out.rings.push_back(std::move(req));
      }
    }
  } else {
    throw std::invalid_argument("structured block must be an array or an object");
  }

  auto resolves = [&](const std::string& name) {
    if (c.find(name)) return true;
    for (const auto& r : known_rings) if (r.name == name) return true;
    for (const auto& r : out.rings) if (r.name == name) return true;
    return false;
  };
  const std::string ptv_name = c.require(StructureRole::PTV).name;
  bool ptv_lower = false;
  for (std::size_t n = 0; n < objectives->size(); ++n) {
    const auto& o = (*objectives)[n];
    const std::string where = "objectives[" + std::to_string(n) + "]";
    if (!o.is_object()) throw std::invalid_argument(where + ": not an object");
    if (!o.contains("structure") || !o.at("structure").is_string()) {
      throw std::invalid_argument(where + ": missing string 'structure'");
    }
    if (!o.contains("kind") || !o.at("kind").is_string()) throw std::invalid_argument(where + ": missing string 'kind'");
    Objective obj;
    obj.structure = o.at("structure").get<std::string>();
    if (!resolves(obj.structure)) throw std::invalid_argument(where + ": unknown structure '" + obj.structure + "'");
    const auto kind = o.at("kind").get<std::string>();
    if (kind == "upper") {
      obj.kind = ObjectiveKind::Upper;
    } else if (kind == "lower") {
      obj.kind = ObjectiveKind::Lower;
    } else {
      throw std::invalid_argument(where + ": kind must be 'upper' or 'lower'");
    }
    obj.dose_gy = finite_number(o, "dose_gy", where);
    obj.volume_pct = finite_number(o, "volume_pct", where);
    const double priority = finite_number(o, "priority", where);
    if (!integral(o.at("priority"))) throw std::invalid_argument(where + ": priority must be an integer");
    if (obj.dose_gy < 0.0) throw std::invalid_argument(where + ": dose_gy must be >= 0");
    if (obj.volume_pct < 0.0 || obj.volume_pct > 100.0) throw std::invalid_argument(where + ": volume_pct outside 0-100");
    if (priority < 0.0 || priority > 100.0) throw std::invalid_argument(where + ": priority outside 0-100");
    obj.priority = static_cast<int>(priority);
    ptv_lower = ptv_lower || (obj.structure == ptv_name && obj.kind == ObjectiveKind::Lower);
    out.objectives.push_back(std::move(obj));
  }
  if (!ptv_lower) throw std::invalid_argument("objectives need a lower objective on " + ptv_name);
  return out;
}

}  // namespace

ParseResult parse_policy_output(const std::string& text, const Case& c, const std::vector<RingRequest>& known_rings) {
  ParseResult result;
  std::string error;
  const auto block = find_block(text, error);
  std::string rationale = text;
  if (block) rationale = text.substr(0, block->begin) + text.substr(block->end);
  erase_all(rationale, "<think>");
  erase_all(rationale, "</think>");
  result.rationale = trim(rationale);
  if (!block) {
    result.error = error;
    return result;
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(block->body);
  } catch (const nlohmann::json::exception& e) {
    result.error = std::string("malformed JSON: ") + e.what();
    return result;
  }
  try {
    auto parsed = parse_block(j, c, known_rings);
    parsed.rationale = result.rationale;
    result.output = std::move(parsed);
  } catch (const std::invalid_argument& e) {
    result.error = std::string("schema violation: ") + e.what();
  }
  return result;
}

std::string format_policy_output(const std::string& rationale, const ObjectiveSet& objectives,
                                 const std::vector<RingRequest>& rings) {
  nlohmann::json block;
  if (!rings.empty()) {
    block["rings"] = nlohmann::json::array();
    for (const auto& r : rings) {
      block["rings"].push_back({{"name", r.name}, {"inner_mm", r.spec.inner_margin_mm}, {"outer_mm", r.spec.outer_margin_mm}});
    }
  }
  block["objectives"] = objectives;
  return rationale + "\n\n```json\n" + block.dump(2) + "\n```\n";
}

std::string CannedPolicy::complete(const PolicyRequest&) {
  if (replies_.empty()) throw Error(ErrorKind::InvalidArgument, "canned policy has no replies");
  const auto n = std::min<std::size_t>(static_cast<std::size_t>(calls_), replies_.size() - 1);
  ++calls_;
  return replies_[n];
}

// ---------------------------------------------------------------------------
// Scripted policy

namespace {

std::string fmt(double v, int digits = 1) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

double round_to(double v, double step) { return std::round(v / step) * step; }

std::string oar_label(StructureRole role) {
  switch (role) {
    case StructureRole::Brainstem: return "brainstem";
    case StructureRole::OpticChiasm: return "optic chiasm";
    case StructureRole::OpticNerveL: return "left optic nerve";
    case StructureRole::OpticNerveR: return "right optic nerve";
    case StructureRole::CochleaL: return "left cochlea";
    case StructureRole::CochleaR: return "right cochlea";
    default: return std::string(to_string(role));
  }
}

class Writer {
 public:
  explicit Writer(std::uint64_t seed) : rng_(seed) {}
  void say(std::string s) { lines_.push_back(std::move(s)); }
  void pick(std::initializer_list<std::string> options) {
    const auto n = rng_.below(options.size());
    lines_.push_back(*(options.begin() + static_cast<std::ptrdiff_t>(n)));
  }
  std::string text() const {
    std::string out;
    for (const auto& l : lines_) {
      if (!out.empty()) out += ' ';
      out += l;
    }
    return out;
  }

 private:
  Rng rng_;
  std::vector<std::string> lines_;
};

const Goal* find_goal(const GoalSet& goals, std::string_view metric) {
  for (const auto& g : goals.goals) if (g.metric == metric) return &g;
  return nullptr;
}

Objective* find_objective(ObjectiveSet& set, const std::string& structure, ObjectiveKind kind) {
  for (auto& o : set) if (o.structure == structure && o.kind == kind) return &o;
  return nullptr;
}

constexpr const char* kTightRing = "Ring_0_3";
constexpr const char* kFallOffRing = "Ring_3_15";

}  // namespace

std::string ScriptedPolicy::complete(const PolicyRequest& request) {
  const auto& ctx = request.context;
  if (!ctx.planning_case || !ctx.goals) throw Error(ErrorKind::InvalidArgument, "scripted policy needs a planning context");
  const Case& pc = *ctx.planning_case;
  const GoalSet& goals = *ctx.goals;
  const double rx = pc.prescription_gy;
  const std::string ptv = pc.require(StructureRole::PTV).name;
  Writer w(mix_seed(request.seed));

  auto oar_goal = [&](StructureRole role) {
    const Goal* g = find_goal(goals, oar_metric_id(role));
    return g ? g->threshold : 9.0;
  };

  ObjectiveSet objectives;
  std::vector<RingRequest> rings = ctx.rings;

  if (!ctx.current_objectives) {
    const double floor = round_to(options_.ptv_floor_factor * rx, 0.1);
    const double cap = round_to(options_.ptv_cap_factor * rx, 0.1);
    objectives.push_back({ptv, ObjectiveKind::Lower, floor, 100.0, 80});
    objectives.push_back({ptv, ObjectiveKind::Upper, cap, 0.0, 50});
    for (auto role : kSerialOars) {
      for (const auto& s : pc.structures) {
        if (s.role != role) continue;
        objectives.push_back({s.name, ObjectiveKind::Upper, std::max(0.0, oar_goal(role) - options_.oar_headroom_gy), 0.0, 40});
      }
    }
    w.pick({"First, I will build a coverage-first objective set for this target.",
            "I will start by setting up objectives that secure target coverage."});
    w.say("The PTV floor goes to " + fmt(floor) + " Gy at 100% of the volume, slightly above the " + fmt(rx) +
          " Gy prescription, which is expected to keep coverage above the goal.");
    w.pick({"Then I will cap every organ at risk " + fmt(options_.oar_headroom_gy) + " Gy below its limit.",
            "Next, each organ at risk gets an upper objective " + fmt(options_.oar_headroom_gy) + " Gy below its limit."});
    w.say("An upper objective of " + fmt(cap) + " Gy on the PTV should keep the maximum dose under the hot-spot limit.");
    w.pick({"I need to balance coverage versus spill into normal brain.",
            "Coverage comes first here, at the cost of some extra spill outside the target."});
    return format_policy_output(w.text(), objectives, rings);
  }

  objectives = *ctx.current_objectives;
  bool changed = false;

  const bool has_tight_ring =
      std::any_of(rings.begin(), rings.end(), [](const RingRequest& r) { return r.name == kTightRing; });
  if (ctx.round >= 2 && options_.refine_aware && !has_tight_ring) {
    rings.push_back({kTightRing, {0.0, 3.0}});
    const double ring_dose = round_to(options_.ring_factor * rx, 0.1);
    objectives.push_back({kTightRing, ObjectiveKind::Upper, ring_dose, 0.0, 50});
    w.pick({"First, the reviewer asked for better conformity, so I will add a 3 mm ring around the PTV.",
            "I will start by adding a 0 to 3 mm ring around the PTV, since the request is to improve conformity."});
    w.say("An upper objective of " + fmt(ring_dose) + " Gy on the ring will pull the prescription isodose onto the target surface.");
    if (auto* lower = find_objective(objectives, ptv, ObjectiveKind::Lower)) {
      const double floor = round_to(options_.ptv_refine_floor_factor * rx, 0.1);
      w.say("The PTV floor will decrease from " + fmt(lower->dose_gy) + " to " + fmt(floor) +
            " Gy, because the coverage-first margin is what spills dose outside the target.");
      lower->dose_gy = floor;
    }
    w.pick({"I need to balance conformity versus coverage, so I am checking whether coverage would drop below 95%.",
            "Tightening the ring trades some coverage margin for conformity; I will make sure coverage stays above 95%."});
    w.say("This is expected to raise the conformity index without touching the organ-at-risk objectives.");
    return format_policy_output(w.text(), objectives, rings);
  }

  if (!ctx.latest_metrics) {
    w.say("The previous attempt produced no usable plan, so I will resubmit the same objectives.");
    return format_policy_output(w.text(), objectives, rings);
  }
  const MetricsReport& m = *ctx.latest_metrics;
  w.pick({"First, I will compare the current plan with each clinical goal.",
          "I will start by checking each metric against its goal."});

  if (ctx.memory && ctx.memory->size() >= 2) {
    const auto& e = ctx.memory->entries();
    const auto& last = e[e.size() - 1];
    const auto& prev = e[e.size() - 2];
    if (last.round == prev.round && last.goals_passed < prev.goals_passed) {
      w.say("The previous attempt passed fewer goals than the one before it, so I will revise the adjustment instead of repeating it.");
    }
  }

  auto value_of = [&](std::string_view id) { return m.value(id); };
  auto fails = [&](const Goal& g) {
    const auto v = value_of(g.metric);
    if (!v) return false;
    switch (g.comparator) {
      case Comparator::Greater: return !(*v > g.threshold);
      case Comparator::Less: return !(*v < g.threshold);
      case Comparator::GreaterEqual: return !(*v >= g.threshold);
      case Comparator::LessEqual: return !(*v <= g.threshold);
    }
    return false;
  };

  for (const auto& g : goals.goals) {
    if (!fails(g)) continue;
    const double v = *value_of(g.metric);
    if (g.metric == "coverage_pct") {
      if (auto* lower = find_objective(objectives, ptv, ObjectiveKind::Lower)) {
        const int next = std::min(100, lower->priority + 10);
        const double dose = round_to(lower->dose_gy + 0.01 * rx, 0.01);
        w.say("Coverage is " + fmt(v) + "%, below the " + fmt(g.threshold, 0) + "% goal, so the PTV lower priority will increase from " +
              std::to_string(lower->priority) + " to " + std::to_string(next) + ".");
        w.say("The PTV floor moves up to " + fmt(dose, 2) + " Gy.");
        lower->priority = next;
        lower->dose_gy = dose;
        changed = true;
      }
      if (auto* ring = find_objective(objectives, kTightRing, ObjectiveKind::Upper)) {
        const int next = std::max(10, ring->priority - 10);
        w.say("The ring is competing with the target, so I will relax its priority from " + std::to_string(ring->priority) +
              " to " + std::to_string(next) + ".");
        ring->priority = next;
        ring->dose_gy = round_to(ring->dose_gy + 0.01 * rx, 0.01);
        changed = true;
      }
    } else if (g.metric == "dmax_gy") {
      auto* upper = find_objective(objectives, ptv, ObjectiveKind::Upper);
      if (!upper) {
        objectives.push_back({ptv, ObjectiveKind::Upper, round_to(options_.ptv_cap_factor * rx, 0.1), 0.0, 50});
        upper = &objectives.back();
      }
      const auto* lower = find_objective(objectives, ptv, ObjectiveKind::Lower);
      const double min_cap = lower ? lower->dose_gy + 0.5 : 0.0;
      const int next = std::min(100, upper->priority + 15);
      const double dose = std::max(min_cap, round_to(upper->dose_gy - 0.015 * rx, 0.01));
      w.say("The maximum dose of " + fmt(v, 2) + " Gy would exceed the " + fmt(g.threshold) + " Gy limit, so the PTV upper priority goes from " +
            std::to_string(upper->priority) + " to " + std::to_string(next) + " and its dose to " + fmt(dose, 2) + " Gy.");
      upper->priority = next;
      upper->dose_gy = dose;
      changed = true;
    } else if (g.metric == "v12_cc") {
      if (auto* ring = find_objective(objectives, kFallOffRing, ObjectiveKind::Upper)) {
        const int next = std::min(100, ring->priority + 15);
        w.say("V12Gy is " + fmt(v, 2) + " cc, greater than the " + fmt(g.threshold, 0) + " cc goal; the fall-off ring priority will increase from " +
              std::to_string(ring->priority) + " to " + std::to_string(next) + ".");
        ring->priority = next;
        ring->dose_gy = std::max(0.0, round_to(ring->dose_gy - 0.03 * rx, 0.01));
      } else {
        rings.push_back({kFallOffRing, {3.0, 15.0}});
        const double dose = round_to(0.55 * rx, 0.1);
        objectives.push_back({kFallOffRing, ObjectiveKind::Upper, dose, 0.0, 25});
        w.say("V12Gy is " + fmt(v, 2) + " cc, greater than the " + fmt(g.threshold, 0) + " cc goal, so I will add a 3 to 15 mm ring with an upper objective of " +
              fmt(dose) + " Gy to make sure V12Gy stays under the limit.");
      }
      changed = true;
    } else {
      for (auto role : kSerialOars) {
        if (oar_metric_id(role) != g.metric) continue;
        for (const auto& s : pc.structures) {
          if (s.role != role) continue;
          auto* o = find_objective(objectives, s.name, ObjectiveKind::Upper);
          if (!o) {
            objectives.push_back({s.name, ObjectiveKind::Upper, std::max(0.0, g.threshold - options_.oar_headroom_gy), 0.0, 40});
            o = &objectives.back();
          }
          const int next = std::min(100, o->priority + 20);
          const double dose = std::max(0.0, round_to(o->dose_gy - 1.5, 0.01));
          w.say("The " + oar_label(role) + " maximum of " + fmt(v, 2) + " Gy would exceed its " + fmt(g.threshold) +
                " Gy limit, so its priority will increase from " + std::to_string(o->priority) + " to " + std::to_string(next) + ".");
          o->priority = next;
          o->dose_gy = dose;
          changed = true;
        }
      }
    }
  }
  if (!changed) {
    w.say("Every goal I can act on already passes, so I will keep the objectives unchanged.");
  } else {
    w.pick({"These changes are expected to close the remaining gaps without giving up the goals that already pass.",
            "Raising these priorities will result in a plan that should satisfy the failing goals."});
    w.pick({"I need to balance this against target coverage.", "I will prioritize the failing goals over further conformity gains."});
  }
  return format_policy_output(w.text(), objectives, rings);
}

}  // namespace sage
