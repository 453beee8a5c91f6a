#include "sage/trace_analyzer.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <functional>
#include <sstream>

#include "sage/error.hpp"
#include "sage/random.hpp"
#include "sage/serialization.hpp"

namespace sage {

namespace {

constexpr std::pair<CognitiveCategory, std::string_view> kCategoryNames[] = {
    {CognitiveCategory::ProblemDecomposition, "ProblemDecomposition"},
    {CognitiveCategory::ProspectiveVerification, "ProspectiveVerification"},
    {CognitiveCategory::SelfCorrection, "SelfCorrection"},
    {CognitiveCategory::MathematicalReasoning, "MathematicalReasoning"},
    {CognitiveCategory::TradeOffDeliberation, "TradeOffDeliberation"},
    {CognitiveCategory::ForwardSimulation, "ForwardSimulation"},
};

bool is_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }
bool is_digit(char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; }

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string join_categories(const CategorySet& cats) {
  std::string out;
  for (auto c : cats) {
    if (!out.empty()) out += ';';
    out += to_string(c);
  }
  return out;
}

}  // namespace

std::string_view to_string(CognitiveCategory c) noexcept {
  for (const auto& [k, n] : kCategoryNames) {
    if (k == c) return n;
  }
  return "?";
}

CognitiveCategory category_from_string(std::string_view s) {
  for (const auto& [k, n] : kCategoryNames) {
    if (n == s) return k;
  }
  throw Error(ErrorKind::InvalidArgument, "unknown cognitive category '" + std::string(s) + "'");
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  const std::size_t n = text.size();
  while (i < n) {
    if (!is_alnum(text[i])) {
      ++i;
      continue;
    }
    std::string tok;
    while (i < n) {
      const char c = text[i];
      if (is_alnum(c)) {
        tok += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        ++i;
      } else if ((c == '.' || c == ',') && !tok.empty() && is_digit(tok.back()) && i + 1 < n && is_digit(text[i + 1])) {
        tok += c;
        ++i;
      } else if ((c == '\'' || c == '-') && !tok.empty() && i + 1 < n && is_alnum(text[i + 1])) {
        tok += c;
        ++i;
      } else {
        break;
      }
    }
    out.push_back(std::move(tok));
  }
  return out;
}

std::vector<std::string> split_sentences(std::string_view text) {
  static const std::set<std::string> kAbbrev = {"e.g", "i.e", "vs", "approx", "dr", "fig", "etc", "cf", "al", "eq", "mr", "ms"};
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    const auto b = cur.find_first_not_of(" \t\r\n");
    if (b != std::string::npos) {
      const auto e = cur.find_last_not_of(" \t\r\n");
      out.push_back(cur.substr(b, e - b + 1));
    }
    cur.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (c == '\n') {
      flush();
      continue;
    }
    cur += c;
    if (c != '.' && c != '!' && c != '?') continue;
    // Absorb closing quotes/brackets and repeated punctuation.
    while (i + 1 < text.size() && std::string_view(".!?\"')]").find(text[i + 1]) != std::string_view::npos) cur += text[++i];
    const bool at_end = i + 1 >= text.size();
    if (!at_end && !std::isspace(static_cast<unsigned char>(text[i + 1]))) continue;
    if (c == '.') {
      // Word before the period, lowercased, including inner periods (e.g).
      std::size_t j = cur.size() - 1;
      while (j > 0 && (cur[j] == '.' || cur[j] == '"' || cur[j] == '\'' || cur[j] == ')' || cur[j] == ']')) --j;
      std::size_t k = j + 1;
      while (k > 0 && (is_alnum(cur[k - 1]) || cur[k - 1] == '.')) --k;
      const std::string word = lower(std::string_view(cur).substr(k, j + 1 - k));
      if (kAbbrev.count(word)) continue;
    }
    flush();
  }
  flush();
  return out;
}

MarkerLexicon::MarkerLexicon(std::map<CognitiveCategory, std::vector<std::string>> patterns, int max_gap_words)
    : patterns_(std::move(patterns)), max_gap_(max_gap_words) {
  if (max_gap_ < 0) throw Error(ErrorKind::InvalidArgument, "max_gap_words must be >= 0");
  for (auto c : kAllCategories) {
    auto it = patterns_.find(c);
    if (it == patterns_.end() || it->second.empty()) {
      throw Error(ErrorKind::InvalidArgument, "lexicon has no patterns for " + std::string(to_string(c)));
    }
    for (const auto& p : it->second) {
      auto compiled = compile(p);
      if (std::none_of(compiled.begin(), compiled.end(), [](const Token& t) { return t.kind == Token::Word; })) {
        throw Error(ErrorKind::InvalidArgument, "pattern '" + p + "' has no literal word");
      }
      compiled_[c].push_back(std::move(compiled));
    }
  }
}

MarkerLexicon::Compiled MarkerLexicon::compile(const std::string& pattern) {
  Compiled out;
  std::string norm;
  // "..." (or the ellipsis character) becomes a standalone gap marker.
  for (std::size_t i = 0; i < pattern.size(); ++i) {
    if (pattern.compare(i, 3, "...") == 0) {
      norm += " \x01 ";
      i += 2;
    } else if (pattern.compare(i, 3, "\xE2\x80\xA6") == 0) {
      norm += " \x01 ";
      i += 2;
    } else {
      norm += pattern[i];
    }
  }
  std::istringstream ss(norm);
  std::string piece;
  while (ss >> piece) {
    if (piece == "\x01") {
      if (out.empty() || out.back().kind != Token::Gap) out.push_back({Token::Gap, {}});
      continue;
    }
    if (piece == "X" || piece == "Y") {
      out.push_back({Token::Any, {}});
      continue;
    }
    for (auto& w : tokenize(piece)) out.push_back({Token::Word, std::move(w)});
  }
  while (!out.empty() && out.front().kind == Token::Gap) out.erase(out.begin());
  while (!out.empty() && out.back().kind == Token::Gap) out.pop_back();
  return out;
}

bool MarkerLexicon::matches(const Compiled& pattern, const std::vector<std::string>& words) const {
  // at(p, w): does pattern[p..] match starting exactly at words[w]?
  std::function<bool(std::size_t, std::size_t)> at = [&](std::size_t p, std::size_t w) -> bool {
    if (p == pattern.size()) return true;
    const Token& t = pattern[p];
    if (t.kind == Token::Gap) {
      for (int skip = 0; skip <= max_gap_ && w + static_cast<std::size_t>(skip) <= words.size(); ++skip) {
        if (at(p + 1, w + static_cast<std::size_t>(skip))) return true;
      }
      return false;
    }
    if (w >= words.size()) return false;
    if (t.kind == Token::Word && words[w] != t.text) return false;
    return at(p + 1, w + 1);
  };
  for (std::size_t start = 0; start < words.size(); ++start) {
    if (at(0, start)) return true;
  }
  return false;
}

CategorySet MarkerLexicon::classify(std::string_view text) const {
  CategorySet out;
  const auto words = tokenize(text);
  if (words.empty()) return out;
  for (const auto& [cat, list] : compiled_) {
    for (const auto& p : list) {
      if (matches(p, words)) {
        out.insert(cat);
        break;
      }
    }
  }
  return out;
}

MarkerLexicon MarkerLexicon::standard() {
  return MarkerLexicon({
      {CognitiveCategory::ProblemDecomposition, {"first", "then", "next", "I will start by"}},
      {CognitiveCategory::ProspectiveVerification,
       {"if ... then", "would exceed", "checking whether", "to make sure V12Gy stays under"}},
      {CognitiveCategory::SelfCorrection,
       {"reverting", "instead", "previous attempt", "I will revise", "This assumption was incorrect"}},
      {CognitiveCategory::MathematicalReasoning, {"delta", "fraction", "greater than", "increase from X to Y"}},
      {CognitiveCategory::TradeOffDeliberation, {"balance", "prioritize", "versus", "at the cost of"}},
      {CognitiveCategory::ForwardSimulation, {"will cause", "expected to", "will result in"}},
  });
}

MarkerLexicon MarkerLexicon::from_json(const nlohmann::json& j) {
  try {
    std::map<CognitiveCategory, std::vector<std::string>> patterns;
    for (const auto& [name, list] : j.at("categories").items()) {
      patterns[category_from_string(name)] = list.get<std::vector<std::string>>();
    }
    return MarkerLexicon(std::move(patterns), j.value("max_gap_words", 12));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidArgument, std::string("malformed lexicon: ") + e.what());
  }
}

MarkerLexicon MarkerLexicon::load(const std::filesystem::path& path) { return from_json(read_json_file(path)); }

nlohmann::json MarkerLexicon::to_json() const {
  nlohmann::json cats = nlohmann::json::object();
  for (const auto& [c, list] : patterns_) cats[std::string(sage::to_string(c))] = list;
  return {{"version", 1}, {"max_gap_words", max_gap_}, {"categories", cats}};
}

CategorySet classify_utterance(std::string_view text, const MarkerLexicon& lexicon) { return lexicon.classify(text); }

std::string Utterance::id() const {
  return session_id + "/r" + std::to_string(round) + "/i" + std::to_string(index) + "/a" + std::to_string(attempt) + "/s" +
         std::to_string(sentence);
}

int TraceAnalysis::total_instances() const noexcept {
  int n = 0;
  for (const auto& [c, k] : counts) n += k;
  return n;
}

TraceAnalysis analyze_trace_text(std::string_view jsonl, const MarkerLexicon& lexicon) {
  TraceAnalysis out;
  for (auto c : kAllCategories) out.counts[c] = 0;
  std::size_t pos = 0;
  int line_no = 0;
  while (pos <= jsonl.size()) {
    auto end = jsonl.find('\n', pos);
    if (end == std::string_view::npos) end = jsonl.size();
    const auto line = jsonl.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) {
      if (end == jsonl.size()) break;
      continue;
    }
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::IoError, "trace line " + std::to_string(line_no) + ": " + e.what());
    }
    ++out.invocations;
    const auto sid = rec.value("session_id", std::string{});
    const auto cid = rec.value("case_id", std::string{});
    if (out.session_id.empty()) out.session_id = sid;
    if (out.case_id.empty()) out.case_id = cid;
    if (rec.value("format_error", false)) ++out.format_errors;
    const auto rationale = rec.contains("rationale") && rec["rationale"].is_string() ? rec["rationale"].get<std::string>() : "";
    int s = 0;
    for (auto& sentence : split_sentences(rationale)) {
      Utterance u{sid, cid, rec.value("round", 1), rec.value("index", 1), rec.value("attempt", 1), ++s, std::move(sentence), {}};
      u.categories = lexicon.classify(u.text);
      for (auto c : u.categories) ++out.counts[c];
      out.utterances.push_back(std::move(u));
    }
    if (end == jsonl.size()) break;
  }
  return out;
}

TraceAnalysis analyze_session(const std::filesystem::path& log, const MarkerLexicon& lexicon) {
  return analyze_trace_text(read_text_file(log), lexicon);
}

void merge_into(TraceAnalysis& a, const TraceAnalysis& b) {
  if (a.session_id.empty()) a.session_id = b.session_id;
  if (a.case_id.empty()) a.case_id = b.case_id;
  for (auto c : kAllCategories) a.counts[c] += b.counts.count(c) ? b.counts.at(c) : 0;
  a.format_errors += b.format_errors;
  a.invocations += b.invocations;
  a.utterances.insert(a.utterances.end(), b.utterances.begin(), b.utterances.end());
}

std::vector<Utterance> sample_for_review(const std::vector<TraceAnalysis>& analyses, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw Error(ErrorKind::InvalidArgument, "fraction must lie in [0, 1]");
  std::vector<const Utterance*> all;
  for (const auto& a : analyses) {
    for (const auto& u : a.utterances) all.push_back(&u);
  }
  const auto n = all.size();
  const auto k = std::min(n, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9)));
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng(seed);
  for (std::size_t i = 0; i < k; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.below(n - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  std::vector<Utterance> out;
  for (auto i : idx) out.push_back(*all[i]);
  return out;
}

std::string review_sample_csv(const std::vector<Utterance>& sample) {
  std::string out = "utterance_id,session_id,case_id,round,index,sentence,text,categories,reviewer_verdict\n";
  for (const auto& u : sample) {
    out += csv_field(u.id()) + ',' + csv_field(u.session_id) + ',' + csv_field(u.case_id) + ',' + std::to_string(u.round) + ',' +
           std::to_string(u.index) + ',' + std::to_string(u.sentence) + ',' + csv_field(u.text) + ',' +
           csv_field(join_categories(u.categories)) + ",\n";
  }
  return out;
}

double median(std::vector<double> v) {
  if (v.empty()) throw Error(ErrorKind::InvalidArgument, "median of an empty list");
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

VariantComparison compare_variants(const std::vector<TraceAnalysis>& a, const std::vector<TraceAnalysis>& b) {
  std::map<std::string, int> errors_a, errors_b;
  std::map<CognitiveCategory, int> totals_a, totals_b;
  for (const auto& x : a) {
    errors_a[x.case_id] += x.format_errors;
    for (const auto& [c, k] : x.counts) totals_a[c] += k;
  }
  for (const auto& x : b) {
    errors_b[x.case_id] += x.format_errors;
    for (const auto& [c, k] : x.counts) totals_b[c] += k;
  }
  std::vector<std::string> ids_a, ids_b;
  for (const auto& [id, n] : errors_a) ids_a.push_back(id);
  for (const auto& [id, n] : errors_b) ids_b.push_back(id);
  if (ids_a != ids_b) throw Error(ErrorKind::InvalidArgument, "variants cover different case sets");
  if (ids_a.empty()) throw Error(ErrorKind::InvalidArgument, "no analyses to compare");

  VariantComparison out;
  out.case_ids = ids_a;
  std::vector<double> ea, eb;
  for (const auto& id : ids_a) {
    out.format_errors_a.push_back(errors_a[id]);
    out.format_errors_b.push_back(errors_b[id]);
    ea.push_back(errors_a[id]);
    eb.push_back(errors_b[id]);
    out.total_format_errors_a += errors_a[id];
    out.total_format_errors_b += errors_b[id];
  }
  out.median_format_errors_a = median(ea);
  out.median_format_errors_b = median(eb);
  for (auto c : kAllCategories) {
    CategoryComparison row{c, totals_a[c], totals_b[c]};
    const int sum = row.a + row.b;
    row.share_a = sum > 0 ? static_cast<double>(row.a) / sum : 0.0;
    row.exclusive_to_a = row.a > 0 && row.b == 0;
    row.exclusive_to_b = row.b > 0 && row.a == 0;
    out.categories.push_back(row);
  }
  return out;
}

std::string comparison_csv(const VariantComparison& c) {
  std::ostringstream out;
  out << "category,count_a,count_b,share_a,exclusive_to_a,exclusive_to_b\n";
  for (const auto& r : c.categories) {
    out << to_string(r.category) << ',' << r.a << ',' << r.b << ',' << r.share_a << ',' << (r.exclusive_to_a ? 1 : 0) << ','
        << (r.exclusive_to_b ? 1 : 0) << '\n';
  }
  out << "format_errors," << c.total_format_errors_a << ',' << c.total_format_errors_b << ",,,\n";
  out << "median_format_errors_per_case," << c.median_format_errors_a << ',' << c.median_format_errors_b << ",,,\n";
  return out.str();
}

nlohmann::json analysis_to_json(const TraceAnalysis& a) {
  nlohmann::json counts = nlohmann::json::object();
  for (const auto& [c, k] : a.counts) counts[std::string(to_string(c))] = k;
  nlohmann::json utts = nlohmann::json::array();
  for (const auto& u : a.utterances) {
    nlohmann::json cats = nlohmann::json::array();
    for (auto c : u.categories) cats.push_back(std::string(to_string(c)));
    utts.push_back({{"id", u.id()}, {"text", u.text}, {"categories", cats}});
  }
  return {{"session_id", a.session_id},
          {"case_id", a.case_id},
          {"invocations", a.invocations},
          {"format_errors", a.format_errors},
          {"counts", counts},
          {"total_instances", a.total_instances()},
          {"utterances", utts}};
}

}  // namespace sage
