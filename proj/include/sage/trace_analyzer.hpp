#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace sage {

enum class CognitiveCategory {
  ProblemDecomposition,
  ProspectiveVerification,
  SelfCorrection,
  MathematicalReasoning,
  TradeOffDeliberation,
  ForwardSimulation,
};

inline constexpr std::array<CognitiveCategory, 6> kAllCategories = {
    CognitiveCategory::ProblemDecomposition, CognitiveCategory::ProspectiveVerification,
    CognitiveCategory::SelfCorrection,       CognitiveCategory::MathematicalReasoning,
    CognitiveCategory::TradeOffDeliberation, CognitiveCategory::ForwardSimulation};

std::string_view to_string(CognitiveCategory c) noexcept;
CognitiveCategory category_from_string(std::string_view s);

using CategorySet = std::set<CognitiveCategory>;

/// Phrase patterns per category. Matching is case-insensitive on word tokens.
/// In a pattern, "..." is a gap of up to `max_gap_words` tokens and the
/// uppercase placeholders X and Y stand for any single token.
class MarkerLexicon {
 public:
  MarkerLexicon() = default;
  explicit MarkerLexicon(std::map<CognitiveCategory, std::vector<std::string>> patterns, int max_gap_words = 12);

  /// The example phrases of the published marker table.
  static MarkerLexicon standard();
  static MarkerLexicon from_json(const nlohmann::json& j);
  static MarkerLexicon load(const std::filesystem::path& path);
  nlohmann::json to_json() const;

  const std::map<CognitiveCategory, std::vector<std::string>>& patterns() const noexcept { return patterns_; }
  int max_gap_words() const noexcept { return max_gap_; }
  CategorySet classify(std::string_view text) const;

 private:
  struct Token {
    enum Kind { Word, Any, Gap } kind = Word;
    std::string text;
  };
  using Compiled = std::vector<Token>;
  static Compiled compile(const std::string& pattern);
  bool matches(const Compiled& pattern, const std::vector<std::string>& words) const;

  std::map<CognitiveCategory, std::vector<std::string>> patterns_;
  std::map<CognitiveCategory, std::vector<Compiled>> compiled_;
  int max_gap_ = 12;
};

/// Lowercased word tokens; digits may carry internal '.' or ',' and words
/// internal apostrophes or hyphens.
std::vector<std::string> tokenize(std::string_view text);

/// Splits on '.', '!' or '?' followed by whitespace, and on line breaks.
/// Common abbreviations (e.g., i.e., vs., approx., Dr., Fig.) and decimal
/// points do not end a sentence.
std::vector<std::string> split_sentences(std::string_view text);

CategorySet classify_utterance(std::string_view text, const MarkerLexicon& lexicon);

struct Utterance {
  std::string session_id;
  std::string case_id;
  int round = 1;
  int index = 1;
  int attempt = 1;
  int sentence = 0;
  std::string text;
  CategorySet categories;
  std::string id() const;
};

struct TraceAnalysis {
  std::string session_id;
  std::string case_id;
  std::map<CognitiveCategory, int> counts;
  int format_errors = 0;
  int invocations = 0;
  std::vector<Utterance> utterances;
  int total_instances() const noexcept;
};

/// Parses JSONL trace records; blank lines are ignored.
TraceAnalysis analyze_trace_text(std::string_view jsonl, const MarkerLexicon& lexicon);
/// Throws io-error when the log cannot be read or parsed.
TraceAnalysis analyze_session(const std::filesystem::path& log, const MarkerLexicon& lexicon);

/// Adds counts, errors and utterances of `b` into `a`.
void merge_into(TraceAnalysis& a, const TraceAnalysis& b);

/// ceil(fraction * N) utterances drawn uniformly without replacement.
std::vector<Utterance> sample_for_review(const std::vector<TraceAnalysis>& analyses, double fraction, std::uint64_t seed);
/// Columns: utterance_id, session_id, case_id, round, index, sentence, text,
/// categories, reviewer_verdict (blank).
std::string review_sample_csv(const std::vector<Utterance>& sample);

struct CategoryComparison {
  CognitiveCategory category{};
  int a = 0;
  int b = 0;
  double share_a = 0.0;  // a / (a + b); 0 when both are 0
  bool exclusive_to_a = false;
  bool exclusive_to_b = false;
};

struct VariantComparison {
  std::vector<CategoryComparison> categories;
  std::vector<std::string> case_ids;
  std::vector<int> format_errors_a;  // per case, aligned with case_ids
  std::vector<int> format_errors_b;
  double median_format_errors_a = 0.0;
  double median_format_errors_b = 0.0;
  int total_format_errors_a = 0;
  int total_format_errors_b = 0;
};

/// Groups analyses by case id; both sides must cover the same cases.
VariantComparison compare_variants(const std::vector<TraceAnalysis>& a, const std::vector<TraceAnalysis>& b);
std::string comparison_csv(const VariantComparison& c);
nlohmann::json analysis_to_json(const TraceAnalysis& a);

double median(std::vector<double> values);

}  // namespace sage
