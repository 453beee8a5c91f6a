#include <doctest.h>

#include <fstream>
#include <sstream>

#include "sage/error.hpp"
#include "sage/random.hpp"
#include "sage/trace_analyzer.hpp"
#include "test_support.hpp"

using namespace sage;
using nlohmann::json;
using CC = CognitiveCategory;

namespace {

template <typename F>
ErrorKind kind_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::Transport;
}

struct Labeled {
  CategorySet labels;
  std::string text;
};

std::vector<Labeled> corpus() {
  std::ifstream in(test::data_path("labeled_corpus.tsv"));
  std::vector<Labeled> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    Labeled l;
    std::stringstream cats(line.substr(0, tab));
    std::string c;
    while (std::getline(cats, c, ';')) {
      if (!c.empty()) l.labels.insert(category_from_string(c));
    }
    l.text = line.substr(tab + 1);
    out.push_back(std::move(l));
  }
  return out;
}

std::string record(const std::string& session, const std::string& case_id, int index, const std::string& rationale,
                   bool format_error = false) {
  return json{{"session_id", session}, {"case_id", case_id}, {"round", 1}, {"index", index}, {"attempt", 1},
              {"rationale", rationale}, {"format_error", format_error}}
      .dump();
}

std::vector<TraceAnalysis> load_variant(const std::string& v) {
  std::vector<TraceAnalysis> out;
  for (int n = 0; n < 3; ++n) {
    const auto name = "case-00" + std::to_string(n) + "-" + v + ".jsonl";
    out.push_back(analyze_session(test::data_path("format_errors/" + v + "/" + name), MarkerLexicon::standard()));
  }
  return out;
}

}  // namespace

TEST_SUITE("trace_analyzer") {
  TEST_CASE("classification examples") {
    const auto lex = MarkerLexicon::standard();
    CHECK(classify_utterance("First, I will check whether V12Gy would exceed 10 cc.", lex) ==
          CategorySet{CC::ProblemDecomposition, CC::ProspectiveVerification});
    CHECK(classify_utterance("", lex).empty());
    CHECK(classify_utterance("We must balance coverage versus brainstem dose, at the cost of conformity.", lex) ==
          CategorySet{CC::TradeOffDeliberation});
    CHECK(classify_utterance("FIRST we look.", lex).count(CC::ProblemDecomposition) == 1);
    // word boundaries: "firstly" is not "first"
    CHECK(classify_utterance("Firstly stated.", lex).count(CC::ProblemDecomposition) == 0);
  }

  TEST_CASE("gap templates are bounded") {
    std::map<CC, std::vector<std::string>> patterns;
    for (auto c : kAllCategories) patterns[c] = {"zzz"};
    patterns[CC::ProspectiveVerification] = {"if ... then"};
    patterns[CC::MathematicalReasoning] = {"increase from X to Y"};
    const MarkerLexicon lex(patterns, 3);
    CHECK(kind_of([] { MarkerLexicon({{CC::SelfCorrection, {"oops"}}}); }) == ErrorKind::InvalidArgument);
    CHECK(lex.classify("if a b c then").count(CC::ProspectiveVerification) == 1);
    CHECK(lex.classify("if a b c d then").empty());
    CHECK(lex.classify("increase from 18 to 19.5 Gy") == CategorySet{CC::MathematicalReasoning});
    CHECK(lex.classify("increase from 18 Gy to 19").empty());
  }

  TEST_CASE("sentence splitting") {
    const auto s = split_sentences("Dose is 18.5 Gy, e.g. for the PTV. Next step! Is it ok?\nYes");
    REQUIRE(s.size() == 4);
    CHECK(s[0] == "Dose is 18.5 Gy, e.g. for the PTV.");
    CHECK(s[3] == "Yes");
    CHECK(split_sentences("").empty());
    CHECK(tokenize("V12Gy would-be 1,000.5 don't") == std::vector<std::string>{"v12gy", "would-be", "1,000.5", "don't"});
  }

  TEST_CASE("labeled corpus: every label recovered exactly") {
    const auto lex = MarkerLexicon::standard();
    const auto items = corpus();
    REQUIRE(items.size() >= 60);
    for (auto c : kAllCategories) {
      int tp = 0, fp = 0, fn = 0;
      for (const auto& l : items) {
        const bool said = lex.classify(l.text).count(c) > 0;
        const bool truth = l.labels.count(c) > 0;
        tp += said && truth;
        fp += said && !truth;
        fn += !said && truth;
      }
      INFO(to_string(c));
      CHECK(tp > 0);
      CHECK(fp == 0);
      CHECK(fn == 0);
    }
  }

  TEST_CASE("analyze: counts match hand labels and sum the utterances") {
    const auto items = corpus();
    std::string log;
    std::map<CC, int> expected;
    for (std::size_t n = 0; n < 12; ++n) {
      log += record("s", "case-x", static_cast<int>(n + 1), items[n * 5].text) + "\n";
      for (auto c : items[n * 5].labels) ++expected[c];
    }
    const auto a = analyze_trace_text(log, MarkerLexicon::standard());
    CHECK(a.utterances.size() == 12);
    CHECK(a.invocations == 12);
    for (auto c : kAllCategories) CHECK(a.counts.at(c) == expected[c]);
    int sum = 0;
    for (const auto& u : a.utterances) sum += static_cast<int>(u.categories.size());
    CHECK(a.total_instances() == sum);
  }

  TEST_CASE("analyze: empty rationale with format errors") {
    std::string log;
    for (int n = 1; n <= 3; ++n) log += record("s", "c", n, "", true) + "\n\n";
    const auto a = analyze_trace_text(log, MarkerLexicon::standard());
    CHECK(a.format_errors == 3);
    CHECK(a.total_instances() == 0);
    CHECK(a.utterances.empty());
    CHECK(kind_of([] { analyze_session("/nonexistent/log.jsonl", MarkerLexicon::standard()); }) == ErrorKind::IoError);
    CHECK(kind_of([] { analyze_trace_text("{not json", MarkerLexicon::standard()); }) == ErrorKind::IoError);
  }

  TEST_CASE("property: analysis is additive over concatenation") {
    const auto items = corpus();
    const auto lex = MarkerLexicon::standard();
    Rng rng(17);
    for (int trial = 0; trial < 30; ++trial) {
      std::string x, y;
      const auto nx = rng.below(8), ny = rng.below(8);
      for (std::uint64_t n = 0; n < nx; ++n) {
        x += record("s", "c", static_cast<int>(n), items[rng.below(items.size())].text + " " + items[rng.below(items.size())].text,
                    rng.below(3) == 0) + "\n";
      }
      for (std::uint64_t n = 0; n < ny; ++n) {
        y += record("s", "c", static_cast<int>(n), items[rng.below(items.size())].text, rng.below(3) == 0) + "\n";
      }
      const auto whole = analyze_trace_text(x + y, lex);
      auto parts = analyze_trace_text(x, lex);
      merge_into(parts, analyze_trace_text(y, lex));
      CHECK(whole.counts == parts.counts);
      CHECK(whole.format_errors == parts.format_errors);
      CHECK(whole.utterances.size() == parts.utterances.size());
    }
  }

  TEST_CASE("review sample") {
    std::string log;
    const auto items = corpus();
    for (int n = 0; n < 100; ++n) log += record("s", "c", n + 1, items[static_cast<std::size_t>(n) % items.size()].text) + "\n";
    const std::vector<TraceAnalysis> all = {analyze_trace_text(log, MarkerLexicon::standard())};
    REQUIRE(all[0].utterances.size() == 100);
    const auto s = sample_for_review(all, 0.10, 42);
    CHECK(s.size() == 10);
    std::set<std::string> ids;
    for (const auto& u : s) ids.insert(u.id());
    CHECK(ids.size() == 10);
    CHECK(sample_for_review(all, 0.0, 42).empty());
    CHECK(sample_for_review(all, 1.0, 42).size() == 100);
    CHECK(sample_for_review(all, 0.015, 42).size() == 2);
    const auto again = sample_for_review(all, 0.10, 42);
    REQUIRE(again.size() == s.size());
    for (std::size_t n = 0; n < s.size(); ++n) CHECK(again[n].id() == s[n].id());
    CHECK(kind_of([&] { sample_for_review(all, 1.5, 1); }) == ErrorKind::InvalidArgument);
    CHECK(kind_of([&] { sample_for_review(all, -0.1, 1); }) == ErrorKind::InvalidArgument);

    const auto csv = review_sample_csv(s);
    CHECK(csv.rfind("utterance_id,session_id,case_id,round,index,sentence,text,categories,reviewer_verdict\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') >= 11);
  }

  TEST_CASE("compare variants") {
    const auto a = load_variant("a");
    const auto b = load_variant("b");
    const auto cmp = compare_variants(a, b);
    CHECK(cmp.format_errors_a == std::vector<int>{0, 0, 1});
    CHECK(cmp.format_errors_b == std::vector<int>{3, 3, 4});
    CHECK(cmp.median_format_errors_a == 0.0);
    CHECK(cmp.median_format_errors_b == 3.0);
    CHECK(cmp.total_format_errors_b == 10);
    CHECK(kind_of([&] { compare_variants(a, {b[0], b[1]}); }) == ErrorKind::InvalidArgument);
    CHECK(comparison_csv(cmp).find("median_format_errors_per_case,0,3") != std::string::npos);

    TraceAnalysis x, y;
    x.case_id = y.case_id = "p1";
    for (auto c : kAllCategories) x.counts[c] = y.counts[c] = 0;
    x.counts[CC::SelfCorrection] = 96;
    y.counts[CC::SelfCorrection] = 4;
    x.counts[CC::ForwardSimulation] = 7;
    y.counts[CC::TradeOffDeliberation] = 2;
    const auto shares = compare_variants({x}, {y});
    for (const auto& row : shares.categories) {
      if (row.category == CC::SelfCorrection) CHECK(row.share_a == doctest::Approx(0.96));
      CHECK(row.exclusive_to_a == (row.category == CC::ForwardSimulation));
      CHECK(row.exclusive_to_b == (row.category == CC::TradeOffDeliberation));
      if (row.a + row.b == 0) CHECK(row.share_a == 0.0);
    }
  }

  TEST_CASE("lexicon serialization round trips") {
    const auto lex = MarkerLexicon::standard();
    const auto j = lex.to_json();
    const auto back = MarkerLexicon::from_json(j);
    CHECK(back.patterns() == lex.patterns());
    CHECK(back.max_gap_words() == lex.max_gap_words());
    CHECK(back.to_json() == j);
    for (auto c : kAllCategories) CHECK_FALSE(lex.patterns().at(c).empty());
    test::TempDir dir;
    std::ofstream(dir / "lex.json") << j.dump(2);
    CHECK(MarkerLexicon::load(dir / "lex.json").patterns() == lex.patterns());
    CHECK(to_string(category_from_string("SelfCorrection")) == "SelfCorrection");
  }
}
