#include "sage/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "sage/error.hpp"
#include "sage/random.hpp"
#include "sage/serialization.hpp"

namespace sage {

namespace {

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string num(double v) {
  if (std::isnan(v)) return "";
  std::ostringstream ss;
  ss.precision(10);
  ss << v;
  return ss.str();
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(std::move(cur));
  return out;
}

double plain_median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

std::string_view to_string(TestMethod m) noexcept {
  return m == TestMethod::Exact ? "exact" : "normal-approximation";
}

std::vector<double> signed_rank_counts(int n) {
  const int max_sum = n * (n + 1) / 2;
  std::vector<double> counts(static_cast<std::size_t>(max_sum) + 1, 0.0);
  counts[0] = 1.0;
  int reach = 0;
  for (int r = 1; r <= n; ++r) {
    reach += r;
    for (int s = reach; s >= r; --s) counts[static_cast<std::size_t>(s)] += counts[static_cast<std::size_t>(s - r)];
  }
  return counts;
}

TestResult wilcoxon_signed_rank(const std::string& endpoint, const std::vector<double>& differences) {
  TestResult out;
  out.endpoint = endpoint;
  std::vector<double> d;
  for (double x : differences) {
    if (!std::isfinite(x)) throw Error(ErrorKind::InvalidArgument, "non-finite difference in '" + endpoint + "'");
    if (x == 0.0) {
      ++out.n_zero;
    } else {
      d.push_back(x);
    }
  }
  const int n = static_cast<int>(d.size());
  out.n_effective = n;
  if (n == 0) throw Error(ErrorKind::DegenerateSample, "all differences are zero for '" + endpoint + "'");

  // Average ranks of |d|.
  std::vector<std::size_t> order(d.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return std::fabs(d[i]) < std::fabs(d[j]); });
  std::vector<double> rank(d.size());
  double tie_term = 0.0;
  bool ties = false;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && std::fabs(d[order[j + 1]]) == std::fabs(d[order[i]])) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
    const double t = static_cast<double>(j - i + 1);
    if (t > 1) {
      ties = true;
      tie_term += t * t * t - t;
    }
    i = j + 1;
  }
  for (std::size_t i = 0; i < d.size(); ++i) (d[i] > 0 ? out.w_plus : out.w_minus) += rank[i];
  out.statistic = std::min(out.w_plus, out.w_minus);

  if (n <= kExactWilcoxonMaxN && !ties) {
    out.method = TestMethod::Exact;
    const auto counts = signed_rank_counts(n);
    const auto t = static_cast<std::size_t>(std::llround(out.statistic));
    double tail = 0.0;
    for (std::size_t s = 0; s <= t; ++s) tail += counts[s];
    out.p_value = std::min(1.0, 2.0 * tail / std::ldexp(1.0, n));
  } else {
    out.method = TestMethod::NormalApproximation;
    const double nn = n;
    const double mean = nn * (nn + 1.0) / 4.0;
    const double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0 - tie_term / 48.0;
    const double dev = std::max(0.0, std::fabs(out.w_plus - mean) - 0.5);
    const double z = var > 0.0 ? dev / std::sqrt(var) : 0.0;
    out.p_value = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
  }
  return out;
}

TestResult wilcoxon_signed_rank(const PairedSample& sample) {
  std::vector<double> d;
  d.reserve(sample.pairs.size());
  for (const auto& [a, b] : sample.pairs) d.push_back(a - b);
  return wilcoxon_signed_rank(sample.endpoint, d);
}

std::vector<double> bh_adjust(const std::vector<double>& p) {
  for (double x : p) {
    if (!(x >= 0.0 && x <= 1.0)) throw Error(ErrorKind::InvalidArgument, "p-values must lie in [0, 1]");
  }
  const std::size_t m = p.size();
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return p[i] < p[j]; });
  std::vector<double> q(m);
  double running = 1.0;
  for (std::size_t r = m; r-- > 0;) {
    const double v = std::min(1.0, p[order[r]] * (static_cast<double>(m) / static_cast<double>(r + 1)));
    running = std::min(running, v);
    q[order[r]] = running;
  }
  return q;
}

double quantile_type7(std::vector<double> v, double q) {
  if (v.empty()) throw Error(ErrorKind::InvalidArgument, "quantile of an empty list");
  if (!(q >= 0.0 && q <= 1.0)) throw Error(ErrorKind::InvalidArgument, "quantile level must lie in [0, 1]");
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

std::vector<double> bootstrap_medians(const std::vector<double>& d, int n_boot, std::uint64_t seed) {
  if (d.empty()) throw Error(ErrorKind::InvalidArgument, "bootstrap needs data");
  Rng rng(seed);
  std::vector<double> out(static_cast<std::size_t>(n_boot));
  std::vector<double> draw(d.size());
  for (auto& m : out) {
    for (auto& x : draw) x = d[rng.below(d.size())];
    m = plain_median(draw);
  }
  return out;
}

PairedSummary paired_summary(const PairedSample& sample, int n_boot, std::uint64_t seed) {
  if (n_boot < 1000) throw Error(ErrorKind::InvalidArgument, "n_boot must be >= 1000");
  if (sample.pairs.size() < 2) throw Error(ErrorKind::InvalidArgument, "paired summary needs at least 2 pairs");
  std::vector<double> d;
  for (const auto& [a, b] : sample.pairs) {
    if (!std::isfinite(a) || !std::isfinite(b)) throw Error(ErrorKind::InvalidArgument, "non-finite value in '" + sample.endpoint + "'");
    d.push_back(a - b);
  }
  const auto boot = bootstrap_medians(d, n_boot, seed);
  return {plain_median(d), quantile_type7(boot, 0.025), quantile_type7(boot, 0.975), n_boot, seed};
}

std::vector<MetricsTable> parse_metrics_csv(const std::string& text) {
  std::vector<MetricsTable> out;
  std::istringstream in(text);
  std::string line;
  bool header = true;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto f = split_csv_line(line);
    if (header) {
      if (f.size() != 4 || f[0] != "patient" || f[1] != "variant" || f[2] != "metric" || f[3] != "value") {
        throw Error(ErrorKind::InvalidArgument, "metrics CSV header must be patient,variant,metric,value");
      }
      header = false;
      continue;
    }
    if (f.size() != 4) throw Error(ErrorKind::InvalidArgument, "metrics CSV line " + std::to_string(line_no) + " needs 4 fields");
    double v = std::numeric_limits<double>::quiet_NaN();
    if (!f[3].empty() && f[3] != "nan" && f[3] != "NaN") {
      try {
        std::size_t used = 0;
        v = std::stod(f[3], &used);
        if (used != f[3].size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw Error(ErrorKind::InvalidArgument, "metrics CSV line " + std::to_string(line_no) + ": bad value '" + f[3] + "'");
      }
    }
    auto it = std::find_if(out.begin(), out.end(), [&](const MetricsTable& t) { return t.variant == f[1]; });
    if (it == out.end()) {
      out.push_back(MetricsTable{f[1], {}});
      it = std::prev(out.end());
    }
    it->set(f[0], f[2], v);
  }
  return out;
}

std::vector<MetricsTable> read_metrics_csv(const std::filesystem::path& path) { return parse_metrics_csv(read_text_file(path)); }

std::string metrics_csv(const std::vector<MetricsTable>& tables) {
  std::string out = "patient,variant,metric,value\n";
  for (const auto& t : tables) {
    for (const auto& [patient, metrics] : t.values) {
      for (const auto& [metric, v] : metrics) out += patient + ',' + t.variant + ',' + metric + ',' + num(v) + '\n';
    }
  }
  return out;
}

void add_report(MetricsTable& table, const std::string& patient, const MetricsReport& report) {
  for (const auto& id : all_metric_ids()) {
    if (const auto v = report.value(id)) table.set(patient, id, *v);
  }
}

EndpointFamilies EndpointFamilies::standard() {
  EndpointFamilies f;
  for (auto e : kPrimaryEndpoints) f.primary.emplace_back(e);
  f.secondary = secondary_endpoints();
  return f;
}

EndpointFamilies EndpointFamilies::from_json(const nlohmann::json& j) {
  try {
    EndpointFamilies f{j.at("primary").get<std::vector<std::string>>(), j.at("secondary").get<std::vector<std::string>>()};
    const auto ids = all_metric_ids();
    for (const auto* list : {&f.primary, &f.secondary}) {
      for (const auto& e : *list) {
        if (std::find(ids.begin(), ids.end(), e) == ids.end()) throw Error(ErrorKind::InvalidArgument, "unknown endpoint '" + e + "'");
      }
    }
    return f;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidArgument, std::string("malformed families config: ") + e.what());
  }
}

nlohmann::json EndpointFamilies::to_json() const { return {{"primary", primary}, {"secondary", secondary}}; }

std::vector<FamilyResult> endpoint_family_analysis(const MetricsTable& a, const MetricsTable& b, const EndpointFamilies& families,
                                                   int n_boot, std::uint64_t seed) {
  std::vector<std::string> ids_a, ids_b;
  for (const auto& [p, m] : a.values) ids_a.push_back(p);
  for (const auto& [p, m] : b.values) ids_b.push_back(p);
  if (ids_a != ids_b) throw Error(ErrorKind::InvalidArgument, "metrics tables cover different patients");
  if (n_boot < 1000) throw Error(ErrorKind::InvalidArgument, "n_boot must be >= 1000");

  std::vector<FamilyResult> out;
  const std::pair<const char*, const std::vector<std::string>*> fams[] = {{"primary", &families.primary},
                                                                           {"secondary", &families.secondary}};
  for (const auto& [name, list] : fams) {
    FamilyResult fr{name, {}};
    std::vector<double> ps;
    std::vector<std::size_t> tested;
    for (const auto& endpoint : *list) {
      EndpointResult er;
      er.endpoint = endpoint;
      er.family = name;
      PairedSample sample{endpoint, {}};
      for (const auto& patient : ids_a) {
        const auto& ma = a.values.at(patient);
        const auto& mb = b.values.at(patient);
        const auto ia = ma.find(endpoint);
        const auto ib = mb.find(endpoint);
        if (ia == ma.end() || ib == mb.end() || !std::isfinite(ia->second) || !std::isfinite(ib->second)) {
          ++er.n_dropped;
          continue;
        }
        sample.pairs.emplace_back(ia->second, ib->second);
      }
      er.n_pairs = static_cast<int>(sample.pairs.size());
      try {
        er.test = wilcoxon_signed_rank(sample);
        ps.push_back(er.test->p_value);
        tested.push_back(fr.endpoints.size());
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::DegenerateSample) throw;
        er.degenerate = true;
      }
      if (er.n_pairs >= 2) er.summary = paired_summary(sample, n_boot, mix_seed(seed ^ fnv1a(endpoint)));
      fr.endpoints.push_back(std::move(er));
    }
    const auto qs = bh_adjust(ps);
    for (std::size_t k = 0; k < tested.size(); ++k) {
      auto& er = fr.endpoints[tested[k]];
      er.q_value = qs[k];
      er.significant = qs[k] < kFdrLevel;
    }
    out.push_back(std::move(fr));
  }
  return out;
}

std::string family_results_csv(const std::vector<FamilyResult>& results) {
  std::string out =
      "family,endpoint,n_pairs,n_effective,n_zero,method,statistic,p_value,q_value,significant,median_difference,ci_low,ci_high\n";
  for (const auto& f : results) {
    for (const auto& e : f.endpoints) {
      out += f.family + ',' + e.endpoint + ',' + std::to_string(e.n_pairs) + ',';
      if (e.test) {
        out += std::to_string(e.test->n_effective) + ',' + std::to_string(e.test->n_zero) + ',' + std::string(to_string(e.test->method)) +
               ',' + num(e.test->statistic) + ',' + num(e.test->p_value) + ',';
      } else {
        out += "0," + std::to_string(e.n_pairs) + ",degenerate,,,";
      }
      out += (e.q_value ? num(*e.q_value) : std::string()) + ',' + (e.significant ? "1" : "0") + ',';
      if (e.summary) {
        out += num(e.summary->median_difference) + ',' + num(e.summary->ci_low) + ',' + num(e.summary->ci_high);
      } else {
        out += ",,";
      }
      out += '\n';
    }
  }
  return out;
}

nlohmann::json family_results_json(const std::vector<FamilyResult>& results) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& f : results) {
    nlohmann::json eps = nlohmann::json::array();
    for (const auto& e : f.endpoints) {
      nlohmann::json j{{"endpoint", e.endpoint}, {"n_pairs", e.n_pairs}, {"n_dropped", e.n_dropped}, {"degenerate", e.degenerate},
                       {"significant", e.significant}};
      if (e.test) {
        j["test"] = {{"statistic", e.test->statistic}, {"w_plus", e.test->w_plus},   {"w_minus", e.test->w_minus},
                     {"p_value", e.test->p_value},     {"n_effective", e.test->n_effective}, {"n_zero", e.test->n_zero},
                     {"method", std::string(to_string(e.test->method))}};
      }
      j["q_value"] = e.q_value ? nlohmann::json(*e.q_value) : nlohmann::json(nullptr);
      if (e.summary) {
        j["summary"] = {{"median_difference", e.summary->median_difference},
                        {"ci_low", e.summary->ci_low},
                        {"ci_high", e.summary->ci_high},
                        {"n_boot", e.summary->n_boot},
                        {"seed", e.summary->seed}};
      }
      eps.push_back(std::move(j));
    }
    out.push_back({{"family", f.family}, {"endpoints", eps}});
  }
  return out;
}

std::vector<PlotRow> emit_plot_data(const std::vector<MetricsTable>& tables, const std::string& endpoint) {
  const auto ids = all_metric_ids();
  if (std::find(ids.begin(), ids.end(), endpoint) == ids.end()) {
    throw Error(ErrorKind::InvalidArgument, "unknown endpoint '" + endpoint + "'");
  }
  std::vector<PlotRow> points, summaries;
  for (const auto& t : tables) {
    std::vector<double> values;
    for (const auto& [patient, metrics] : t.values) {
      const auto it = metrics.find(endpoint);
      if (it == metrics.end() || !std::isfinite(it->second)) continue;
      points.push_back({"point", patient, t.variant, it->second, 0, 0, 0});
      values.push_back(it->second);
    }
    if (!values.empty()) {
      summaries.push_back({"summary", "", t.variant, 0, plain_median(values), quantile_type7(values, 0.25), quantile_type7(values, 0.75)});
    }
  }
  points.insert(points.end(), summaries.begin(), summaries.end());
  return points;
}

std::string plot_data_csv(const std::vector<PlotRow>& rows) {
  std::string out = "row_type,patient,group,value,median,q1,q3\n";
  for (const auto& r : rows) {
    if (r.row_type == "point") {
      out += "point," + r.patient + ',' + r.group + ',' + num(r.value) + ",,,\n";
    } else {
      out += "summary,," + r.group + ",," + num(r.median) + ',' + num(r.q1) + ',' + num(r.q3) + '\n';
    }
  }
  return out;
}

}  // namespace sage
