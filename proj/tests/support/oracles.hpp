#pragma once

// Independent reference implementations used as test oracles. None of these
// call into the library's metric or statistics code.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace sage::oracle {

// Dense membership over the whole grid.
inline std::vector<char> membership(std::size_t grid_size, const std::vector<std::uint32_t>& voxels) {
  std::vector<char> in(grid_size, 0);
  for (auto v : voxels) in[v] = 1;
  return in;
}

// Voxels of the whole grid that are members and receive at least `level`.
inline std::size_t count_at_least(const std::vector<double>& dose, const std::vector<char>& in, double level) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < dose.size(); ++i) {
    if (in[i] && dose[i] >= level) ++n;
  }
  return n;
}

inline std::size_t count_at_least(const std::vector<double>& dose, double level) {
  std::size_t n = 0;
  for (double d : dose) {
    if (d >= level) ++n;
  }
  return n;
}

// Cumulative counts at thresholds k * bw for k = 0, 1, ... up to and including
// the first threshold no voxel reaches.
inline std::vector<std::size_t> dvh_counts(const std::vector<double>& dose, const std::vector<char>& in, double bw) {
  std::vector<std::size_t> out;
  for (std::size_t k = 0;; ++k) {
    const auto n = count_at_least(dose, in, static_cast<double>(k) * bw);
    out.push_back(n);
    if (n == 0) break;
  }
  return out;
}

struct Metrics {
  double coverage_pct;
  double ci;
  double gi;  // NaN when undefined
  double v12_cc;
};

inline Metrics metrics(const std::vector<double>& dose, const std::vector<char>& ptv, const std::vector<char>& normal_brain,
                       double rx, double voxel_cc) {
  const double tv = static_cast<double>(std::count(ptv.begin(), ptv.end(), 1));
  const double tv_piv = static_cast<double>(count_at_least(dose, ptv, rx));
  const double piv = static_cast<double>(count_at_least(dose, rx));
  const double half = static_cast<double>(count_at_least(dose, 0.5 * rx));
  Metrics m{};
  m.coverage_pct = 100.0 * tv_piv / tv;
  m.ci = piv == 0 ? 0.0 : (tv_piv * tv_piv) / (tv * piv);
  m.gi = piv == 0 ? std::nan("") : half / piv;
  m.v12_cc = static_cast<double>(count_at_least(dose, normal_brain, 12.0)) * voxel_cc;
  return m;
}

// Two-sided exact signed-rank p by listing all 2^n sign patterns of the
// ranks 1..n (tie-free |d|): P(min(W+, W-) <= observed).
inline double wilcoxon_enumerated_p(const std::vector<double>& d) {
  const int n = static_cast<int>(d.size());
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](int a, int b) { return std::fabs(d[a]) < std::fabs(d[b]); });
  int w_plus = 0;
  for (int r = 0; r < n; ++r) {
    if (d[order[r]] > 0) w_plus += r + 1;
  }
  const int total = n * (n + 1) / 2;
  const int observed = std::min(w_plus, total - w_plus);
  std::uint64_t hits = 0;
  const std::uint64_t patterns = std::uint64_t{1} << n;
  for (std::uint64_t mask = 0; mask < patterns; ++mask) {
    int w = 0;
    for (int r = 0; r < n; ++r) {
      if (mask >> r & 1u) w += r + 1;
    }
    if (std::min(w, total - w) <= observed) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(patterns);
}

// q_i = min over j with p_j >= p_i of min(1, p_j * m / rank_j), where rank_j
// counts the p-values <= p_j.
inline std::vector<double> bh(const std::vector<double>& p) {
  const std::size_t m = p.size();
  std::vector<double> q(m);
  for (std::size_t i = 0; i < m; ++i) {
    double best = 1.0;
    for (std::size_t j = 0; j < m; ++j) {
      if (p[j] < p[i]) continue;
      const auto rank = static_cast<double>(std::count_if(p.begin(), p.end(), [&](double x) { return x <= p[j]; }));
      best = std::min(best, p[j] * static_cast<double>(m) / rank);
    }
    q[i] = best;
  }
  return q;
}

inline double median_sorted(const std::vector<double>& s) {
  const std::size_t n = s.size();
  return n % 2 ? s[n / 2] : 0.5 * (s[n / 2 - 1] + s[n / 2]);
}

// Percentile bootstrap: replicate b draws n indices uniformly (rejection
// sampling on a 64-bit Mersenne Twister seeded with `seed`) and records the
// median; the interval is the linear-interpolated 2.5 / 97.5 percentile.
struct BootstrapCi {
  double median;
  double low;
  double high;
};

inline BootstrapCi bootstrap(const std::vector<double>& x, int n_boot, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  const std::uint64_t n = x.size();
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::vector<double> medians;
  std::vector<double> draw(n);
  for (int b = 0; b < n_boot; ++b) {
    for (std::uint64_t i = 0; i < n; ++i) {
      std::uint64_t r = gen();
      while (r >= limit) r = gen();
      draw[i] = x[r % n];
    }
    std::sort(draw.begin(), draw.end());
    medians.push_back(median_sorted(draw));
  }
  std::sort(medians.begin(), medians.end());
  auto pct = [&](double q) {
    const double h = (static_cast<double>(medians.size()) - 1.0) * q;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, medians.size() - 1);
    return medians[lo] + (h - static_cast<double>(lo)) * (medians[hi] - medians[lo]);
  };
  std::vector<double> s = x;
  std::sort(s.begin(), s.end());
  return {median_sorted(s), pct(0.025), pct(0.975)};
}

}  // namespace sage::oracle
