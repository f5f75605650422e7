#pragma once

// Brute-force reference implementations, written straight from the metric
// definitions and sharing no code with the library.

#include <cmath>
#include <cstddef>
#include <optional>
#include <vector>

namespace oracle {

struct Point {
  double confidence;
  bool correct;
};

// Pairwise count over every (positive, negative) pair.
inline std::optional<double> auroc(const std::vector<Point>& pts, double tie_weight) {
  double pairs = 0.0;
  double score = 0.0;
  for (const auto& p : pts) {
    if (!p.correct) continue;
    for (const auto& n : pts) {
      if (n.correct) continue;
      pairs += 1.0;
      if (p.confidence > n.confidence) {
        score += 1.0;
      } else if (p.confidence == n.confidence) {
        score += tie_weight;
      }
    }
  }
  if (pairs == 0.0) return std::nullopt;
  return score / pairs;
}

// Bin m covers (m/M, (m+1)/M]; the first bin also takes 0. Membership is
// decided by comparing against the rational bounds m/M directly.
inline std::size_t bin_of(double c, int bins) {
  if (c <= 0.0) return 0;
  for (int m = 0; m < bins; ++m) {
    const double lo = static_cast<double>(m) / bins;
    const double hi = static_cast<double>(m + 1) / bins;
    if (c > lo && c <= hi) return static_cast<std::size_t>(m);
  }
  return static_cast<std::size_t>(bins - 1);
}

inline double ece(const std::vector<Point>& pts, int bins) {
  double total = 0.0;
  for (int m = 0; m < bins; ++m) {
    double n = 0.0;
    double acc = 0.0;
    double conf = 0.0;
    for (const auto& p : pts) {
      if (bin_of(p.confidence, bins) != static_cast<std::size_t>(m)) continue;
      n += 1.0;
      acc += p.correct ? 1.0 : 0.0;
      conf += p.confidence;
    }
    if (n == 0.0) continue;
    total += n / static_cast<double>(pts.size()) * std::fabs(acc / n - conf / n);
  }
  return total;
}

inline double brier(const std::vector<Point>& pts) {
  double total = 0.0;
  for (const auto& p : pts) total += std::pow(p.confidence - (p.correct ? 1.0 : 0.0), 2);
  return total / static_cast<double>(pts.size());
}

// Sum over the distribution entries plus the gold one-hot coordinate when
// the gold answer is not listed.
inline double multi_brier(const std::vector<double>& probs, std::optional<std::size_t> gold) {
  double total = 0.0;
  for (std::size_t k = 0; k < probs.size(); ++k) {
    const double y = gold && *gold == k ? 1.0 : 0.0;
    total += std::pow(probs[k] - y, 2);
  }
  if (!gold) total += 1.0;
  return total;
}

}  // namespace oracle
