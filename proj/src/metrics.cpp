#include "verbcal/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include <json.hpp>

namespace verbcal {

namespace {

void require_nonempty(std::size_t n, const char* what) {
  if (n == 0) throw Error(ErrorCode::EmptyInput, std::string(what) + " of an empty set");
}

// Sorted copy so every sum is evaluated in the same order regardless of input order.
std::vector<ScoredPoint> sorted(std::span<const ScoredPoint> points) {
  std::vector<ScoredPoint> out(points.begin(), points.end());
  std::sort(out.begin(), out.end(), [](const ScoredPoint& a, const ScoredPoint& b) {
    if (a.confidence != b.confidence) return a.confidence < b.confidence;
    return a.correct < b.correct;
  });
  return out;
}

std::string fmt(std::optional<double> v, int precision = 4) {
  if (!v) return "-";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, *v);
  return buf;
}

nlohmann::ordered_json opt(std::optional<double> v) { return v ? nlohmann::ordered_json(*v) : nullptr; }

}  // namespace

std::size_t BinningSpec::index_of(double confidence) const {
  const auto m = static_cast<std::size_t>(bins);
  const double c = std::clamp(confidence, 0.0, 1.0);
  auto idx = static_cast<std::size_t>(std::max(0.0, std::ceil(c * bins) - 1.0));
  idx = std::min(idx, m - 1);
  // ceil(c * M) can be off by one ulp near a boundary; settle against the bounds.
  while (idx > 0 && c <= lower(idx)) --idx;
  while (idx + 1 < m && c > upper(idx)) ++idx;
  return idx;
}

void BinningSpec::validate() const {
  if (bins < 1) throw Error(ErrorCode::InvalidArgument, "need at least one bin");
}

std::vector<ScoredPoint> scored_points(std::span<const PredictionRecord> records) {
  std::vector<ScoredPoint> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    if (!r.is_ok()) continue;
    if (!r.correct()) throw Error(ErrorCode::MissingVerdict, "record for " + r.question_id() + " has no verdict");
    out.push_back({*r.confidence(), *r.correct()});
  }
  return out;
}

std::optional<double> auroc(std::span<const ScoredPoint> points, TieMode ties) {
  require_nonempty(points.size(), "AUROC");
  const auto pts = sorted(points);
  const double tie_weight = ties == TieMode::Half ? 0.5 : 0.0;
  double n_pos = 0.0;
  double n_neg = 0.0;
  double neg_below = 0.0;
  double wins = 0.0;
  for (std::size_t i = 0; i < pts.size();) {
    std::size_t j = i;
    double pos = 0.0;
    double neg = 0.0;
    while (j < pts.size() && pts[j].confidence == pts[i].confidence) {
      (pts[j].correct ? pos : neg) += 1.0;
      ++j;
    }
    wins += pos * neg_below + tie_weight * pos * neg;
    neg_below += neg;
    n_pos += pos;
    n_neg += neg;
    i = j;
  }
  if (n_pos == 0.0 || n_neg == 0.0) return std::nullopt;
  return wins / (n_pos * n_neg);
}

std::vector<CalibrationBin> calibration_curve(std::span<const ScoredPoint> points, const BinningSpec& binning) {
  binning.validate();
  require_nonempty(points.size(), "calibration curve");
  const auto m = static_cast<std::size_t>(binning.bins);
  std::vector<double> conf_sum(m, 0.0);
  std::vector<double> correct_sum(m, 0.0);
  std::vector<std::size_t> count(m, 0);
  for (const auto& p : sorted(points)) {
    const auto i = binning.index_of(p.confidence);
    conf_sum[i] += p.confidence;
    correct_sum[i] += p.correct ? 1.0 : 0.0;
    ++count[i];
  }
  std::vector<CalibrationBin> bins(m);
  for (std::size_t i = 0; i < m; ++i) {
    bins[i].lower = binning.lower(i);
    bins[i].upper = binning.upper(i);
    bins[i].count = count[i];
    if (count[i] > 0) {
      bins[i].mean_confidence = conf_sum[i] / static_cast<double>(count[i]);
      bins[i].accuracy = correct_sum[i] / static_cast<double>(count[i]);
    }
  }
  return bins;
}

double ece(std::span<const ScoredPoint> points, const BinningSpec& binning) {
  const auto bins = calibration_curve(points, binning);
  const auto n = static_cast<double>(points.size());
  double total = 0.0;
  for (const auto& b : bins) {
    if (b.count == 0) continue;
    total += static_cast<double>(b.count) / n * std::abs(*b.accuracy - *b.mean_confidence);
  }
  return total;
}

double brier(std::span<const ScoredPoint> points) {
  require_nonempty(points.size(), "Brier score");
  double total = 0.0;
  for (const auto& p : sorted(points)) {
    const double d = p.confidence - (p.correct ? 1.0 : 0.0);
    total += d * d;
  }
  return total / static_cast<double>(points.size());
}

double accuracy(std::span<const PredictionRecord> records) {
  require_nonempty(records.size(), "accuracy");
  std::size_t hits = 0;
  for (const auto& r : records) {
    if (!r.is_ok()) continue;
    if (!r.correct()) throw Error(ErrorCode::MissingVerdict, "record for " + r.question_id() + " has no verdict");
    if (*r.correct()) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(records.size());
}

std::optional<double> auroc(std::span<const PredictionRecord> records, TieMode ties) {
  const auto pts = scored_points(records);
  return auroc(std::span<const ScoredPoint>(pts), ties);
}

double ece(std::span<const PredictionRecord> records, const BinningSpec& binning) {
  const auto pts = scored_points(records);
  return ece(std::span<const ScoredPoint>(pts), binning);
}

double brier(std::span<const PredictionRecord> records) {
  const auto pts = scored_points(records);
  return brier(std::span<const ScoredPoint>(pts));
}

std::vector<CalibrationBin> calibration_curve(std::span<const PredictionRecord> records, const BinningSpec& binning) {
  const auto pts = scored_points(records);
  return calibration_curve(std::span<const ScoredPoint>(pts), binning);
}

double token_stats(std::span<const PredictionRecord> records) {
  require_nonempty(records.size(), "token statistics");
  double total = 0.0;
  for (const auto& r : records) total += static_cast<double>(r.token_usage());
  return total / static_cast<double>(records.size());
}

double multi_brier_score(const CandidateDistribution& dist, std::optional<std::size_t> gold_index) {
  double score = gold_index ? 0.0 : 1.0;
  const auto entries = dist.entries();
  for (std::size_t k = 0; k < entries.size(); ++k) {
    const double target = gold_index && *gold_index == k ? 1.0 : 0.0;
    const double d = entries[k].probability - target;
    score += d * d;
  }
  return score;
}

std::optional<double> multi_brier(std::span<const PredictionRecord> records) {
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& r : records) {
    if (!r.is_ok() || r.method().kind != MethodKind::VerbDistrib || !r.distribution() || !r.correct()) continue;
    total += multi_brier_score(*r.distribution(), r.gold_index());
    ++n;
  }
  if (n == 0) return std::nullopt;
  return total / static_cast<double>(n);
}

MetricsReport evaluate(std::span<const PredictionRecord> records, const BinningSpec& binning, TieMode ties) {
  binning.validate();
  require_nonempty(records.size(), "evaluation");
  MetricsReport rep;
  rep.method = records.front().method().name();
  rep.n = records.size();
  rep.tie_mode = ties;
  for (const auto& r : records) {
    if (!r.is_ok()) {
      ++rep.n_format_errors;
    } else if (is_nota(*r.answer())) {
      ++rep.n_nota_answers;
    }
  }
  rep.accuracy = accuracy(records);
  rep.mean_tokens = token_stats(records);
  rep.multi_brier = multi_brier(records);

  const auto pts = scored_points(records);
  rep.n_scored = pts.size();
  const std::span<const ScoredPoint> view(pts);
  if (!pts.empty()) {
    rep.auroc = auroc(view, ties);
    rep.brier = brier(view);
    rep.calibration_bins = calibration_curve(view, binning);
    rep.ece = ece(view, binning);
  } else {
    for (std::size_t i = 0; i < static_cast<std::size_t>(binning.bins); ++i) {
      rep.calibration_bins.push_back({binning.lower(i), binning.upper(i), 0, std::nullopt, std::nullopt});
    }
  }
  return rep;
}

std::string report_to_json(const MetricsReport& report) {
  nlohmann::ordered_json j;
  j["method"] = report.method;
  j["n"] = report.n;
  j["n_scored"] = report.n_scored;
  j["n_format_errors"] = report.n_format_errors;
  j["n_nota_answers"] = report.n_nota_answers;
  j["n_skipped"] = report.n_skipped;
  j["accuracy"] = report.accuracy;
  j["auroc"] = opt(report.auroc);
  j["auroc_ties"] = report.tie_mode == TieMode::Half ? "half" : "strict";
  j["brier"] = opt(report.brier);
  j["ece"] = opt(report.ece);
  j["multi_brier"] = opt(report.multi_brier);
  auto bins = nlohmann::ordered_json::array();
  for (const auto& b : report.calibration_bins) {
    nlohmann::ordered_json row;
    row["lower"] = b.lower;
    row["upper"] = b.upper;
    row["count"] = b.count;
    row["mean_confidence"] = opt(b.mean_confidence);
    row["accuracy"] = opt(b.accuracy);
    bins.push_back(std::move(row));
  }
  j["calibration_bins"] = std::move(bins);
  j["mean_tokens"] = report.mean_tokens;
  return j.dump(2);
}

std::string reports_to_table(std::span<const MetricsReport> reports) {
  const std::vector<std::string> header = {"method", "n", "format_err", "acc", "auroc", "brier", "ece", "multi_brier",
                                           "tokens"};
  std::vector<std::vector<std::string>> rows{header};
  for (const auto& r : reports) {
    rows.push_back({r.method, std::to_string(r.n), std::to_string(r.n_format_errors), fmt(r.accuracy), fmt(r.auroc),
                    fmt(r.brier), fmt(r.ece), fmt(r.multi_brier), fmt(r.mean_tokens, 1)});
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  std::string out;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      const auto& cell = rows[r][c];
      // Left-align the method column, right-align numbers.
      if (c == 0) {
        out += cell + std::string(width[c] - cell.size(), ' ');
      } else {
        out += "  " + std::string(width[c] - cell.size(), ' ') + cell;
      }
    }
    out += '\n';
    if (r == 0) {
      std::size_t total = 0;
      for (auto w : width) total += w + 2;
      out += std::string(total - 2, '-') + '\n';
    }
  }
  return out;
}

std::string bins_to_csv(const MetricsReport& report) {
  std::string out = "lower,upper,count,mean_confidence,accuracy\n";
  char buf[160];
  for (const auto& b : report.calibration_bins) {
    std::snprintf(buf, sizeof buf, "%.6g,%.6g,%zu,", b.lower, b.upper, b.count);
    out += buf;
    out += b.mean_confidence ? fmt(b.mean_confidence, 6) : "";
    out += ',';
    out += b.accuracy ? fmt(b.accuracy, 6) : "";
    out += '\n';
  }
  return out;
}

}  // namespace verbcal
