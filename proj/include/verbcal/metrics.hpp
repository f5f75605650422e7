#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "verbcal/model.hpp"

namespace verbcal {

/// How AUROC scores a positive/negative pair with equal confidence.
enum class TieMode {
  Half,    // Mann-Whitney convention: a tie counts 0.5
  Strict,  // only s+ > s- counts
};

/// M equal-width bins on [0,1]; bin i covers (i/M, (i+1)/M], the first bin
/// also includes 0.
struct BinningSpec {
  int bins = 10;

  double lower(std::size_t i) const { return static_cast<double>(i) / bins; }
  double upper(std::size_t i) const { return static_cast<double>(i + 1) / bins; }
  std::size_t index_of(double confidence) const;
  void validate() const;
};

struct CalibrationBin {
  double lower = 0.0;
  double upper = 0.0;
  std::size_t count = 0;
  std::optional<double> mean_confidence;  // absent for empty bins
  std::optional<double> accuracy;
};

/// A record reduced to what the binary metrics need.
struct ScoredPoint {
  double confidence = 0.0;
  bool correct = false;
};

/// Ok records as points; FormatError records are skipped. Throws
/// MissingVerdict if an Ok record has no correctness verdict.
std::vector<ScoredPoint> scored_points(std::span<const PredictionRecord> records);

// Point-level metrics. Empty input throws EmptyInput.
std::optional<double> auroc(std::span<const ScoredPoint> points, TieMode ties = TieMode::Half);
double ece(std::span<const ScoredPoint> points, const BinningSpec& binning = {});
double brier(std::span<const ScoredPoint> points);
std::vector<CalibrationBin> calibration_curve(std::span<const ScoredPoint> points, const BinningSpec& binning = {});

// Record-level metrics. FormatError records count as incorrect for accuracy
// and are excluded from the confidence-based metrics.
double accuracy(std::span<const PredictionRecord> records);
std::optional<double> auroc(std::span<const PredictionRecord> records, TieMode ties = TieMode::Half);
double ece(std::span<const PredictionRecord> records, const BinningSpec& binning = {});
double brier(std::span<const PredictionRecord> records);
std::vector<CalibrationBin> calibration_curve(std::span<const PredictionRecord> records,
                                              const BinningSpec& binning = {});
/// Mean completion tokens over every record.
double token_stats(std::span<const PredictionRecord> records);

/// Squared distance from the one-hot gold vector; a gold answer missing from
/// the entries contributes (0 - 1)^2. In [0, 2].
double multi_brier_score(const CandidateDistribution& dist, std::optional<std::size_t> gold_index);

/// Mean multi-Brier over Ok VerbDistrib records with a verdict; absent when
/// there are none.
std::optional<double> multi_brier(std::span<const PredictionRecord> records);

struct MetricsReport {
  std::string method;
  std::size_t n = 0;          // every record
  std::size_t n_scored = 0;   // records with a confidence; bin counts sum to this
  std::size_t n_format_errors = 0;
  std::size_t n_nota_answers = 0;
  std::size_t n_skipped = 0;  // elicitations the backend could not serve
  double accuracy = 0.0;
  std::optional<double> auroc;
  std::optional<double> brier;
  std::optional<double> ece;
  std::optional<double> multi_brier;
  std::vector<CalibrationBin> calibration_bins;
  double mean_tokens = 0.0;
  TieMode tie_mode = TieMode::Half;
};

/// Every metric for one (model, method, dataset) cell.
MetricsReport evaluate(std::span<const PredictionRecord> records, const BinningSpec& binning = {},
                       TieMode ties = TieMode::Half);

std::string report_to_json(const MetricsReport& report);
/// Aligned plain-text table, one row per report.
std::string reports_to_table(std::span<const MetricsReport> reports);
/// lower,upper,count,mean_confidence,accuracy
std::string bins_to_csv(const MetricsReport& report);

}  // namespace verbcal
