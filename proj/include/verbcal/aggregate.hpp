#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "verbcal/model.hpp"

namespace verbcal {

enum class AggregationMode { Frequency, WeightedConfidence };

std::string to_string(AggregationMode mode);
AggregationMode parse_aggregation_mode(std::string_view name);

struct AggregationSpec {
  AggregationMode mode = AggregationMode::WeightedConfidence;
  int n = 16;                 // samples per question
  double temperature = 0.8;   // upstream sampling temperature

  void validate() const;
};

/// One sampled answer with its verbalized confidence.
struct Vote {
  std::string answer;
  double confidence = 0.0;
};

struct AggregateResult {
  std::string answer;
  double confidence = 0.0;
  /// Normalized weight per canonical answer, in first-occurrence order.
  std::vector<Candidate> weights;
  std::size_t n_valid = 0;
  std::size_t n_dropped = 0;   // FormatError samples
  bool zero_mass_fallback = false;
};

/// Modal canonical answer; confidence = count / N. Earliest first occurrence
/// wins ties. Throws NoValidSamples.
AggregateResult aggregate_frequency(std::span<const Vote> votes);
AggregateResult aggregate_frequency(std::span<const PredictionRecord> samples);

/// Confidence-weighted vote: per canonical answer sum the confidences, pick
/// the heaviest, normalize by the total weight. All-zero confidences fall
/// back to frequency. Throws NoValidSamples.
AggregateResult aggregate_weighted(std::span<const Vote> votes);
AggregateResult aggregate_weighted(std::span<const PredictionRecord> samples);

/// Samples of one question collapsed into a record tagged with mode and N.
/// Verdicts carry over from any sample with the same canonical answer. When
/// no sample parsed, the result is a FormatError record.
PredictionRecord aggregate_records(std::span<const PredictionRecord> samples, const AggregationSpec& spec);

/// Groups a record log by (question, method) in first-appearance order, keeps
/// samples with sample_index < spec.n and aggregates each group.
std::vector<PredictionRecord> aggregate_log(std::span<const PredictionRecord> records, const AggregationSpec& spec);

}  // namespace verbcal
