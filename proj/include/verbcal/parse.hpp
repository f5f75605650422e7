#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include <json.hpp>

#include "verbcal/model.hpp"

namespace verbcal {

/// Tolerance on |sum(p) - 1| before a verbalized distribution is a format
/// error. Inside the tolerance probabilities are renormalized.
inline constexpr double kSumTolerance = 0.05;

/// Last top-level JSON object or array in `raw_text`. Code fences and prose
/// around the value are skipped. Throws NoJson.
nlohmann::json extract_json(std::string_view raw_text);
std::optional<nlohmann::json> try_extract_json(std::string_view raw_text);

/// {"final_answer": ..., "confidence": ...}
ParseOutcome parse_verbalized_confidence(std::string_view raw_text);

/// [{"candidate": ..., "confidence": ...}, ...]; picks the most confident
/// candidate, earliest on ties.
ParseOutcome parse_topk(std::string_view raw_text, int k);

/// Verbalized probability distribution. `options` empty means an open answer
/// space, which requires a "None of the above" entry; otherwise every
/// candidate must name an option and is normalized to its label.
ParseOutcome parse_distribution(std::string_view raw_text, std::span<const AnswerOption> options,
                                double tolerance = kSumTolerance);

/// Dispatch for the three verbalized methods.
ParseOutcome parse_verbalized(const Method& method, std::string_view raw_text,
                              std::span<const AnswerOption> options);

/// The distribution as a JSON array of {"candidate", "confidence"} objects.
std::string distribution_to_json(const CandidateDistribution& dist);

/// P("True") summed over first-token alternatives that read "true" after
/// trimming and case folding. Throws MissingLogprobs.
double parse_ptrue_logprobs(const ModelResponse& response);

struct CharSpan {
  std::size_t begin = 0;
  std::size_t end = 0;  // exclusive

  bool operator==(const CharSpan&) const = default;
};

/// Text after the last "Final answer:" marker up to the end of its line.
std::optional<CharSpan> locate_final_answer(std::string_view raw_text);

/// exp(sum of logprobs of tokens overlapping `span`). Throws MissingLogprobs or
/// SpanNotFound.
double parse_logit_confidence(const ModelResponse& response, CharSpan span);

/// Locates the answer span and scores it; failures become FormatErrors.
ParseOutcome parse_logit_response(const ModelResponse& response);

/// Leading "yes" / "no", case-insensitive. Throws UnparseableVerdict.
bool parse_judge_reply(std::string_view raw_text);

/// (Evidential Strength, Uncertainty Awareness, Logical Calibration)
using RubricTriple = std::array<int, 3>;
/// Keyed by "Method A" / "Method B" / "Method C".
using RubricScores = std::map<std::string, RubricTriple, std::less<>>;

/// Throws NoJson, BadSchema or OutOfRange.
RubricScores parse_rubric_reply(std::string_view raw_text);

}  // namespace verbcal
