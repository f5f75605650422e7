#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "verbcal/error.hpp"

namespace verbcal {

/// Lowercase, collapse whitespace, strip surrounding punctuation. Idempotent.
std::string canonicalize_answer(std::string_view text);

/// True when the candidate canonicalizes to "none of the above".
bool is_nota(std::string_view candidate);

inline constexpr std::string_view kNotaText = "None of the above";

struct AnswerOption {
  std::string label;  // "A", "B", ...
  std::string text;

  bool operator==(const AnswerOption&) const = default;
};

/// One benchmark item. Known answer spaces carry lettered options and a gold
/// option label; open answer spaces carry a free-text gold answer.
class QuestionInstance {
 public:
  /// Known space; options are labelled A, B, ... in order. `gold` may be the
  /// option label or the full option text.
  static QuestionInstance known(std::string id, std::string question, std::vector<std::string> options,
                                std::string_view gold);
  static QuestionInstance open(std::string id, std::string question, std::string gold);

  const std::string& id() const { return id_; }
  const std::string& question() const { return question_; }
  bool is_known() const { return !options_.empty(); }
  std::span<const AnswerOption> options() const { return options_; }
  const std::string& gold() const { return gold_; }

  /// Option for the gold label; nullptr for open questions.
  const AnswerOption* gold_option() const;
  /// Option whose label or text matches `candidate` after canonicalization.
  const AnswerOption* find_option(std::string_view candidate) const;

  bool operator==(const QuestionInstance&) const = default;

 private:
  QuestionInstance() = default;

  std::string id_;
  std::string question_;
  std::vector<AnswerOption> options_;
  std::string gold_;
};

struct TokenAlternative {
  std::string token;
  double logprob = 0.0;

  bool operator==(const TokenAlternative&) const = default;
};

struct TokenLogprob {
  std::string token;
  double logprob = 0.0;
  std::size_t offset = 0;  // character offset into raw_text
  std::vector<TokenAlternative> top;

  bool operator==(const TokenLogprob&) const = default;
};

struct ModelResponse {
  std::string raw_text;
  std::int64_t token_usage = 0;
  std::optional<std::vector<TokenLogprob>> token_logprobs;
  std::string request_id;

  /// Throws InvalidArgument on negative usage, non-finite or positive
  /// logprobs, or decreasing offsets.
  void validate() const;

  bool operator==(const ModelResponse&) const = default;
};

enum class MethodKind { Logit, PTrue, VerbConf, VerbTopK, VerbDistrib };

struct Method {
  MethodKind kind = MethodKind::VerbConf;
  int k = 2;  // only meaningful for VerbTopK

  static Method logit() { return {MethodKind::Logit}; }
  static Method ptrue() { return {MethodKind::PTrue}; }
  static Method verb_conf() { return {MethodKind::VerbConf}; }
  static Method verb_topk(int k = 2);
  static Method verb_distrib() { return {MethodKind::VerbDistrib}; }

  /// "Logit", "PTrue", "VerbConf", "VerbTopK(2)", "VerbDistrib".
  std::string name() const;
  static Method parse(std::string_view name);

  bool needs_logprobs() const { return kind == MethodKind::Logit || kind == MethodKind::PTrue; }

  bool operator==(const Method& other) const {
    return kind == other.kind && (kind != MethodKind::VerbTopK || k == other.k);
  }
};

struct Candidate {
  std::string text;
  double probability = 0.0;

  bool operator==(const Candidate&) const = default;
};

/// Ordered (candidate, probability) pairs. Candidates are distinct after
/// canonicalization and at most one is "None of the above". Summing to one is
/// checked by the distribution parser, since top-k lists share this type.
class CandidateDistribution {
 public:
  explicit CandidateDistribution(std::vector<Candidate> entries);

  std::span<const Candidate> entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::optional<std::size_t> nota_index() const { return nota_index_; }
  /// Index of the highest probability; earliest wins ties.
  std::size_t argmax() const;
  double sum() const;
  /// Entry whose canonical text equals canonicalize_answer(text).
  std::optional<std::size_t> find(std::string_view text) const;

  bool operator==(const CandidateDistribution&) const = default;

 private:
  std::vector<Candidate> entries_;
  std::optional<std::size_t> nota_index_;
};

enum class FormatReason {
  NoJson,
  BadSchema,
  OutOfRange,
  SumViolation,
  EmptyCandidates,
  MissingNota,
  MissingLogprobs,
  SpanNotFound,
  ClientFailure,
};

inline constexpr FormatReason kAllFormatReasons[] = {
    FormatReason::NoJson,       FormatReason::BadSchema,       FormatReason::OutOfRange,
    FormatReason::SumViolation, FormatReason::EmptyCandidates, FormatReason::MissingNota,
    FormatReason::MissingLogprobs, FormatReason::SpanNotFound, FormatReason::ClientFailure,
};

std::string_view to_string(FormatReason reason);
FormatReason parse_format_reason(std::string_view name);

struct ParsedAnswer {
  std::string answer;
  double confidence = 0.0;
  std::optional<CandidateDistribution> distribution;

  bool operator==(const ParsedAnswer&) const = default;
};

/// Exactly one of: Ok with a payload whose confidence lies in [0,1], or a
/// FormatError with a reason and no payload.
class ParseOutcome {
 public:
  static ParseOutcome ok(ParsedAnswer payload);
  static ParseOutcome format_error(FormatReason reason, std::string detail = {});

  bool is_ok() const { return payload_.has_value(); }
  const ParsedAnswer& payload() const;
  std::optional<FormatReason> reason() const { return reason_; }
  const std::string& detail() const { return detail_; }

 private:
  ParseOutcome() = default;

  std::optional<ParsedAnswer> payload_;
  std::optional<FormatReason> reason_;
  std::string detail_;
};

struct AggregationTag {
  std::string mode;  // "frequency" | "weighted"
  int n = 1;

  bool operator==(const AggregationTag&) const = default;
};

/// One model response after parsing. Only constructible through the factories,
/// which enforce: Ok records carry a confidence in [0,1] and an answer;
/// VerbDistrib Ok records carry a distribution whose argmax is the answer;
/// FormatError records carry neither.
class PredictionRecord {
 public:
  static PredictionRecord ok(std::string question_id, Method method, std::string raw_text, std::string answer,
                             double confidence, std::optional<CandidateDistribution> distribution,
                             std::int64_t token_usage);
  static PredictionRecord format_error(std::string question_id, Method method, std::string raw_text,
                                       FormatReason reason, std::string detail, std::int64_t token_usage);
  static PredictionRecord from_outcome(std::string question_id, Method method, std::string raw_text,
                                       const ParseOutcome& outcome, std::int64_t token_usage);

  /// Copy with a correctness verdict. `gold_index` is the distribution entry
  /// matching the gold answer, if any.
  PredictionRecord with_verdict(bool correct, std::optional<std::size_t> gold_index = std::nullopt) const;
  PredictionRecord with_sample_index(int index) const;
  PredictionRecord with_aggregation(AggregationTag tag) const;

  const std::string& question_id() const { return question_id_; }
  const Method& method() const { return method_; }
  const std::string& raw_text() const { return raw_text_; }
  const std::optional<std::string>& answer() const { return answer_; }
  std::optional<double> confidence() const { return confidence_; }
  const std::optional<CandidateDistribution>& distribution() const { return distribution_; }
  std::int64_t token_usage() const { return token_usage_; }
  std::optional<bool> correct() const { return correct_; }
  std::optional<std::size_t> gold_index() const { return gold_index_; }
  bool is_ok() const { return !format_reason_.has_value(); }
  std::optional<FormatReason> format_reason() const { return format_reason_; }
  const std::string& format_detail() const { return format_detail_; }
  int sample_index() const { return sample_index_; }
  const std::optional<AggregationTag>& aggregation() const { return aggregation_; }

  bool operator==(const PredictionRecord&) const = default;

 private:
  PredictionRecord() = default;

  std::string question_id_;
  Method method_;
  std::string raw_text_;
  std::optional<std::string> answer_;
  std::optional<double> confidence_;
  std::optional<CandidateDistribution> distribution_;
  std::int64_t token_usage_ = 0;
  std::optional<bool> correct_;
  std::optional<std::size_t> gold_index_;
  std::optional<FormatReason> format_reason_;
  std::string format_detail_;
  int sample_index_ = 0;
  std::optional<AggregationTag> aggregation_;
};

/// Serialize a record as one JSONL line (no trailing newline).
std::string record_to_json_line(const PredictionRecord& record);
/// Inverse of record_to_json_line; re-validates every invariant.
PredictionRecord record_from_json_line(std::string_view line);

}  // namespace verbcal
