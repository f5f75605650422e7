#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "verbcal/client.hpp"
#include "verbcal/model.hpp"
#include "verbcal/parse.hpp"
#include "verbcal/prompt.hpp"

namespace verbcal {

/// Multiple choice: the answer names the gold option by label or full text.
/// Open: canonicalized string equality with the gold answer.
bool exact_match(const QuestionInstance& q, std::string_view answer);

/// Exact-match verdict for an Ok record on a multiple-choice question.
bool judge_exact(const QuestionInstance& q, const PredictionRecord& record);

/// Index of the distribution entry that names the gold answer.
std::optional<std::size_t> gold_entry_index(const QuestionInstance& q, const CandidateDistribution& dist);

/// Verdicts keyed by (question id, hash of the canonicalized answer). Safe to
/// share across threads; the first verdict stored for a key wins.
class VerdictCache {
 public:
  VerdictCache() = default;
  /// Load `path` if it exists and append new verdicts to it. With `deferred`,
  /// new verdicts reach the file only through flush(), so a caller can order
  /// the writes.
  explicit VerdictCache(const std::filesystem::path& path, bool deferred = false);

  std::optional<bool> lookup(std::string_view question_id, std::string_view answer) const;
  /// Returns false, leaving the stored verdict untouched, if the key exists.
  bool insert(std::string_view question_id, std::string_view answer, bool verdict);
  std::size_t size() const;
  /// Write the held-back verdicts for one question.
  void flush(std::string_view question_id);

  static std::string answer_key(std::string_view answer);

 private:
  mutable std::mutex mutex_;
  std::map<std::pair<std::string, std::string>, bool> verdicts_;
  std::optional<std::ofstream> sink_;
  bool deferred_ = false;
  std::map<std::string, std::vector<std::string>, std::less<>> pending_;  // by question id
};

struct RubricTrace {
  std::string method;  // e.g. "VerbConf"
  std::string text;
};

struct RubricResult {
  std::string question_id;
  RubricAssignment assignment;
  std::map<std::string, RubricTriple, std::less<>> scores;  // by method
  std::string raw_reply;
};

/// LLM-as-a-judge over a client. Correctness calls run at temperature 0.
class Judge {
 public:
  Judge(Client& client, VerdictCache& cache, const PromptTemplates& templates = PromptTemplates::defaults());

  /// Open question, Ok record. Reprompts once on an unparseable reply, then
  /// throws UnparseableVerdict.
  bool judge_correctness(const QuestionInstance& q, const PredictionRecord& record);

  /// Scores three traces on the rubric under a seeded A/B/C shuffle and maps
  /// the scores back to method names. Retries once on a malformed reply.
  RubricResult score_rubric(std::string_view question_id, std::span<const RubricTrace> traces, std::uint64_t seed);

 private:
  Client& client_;
  VerdictCache& cache_;
  const PromptTemplates& templates_;
};

/// Attach a verdict to an Ok record: exact match for multiple choice, the
/// judge for open questions (exact match when `judge` is null). FormatError
/// records are returned marked incorrect.
PredictionRecord assign_verdict(const QuestionInstance& q, const PredictionRecord& record, Judge* judge);

}  // namespace verbcal
