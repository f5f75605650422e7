#include "verbcal/judge.hpp"

#include <json.hpp>

#include "verbcal/hash.hpp"

namespace verbcal {

namespace {

constexpr std::string_view kJudgeReminder = "\n\nAnswer with a single word: \"yes\" or \"no\".";
constexpr std::string_view kRubricReminder =
    "\n\nYour previous reply could not be read. Return only the JSON object with integer scores from 1 to 5.";

}  // namespace

bool exact_match(const QuestionInstance& q, std::string_view answer) {
  if (q.is_known()) {
    const auto* o = q.find_option(answer);
    return o != nullptr && o->label == q.gold();
  }
  return canonicalize_answer(answer) == canonicalize_answer(q.gold());
}

bool judge_exact(const QuestionInstance& q, const PredictionRecord& record) {
  if (!q.is_known()) throw Error(ErrorCode::InvalidArgument, "exact judging needs a multiple-choice question");
  return record.answer() && exact_match(q, *record.answer());
}

std::optional<std::size_t> gold_entry_index(const QuestionInstance& q, const CandidateDistribution& dist) {
  const auto entries = dist.entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (exact_match(q, entries[i].text)) return i;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------

VerdictCache::VerdictCache(const std::filesystem::path& path, bool deferred) : deferred_(deferred) {
  if (std::ifstream in(path); in) {
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
      ++n;
      if (line.empty()) continue;
      const auto j = nlohmann::json::parse(line, nullptr, false);
      if (j.is_discarded() || !j.contains("question_id") || !j.contains("answer_hash") || !j.contains("verdict")) {
        throw Error(ErrorCode::SchemaError, path.string() + " line " + std::to_string(n) + ": bad verdict entry");
      }
      verdicts_.emplace(std::pair{j["question_id"].get<std::string>(), j["answer_hash"].get<std::string>()},
                        j["verdict"].get<bool>());
    }
  }
  sink_.emplace(path, std::ios::app | std::ios::binary);
  if (!*sink_) throw Error(ErrorCode::IoError, "cannot open verdict cache " + path.string());
}

std::string VerdictCache::answer_key(std::string_view answer) { return hex64(fnv1a64(canonicalize_answer(answer))); }

std::optional<bool> VerdictCache::lookup(std::string_view question_id, std::string_view answer) const {
  std::lock_guard lock(mutex_);
  const auto it = verdicts_.find({std::string(question_id), answer_key(answer)});
  if (it == verdicts_.end()) return std::nullopt;
  return it->second;
}

bool VerdictCache::insert(std::string_view question_id, std::string_view answer, bool verdict) {
  auto key = std::pair{std::string(question_id), answer_key(answer)};
  std::lock_guard lock(mutex_);
  const auto [it, inserted] = verdicts_.emplace(key, verdict);
  if (inserted && sink_) {
    nlohmann::ordered_json j;
    j["question_id"] = key.first;
    j["answer_hash"] = key.second;
    j["verdict"] = verdict;
    if (deferred_) {
      pending_[key.first].push_back(j.dump());
    } else {
      *sink_ << j.dump() << '\n';
      sink_->flush();
    }
  }
  return inserted;
}

void VerdictCache::flush(std::string_view question_id) {
  std::lock_guard lock(mutex_);
  const auto it = pending_.find(question_id);
  if (it == pending_.end()) return;
  for (const auto& line : it->second) *sink_ << line << '\n';
  sink_->flush();
  pending_.erase(it);
}

std::size_t VerdictCache::size() const {
  std::lock_guard lock(mutex_);
  return verdicts_.size();
}

// ---------------------------------------------------------------------------

Judge::Judge(Client& client, VerdictCache& cache, const PromptTemplates& templates)
    : client_(client), cache_(cache), templates_(templates) {}

bool Judge::judge_correctness(const QuestionInstance& q, const PredictionRecord& record) {
  if (q.is_known()) throw Error(ErrorCode::InvalidArgument, "LLM judging is for open questions");
  if (!record.is_ok() || !record.answer()) {
    throw Error(ErrorCode::InvalidArgument, "cannot judge a record without an answer");
  }
  const auto& answer = *record.answer();
  if (const auto hit = cache_.lookup(q.id(), answer)) return *hit;

  auto bundle = build_judge_prompt(q, answer, templates_);
  RequestOptions options;
  options.temperature = 0.0;
  for (int attempt = 0;; ++attempt) {
    const auto reply = client_.complete(bundle, options);
    try {
      const bool verdict = parse_judge_reply(reply.raw_text);
      cache_.insert(q.id(), answer, verdict);
      return verdict;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::UnparseableVerdict || attempt >= 1) {
        throw Error(e.code(), "question " + q.id() + ": " + e.what());
      }
      bundle.user += kJudgeReminder;
    }
  }
}

RubricResult Judge::score_rubric(std::string_view question_id, std::span<const RubricTrace> traces,
                                 std::uint64_t seed) {
  if (traces.size() != 3) {
    throw Error(ErrorCode::WrongArity, "rubric scoring needs exactly 3 traces, got " + std::to_string(traces.size()));
  }
  if (traces[0].method == traces[1].method || traces[0].method == traces[2].method ||
      traces[1].method == traces[2].method) {
    throw Error(ErrorCode::InvalidArgument, "rubric traces need three distinct method names");
  }
  RubricResult result;
  result.question_id = std::string(question_id);
  result.assignment = shuffle_rubric_labels(seed);
  std::vector<std::string> ordered;
  for (const auto t : result.assignment.slot_to_trace) ordered.push_back(traces[t].text);
  auto bundle = build_rubric_prompt(ordered, templates_);
  bundle.question_id = std::string(question_id);

  RequestOptions options;
  options.temperature = 0.0;
  for (int attempt = 0;; ++attempt) {
    const auto reply = client_.complete(bundle, options);
    try {
      const auto scores = parse_rubric_reply(reply.raw_text);
      for (std::size_t slot = 0; slot < kRubricLabels.size(); ++slot) {
        const auto it = scores.find(kRubricLabels[slot]);
        if (it == scores.end()) {
          throw Error(ErrorCode::BadSchema, "missing scores for " + std::string(kRubricLabels[slot]));
        }
        result.scores[traces[result.assignment.slot_to_trace[slot]].method] = it->second;
      }
      result.raw_reply = reply.raw_text;
      return result;
    } catch (const Error& e) {
      if (attempt >= 1) throw Error(e.code(), "question " + result.question_id + ": " + e.what());
      bundle.user += kRubricReminder;
    }
  }
}

PredictionRecord assign_verdict(const QuestionInstance& q, const PredictionRecord& record, Judge* judge) {
  if (!record.is_ok()) return record.with_verdict(false);
  std::optional<std::size_t> gold_index;
  if (record.distribution()) gold_index = gold_entry_index(q, *record.distribution());
  bool correct = false;
  if (q.is_known()) {
    correct = judge_exact(q, record);
  } else if (judge != nullptr) {
    correct = judge->judge_correctness(q, record);
  } else {
    correct = exact_match(q, *record.answer());
  }
  return record.with_verdict(correct, gold_index);
}

}  // namespace verbcal
