#include "verbcal/model.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include <json.hpp>

namespace verbcal {

namespace {

bool is_space(unsigned char c) { return std::isspace(c) != 0; }

// ASCII punctuation only; UTF-8 continuation bytes are left alone.
bool is_strippable(unsigned char c) { return is_space(c) || (c < 0x80 && std::ispunct(c) != 0); }

bool finite_unit(double p) { return std::isfinite(p) && p >= 0.0 && p <= 1.0; }

}  // namespace

std::string canonicalize_answer(std::string_view text) {
  std::size_t begin = 0;
  std::size_t end = text.size();
  while (begin < end && is_strippable(static_cast<unsigned char>(text[begin]))) ++begin;
  while (end > begin && is_strippable(static_cast<unsigned char>(text[end - 1]))) --end;

  std::string out;
  out.reserve(end - begin);
  bool pending_space = false;
  for (std::size_t i = begin; i < end; ++i) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (is_space(c)) {
      pending_space = true;
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : static_cast<char>(c));
  }
  return out;
}

bool is_nota(std::string_view candidate) { return canonicalize_answer(candidate) == "none of the above"; }

// ---------------------------------------------------------------------------
// QuestionInstance

QuestionInstance QuestionInstance::known(std::string id, std::string question, std::vector<std::string> options,
                                         std::string_view gold) {
  if (id.empty()) throw Error(ErrorCode::InvalidArgument, "question id is empty");
  if (question.empty()) throw Error(ErrorCode::InvalidArgument, "question text is empty for " + id);
  if (options.empty()) throw Error(ErrorCode::InvalidArgument, "known answer space without options for " + id);
  if (options.size() > 26) throw Error(ErrorCode::InvalidArgument, "more than 26 options for " + id);

  QuestionInstance q;
  q.id_ = std::move(id);
  q.question_ = std::move(question);
  for (std::size_t i = 0; i < options.size(); ++i) {
    q.options_.push_back({std::string(1, static_cast<char>('A' + i)), std::move(options[i])});
  }
  if (canonicalize_answer(gold).empty()) throw Error(ErrorCode::InvalidArgument, "gold is empty for " + q.id_);
  // Label first so that an option whose text is a single letter cannot shadow it.
  const AnswerOption* match = nullptr;
  const auto cg = canonicalize_answer(gold);
  for (const auto& o : q.options_) {
    if (canonicalize_answer(o.label) == cg) match = &o;
  }
  if (match == nullptr) match = q.find_option(gold);
  if (match == nullptr) {
    throw Error(ErrorCode::InvalidArgument, "gold '" + std::string(gold) + "' matches no option of " + q.id_);
  }
  q.gold_ = match->label;
  return q;
}

QuestionInstance QuestionInstance::open(std::string id, std::string question, std::string gold) {
  if (id.empty()) throw Error(ErrorCode::InvalidArgument, "question id is empty");
  if (question.empty()) throw Error(ErrorCode::InvalidArgument, "question text is empty for " + id);
  if (canonicalize_answer(gold).empty()) throw Error(ErrorCode::InvalidArgument, "gold is empty for " + id);
  QuestionInstance q;
  q.id_ = std::move(id);
  q.question_ = std::move(question);
  q.gold_ = std::move(gold);
  return q;
}

const AnswerOption* QuestionInstance::gold_option() const {
  for (const auto& o : options_) {
    if (o.label == gold_) return &o;
  }
  return nullptr;
}

const AnswerOption* QuestionInstance::find_option(std::string_view candidate) const {
  const auto c = canonicalize_answer(candidate);
  if (c.empty()) return nullptr;
  for (const auto& o : options_) {
    if (canonicalize_answer(o.label) == c) return &o;
  }
  for (const auto& o : options_) {
    if (canonicalize_answer(o.text) == c) return &o;
  }
  // "B. Paris" style answers.
  for (const auto& o : options_) {
    if (canonicalize_answer(o.label + ". " + o.text) == c) return &o;
  }
  return nullptr;
}

// ---------------------------------------------------------------------------
// ModelResponse

void ModelResponse::validate() const {
  if (token_usage < 0) throw Error(ErrorCode::InvalidArgument, "negative token usage");
  if (!token_logprobs) return;
  std::size_t last = 0;
  for (const auto& t : *token_logprobs) {
    if (!std::isfinite(t.logprob) || t.logprob > 0.0) {
      throw Error(ErrorCode::InvalidArgument, "logprob out of range for token '" + t.token + "'");
    }
    if (t.offset < last) throw Error(ErrorCode::InvalidArgument, "token offsets decrease");
    last = t.offset;
  }
}

// ---------------------------------------------------------------------------
// Method

Method Method::verb_topk(int k) {
  if (k < 2) throw Error(ErrorCode::InvalidArgument, "VerbTopK needs k >= 2");
  return {MethodKind::VerbTopK, k};
}

std::string Method::name() const {
  switch (kind) {
    case MethodKind::Logit: return "Logit";
    case MethodKind::PTrue: return "PTrue";
    case MethodKind::VerbConf: return "VerbConf";
    case MethodKind::VerbTopK: return "VerbTopK(" + std::to_string(k) + ")";
    case MethodKind::VerbDistrib: return "VerbDistrib";
  }
  return "?";
}

Method Method::parse(std::string_view name) {
  if (name == "Logit") return logit();
  if (name == "PTrue") return ptrue();
  if (name == "VerbConf") return verb_conf();
  if (name == "VerbDistrib") return verb_distrib();
  if (name == "VerbTopK") return verb_topk(2);
  if (name.starts_with("VerbTopK(") && name.ends_with(")")) {
    const auto digits = name.substr(9, name.size() - 10);
    if (!digits.empty() && std::all_of(digits.begin(), digits.end(), [](char c) { return std::isdigit(c); })) {
      return verb_topk(std::stoi(std::string(digits)));
    }
  }
  throw Error(ErrorCode::InvalidArgument, "unknown method '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// CandidateDistribution

CandidateDistribution::CandidateDistribution(std::vector<Candidate> entries) : entries_(std::move(entries)) {
  std::unordered_set<std::string> seen;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& e = entries_[i];
    if (!finite_unit(e.probability)) {
      throw Error(ErrorCode::InvalidArgument, "probability outside [0,1] for '" + e.text + "'");
    }
    auto c = canonicalize_answer(e.text);
    if (c.empty()) throw Error(ErrorCode::InvalidArgument, "empty candidate");
    if (!seen.insert(c).second) throw Error(ErrorCode::InvalidArgument, "duplicate candidate '" + e.text + "'");
    if (c == "none of the above") nota_index_ = i;
  }
}

std::size_t CandidateDistribution::argmax() const {
  if (entries_.empty()) throw Error(ErrorCode::InvalidArgument, "argmax of empty distribution");
  std::size_t best = 0;
  for (std::size_t i = 1; i < entries_.size(); ++i) {
    if (entries_[i].probability > entries_[best].probability) best = i;
  }
  return best;
}

double CandidateDistribution::sum() const {
  return std::accumulate(entries_.begin(), entries_.end(), 0.0,
                         [](double acc, const Candidate& c) { return acc + c.probability; });
}

std::optional<std::size_t> CandidateDistribution::find(std::string_view text) const {
  const auto c = canonicalize_answer(text);
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (canonicalize_answer(entries_[i].text) == c) return i;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// FormatReason / ParseOutcome

std::string_view to_string(FormatReason reason) {
  switch (reason) {
    case FormatReason::NoJson: return "NoJson";
    case FormatReason::BadSchema: return "BadSchema";
    case FormatReason::OutOfRange: return "OutOfRange";
    case FormatReason::SumViolation: return "SumViolation";
    case FormatReason::EmptyCandidates: return "EmptyCandidates";
    case FormatReason::MissingNota: return "MissingNota";
    case FormatReason::MissingLogprobs: return "MissingLogprobs";
    case FormatReason::SpanNotFound: return "SpanNotFound";
    case FormatReason::ClientFailure: return "ClientFailure";
  }
  return "?";
}

FormatReason parse_format_reason(std::string_view name) {
  for (auto r : kAllFormatReasons) {
    if (to_string(r) == name) return r;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown format reason '" + std::string(name) + "'");
}

ParseOutcome ParseOutcome::ok(ParsedAnswer payload) {
  if (!finite_unit(payload.confidence)) throw Error(ErrorCode::InvalidArgument, "confidence outside [0,1]");
  ParseOutcome out;
  out.payload_ = std::move(payload);
  return out;
}

ParseOutcome ParseOutcome::format_error(FormatReason reason, std::string detail) {
  ParseOutcome out;
  out.reason_ = reason;
  out.detail_ = std::move(detail);
  return out;
}

const ParsedAnswer& ParseOutcome::payload() const {
  if (!payload_) throw Error(ErrorCode::InvalidArgument, "payload of a FormatError outcome");
  return *payload_;
}

// ---------------------------------------------------------------------------
// PredictionRecord

PredictionRecord PredictionRecord::ok(std::string question_id, Method method, std::string raw_text,
                                      std::string answer, double confidence,
                                      std::optional<CandidateDistribution> distribution, std::int64_t token_usage) {
  if (!finite_unit(confidence)) throw Error(ErrorCode::InvalidArgument, "confidence outside [0,1]");
  if (token_usage < 0) throw Error(ErrorCode::InvalidArgument, "negative token usage");
  if (method.kind == MethodKind::VerbDistrib) {
    if (!distribution || distribution->size() == 0) {
      throw Error(ErrorCode::InvalidArgument, "VerbDistrib record without distribution");
    }
    const auto& top = distribution->entries()[distribution->argmax()];
    if (canonicalize_answer(top.text) != canonicalize_answer(answer)) {
      throw Error(ErrorCode::InvalidArgument, "answer is not the distribution argmax");
    }
  }
  PredictionRecord r;
  r.question_id_ = std::move(question_id);
  r.method_ = method;
  r.raw_text_ = std::move(raw_text);
  r.answer_ = std::move(answer);
  r.confidence_ = confidence;
  r.distribution_ = std::move(distribution);
  r.token_usage_ = token_usage;
  return r;
}

PredictionRecord PredictionRecord::format_error(std::string question_id, Method method, std::string raw_text,
                                                FormatReason reason, std::string detail,
                                                std::int64_t token_usage) {
  if (token_usage < 0) throw Error(ErrorCode::InvalidArgument, "negative token usage");
  PredictionRecord r;
  r.question_id_ = std::move(question_id);
  r.method_ = method;
  r.raw_text_ = std::move(raw_text);
  r.token_usage_ = token_usage;
  r.format_reason_ = reason;
  r.format_detail_ = std::move(detail);
  return r;
}

PredictionRecord PredictionRecord::from_outcome(std::string question_id, Method method, std::string raw_text,
                                                const ParseOutcome& outcome, std::int64_t token_usage) {
  if (!outcome.is_ok()) {
    return format_error(std::move(question_id), method, std::move(raw_text), *outcome.reason(), outcome.detail(),
                        token_usage);
  }
  const auto& p = outcome.payload();
  return ok(std::move(question_id), method, std::move(raw_text), p.answer, p.confidence, p.distribution,
            token_usage);
}

PredictionRecord PredictionRecord::with_verdict(bool correct, std::optional<std::size_t> gold_index) const {
  if (gold_index && (!distribution_ || *gold_index >= distribution_->size())) {
    throw Error(ErrorCode::InvalidArgument, "gold index outside distribution");
  }
  PredictionRecord r = *this;
  r.correct_ = correct;
  r.gold_index_ = gold_index;
  return r;
}

PredictionRecord PredictionRecord::with_sample_index(int index) const {
  if (index < 0) throw Error(ErrorCode::InvalidArgument, "negative sample index");
  PredictionRecord r = *this;
  r.sample_index_ = index;
  return r;
}

PredictionRecord PredictionRecord::with_aggregation(AggregationTag tag) const {
  if (tag.n < 1) throw Error(ErrorCode::InvalidArgument, "aggregation over fewer than one sample");
  PredictionRecord r = *this;
  r.aggregation_ = std::move(tag);
  return r;
}

// ---------------------------------------------------------------------------
// JSONL

std::string record_to_json_line(const PredictionRecord& record) {
  nlohmann::ordered_json j;
  j["question_id"] = record.question_id();
  j["method"] = record.method().name();
  j["raw_text"] = record.raw_text();
  j["answer"] = record.answer() ? nlohmann::ordered_json(*record.answer()) : nullptr;
  j["confidence"] = record.confidence() ? nlohmann::ordered_json(*record.confidence()) : nullptr;
  if (record.distribution()) {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& e : record.distribution()->entries()) {
      arr.push_back({{"candidate", e.text}, {"probability", e.probability}});
    }
    j["distribution"] = std::move(arr);
  } else {
    j["distribution"] = nullptr;
  }
  j["token_usage"] = record.token_usage();
  j["correct"] = record.correct() ? nlohmann::ordered_json(*record.correct()) : nullptr;
  j["parse_status"] =
      record.is_ok() ? std::string("Ok") : "FormatError(" + std::string(to_string(*record.format_reason())) + ")";
  if (!record.is_ok() && !record.format_detail().empty()) j["parse_detail"] = record.format_detail();
  j["sample_index"] = record.sample_index();
  if (record.gold_index()) j["gold_index"] = *record.gold_index();
  if (record.aggregation()) {
    j["aggregation"] = {{"mode", record.aggregation()->mode}, {"n", record.aggregation()->n}};
  }
  return j.dump();
}

PredictionRecord record_from_json_line(std::string_view line) {
  const auto j = nlohmann::json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw Error(ErrorCode::SchemaError, "record line is not a JSON object");
  try {
    const auto method = Method::parse(j.at("method").get<std::string>());
    const auto status = j.at("parse_status").get<std::string>();
    const auto qid = j.at("question_id").get<std::string>();
    const auto raw = j.at("raw_text").get<std::string>();
    const auto tokens = j.at("token_usage").get<std::int64_t>();

    std::optional<PredictionRecord> rec;
    if (status == "Ok") {
      std::optional<CandidateDistribution> dist;
      if (j.contains("distribution") && !j["distribution"].is_null()) {
        std::vector<Candidate> entries;
        for (const auto& e : j["distribution"]) {
          entries.push_back({e.at("candidate").get<std::string>(), e.at("probability").get<double>()});
        }
        dist.emplace(std::move(entries));
      }
      rec = PredictionRecord::ok(qid, method, raw, j.at("answer").get<std::string>(),
                                 j.at("confidence").get<double>(), std::move(dist), tokens);
    } else if (status.starts_with("FormatError(") && status.ends_with(")")) {
      const auto reason = parse_format_reason(std::string_view(status).substr(12, status.size() - 13));
      rec = PredictionRecord::format_error(qid, method, raw, reason, j.value("parse_detail", std::string()), tokens);
    } else {
      throw Error(ErrorCode::SchemaError, "bad parse_status '" + status + "'");
    }

    if (j.contains("sample_index")) *rec = rec->with_sample_index(j["sample_index"].get<int>());
    if (j.contains("correct") && !j["correct"].is_null()) {
      std::optional<std::size_t> gold_index;
      if (j.contains("gold_index")) gold_index = j["gold_index"].get<std::size_t>();
      *rec = rec->with_verdict(j["correct"].get<bool>(), gold_index);
    }
    if (j.contains("aggregation")) {
      *rec = rec->with_aggregation({j["aggregation"].at("mode").get<std::string>(), j["aggregation"].at("n").get<int>()});
    }
    return *rec;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::SchemaError, std::string("record field: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::SchemaError) throw;
    throw Error(ErrorCode::SchemaError, e.what());
  }
}

}  // namespace verbcal
