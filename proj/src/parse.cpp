#include "verbcal/parse.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <vector>

#include "verbcal/prompt.hpp"

namespace verbcal {

namespace {

using json = nlohmann::json;

// End (exclusive) of the bracketed value starting at `start`, honouring
// strings and escapes. npos when brackets do not balance.
std::size_t balanced_end(std::string_view text, std::size_t start) {
  std::vector<char> stack;
  bool in_string = false;
  bool escaped = false;
  for (std::size_t i = start; i < text.size(); ++i) {
    const char c = text[i];
    if (in_string) {
      if (escaped) {
        escaped = false;
      } else if (c == '\\') {
        escaped = true;
      } else if (c == '"') {
        in_string = false;
      }
      continue;
    }
    switch (c) {
      case '"':
        in_string = true;
        break;
      case '{':
        stack.push_back('}');
        break;
      case '[':
        stack.push_back(']');
        break;
      case '}':
      case ']':
        if (stack.empty() || stack.back() != c) return std::string_view::npos;
        stack.pop_back();
        if (stack.empty()) return i + 1;
        break;
      default:
        break;
    }
  }
  return std::string_view::npos;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

enum class ValueError { None, Schema, Range };

// Confidence given as a number, a numeric string, or a percentage string.
ValueError read_probability(const json& v, double& out) {
  if (v.is_number()) {
    out = v.get<double>();
  } else if (v.is_string()) {
    auto s = trim(v.get_ref<const std::string&>());
    double scale = 1.0;
    if (!s.empty() && s.back() == '%') {
      s.remove_suffix(1);
      s = trim(s);
      scale = 0.01;
    }
    if (s.empty()) return ValueError::Schema;
    if (s.front() == '+') s.remove_prefix(1);
    const auto* first = s.data();
    const auto* last = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(first, last, out);
    if (ec == std::errc::result_out_of_range) return ValueError::Range;
    if (ec != std::errc() || ptr != last) return ValueError::Schema;
    out *= scale;
  } else {
    return ValueError::Schema;
  }
  if (!std::isfinite(out) || out < 0.0 || out > 1.0) return ValueError::Range;
  return ValueError::None;
}

// Answer text from a string or number.
std::optional<std::string> read_answer(const json& v) {
  std::string s;
  if (v.is_string()) {
    s = std::string(trim(v.get_ref<const std::string&>()));
  } else if (v.is_number()) {
    s = v.dump();
  } else {
    return std::nullopt;
  }
  if (canonicalize_answer(s).empty()) return std::nullopt;
  return s;
}

const json* find_key(const json& obj, std::initializer_list<std::string_view> keys) {
  for (const auto k : keys) {
    const auto it = obj.find(k);
    if (it != obj.end()) return &*it;
  }
  return nullptr;
}

struct RawEntry {
  std::string text;
  double probability;
};

// Shared entry reader for top-k and distribution arrays.
std::optional<ParseOutcome> read_entries(const json& value, std::vector<RawEntry>& out) {
  if (!value.is_array()) return ParseOutcome::format_error(FormatReason::BadSchema, "expected a JSON array");
  for (std::size_t i = 0; i < value.size(); ++i) {
    const auto& e = value[i];
    const auto where = "entry " + std::to_string(i);
    if (!e.is_object()) return ParseOutcome::format_error(FormatReason::BadSchema, where + " is not an object");
    const auto* cand = find_key(e, {"candidate", "option"});
    const auto* conf = find_key(e, {"confidence", "probability"});
    if (cand == nullptr || conf == nullptr) {
      return ParseOutcome::format_error(FormatReason::BadSchema, where + " lacks candidate/confidence");
    }
    auto text = read_answer(*cand);
    if (!text) return ParseOutcome::format_error(FormatReason::BadSchema, where + " has an empty candidate");
    double p = 0.0;
    switch (read_probability(*conf, p)) {
      case ValueError::Schema:
        return ParseOutcome::format_error(FormatReason::BadSchema, where + " confidence is not numeric");
      case ValueError::Range:
        return ParseOutcome::format_error(FormatReason::OutOfRange, where + " confidence outside [0,1]");
      case ValueError::None:
        break;
    }
    out.push_back({std::move(*text), p});
  }
  return std::nullopt;
}

}  // namespace

// ---------------------------------------------------------------------------

std::optional<json> try_extract_json(std::string_view raw_text) {
  std::optional<json> last;
  std::size_t i = 0;
  while (i < raw_text.size()) {
    const char c = raw_text[i];
    if (c != '{' && c != '[') {
      ++i;
      continue;
    }
    const auto end = balanced_end(raw_text, i);
    if (end != std::string_view::npos) {
      auto value = json::parse(raw_text.substr(i, end - i), nullptr, false);
      if (!value.is_discarded()) {
        last = std::move(value);
        i = end;
        continue;
      }
    }
    ++i;
  }
  return last;
}

json extract_json(std::string_view raw_text) {
  auto v = try_extract_json(raw_text);
  if (!v) throw Error(ErrorCode::NoJson, "no JSON object or array in completion");
  return std::move(*v);
}

ParseOutcome parse_verbalized_confidence(std::string_view raw_text) {
  auto value = try_extract_json(raw_text);
  if (!value) return ParseOutcome::format_error(FormatReason::NoJson);
  if (!value->is_object()) return ParseOutcome::format_error(FormatReason::BadSchema, "expected a JSON object");
  const auto* ans = find_key(*value, {"final_answer"});
  const auto* conf = find_key(*value, {"confidence"});
  if (ans == nullptr || conf == nullptr) {
    return ParseOutcome::format_error(FormatReason::BadSchema, "missing final_answer or confidence");
  }
  auto answer = read_answer(*ans);
  if (!answer) return ParseOutcome::format_error(FormatReason::BadSchema, "final_answer is empty or not text");
  double p = 0.0;
  switch (read_probability(*conf, p)) {
    case ValueError::Schema: return ParseOutcome::format_error(FormatReason::BadSchema, "confidence is not numeric");
    case ValueError::Range: return ParseOutcome::format_error(FormatReason::OutOfRange, "confidence outside [0,1]");
    case ValueError::None: break;
  }
  return ParseOutcome::ok({std::move(*answer), p, std::nullopt});
}

ParseOutcome parse_topk(std::string_view raw_text, int k) {
  if (k < 2) throw Error(ErrorCode::InvalidArgument, "top-k parsing needs k >= 2");
  auto value = try_extract_json(raw_text);
  if (!value) return ParseOutcome::format_error(FormatReason::NoJson);
  std::vector<RawEntry> raw;
  if (auto err = read_entries(*value, raw)) return *err;
  if (raw.size() < 2) return ParseOutcome::format_error(FormatReason::BadSchema, "fewer than 2 guesses");

  // Repeated guesses keep their highest confidence.
  std::vector<Candidate> merged;
  std::vector<std::string> keys;
  for (auto& e : raw) {
    auto key = canonicalize_answer(e.text);
    const auto it = std::find(keys.begin(), keys.end(), key);
    if (it == keys.end()) {
      keys.push_back(std::move(key));
      merged.push_back({std::move(e.text), e.probability});
    } else {
      auto& m = merged[static_cast<std::size_t>(it - keys.begin())];
      m.probability = std::max(m.probability, e.probability);
    }
  }
  CandidateDistribution dist(std::move(merged));
  const auto& best = dist.entries()[dist.argmax()];
  return ParseOutcome::ok({best.text, best.probability, std::move(dist)});
}

ParseOutcome parse_distribution(std::string_view raw_text, std::span<const AnswerOption> options, double tolerance) {
  auto value = try_extract_json(raw_text);
  if (!value) return ParseOutcome::format_error(FormatReason::NoJson);
  if (value->is_array() && value->empty()) return ParseOutcome::format_error(FormatReason::EmptyCandidates);
  std::vector<RawEntry> raw;
  if (auto err = read_entries(*value, raw)) return *err;

  const bool known = !options.empty();
  std::vector<Candidate> merged;
  std::vector<std::string> keys;
  for (auto& e : raw) {
    std::string text = std::move(e.text);
    if (known) {
      const AnswerOption* match = nullptr;
      const auto c = canonicalize_answer(text);
      for (const auto& o : options) {
        if (canonicalize_answer(o.label) == c) match = &o;
      }
      for (const auto& o : options) {
        if (match == nullptr && (canonicalize_answer(o.text) == c || canonicalize_answer(o.label + ". " + o.text) == c)) {
          match = &o;
        }
      }
      if (match == nullptr) {
        return ParseOutcome::format_error(FormatReason::BadSchema, "'" + text + "' is not an option");
      }
      text = match->label;
    }
    auto key = canonicalize_answer(text);
    const auto it = std::find(keys.begin(), keys.end(), key);
    if (it == keys.end()) {
      keys.push_back(std::move(key));
      merged.push_back({std::move(text), e.probability});
    } else {
      merged[static_cast<std::size_t>(it - keys.begin())].probability += e.probability;
    }
  }

  if (!known && std::none_of(keys.begin(), keys.end(), [](const std::string& k) { return k == "none of the above"; })) {
    return ParseOutcome::format_error(FormatReason::MissingNota);
  }

  double total = 0.0;
  for (const auto& m : merged) total += m.probability;
  if (!(std::abs(total - 1.0) <= tolerance) || total <= 0.0) {
    return ParseOutcome::format_error(FormatReason::SumViolation, "probabilities sum to " + std::to_string(total));
  }
  for (auto& m : merged) m.probability = std::min(1.0, m.probability / total);

  CandidateDistribution dist(std::move(merged));
  const auto& best = dist.entries()[dist.argmax()];
  return ParseOutcome::ok({best.text, best.probability, std::move(dist)});
}

ParseOutcome parse_verbalized(const Method& method, std::string_view raw_text, std::span<const AnswerOption> options) {
  switch (method.kind) {
    case MethodKind::VerbConf: return parse_verbalized_confidence(raw_text);
    case MethodKind::VerbTopK: return parse_topk(raw_text, method.k);
    case MethodKind::VerbDistrib: return parse_distribution(raw_text, options);
    default: break;
  }
  throw Error(ErrorCode::InvalidArgument, method.name() + " is not a verbalized method");
}

std::string distribution_to_json(const CandidateDistribution& dist) {
  json arr = json::array();
  for (const auto& e : dist.entries()) {
    json obj = json::object();
    obj["candidate"] = e.text;
    obj["confidence"] = e.probability;
    arr.push_back(std::move(obj));
  }
  return arr.dump(2);
}

// ---------------------------------------------------------------------------
// Logprob-based scores

double parse_ptrue_logprobs(const ModelResponse& response) {
  if (!response.token_logprobs || response.token_logprobs->empty()) {
    throw Error(ErrorCode::MissingLogprobs, "p(True) needs first-token logprobs");
  }
  const auto& first = response.token_logprobs->front();
  std::vector<TokenAlternative> alternatives = first.top;
  if (alternatives.empty()) alternatives.push_back({first.token, first.logprob});
  double p = 0.0;
  for (const auto& alt : alternatives) {
    if (lower(trim(alt.token)) == "true") p += std::exp(alt.logprob);
  }
  return std::clamp(p, 0.0, 1.0);
}

std::optional<CharSpan> locate_final_answer(std::string_view raw_text) {
  static constexpr std::string_view kMarker = "final answer:";
  const auto haystack = lower(raw_text);
  const auto at = haystack.rfind(kMarker);
  if (at == std::string::npos) return std::nullopt;
  std::size_t begin = at + kMarker.size();
  std::size_t end = raw_text.find('\n', begin);
  if (end == std::string_view::npos) end = raw_text.size();
  while (begin < end && (raw_text[begin] == ' ' || raw_text[begin] == '\t' || raw_text[begin] == '*')) ++begin;
  while (end > begin && (std::isspace(static_cast<unsigned char>(raw_text[end - 1])) || raw_text[end - 1] == '*')) --end;
  if (begin == end) return std::nullopt;
  return CharSpan{begin, end};
}

double parse_logit_confidence(const ModelResponse& response, CharSpan span) {
  if (!response.token_logprobs || response.token_logprobs->empty()) {
    throw Error(ErrorCode::MissingLogprobs, "Logit confidence needs token logprobs");
  }
  double sum = 0.0;
  bool any = false;
  for (const auto& t : *response.token_logprobs) {
    if (t.token.empty()) continue;
    if (t.offset < span.end && t.offset + t.token.size() > span.begin) {
      sum += t.logprob;
      any = true;
    }
  }
  if (!any) throw Error(ErrorCode::SpanNotFound, "no token overlaps the answer span");
  return std::clamp(std::exp(sum), 0.0, 1.0);
}

ParseOutcome parse_logit_response(const ModelResponse& response) {
  const auto span = locate_final_answer(response.raw_text);
  if (!span) return ParseOutcome::format_error(FormatReason::SpanNotFound, "no 'Final answer:' line");
  try {
    const double conf = parse_logit_confidence(response, *span);
    return ParseOutcome::ok({response.raw_text.substr(span->begin, span->end - span->begin), conf, std::nullopt});
  } catch (const Error& e) {
    const auto reason = e.code() == ErrorCode::MissingLogprobs ? FormatReason::MissingLogprobs : FormatReason::SpanNotFound;
    return ParseOutcome::format_error(reason, e.what());
  }
}

bool parse_judge_reply(std::string_view raw_text) {
  auto s = raw_text;
  while (!s.empty() && (std::isspace(static_cast<unsigned char>(s.front())) ||
                        std::string_view("*\"'`(").find(s.front()) != std::string_view::npos)) {
    s.remove_prefix(1);
  }
  const auto word_ends = [&](std::size_t n) {
    return s.size() == n || !std::isalnum(static_cast<unsigned char>(s[n]));
  };
  const auto head = lower(s.substr(0, 3));
  if (head == "yes" && word_ends(3)) return true;
  if (head.starts_with("no") && word_ends(2)) return false;
  throw Error(ErrorCode::UnparseableVerdict, "judge reply '" + std::string(raw_text.substr(0, 80)) + "'");
}

RubricScores parse_rubric_reply(std::string_view raw_text) {
  const auto value = extract_json(raw_text);
  if (!value.is_object()) throw Error(ErrorCode::BadSchema, "rubric reply is not a JSON object");
  RubricScores scores;
  for (const auto label : kRubricLabels) {
    const auto it = value.find(label);
    if (it == value.end() || !it->is_object()) {
      throw Error(ErrorCode::BadSchema, "rubric reply lacks '" + std::string(label) + "'");
    }
    RubricTriple triple{};
    for (std::size_t c = 0; c < kRubricCriteria.size(); ++c) {
      const auto field = it->find(kRubricCriteria[c]);
      if (field == it->end()) {
        throw Error(ErrorCode::BadSchema, std::string(label) + " lacks '" + std::string(kRubricCriteria[c]) + "'");
      }
      double v = 0.0;
      if (field->is_number()) {
        v = field->get<double>();
      } else if (field->is_string()) {
        const auto s = trim(field->get_ref<const std::string&>());
        auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc() || ptr != s.data() + s.size()) {
          throw Error(ErrorCode::BadSchema, std::string(label) + " score is not numeric");
        }
      } else {
        throw Error(ErrorCode::BadSchema, std::string(label) + " score is not numeric");
      }
      if (v != std::floor(v)) throw Error(ErrorCode::BadSchema, std::string(label) + " score is not an integer");
      if (v < 1.0 || v > 5.0) throw Error(ErrorCode::OutOfRange, std::string(label) + " score outside 1..5");
      triple[c] = static_cast<int>(v);
    }
    scores.emplace(std::string(label), triple);
  }
  return scores;
}

}  // namespace verbcal
