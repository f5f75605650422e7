#include "verbcal/simulate.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <regex>

#include "verbcal/hash.hpp"
#include "verbcal/parse.hpp"

namespace verbcal {

namespace {

constexpr std::array<std::string_view, 12> kFiller = {
    "First, restate what the question is asking.",
    "The key facts point in a consistent direction.",
    "Consider the most common explanation before the rare ones.",
    "One alternative remains plausible but less likely.",
    "Check whether any assumption here could be wrong.",
    "The evidence for the leading answer is fairly direct.",
    "A competing reading of the question changes little.",
    "Weigh the strongest counterargument against the main line.",
    "Some details are missing, which leaves residual doubt.",
    "Eliminate the options that contradict the stated facts.",
    "Compare the remaining candidates on the decisive detail.",
    "Summarize the balance of evidence before answering.",
};

std::string shortest(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string json_string(std::string_view s) { return nlohmann::json(std::string(s)).dump(); }

std::size_t bounded(std::mt19937_64& rng, std::size_t n) { return static_cast<std::size_t>(uniform01(rng) * n) % n; }

std::string reasoning(std::mt19937_64& rng, std::size_t min_words) {
  std::string out;
  std::size_t words = 0;
  while (words < min_words) {
    const auto& s = kFiller[bounded(rng, kFiller.size())];
    if (!out.empty()) out += ' ';
    out += s;
    words += static_cast<std::size_t>(std::count(s.begin(), s.end(), ' ')) + 1;
  }
  return out;
}

std::int64_t count_words(std::string_view text) {
  std::int64_t n = 0;
  bool in_word = false;
  for (const char c : text) {
    const bool space = std::isspace(static_cast<unsigned char>(c)) != 0;
    if (!space && !in_word) ++n;
    in_word = !space;
  }
  return n;
}

std::size_t reasoning_length(const Method& m, std::mt19937_64& rng) {
  // Distribution prompts reason longest, confidence prompts shortest.
  std::size_t base = 60;
  switch (m.kind) {
    case MethodKind::VerbConf: base = 90; break;
    case MethodKind::VerbTopK: base = 140; break;
    case MethodKind::VerbDistrib: base = 210; break;
    default: break;
  }
  return base + bounded(rng, 40);
}

struct Draw {
  double confidence;
  bool correct;
};

Draw draw(const SimulatedModelSpec& spec, std::mt19937_64& rng, double floor_confidence = 0.0) {
  const double c = std::clamp(std::max(spec.confidence_sampler.draw(rng), floor_confidence), 0.0, 1.0);
  return {c, uniform01(rng) < spec.accuracy_given_confidence(c)};
}

std::string gold_answer(const QuestionInstance& q) { return q.gold(); }

// Distinct wrong answers, never equal to the gold or to each other.
std::vector<std::string> distractors(const QuestionInstance& q, const SimulatedModelSpec& spec, std::mt19937_64& rng,
                                     std::size_t count) {
  std::vector<std::string> pool;
  if (q.is_known()) {
    for (const auto& o : q.options()) {
      if (o.label != q.gold()) pool.push_back(o.label);
    }
  } else {
    const auto gold = canonicalize_answer(q.gold());
    for (const auto& v : spec.candidate_vocabulary) {
      const auto c = canonicalize_answer(v);
      if (c.empty() || c == gold || c == "none of the above") continue;
      if (std::none_of(pool.begin(), pool.end(), [&](const std::string& p) { return canonicalize_answer(p) == c; })) {
        pool.push_back(v);
      }
    }
  }
  for (std::size_t i = pool.size(); i > 1; --i) std::swap(pool[i - 1], pool[bounded(rng, i)]);
  std::size_t extra = 1;
  while (!q.is_known() && pool.size() < count) {
    auto name = "alternative " + std::to_string(extra++);
    if (canonicalize_answer(name) != canonicalize_answer(q.gold())) pool.push_back(std::move(name));
  }
  if (pool.size() > count) pool.resize(count);
  return pool;
}

std::string pick_answer(const QuestionInstance& q, const SimulatedModelSpec& spec, std::mt19937_64& rng, bool correct) {
  if (correct) return gold_answer(q);
  auto d = distractors(q, spec, rng, 1);
  return d.empty() ? gold_answer(q) : d.front();
}

std::string certainty_line(double c) { return "I am about " + shortest(c * 100.0) + "% sure."; }

std::optional<double> read_certainty(std::string_view text) {
  static const std::regex re(R"(I am about ([0-9.eE+-]+)% sure\.)");
  std::match_results<std::string_view::const_iterator> m;
  if (!std::regex_search(text.begin(), text.end(), m, re)) return std::nullopt;
  double v = 0.0;
  const auto s = m[1].str();
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc()) return std::nullopt;
  return std::clamp(v / 100.0, 0.0, 1.0);
}

bool simulated_match(const QuestionInstance& q, std::string_view prediction) {
  if (q.is_known()) {
    const auto* o = q.find_option(prediction);
    return o != nullptr && o->label == q.gold();
  }
  return canonicalize_answer(prediction) == canonicalize_answer(q.gold());
}

// Whitespace-prefixed word tokens, as BPE tokenizers tend to produce.
std::vector<TokenLogprob> tokenize(std::string_view text) {
  std::vector<TokenLogprob> tokens;
  std::size_t i = 0;
  while (i < text.size()) {
    const std::size_t start = i;
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    tokens.push_back({std::string(text.substr(start, i - start)), 0.0, start, {}});
  }
  return tokens;
}

ModelResponse respond_verbalized(const Method& method, const QuestionInstance& q, const SimulatedModelSpec& spec,
                                 std::mt19937_64& rng) {
  std::string text = reasoning(rng, reasoning_length(method, rng));
  switch (method.kind) {
    case MethodKind::VerbConf: {
      const auto d = draw(spec, rng);
      const auto answer = pick_answer(q, spec, rng, d.correct);
      text += "\n\n" + certainty_line(d.confidence) + "\n\n```json\n{\"final_answer\": " + json_string(answer) +
              ", \"confidence\": " + shortest(d.confidence) + "}\n```";
      break;
    }
    case MethodKind::VerbTopK: {
      const auto d = draw(spec, rng);
      const auto answer = pick_answer(q, spec, rng, d.correct);
      std::vector<std::string> others;
      for (auto& o : distractors(q, spec, rng, static_cast<std::size_t>(method.k))) {
        if (canonicalize_answer(o) != canonicalize_answer(answer)) others.push_back(std::move(o));
      }
      if (!d.correct && q.is_known() && others.size() < static_cast<std::size_t>(method.k)) {
        others.insert(others.begin(), q.gold());
      }
      if (others.empty()) others.push_back("alternative 1");
      others.resize(std::min<std::size_t>(others.size(), static_cast<std::size_t>(method.k - 1)));
      text += "\n\n" + certainty_line(d.confidence) + "\n\n[\n  {\"candidate\": " + json_string(answer) +
              ", \"confidence\": " + shortest(d.confidence) + "}";
      for (const auto& o : others) {
        text += ",\n  {\"candidate\": " + json_string(o) + ", \"confidence\": " + shortest(d.confidence * uniform01(rng)) + "}";
      }
      text += "\n]";
      break;
    }
    case MethodKind::VerbDistrib: {
      std::vector<std::pair<std::string, double>> entries;
      if (q.is_known()) {
        const auto n = static_cast<double>(q.options().size());
        const auto d = draw(spec, rng, 1.0 / n);
        const auto answer = pick_answer(q, spec, rng, d.correct);
        entries.emplace_back(answer, d.confidence);
        const double rest = q.options().size() > 1 ? (1.0 - d.confidence) / (n - 1.0) : 0.0;
        for (const auto& o : q.options()) {
          if (o.label != answer) entries.emplace_back(o.label, rest);
        }
        text += "\n\n" + certainty_line(d.confidence) + "\n\n[";
      } else {
        constexpr std::size_t kMaxEntries = 64;
        const auto d = draw(spec, rng, 1.0 / 60.0);
        const auto answer = pick_answer(q, spec, rng, d.correct);
        // Enough entries that every share of the remaining mass stays below c.
        const auto needed = static_cast<std::size_t>(std::ceil(1.0 / d.confidence)) + 1;
        const auto m = std::clamp<std::size_t>(needed, 3, kMaxEntries);
        const double rest = (1.0 - d.confidence) / static_cast<double>(m - 1);
        entries.emplace_back(answer, d.confidence);
        std::vector<std::string> others;
        for (auto& o : distractors(q, spec, rng, m)) {
          if (canonicalize_answer(o) != canonicalize_answer(answer)) others.push_back(std::move(o));
        }
        if (!d.correct) others.insert(others.begin(), q.gold());
        others.resize(m - 2);
        for (auto& o : others) entries.emplace_back(std::move(o), rest);
        entries.emplace_back(std::string(kNotaText), rest);
        text += "\n\n" + certainty_line(d.confidence) + "\n\n[";
      }
      for (std::size_t i = 0; i < entries.size(); ++i) {
        text += i == 0 ? "\n" : ",\n";
        text += "  {\"candidate\": " + json_string(entries[i].first) + ", \"confidence\": " + shortest(entries[i].second) + "}";
      }
      text += "\n]";
      break;
    }
    default:
      break;
  }
  return {text, count_words(text), std::nullopt, {}};
}

ModelResponse respond_logit(const PromptBundle& bundle, const QuestionInstance& q, const SimulatedModelSpec& spec,
                            std::mt19937_64& rng) {
  const auto d = draw(spec, rng, 1e-6);
  const auto answer = pick_answer(q, spec, rng, d.correct);
  const std::string text = reasoning(rng, reasoning_length(Method::logit(), rng)) + "\n" +
                           certainty_line(d.confidence) + "\nFinal answer: " + answer;
  ModelResponse r{text, 0, std::nullopt, {}};
  if (bundle.expects_logprobs) {
    auto tokens = tokenize(text);
    const auto span = locate_final_answer(text);
    std::size_t in_span = 0;
    for (const auto& t : tokens) {
      if (span && t.offset < span->end && t.offset + t.token.size() > span->begin) ++in_span;
    }
    for (auto& t : tokens) {
      const bool answer_token = span && t.offset < span->end && t.offset + t.token.size() > span->begin;
      t.logprob = answer_token ? std::log(d.confidence) / static_cast<double>(in_span) : -0.02;
    }
    r.token_usage = static_cast<std::int64_t>(tokens.size());
    r.token_logprobs = std::move(tokens);
  } else {
    r.token_usage = count_words(text);
  }
  return r;
}

ModelResponse respond_ptrue(const PromptBundle& bundle, const QuestionInstance& q, const SimulatedModelSpec& spec,
                            std::mt19937_64& rng) {
  const std::string subject = bundle.subject_response.value_or(bundle.user);
  double p = 0.0;
  if (const auto stated = read_certainty(subject)) {
    p = *stated;
  } else {
    const auto span = locate_final_answer(subject);
    const bool right = span && simulated_match(q, std::string_view(subject).substr(span->begin, span->end - span->begin));
    p = spec.confidence_sampler.draw(rng);
    if (!right) p *= 0.5;
  }
  p = std::clamp(p, 1e-9, 1.0 - 1e-9);
  const auto verdict = p >= 0.5 ? std::string("True") : std::string("False");
  TokenLogprob first{verdict, std::log(verdict == "True" ? p : 1.0 - p), 0,
                     {{"True", std::log(p)}, {"False", std::log1p(-p)}}};
  return {verdict, 1, std::vector<TokenLogprob>{first}, {}};
}

ModelResponse respond_judge(const PromptBundle& bundle, const QuestionInstance& q) {
  const auto prediction = bundle.subject_response.value_or("");
  return {simulated_match(q, prediction) ? "yes" : "no", 1, std::nullopt, {}};
}

ModelResponse respond_rubric(std::mt19937_64& rng) {
  nlohmann::ordered_json j;
  for (const auto label : kRubricLabels) {
    nlohmann::ordered_json scores;
    for (const auto criterion : kRubricCriteria) scores[std::string(criterion)] = 1 + static_cast<int>(bounded(rng, 5));
    j[std::string(label)] = std::move(scores);
  }
  const auto text = "Each process was read in turn.\n" + j.dump(2);
  return {text, count_words(text), std::nullopt, {}};
}

}  // namespace

// ---------------------------------------------------------------------------

PiecewiseLinear::PiecewiseLinear(std::vector<std::pair<double, double>> knots) : knots_(std::move(knots)) {
  if (knots_.empty()) throw Error(ErrorCode::InvalidArgument, "piecewise function without knots");
  std::sort(knots_.begin(), knots_.end());
  for (const auto& [x, y] : knots_) {
    if (!std::isfinite(x) || !std::isfinite(y) || y < 0.0 || y > 1.0) {
      throw Error(ErrorCode::InvalidArgument, "accuracy knots must map into [0,1]");
    }
  }
}

PiecewiseLinear PiecewiseLinear::identity() { return PiecewiseLinear({{0.0, 0.0}, {1.0, 1.0}}); }

PiecewiseLinear PiecewiseLinear::shifted(double shift) {
  if (shift <= 0.0 || shift >= 1.0) throw Error(ErrorCode::InvalidArgument, "shift must lie in (0,1)");
  return PiecewiseLinear({{0.0, 0.0}, {shift, 0.0}, {1.0, 1.0 - shift}});
}

PiecewiseLinear PiecewiseLinear::constant(double value) { return PiecewiseLinear({{0.0, value}, {1.0, value}}); }

double PiecewiseLinear::operator()(double x) const {
  if (x <= knots_.front().first) return knots_.front().second;
  if (x >= knots_.back().first) return knots_.back().second;
  const auto hi = std::upper_bound(knots_.begin(), knots_.end(), std::make_pair(x, 2.0));
  const auto lo = hi - 1;
  const double t = (x - lo->first) / (hi->first - lo->first);
  return std::clamp(lo->second + t * (hi->second - lo->second), 0.0, 1.0);
}

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

double ConfidenceSampler::draw(std::mt19937_64& rng) const {
  switch (kind) {
    case Kind::Constant: return a;
    case Kind::Uniform: return a + (b - a) * uniform01(rng);
    case Kind::Beta: {
      std::gamma_distribution<double> ga(a, 1.0);
      std::gamma_distribution<double> gb(b, 1.0);
      const double x = ga(rng);
      const double y = gb(rng);
      return x + y > 0.0 ? x / (x + y) : 0.5;
    }
  }
  return a;
}

void ConfidenceSampler::validate() const {
  switch (kind) {
    case Kind::Constant:
      if (!(a >= 0.0 && a <= 1.0)) throw Error(ErrorCode::InvalidArgument, "constant confidence outside [0,1]");
      break;
    case Kind::Uniform:
      if (!(a >= 0.0 && b <= 1.0 && a <= b)) throw Error(ErrorCode::InvalidArgument, "uniform bounds outside [0,1]");
      break;
    case Kind::Beta:
      if (!(a > 0.0 && b > 0.0)) throw Error(ErrorCode::InvalidArgument, "beta parameters must be positive");
      break;
  }
}

void SimulatedModelSpec::validate() const { confidence_sampler.validate(); }

SimulatedModelSpec simulator_from_json(const nlohmann::json& j) {
  SimulatedModelSpec spec;
  try {
    spec.seed = j.value("seed", std::uint64_t{0});
    if (j.contains("accuracy")) {
      const auto& acc = j["accuracy"];
      if (acc.is_string() && acc == "calibrated") {
        spec.accuracy_given_confidence = PiecewiseLinear::identity();
      } else if (acc.is_object() && acc.contains("shift")) {
        spec.accuracy_given_confidence = PiecewiseLinear::shifted(acc["shift"].get<double>());
      } else if (acc.is_object() && acc.contains("constant")) {
        spec.accuracy_given_confidence = PiecewiseLinear::constant(acc["constant"].get<double>());
      } else if (acc.is_array()) {
        spec.accuracy_given_confidence = PiecewiseLinear(acc.get<std::vector<std::pair<double, double>>>());
      } else {
        throw Error(ErrorCode::ConfigError, "simulator.accuracy must be \"calibrated\", {shift}, {constant} or knots");
      }
    }
    if (j.contains("confidence")) {
      const auto& c = j["confidence"];
      const auto kind = c.at("kind").get<std::string>();
      if (kind == "constant") {
        spec.confidence_sampler = ConfidenceSampler::constant(c.at("value").get<double>());
      } else if (kind == "uniform") {
        spec.confidence_sampler = ConfidenceSampler::uniform(c.value("low", 0.0), c.value("high", 1.0));
      } else if (kind == "beta") {
        spec.confidence_sampler = ConfidenceSampler::beta(c.at("alpha").get<double>(), c.at("beta").get<double>());
      } else {
        throw Error(ErrorCode::ConfigError, "unknown confidence sampler '" + kind + "'");
      }
    }
    if (j.contains("vocabulary")) spec.candidate_vocabulary = j["vocabulary"].get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("simulator config: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::ConfigError) throw;
    throw Error(ErrorCode::ConfigError, e.what());
  }
  spec.validate();
  return spec;
}

ModelResponse simulate(const PromptBundle& bundle, const SimulatedModelSpec& spec, const QuestionInstance& q,
                       const RequestOptions& options) {
  std::uint64_t seed = mix_seed(spec.seed, fnv1a64(q.id()));
  const std::string purpose = std::to_string(static_cast<int>(bundle.purpose)) + ":" +
                              (bundle.method ? bundle.method->name() : std::string("-"));
  seed = mix_seed(seed, fnv1a64(purpose));
  seed = mix_seed(seed, options.seed.value_or(0));
  std::mt19937_64 rng(seed);

  switch (bundle.purpose) {
    case PromptPurpose::PTrueJudgment: return respond_ptrue(bundle, q, spec, rng);
    case PromptPurpose::CorrectnessJudge: return respond_judge(bundle, q);
    case PromptPurpose::Rubric: return respond_rubric(rng);
    case PromptPurpose::Elicitation: break;
  }
  const Method method = bundle.method.value_or(Method::verb_conf());
  if (method.kind == MethodKind::Logit || method.kind == MethodKind::PTrue) return respond_logit(bundle, q, spec, rng);
  return respond_verbalized(method, q, spec, rng);
}

SimulatedBackend::SimulatedBackend(SimulatedModelSpec spec, std::span<const QuestionInstance> questions, bool logprobs)
    : spec_(std::move(spec)), logprobs_(logprobs) {
  spec_.validate();
  for (const auto& q : questions) questions_.emplace(q.id(), q);
}

ModelResponse SimulatedBackend::send(const PromptBundle& bundle, const RequestOptions& options, const std::string&) {
  const auto it = questions_.find(bundle.question_id);
  if (it == questions_.end()) {
    throw Error(ErrorCode::InvalidArgument, "simulator has no question '" + bundle.question_id + "'");
  }
  auto response = simulate(bundle, spec_, it->second, options);
  if (!logprobs_) response.token_logprobs.reset();
  return response;
}

std::vector<QuestionInstance> synthetic_questions(std::size_t n, int options, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<QuestionInstance> out;
  out.reserve(n);
  char id[32];
  for (std::size_t i = 0; i < n; ++i) {
    std::snprintf(id, sizeof id, "q%06zu", i);
    const std::string question = "Synthetic question " + std::to_string(i) + "?";
    if (options > 0) {
      std::vector<std::string> texts;
      for (int o = 0; o < options; ++o) texts.push_back("choice " + std::to_string(i) + "-" + std::to_string(o));
      const auto gold = std::string(1, static_cast<char>('A' + bounded(rng, static_cast<std::size_t>(options))));
      out.push_back(QuestionInstance::known(id, question, std::move(texts), gold));
    } else {
      out.push_back(QuestionInstance::open(id, question, "entity " + std::to_string(i)));
    }
  }
  return out;
}

}  // namespace verbcal
