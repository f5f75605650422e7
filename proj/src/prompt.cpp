#include "verbcal/prompt.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <sstream>

namespace verbcal {

namespace {

constexpr std::string_view kVerbConfOpen = R"(Question: {{question}}

Reason step-by-step to formulate your final answer. Your answer must be a single entity, a short phrase, or a yes/no. Then, reason about the confidence in your answer. Conclude by providing a JSON object that states the final answer and your estimated confidence in it:
{
 "final_answer": "Your final answer",
 "confidence": "0-1"
})";

constexpr std::string_view kVerbConfKnown = R"(Question: {{question}}

Options:
{{options}}

Reason step-by-step to formulate your final answer. Your answer must be the letter of exactly one option. Then, reason about the confidence in your answer. Conclude by providing a JSON object that states the final answer and your estimated confidence in it:
{
 "final_answer": "Your final answer",
 "confidence": "0-1"
})";

constexpr std::string_view kVerbTopKOpen = R"(Question: {{question}}

Reason step-by-step to formulate {{k}} best guesses and probability that each is correct. Each answer must be a single entity, a short phrase, or a yes/no.
Your final output must be a JSON array:
{{topk_schema}})";

constexpr std::string_view kVerbTopKKnown = R"(Question: {{question}}

Options:
{{options}}

Reason step-by-step to formulate {{k}} best guesses and probability that each is correct. Each answer must be the letter of one option.
Your final output must be a JSON array:
{{topk_schema}})";

constexpr std::string_view kVerbDistribOpen = R"(Question: {{question}}

Reason step-by-step to formulate your answer. You may propose multiple possible answers (fewer than five). Each answer must be a single entity, a short phrase, or a yes/no. Always include "None of the above" as a possible answer. Reason about the confidence in each possible answer. Your final output must be a JSON array where the confidence scores form a probability distribution (they must sum to 1.0):
[
  {
    "candidate": "Candidate 1",
    "confidence": "0-1"
  },
  {
    "candidate": "Candidate 2",
    "confidence": "0-1"
  },
  ...
  {
    "candidate": "None of the above",
    "confidence": "0-1"
  }
])";

constexpr std::string_view kVerbDistribKnown = R"(Question: {{question}}

Options:
{{options}}

Reason step-by-step to formulate your answer. Reason about the confidence in each option and assign a probability to every option ({{labels}}). Your final output must be a JSON array with one entry per option where the confidence scores form a probability distribution (they must sum to 1.0):
[
  {
    "option": "<option letter>",
    "confidence": "0-1"
  },
  ...
])";

constexpr std::string_view kLogitOpen = R"(Question: {{question}}

Reason step-by-step to formulate your final answer. Your answer must be a single entity, a short phrase, or a yes/no. End your response with a single line of the form:
Final answer: <your answer>)";

constexpr std::string_view kLogitKnown = R"(Question: {{question}}

Options:
{{options}}

Reason step-by-step to formulate your final answer. Your answer must be the letter of exactly one option. End your response with a single line of the form:
Final answer: <option letter>)";

constexpr std::string_view kPTrue = R"(Question: {{question_block}}

Proposed answer:
{{response}}

Is the proposed answer correct? Reply with exactly "True" or "False".)";

constexpr std::string_view kJudge = R"(Question: {{question}}

Ground Truth: {{gold}}

Prediction: {{prediction}}

Is the prediction correct? You must answer "yes" or "no" only.)";

constexpr std::string_view kRubric = R"(You will be provided with three reasoning processes (Method A, B, and C) that each culminate in a final answer and a confidence score. Your task is to evaluate the quality of the confidence estimation process itself, independent of whether the final answer is correct.

Scoring Instructions:

For each method, you must assign a score from 1 to 5 (where 1 is Poor and 5 is Excellent) for the following three criteria:

- Evidential Strength: The clarity and directness of the facts and logic used to support the answer.
- Uncertainty Awareness: The active identification of unknowns, assumptions, potential flaws, and alternative answers within the reasoning process.
- Logical Calibration: The alignment between the confidence score and the underlying balance of evidence and limitations, leading to reliable estimates.

Output Format:

First analyse each reasoning process carefully and finally provide a single, valid JSON dictionary. Use the following structure:

{
  "Method A": {
    "Evidential Strength": <score>,
    "Uncertainty Awareness": <score>,
    "Logical Calibration": <score>
  },
  "Method B": {
    "Evidential Strength": <score>,
    "Uncertainty Awareness": <score>,
    "Logical Calibration": <score>
  },
  "Method C": {
    "Evidential Strength": <score>,
    "Uncertainty Awareness": <score>,
    "Logical Calibration": <score>
  }
}

Remember to base your scores solely on the process of estimating confidence, not on the accuracy of the final answer.

{{traces}})";

constexpr std::array<std::string_view, 11> kTemplateKeys = {
    "verb_conf_open",    "verb_conf_known", "verb_topk_open", "verb_topk_known", "verb_distrib_open",
    "verb_distrib_known", "logit_open",     "logit_known",    "ptrue",           "judge",
    "rubric",
};

using Vars = std::map<std::string, std::string, std::less<>>;

std::string options_block(const QuestionInstance& q) {
  std::string out;
  for (const auto& o : q.options()) {
    if (!out.empty()) out += '\n';
    out += o.label + ". " + o.text;
  }
  return out;
}

std::string labels_list(const QuestionInstance& q) {
  std::string out;
  for (const auto& o : q.options()) {
    if (!out.empty()) out += ", ";
    out += o.label;
  }
  return out;
}

std::string ordinal(int i) {
  static constexpr std::array<std::string_view, 10> kWords = {"first", "second", "third",  "fourth", "fifth",
                                                              "sixth", "seventh", "eighth", "ninth",  "tenth"};
  if (i >= 1 && i <= 10) return std::string(kWords[i - 1]);
  return "#" + std::to_string(i);
}

std::string topk_schema(int k) {
  std::string out = "[\n";
  for (int i = 1; i <= k; ++i) {
    out += "{\n \"candidate\": \"" + ordinal(i) + " most likely answer\",\n \"confidence\": \"0-1\"\n}";
    out += i < k ? ",\n" : "\n";
  }
  return out + "]";
}

std::string question_block(const QuestionInstance& q) {
  if (!q.is_known()) return q.question();
  return q.question() + "\n\nOptions:\n" + options_block(q);
}

}  // namespace

// ---------------------------------------------------------------------------

const PromptTemplates& PromptTemplates::defaults() {
  static const PromptTemplates instance = [] {
    PromptTemplates t;
    const std::array<std::string_view, 11> bodies = {kVerbConfOpen,  kVerbConfKnown,   kVerbTopKOpen, kVerbTopKKnown,
                                                     kVerbDistribOpen, kVerbDistribKnown, kLogitOpen,   kLogitKnown,
                                                     kPTrue,         kJudge,           kRubric};
    for (std::size_t i = 0; i < kTemplateKeys.size(); ++i) {
      t.templates_.emplace(std::string(kTemplateKeys[i]), std::string(bodies[i]));
    }
    return t;
  }();
  return instance;
}

PromptTemplates PromptTemplates::with_overrides(const std::filesystem::path& dir) {
  PromptTemplates t = defaults();
  if (!std::filesystem::is_directory(dir)) {
    throw Error(ErrorCode::ConfigError, "template directory not found: " + dir.string());
  }
  for (const auto key : kTemplateKeys) {
    const auto file = dir / (std::string(key) + ".txt");
    if (!std::filesystem::exists(file)) continue;
    std::ifstream in(file, std::ios::binary);
    std::stringstream buf;
    buf << in.rdbuf();
    t.set(std::string(key), buf.str());
  }
  return t;
}

const std::string& PromptTemplates::get(std::string_view key) const {
  const auto it = templates_.find(key);
  if (it == templates_.end()) throw Error(ErrorCode::InvalidArgument, "no template '" + std::string(key) + "'");
  return it->second;
}

void PromptTemplates::set(std::string key, std::string text) {
  if (std::find(kTemplateKeys.begin(), kTemplateKeys.end(), key) == kTemplateKeys.end()) {
    throw Error(ErrorCode::InvalidArgument, "unknown template key '" + key + "'");
  }
  templates_[std::move(key)] = std::move(text);
}

std::span<const std::string_view> PromptTemplates::keys() const { return kTemplateKeys; }

std::string render_template(std::string_view tmpl, const Vars& vars) {
  std::string out;
  out.reserve(tmpl.size());
  std::size_t pos = 0;
  while (pos < tmpl.size()) {
    const auto open = tmpl.find("{{", pos);
    if (open == std::string_view::npos) {
      out.append(tmpl.substr(pos));
      break;
    }
    const auto close = tmpl.find("}}", open + 2);
    if (close == std::string_view::npos) {
      out.append(tmpl.substr(pos));
      break;
    }
    out.append(tmpl.substr(pos, open - pos));
    const auto name = tmpl.substr(open + 2, close - open - 2);
    const auto it = vars.find(name);
    if (it == vars.end()) throw Error(ErrorCode::InvalidArgument, "unbound template slot '" + std::string(name) + "'");
    out.append(it->second);
    pos = close + 2;
  }
  return out;
}

PromptBundle build_elicitation_prompt(const QuestionInstance& q, const Method& method,
                                      const PromptTemplates& templates) {
  const bool known = q.is_known();
  const std::string space = known ? "_known" : "_open";
  Vars vars{{"question", q.question()}};
  if (known) {
    vars["options"] = options_block(q);
    vars["labels"] = labels_list(q);
  }

  PromptBundle b;
  b.method = method;
  b.question_id = q.id();
  switch (method.kind) {
    case MethodKind::Logit:
    case MethodKind::PTrue:
      // p(True) starts from the same plain chain-of-thought answer.
      b.user = render_template(templates.get("logit" + space), vars);
      b.expects_logprobs = true;
      b.expects_json = JsonShape::FreeText;
      break;
    case MethodKind::VerbConf:
      b.user = render_template(templates.get("verb_conf" + space), vars);
      b.expects_json = JsonShape::SingleObject;
      break;
    case MethodKind::VerbTopK:
      if (method.k < 2) throw Error(ErrorCode::InvalidArgument, "VerbTopK needs k >= 2");
      vars["k"] = std::to_string(method.k);
      vars["topk_schema"] = topk_schema(method.k);
      b.user = render_template(templates.get("verb_topk" + space), vars);
      b.expects_json = JsonShape::Array;
      break;
    case MethodKind::VerbDistrib:
      b.user = render_template(templates.get("verb_distrib" + space), vars);
      b.expects_json = JsonShape::Array;
      break;
  }
  // p(True) only needs logprobs on the judgment call.
  if (method.kind == MethodKind::PTrue) b.expects_logprobs = false;
  return b;
}

PromptBundle build_ptrue_prompt(const QuestionInstance& q, const ModelResponse& prior,
                                const PromptTemplates& templates) {
  if (prior.raw_text.empty()) throw Error(ErrorCode::InvalidArgument, "p(True) needs a non-empty prior response");
  PromptBundle b;
  b.user = render_template(templates.get("ptrue"), {{"question_block", question_block(q)}, {"response", prior.raw_text}});
  b.expects_logprobs = true;
  b.expects_json = JsonShape::FreeText;
  b.purpose = PromptPurpose::PTrueJudgment;
  b.method = Method::ptrue();
  b.question_id = q.id();
  b.subject_response = prior.raw_text;
  return b;
}

PromptBundle build_judge_prompt(const QuestionInstance& q, std::string_view prediction,
                                const PromptTemplates& templates) {
  if (prediction.empty()) throw Error(ErrorCode::InvalidArgument, "judge prompt needs a prediction");
  std::string gold = q.gold();
  if (const auto* opt = q.gold_option()) gold = opt->label + ". " + opt->text;
  PromptBundle b;
  b.user = render_template(templates.get("judge"),
                           {{"question", question_block(q)}, {"gold", gold}, {"prediction", std::string(prediction)}});
  b.expects_json = JsonShape::YesNo;
  b.purpose = PromptPurpose::CorrectnessJudge;
  b.question_id = q.id();
  b.subject_response = std::string(prediction);
  return b;
}

PromptBundle build_rubric_prompt(std::span<const std::string> traces, const PromptTemplates& templates) {
  if (traces.size() != 3) {
    throw Error(ErrorCode::WrongArity, "rubric prompt needs exactly 3 traces, got " + std::to_string(traces.size()));
  }
  std::string block;
  for (std::size_t i = 0; i < traces.size(); ++i) {
    if (i > 0) block += "\n\n";
    block += "### " + std::string(kRubricLabels[i]) + "\n" + traces[i];
  }
  PromptBundle b;
  b.user = render_template(templates.get("rubric"), {{"traces", block}});
  b.expects_json = JsonShape::RubricObject;
  b.purpose = PromptPurpose::Rubric;
  return b;
}

std::size_t RubricAssignment::slot_of(std::size_t trace) const {
  for (std::size_t s = 0; s < slot_to_trace.size(); ++s) {
    if (slot_to_trace[s] == trace) return s;
  }
  throw Error(ErrorCode::InvalidArgument, "trace index outside assignment");
}

RubricAssignment shuffle_rubric_labels(std::uint64_t seed) {
  RubricAssignment a;
  a.seed = seed;
  std::mt19937_64 rng(seed);
  for (std::size_t i = a.slot_to_trace.size() - 1; i > 0; --i) {
    const auto j = static_cast<std::size_t>(rng() % (i + 1));
    std::swap(a.slot_to_trace[i], a.slot_to_trace[j]);
  }
  return a;
}

}  // namespace verbcal
