#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "verbcal/model.hpp"

namespace verbcal {

enum class JsonShape { SingleObject, Array, YesNo, RubricObject, FreeText };

enum class PromptPurpose { Elicitation, PTrueJudgment, CorrectnessJudge, Rubric };

struct PromptBundle {
  std::optional<std::string> system;
  std::string user;
  bool expects_logprobs = false;
  JsonShape expects_json = JsonShape::FreeText;

  // Routing metadata. Never sent on the wire; the simulated backend uses it.
  PromptPurpose purpose = PromptPurpose::Elicitation;
  std::optional<Method> method;
  std::string question_id;
  std::optional<std::string> subject_response;  // the response judged by a p(True) prompt
};

/// Named prompt templates with `{{placeholder}}` slots. Defaults are built in;
/// a directory of `<key>.txt` files overrides individual keys.
class PromptTemplates {
 public:
  static const PromptTemplates& defaults();
  static PromptTemplates with_overrides(const std::filesystem::path& dir);

  const std::string& get(std::string_view key) const;
  void set(std::string key, std::string text);
  std::span<const std::string_view> keys() const;

 private:
  std::map<std::string, std::string, std::less<>> templates_;
};

/// Substitute `{{name}}` slots. Substituted values are not rescanned; an
/// unknown slot throws InvalidArgument.
std::string render_template(std::string_view tmpl, const std::map<std::string, std::string, std::less<>>& vars);

PromptBundle build_elicitation_prompt(const QuestionInstance& q, const Method& method,
                                      const PromptTemplates& templates = PromptTemplates::defaults());

PromptBundle build_ptrue_prompt(const QuestionInstance& q, const ModelResponse& prior,
                                const PromptTemplates& templates = PromptTemplates::defaults());

PromptBundle build_judge_prompt(const QuestionInstance& q, std::string_view prediction,
                                const PromptTemplates& templates = PromptTemplates::defaults());

inline constexpr std::array<std::string_view, 3> kRubricLabels = {"Method A", "Method B", "Method C"};
inline constexpr std::array<std::string_view, 3> kRubricCriteria = {"Evidential Strength", "Uncertainty Awareness",
                                                                   "Logical Calibration"};

/// Traces must already be in A/B/C order. Throws WrongArity unless exactly three.
PromptBundle build_rubric_prompt(std::span<const std::string> traces,
                                 const PromptTemplates& templates = PromptTemplates::defaults());

/// Seeded assignment of three traces to the A/B/C slots.
struct RubricAssignment {
  std::uint64_t seed = 0;
  std::array<std::size_t, 3> slot_to_trace{0, 1, 2};  // slot 0 is "Method A"

  std::size_t slot_of(std::size_t trace) const;
};

RubricAssignment shuffle_rubric_labels(std::uint64_t seed);

}  // namespace verbcal
