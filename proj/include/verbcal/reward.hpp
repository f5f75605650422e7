#pragma once

#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "verbcal/model.hpp"

namespace verbcal {

struct RewardOutcome {
  double reward = -1.0;
  bool format_ok = false;
  bool correct = false;  // only meaningful when format_ok
};

/// r = y - (p - y)^2 for parsed outputs, -1 for format errors.
RewardOutcome rlcr_reward(const ParseOutcome& outcome, bool correct);
/// Accuracy-only reward with the same -1 format penalty.
RewardOutcome rlvr_reward(const ParseOutcome& outcome, bool correct);

enum class RewardKind { Rlcr, Rlvr };
RewardKind parse_reward_kind(std::string_view name);
RewardOutcome compute_reward(RewardKind kind, const ParseOutcome& outcome, bool correct);

struct Rollout {
  ParseOutcome outcome;
  bool correct = false;
};

struct RolloutGroup {
  std::string question_id;
  std::vector<Rollout> rollouts;
  int group_size = 8;

  void validate() const;
};

/// r_i - mean(r), without dividing by the standard deviation.
std::vector<double> group_advantages(std::span<const double> rewards);
std::vector<double> group_advantages(const RolloutGroup& group, RewardKind kind = RewardKind::Rlcr);

/// One reward-server exchange. Request fields: question_id, raw_text, gold,
/// method, and optionally options (array of option texts) for multiple-choice
/// items. Response: {reward, format_ok, correct}, or {error} for requests that
/// cannot be scored.
nlohmann::ordered_json handle_reward_request(const nlohmann::json& request, RewardKind kind = RewardKind::Rlcr);
/// Same, on one JSONL line; malformed JSON yields an {error} response.
std::string handle_reward_line(std::string_view line, RewardKind kind = RewardKind::Rlcr);

}  // namespace verbcal
