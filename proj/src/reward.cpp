#include "verbcal/reward.hpp"

#include <numeric>

#include "verbcal/judge.hpp"
#include "verbcal/parse.hpp"

namespace verbcal {

RewardOutcome rlcr_reward(const ParseOutcome& outcome, bool correct) {
  if (!outcome.is_ok()) return {-1.0, false, false};
  const double y = correct ? 1.0 : 0.0;
  const double gap = outcome.payload().confidence - y;
  return {y - gap * gap, true, correct};
}

RewardOutcome rlvr_reward(const ParseOutcome& outcome, bool correct) {
  if (!outcome.is_ok()) return {-1.0, false, false};
  return {correct ? 1.0 : 0.0, true, correct};
}

RewardKind parse_reward_kind(std::string_view name) {
  if (name == "rlcr") return RewardKind::Rlcr;
  if (name == "rlvr") return RewardKind::Rlvr;
  throw Error(ErrorCode::InvalidArgument, "unknown reward '" + std::string(name) + "' (rlcr|rlvr)");
}

RewardOutcome compute_reward(RewardKind kind, const ParseOutcome& outcome, bool correct) {
  return kind == RewardKind::Rlcr ? rlcr_reward(outcome, correct) : rlvr_reward(outcome, correct);
}

void RolloutGroup::validate() const {
  if (group_size < 1) throw Error(ErrorCode::InvalidArgument, "group_size must be >= 1");
  if (rollouts.size() != static_cast<std::size_t>(group_size)) {
    throw Error(ErrorCode::InvalidArgument, "group " + question_id + " has " + std::to_string(rollouts.size()) +
                                                " rollouts, expected " + std::to_string(group_size));
  }
}

std::vector<double> group_advantages(std::span<const double> rewards) {
  if (rewards.empty()) throw Error(ErrorCode::EmptyInput, "advantages of an empty group");
  const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / static_cast<double>(rewards.size());
  std::vector<double> out;
  out.reserve(rewards.size());
  for (const double r : rewards) out.push_back(r - mean);
  return out;
}

std::vector<double> group_advantages(const RolloutGroup& group, RewardKind kind) {
  group.validate();
  std::vector<double> rewards;
  for (const auto& r : group.rollouts) rewards.push_back(compute_reward(kind, r.outcome, r.correct).reward);
  return group_advantages(rewards);
}

nlohmann::ordered_json handle_reward_request(const nlohmann::json& request, RewardKind kind) {
  try {
    if (!request.is_object()) throw Error(ErrorCode::SchemaError, "request must be an object");
    const auto id = request.at("question_id").get<std::string>();
    const auto raw = request.at("raw_text").get<std::string>();
    const auto gold = request.at("gold").get<std::string>();
    const auto method = Method::parse(request.at("method").get<std::string>());
    if (method.needs_logprobs()) {
      throw Error(ErrorCode::InvalidArgument, method.name() + " rewards need token logprobs, not raw text");
    }
    // The question text plays no part in scoring.
    const auto text = request.value("question", std::string("-"));
    const auto q = request.contains("options")
                       ? QuestionInstance::known(id, text, request["options"].get<std::vector<std::string>>(), gold)
                       : QuestionInstance::open(id, text, gold);
    const auto outcome = parse_verbalized(method, raw, q.options());
    const bool correct = outcome.is_ok() && exact_match(q, outcome.payload().answer);
    const auto r = compute_reward(kind, outcome, correct);
    return {{"reward", r.reward}, {"format_ok", r.format_ok}, {"correct", r.correct}};
  } catch (const nlohmann::json::exception& e) {
    return {{"error", std::string("bad request: ") + e.what()}};
  } catch (const Error& e) {
    return {{"error", e.what()}};
  }
}

std::string handle_reward_line(std::string_view line, RewardKind kind) {
  const auto j = nlohmann::json::parse(line, nullptr, false);
  if (j.is_discarded()) return nlohmann::ordered_json{{"error", "request is not JSON"}}.dump();
  return handle_reward_request(j, kind).dump();
}

}  // namespace verbcal
