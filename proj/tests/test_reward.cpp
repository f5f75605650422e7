#include <doctest.h>

#include <cmath>
#include <numeric>

#include <json.hpp>

#include "gen.hpp"
#include "verbcal/reward.hpp"

using namespace verbcal;

namespace {

ParseOutcome ok(double p) { return ParseOutcome::ok({"A", p, std::nullopt}); }

}  // namespace

TEST_CASE("RLCR reward examples") {
  CHECK(rlcr_reward(ok(1.0), true).reward == 1.0);
  CHECK(rlcr_reward(ok(0.5), true).reward == 1.0 - 0.25);
  const auto fe = rlcr_reward(ParseOutcome::format_error(FormatReason::SumViolation), true);
  CHECK(fe.reward == -1.0);
  CHECK_FALSE(fe.format_ok);
  CHECK(rlcr_reward(ok(0.0), false).reward == 0.0);
  CHECK(rlcr_reward(ok(1.0), false).reward == -1.0);
}

TEST_CASE("RLVR reward examples") {
  CHECK(rlvr_reward(ok(0.3), true).reward == 1.0);
  CHECK(rlvr_reward(ok(0.9), false).reward == 0.0);
  CHECK(rlvr_reward(ParseOutcome::format_error(FormatReason::NoJson), true).reward == -1.0);
  CHECK(parse_reward_kind("rlvr") == RewardKind::Rlvr);
  CHECK_THROWS_AS(parse_reward_kind("ppo"), Error);
}

TEST_CASE("the RLCR reward peaks at the true outcome") {
  for (const bool y : {true, false}) {
    double best_p = -1.0;
    double best_r = -10.0;
    for (int i = 0; i <= 1000; ++i) {
      const double p = i / 1000.0;
      const double r = rlcr_reward(ok(p), y).reward;
      CHECK(r <= (y ? 1.0 : 0.0));
      CHECK(r >= -1.0);
      if (r > best_r) {
        best_r = r;
        best_p = p;
      }
    }
    CHECK(best_p == (y ? 1.0 : 0.0));
  }
  // Expected reward under Bernoulli(q) outcomes is maximized at p = q.
  for (int qi = 0; qi <= 20; ++qi) {
    const double q = qi / 20.0;
    int arg = -1;
    double best = -10.0;
    for (int i = 0; i <= 100; ++i) {
      const double p = i / 100.0;
      const double e = q * rlcr_reward(ok(p), true).reward + (1 - q) * rlcr_reward(ok(p), false).reward;
      if (e > best + 1e-15) {
        best = e;
        arg = i;
      }
    }
    CHECK(arg == qi * 5);
  }
}

TEST_CASE("group advantages") {
  const std::vector<double> r = {1.0, 0.75, -1.0, 0.25};
  const auto a = group_advantages(r);
  const std::vector<double> want = {0.75, 0.5, -1.25, 0.0};
  REQUIRE(a.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) CHECK(a[i] == doctest::Approx(want[i]).epsilon(1e-15));

  const std::vector<double> same = {0.3, 0.3, 0.3};
  for (double x : group_advantages(same)) CHECK(x == 0.0);
  const std::vector<double> one = {0.7};
  CHECK(group_advantages(one) == std::vector<double>{0.0});
  CHECK_THROWS_AS(group_advantages(std::span<const double>{}), Error);
}

TEST_CASE("advantages sum to zero") {
  gen::Rng rng(12);
  for (int trial = 0; trial < 1000; ++trial) {
    RolloutGroup g;
    g.question_id = "q";
    for (int i = 0; i < g.group_size; ++i) {
      if (rng.coin(0.2)) {
        g.rollouts.push_back({ParseOutcome::format_error(FormatReason::BadSchema), false});
      } else {
        g.rollouts.push_back({ok(rng.confidence()), rng.coin()});
      }
    }
    for (auto kind : {RewardKind::Rlcr, RewardKind::Rlvr}) {
      const auto a = group_advantages(g, kind);
      CHECK(std::fabs(std::accumulate(a.begin(), a.end(), 0.0)) < 1e-12);
    }
  }
}

TEST_CASE("reward requests") {
  auto resp = handle_reward_request(nlohmann::json{{"question_id", "q1"},
                                                   {"raw_text", R"({"final_answer": "Paris", "confidence": 0.5})"},
                                                   {"gold", "paris"},
                                                   {"method", "VerbConf"}});
  CHECK(resp["reward"] == 0.75);
  CHECK(resp["format_ok"] == true);
  CHECK(resp["correct"] == true);

  resp = handle_reward_request(nlohmann::json{{"question_id", "q2"},
                                              {"raw_text", R"({"final_answer": "B", "confidence": 0.9})"},
                                              {"gold", "A"},
                                              {"options", {"red", "blue"}},
                                              {"method", "VerbConf"}});
  CHECK(resp["correct"] == false);
  CHECK(resp["reward"].get<double>() == doctest::Approx(-0.81));

  resp = handle_reward_request(nlohmann::json{{"question_id", "q3"},
                                              {"raw_text", R"([{"candidate":"a","confidence":0.9},{"candidate":"None of the above","confidence":0.5}])"},
                                              {"gold", "a"},
                                              {"method", "VerbDistrib"}});
  CHECK(resp["reward"] == -1.0);
  CHECK(resp["format_ok"] == false);

  CHECK(handle_reward_request(nlohmann::json{{"raw_text", "x"}}).contains("error"));
  CHECK(handle_reward_request(nlohmann::json{{"question_id", "q"}, {"raw_text", "x"}, {"gold", "a"}, {"method", "Logit"}})
            .contains("error"));
  CHECK(nlohmann::json::parse(handle_reward_line("{not json")).contains("error"));
  const auto rlvr = nlohmann::json::parse(handle_reward_line(
      R"({"question_id":"q","raw_text":"{\"final_answer\":\"x\",\"confidence\":0.2}","gold":"x","method":"VerbConf"})",
      RewardKind::Rlvr));
  CHECK(rlvr["reward"] == 1.0);
}
