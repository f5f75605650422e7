#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "corpus.hpp"
#include "gen.hpp"
#include "verbcal/parse.hpp"

using namespace verbcal;

TEST_CASE("parser corpus") {
  const auto cases = corpus::load(VERBCAL_TEST_DATA "/parser_corpus.jsonl");
  REQUIRE(cases.size() >= 60);
  for (const auto& c : cases) {
    CAPTURE(c.name);
    CHECK(corpus::check(c) == "");
  }
}

TEST_CASE("extract_json finds fenced, bare and repeated values") {
  const auto v = extract_json("blah ```json\n{\"final_answer\":\"B\",\"confidence\":0.7}\n```");
  CHECK(v.is_object());
  CHECK(v.size() == 2);
  try {
    extract_json("no structure here");
    FAIL("expected NoJson");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NoJson);
  }
  CHECK(extract_json("{\"a\": 1} then {\"a\": 2}")["a"] == 2);
  CHECK(extract_json("outer {\"a\": {\"b\": [1, 2]}} end")["a"]["b"][1] == 2);
  CHECK(extract_json("set {x} then {\"ok\": true}")["ok"] == true);
}

TEST_CASE("verbalized confidence examples") {
  const auto ok = parse_verbalized_confidence(R"({"final_answer":"B","confidence":"0.7"})");
  REQUIRE(ok.is_ok());
  CHECK(ok.payload().answer == "B");
  CHECK(ok.payload().confidence == 0.7);
  CHECK(parse_verbalized_confidence(R"({"final_answer":"B","confidence":1.4})").reason() == FormatReason::OutOfRange);
  CHECK(parse_verbalized_confidence(R"({"answer":"B"})").reason() == FormatReason::BadSchema);
}

TEST_CASE("top-k examples") {
  const auto ok = parse_topk(R"([{"candidate":"paris","confidence":0.8},{"candidate":"lyon","confidence":0.3}])", 2);
  REQUIRE(ok.is_ok());
  CHECK(ok.payload().answer == "paris");
  CHECK(ok.payload().confidence == 0.8);
  const auto tie = parse_topk(R"([{"candidate":"a","confidence":0.5},{"candidate":"b","confidence":0.5}])", 2);
  CHECK(tie.payload().answer == "a");
  CHECK(parse_topk(R"([{"candidate":"a","confidence":0.5}])", 2).reason() == FormatReason::BadSchema);
  CHECK_THROWS_AS(parse_topk("[]", 1), Error);
}

TEST_CASE("distribution examples") {
  const auto open = parse_distribution(
      R"([{"candidate":"paris","confidence":0.6},{"candidate":"lyon","confidence":0.3},{"candidate":"None of the above","confidence":0.1}])",
      {});
  REQUIRE(open.is_ok());
  CHECK(open.payload().answer == "paris");
  CHECK(open.payload().confidence == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(open.payload().distribution->nota_index() == 2u);

  const auto over = parse_distribution(
      R"([{"candidate":"a","confidence":0.6},{"candidate":"b","confidence":0.45},{"candidate":"None of the above","confidence":0.1}])",
      {});
  CHECK(over.reason() == FormatReason::SumViolation);

  // The tolerance is a parameter.
  const auto loose = parse_distribution(
      R"([{"candidate":"a","confidence":0.6},{"candidate":"b","confidence":0.45},{"candidate":"None of the above","confidence":0.1}])",
      {}, 0.2);
  CHECK(loose.is_ok());
  CHECK(loose.payload().confidence == doctest::Approx(0.6 / 1.15));
}

TEST_CASE("renormalized distributions sum to one") {
  gen::Rng rng(3);
  for (int i = 0; i < 2000; ++i) {
    const int n = rng.between(1, 7);
    std::vector<double> p(n);
    double total = 0.0;
    for (auto& x : p) total += (x = rng.unit() + 0.01);
    const double target = 1.0 + (rng.unit() - 0.5) * 0.09;  // inside the tolerance
    if (*std::max_element(p.begin(), p.end()) / total * target > 0.99) continue;  // keep every entry in [0,1]
    std::string raw = "[";
    for (int k = 0; k < n; ++k) {
      raw += "{\"candidate\": \"c" + std::to_string(k) + "\", \"confidence\": " + std::to_string(p[k] / total * target * 0.999) + "},";
    }
    raw += "{\"candidate\": \"None of the above\", \"confidence\": " + std::to_string(target * 0.001) + "}]";
    const auto out = parse_distribution(raw, {});
    REQUIRE_MESSAGE(out.is_ok(), raw, " -> ", out.detail());
    CHECK(std::fabs(out.payload().distribution->sum() - 1.0) < 1e-9);
    const auto& d = *out.payload().distribution;
    CHECK(out.payload().confidence == d.entries()[d.argmax()].probability);
  }
}

TEST_CASE("p(True) sums every true-variant alternative") {
  ModelResponse r;
  r.raw_text = "True";
  r.token_logprobs = std::vector<TokenLogprob>{
      {"True", std::log(0.9), 0, {{"True", std::log(0.9)}, {" true", std::log(0.05)}, {"False", std::log(0.05)}}}};
  CHECK(parse_ptrue_logprobs(r) == doctest::Approx(0.95).epsilon(1e-12));

  r.token_logprobs = std::vector<TokenLogprob>{{"False", std::log(0.7), 0, {{"False", std::log(0.7)}, {"No", std::log(0.3)}}}};
  CHECK(parse_ptrue_logprobs(r) == 0.0);

  r.token_logprobs.reset();
  try {
    parse_ptrue_logprobs(r);
    FAIL("expected MissingLogprobs");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MissingLogprobs);
  }
}

TEST_CASE("logit confidence multiplies the answer-span token probabilities") {
  ModelResponse r;
  r.raw_text = "Some reasoning.\nFinal answer: Paris Lyon";
  const auto span = locate_final_answer(r.raw_text);
  REQUIRE(span.has_value());
  CHECK(r.raw_text.substr(span->begin, span->end - span->begin) == "Paris Lyon");
  r.token_logprobs = std::vector<TokenLogprob>{{"Some reasoning.\n", -0.3, 0, {}},
                                               {"Final answer:", -0.01, 16, {}},
                                               {" Paris", std::log(0.8), 29, {}},
                                               {" Lyon", std::log(0.9), 35, {}}};
  CHECK(parse_logit_confidence(r, *span) == doctest::Approx(0.72).epsilon(1e-12));
  const auto outcome = parse_logit_response(r);
  REQUIRE(outcome.is_ok());
  CHECK(outcome.payload().answer == "Paris Lyon");

  ModelResponse single{"Final answer: B", 1, std::vector<TokenLogprob>{{"Final answer:", -1.0, 0, {}}, {" B", 0.0, 13, {}}}, ""};
  CHECK(parse_logit_response(single).payload().confidence == 1.0);

  ModelResponse none{"I think B.", 1, std::vector<TokenLogprob>{{"I think B.", -1.0, 0, {}}}, ""};
  CHECK(parse_logit_response(none).reason() == FormatReason::SpanNotFound);

  ModelResponse bare{"Final answer: B", 1, std::nullopt, ""};
  CHECK(parse_logit_response(bare).reason() == FormatReason::MissingLogprobs);
}

TEST_CASE("locate_final_answer takes the last marker, case-insensitively") {
  const std::string text = "final answer: Lyon\nmore thought\n**Final Answer:** Paris\n";
  const auto span = locate_final_answer(text);
  REQUIRE(span.has_value());
  CHECK(text.substr(span->begin, span->end - span->begin) == "Paris");
  CHECK_FALSE(locate_final_answer("Final answer:   \n").has_value());
}

TEST_CASE("judge replies") {
  CHECK(parse_judge_reply("Yes"));
  CHECK_FALSE(parse_judge_reply("no."));
  CHECK(parse_judge_reply("  **yes**, it matches"));
  CHECK_FALSE(parse_judge_reply("\"No\""));
  CHECK_THROWS_AS(parse_judge_reply("maybe"), Error);
  CHECK_THROWS_AS(parse_judge_reply("nothing"), Error);
  CHECK_THROWS_AS(parse_judge_reply("yesterday"), Error);
}

TEST_CASE("rubric replies") {
  const std::string all3 = R"(Analysis...
{"Method A": {"Evidential Strength": 3, "Uncertainty Awareness": 3, "Logical Calibration": 3},
 "Method B": {"Evidential Strength": 3, "Uncertainty Awareness": 3, "Logical Calibration": 3},
 "Method C": {"Evidential Strength": 3, "Uncertainty Awareness": 3, "Logical Calibration": 3}})";
  const auto scores = parse_rubric_reply(all3);
  CHECK(scores.size() == 3);
  CHECK(scores.at("Method B") == RubricTriple{3, 3, 3});

  const std::string missing_c = R"({"Method A": {"Evidential Strength": 3, "Uncertainty Awareness": 3, "Logical Calibration": 3},
 "Method B": {"Evidential Strength": 3, "Uncertainty Awareness": 3, "Logical Calibration": 3}})";
  try {
    parse_rubric_reply(missing_c);
    FAIL("expected BadSchema");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::BadSchema);
  }
  std::string six = all3;
  six.replace(six.find("3"), 1, "6");
  try {
    parse_rubric_reply(six);
    FAIL("expected OutOfRange");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::OutOfRange);
  }
}

TEST_CASE("parsers never crash on arbitrary text") {
  gen::Rng rng(99);
  const std::vector<std::string> fragments = {"{", "}", "[", "]", "\"", ":", ",", "\"candidate\"", "\"confidence\"",
                                              "\"final_answer\"", "0.5", "1e309", "-0", "null", "\"None of the above\"",
                                              "\\", "```json", "\n", "Final answer:", "\"option\"", "\"A\"", "70%"};
  const auto options = QuestionInstance::known("q", "?", {"x", "y", "z"}, "A").options();
  for (int i = 0; i < 20000; ++i) {
    std::string raw;
    const int n = rng.between(0, 40);
    for (int k = 0; k < n; ++k) {
      raw += rng.coin(0.8) ? fragments[static_cast<std::size_t>(rng.between(0, static_cast<int>(fragments.size()) - 1))]
                           : rng.text(3);
    }
    for (const auto& m : {Method::verb_conf(), Method::verb_topk(2), Method::verb_distrib()}) {
      const auto a = parse_verbalized(m, raw, {});
      const auto b = parse_verbalized(m, raw, options);
      for (const auto* out : {&a, &b}) {
        if (out->is_ok()) {
          CHECK(out->payload().confidence >= 0.0);
          CHECK(out->payload().confidence <= 1.0);
        } else {
          CHECK(out->reason().has_value());
        }
      }
    }
    CHECK_NOTHROW(locate_final_answer(raw));
  }
}
