#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "gen.hpp"
#include "verbcal/dataset.hpp"
#include "verbcal/simulate.hpp"

using namespace verbcal;

namespace {

template <class F>
void expect_code(F&& f, ErrorCode code) {
  try {
    f();
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == code);
  }
}

std::set<std::string> ids(std::span<const QuestionInstance> qs) {
  std::set<std::string> out;
  for (const auto& q : qs) out.insert(q.id());
  return out;
}

}  // namespace

TEST_CASE("multiple-choice lines") {
  const auto qs = load_jsonl(R"({"id": "1", "question": "Colour?", "options": ["red", "green", "blue", "grey"], "answer": "C"})"
                             "\n"
                             R"({"id": 2, "question": "Pick", "options": {"A": "x", "B": "y"}, "answer": "y"})",
                             DatasetKind::MultipleChoice);
  REQUIRE(qs.size() == 2);
  REQUIRE(qs[0].options().size() == 4);
  CHECK(qs[0].options()[0].label == "A");
  CHECK(qs[0].options()[3].label == "D");
  CHECK(qs[0].gold_option()->text == "blue");
  CHECK(qs[1].id() == "2");
  CHECK(qs[1].gold_option()->label == "B");
}

TEST_CASE("schema errors") {
  expect_code([] { load_jsonl(R"({"id": "1", "question": "Q", "options": ["a", "b"]})", DatasetKind::MultipleChoice); },
              ErrorCode::SchemaError);
  expect_code([] { load_jsonl("{\"id\": \"1\", \"question\": \"Q\", \"answer\": \"a\"}\n"
                              "{\"id\": \"1\", \"question\": \"R\", \"answer\": \"b\"}",
                              DatasetKind::OpenEnded); },
              ErrorCode::DuplicateId);
  expect_code([] { load_jsonl("not json", DatasetKind::OpenEnded); }, ErrorCode::SchemaError);
  try {
    load_jsonl("{\"id\": \"1\", \"question\": \"Q\", \"answer\": \"a\"}\n{\"id\": \"2\"}", DatasetKind::OpenEnded);
    FAIL("expected SchemaError");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
}

TEST_CASE("manifests") {
  const auto dir = std::filesystem::temp_directory_path() / "verbcal_manifest_test";
  std::filesystem::create_directories(dir);
  {
    std::ofstream(dir / "items.jsonl") << serialize(synthetic_questions(30, 0, 4));
    std::ofstream(dir / "set.manifest") << "# open questions\nname = demo\npath = items.jsonl\nkind = OpenEnded\n"
                                           "size = 30\nsample_seed = 7\nsample_n = 10\n";
  }
  const auto m = read_manifest(dir / "set.manifest");
  CHECK(m.name == "demo");
  CHECK(m.kind == DatasetKind::OpenEnded);
  CHECK(m.path == dir / "items.jsonl");
  CHECK(load(m).size() == 30);
  CHECK(load_sampled(m).size() == 10);

  auto wrong = m;
  wrong.size = 31;
  expect_code([&] { load(wrong); }, ErrorCode::SchemaError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("load and serialize are inverse") {
  for (int options : {0, 3, 9}) {
    const auto qs = synthetic_questions(25, options, 11);
    const auto kind = options ? DatasetKind::MultipleChoice : DatasetKind::OpenEnded;
    const auto text = serialize(qs);
    CHECK(load_jsonl(text, kind) == qs);
    CHECK(serialize(load_jsonl(text, kind)) == text);
  }
}

TEST_CASE("sampling") {
  const auto qs = synthetic_questions(50, 4, 1);
  CHECK(ids(sample(qs, 50, 3)) == ids(qs));
  CHECK(sample(qs, 20, 3) == sample(qs, 20, 3));
  CHECK(sample(qs, 0, 3).empty());
  expect_code([&] { sample(qs, 51, 3); }, ErrorCode::NTooLarge);

  // Same set of ids in a different order gives the same chosen set.
  auto reversed = qs;
  std::reverse(reversed.begin(), reversed.end());
  CHECK(ids(sample(reversed, 20, 9)) == ids(sample(qs, 20, 9)));

  gen::Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const auto n = static_cast<std::size_t>(rng.between(0, 50));
    const auto seed = rng.engine()();
    const auto s = sample(qs, n, seed);
    CHECK(s.size() == n);
    CHECK(ids(s).size() == n);
    // Input order is preserved.
    std::size_t last = 0;
    for (const auto& q : s) {
      const auto pos = static_cast<std::size_t>(std::find(qs.begin(), qs.end(), q) - qs.begin());
      CHECK(pos >= last);
      last = pos;
    }
  }

  // Every item is roughly equally likely to be drawn.
  std::map<std::string, int> hits;
  for (std::uint64_t seed = 0; seed < 2000; ++seed) {
    for (const auto& q : sample(qs, 10, seed)) ++hits[q.id()];
  }
  for (const auto& [id, n] : hits) CHECK(std::abs(n - 400) < 100);
}

TEST_CASE("difficulty filters") {
  const auto qs = synthetic_questions(10, 4, 1);
  const Probe always = [](const QuestionInstance&, int) { return true; };
  const Probe never = [](const QuestionInstance&, int) { return false; };
  CHECK(filter_by_difficulty(qs, always, 3, DifficultyFilter::FailedAtLeastOnce).empty());
  CHECK(filter_by_difficulty(qs, never, 3, DifficultyFilter::SolvedAtLeastOnce).empty());
  CHECK(filter_by_difficulty(qs, always, 3, DifficultyFilter::SolvedAtLeastOnce).size() == 10);
  const Probe first_only = [](const QuestionInstance&, int attempt) { return attempt == 0; };
  CHECK(filter_by_difficulty(qs, first_only, 2, DifficultyFilter::FailedAtLeastOnce).size() == 10);
  const Probe throws = [](const QuestionInstance&, int) -> bool { throw std::runtime_error("boom"); };
  try {
    filter_by_difficulty(qs, throws, 1, DifficultyFilter::SolvedAtLeastOnce);
    FAIL("expected ProbeFailed");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ProbeFailed);
    CHECK(std::string(e.what()).find(qs[0].id()) != std::string::npos);
  }
}
