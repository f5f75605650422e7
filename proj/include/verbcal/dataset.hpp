#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "verbcal/model.hpp"

namespace verbcal {

enum class DatasetKind { MultipleChoice, OpenEnded };

struct DatasetManifest {
  std::string name;
  std::filesystem::path path;
  DatasetKind kind = DatasetKind::MultipleChoice;
  std::optional<std::size_t> size;  // expected number of items, checked on load
  std::optional<std::uint64_t> sample_seed;
  std::optional<std::size_t> sample_n;

  void validate() const;
};

/// Reads `key = value` lines ('#' starts a comment). A relative `path` is
/// resolved against the manifest's directory.
DatasetManifest read_manifest(const std::filesystem::path& file);

/// One JSON object per line: id, question, options (multiple choice only;
/// an array, or an object keyed by option letter), answer.
std::vector<QuestionInstance> load(const DatasetManifest& manifest);
std::vector<QuestionInstance> load_jsonl(std::string_view text, DatasetKind kind);

/// load() followed by sample() when the manifest asks for one.
std::vector<QuestionInstance> load_sampled(const DatasetManifest& manifest);

/// Inverse of load_jsonl.
std::string serialize(std::span<const QuestionInstance> instances);

/// Uniform sample without replacement. The chosen set depends only on the
/// set of ids, n and seed; items keep their input order.
std::vector<QuestionInstance> sample(std::span<const QuestionInstance> instances, std::size_t n, std::uint64_t seed);

enum class DifficultyFilter { SolvedAtLeastOnce, FailedAtLeastOnce };

/// probe(question, attempt) reports whether attempt number `attempt` solved it.
using Probe = std::function<bool(const QuestionInstance&, int)>;

std::vector<QuestionInstance> filter_by_difficulty(std::span<const QuestionInstance> instances, const Probe& probe,
                                                   int attempts, DifficultyFilter keep);

}  // namespace verbcal
