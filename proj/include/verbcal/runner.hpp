#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "verbcal/aggregate.hpp"
#include "verbcal/client.hpp"
#include "verbcal/dataset.hpp"
#include "verbcal/judge.hpp"
#include "verbcal/metrics.hpp"
#include "verbcal/simulate.hpp"

namespace verbcal {

struct SyntheticDataset {
  std::size_t n = 100;
  int options = 4;  // 0 for open questions
  std::uint64_t seed = 0;
};

enum class BackendKind { Simulated, Http };
enum class JudgeMode { Llm, Exact };

struct RunConfig {
  std::optional<DatasetManifest> manifest;
  std::optional<SyntheticDataset> synthetic;  // used when no manifest is given
  BackendKind backend = BackendKind::Simulated;
  ClientConfig client;
  SimulatedModelSpec simulator;
  bool simulator_logprobs = true;
  JudgeMode judge = JudgeMode::Llm;
  std::optional<ClientConfig> judge_client;  // defaults to `client`
  std::vector<Method> methods{Method::verb_conf()};
  int samples_per_question = 1;
  std::optional<AggregationSpec> aggregation;
  BinningSpec binning;
  TieMode ties = TieMode::Half;
  std::optional<double> temperature;  // default: 0 for one sample, else the aggregation temperature
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "run";
  bool resume = false;
  std::optional<std::filesystem::path> templates_dir;
  std::optional<std::filesystem::path> transcript;

  void validate() const;
  double sampling_temperature() const;
};

/// Relative paths in the config resolve against `base_dir`.
RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = ".");
RunConfig load_run_config(const std::filesystem::path& file);
ClientConfig client_config_from_json(const nlohmann::json& j);

std::vector<QuestionInstance> load_questions(const RunConfig& config);

/// One request/response pair made while eliciting a record.
struct Exchange {
  std::string purpose;  // "elicit" | "ptrue"
  ModelResponse response;
};

struct Elicitation {
  PredictionRecord record;
  std::vector<Exchange> exchanges;
};

/// Prompt, query and parse one sample. Client failures become
/// FormatError(ClientFailure) records rather than exceptions.
Elicitation elicit(Client& client, const QuestionInstance& q, const Method& method, const PromptTemplates& templates,
                   const RequestOptions& options);

/// Per-request seed for sample `index` of question `question_id`.
std::uint64_t sample_seed(std::uint64_t run_seed, std::string_view question_id, int index);

struct RunResult {
  std::vector<MetricsReport> reports;
  std::uint64_t requests = 0;  // requests sent to the elicitation client
  std::uint64_t judge_requests = 0;
  std::size_t records_written = 0;
  std::vector<std::string> warnings;
};

/// Elicit, judge and log every (question, method, sample); then aggregate and
/// score from the log. Outputs under config.output_dir: records.jsonl,
/// responses.jsonl, verdicts.jsonl, aggregated.jsonl (with aggregation),
/// reports/<method>.{json,txt,csv} and summary.json.
RunResult run(const RunConfig& config);

/// Same, with a caller-supplied backend for elicitation and judging.
RunResult run(const RunConfig& config, std::shared_ptr<Backend> backend, std::shared_ptr<Backend> judge_backend);

std::vector<PredictionRecord> read_record_log(const std::filesystem::path& path);
void write_record_log(const std::filesystem::path& path, std::span<const PredictionRecord> records);

/// Records grouped by method name, in first-appearance order.
std::vector<std::vector<PredictionRecord>> split_by_method(std::span<const PredictionRecord> records);

/// "VerbTopK(2)" -> "VerbTopK-2", safe as a file name.
std::string method_file_stem(const Method& method);

}  // namespace verbcal
