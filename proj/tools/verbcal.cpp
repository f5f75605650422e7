// Command-line front end: run evaluations, rescore logs, aggregate samples,
// judge answers, score reasoning traces and serve rewards.

#include <fstream>
#include <iostream>
#include <map>

#include <CLI11.hpp>
#include <httplib.h>
#include <json.hpp>

#include "verbcal/aggregate.hpp"
#include "verbcal/dataset.hpp"
#include "verbcal/hash.hpp"
#include "verbcal/judge.hpp"
#include "verbcal/metrics.hpp"
#include "verbcal/reward.hpp"
#include "verbcal/runner.hpp"

namespace fs = std::filesystem;
using namespace verbcal;

namespace {

std::vector<MetricsReport> score_log(std::span<const PredictionRecord> records, int bins, bool strict) {
  BinningSpec binning;
  binning.bins = bins;
  std::vector<MetricsReport> reports;
  for (const auto& group : split_by_method(records)) {
    reports.push_back(evaluate(group, binning, strict ? TieMode::Strict : TieMode::Half));
  }
  return reports;
}

void print_reports(std::span<const MetricsReport> reports, const std::string& format) {
  if (format == "table") {
    std::cout << reports_to_table(reports);
  } else if (format == "json") {
    auto all = nlohmann::ordered_json::array();
    for (const auto& r : reports) all.push_back(nlohmann::ordered_json::parse(report_to_json(r)));
    std::cout << all.dump(2) << '\n';
  } else {
    for (const auto& r : reports) {
      std::cout << "# " << r.method << '\n' << bins_to_csv(r);
    }
  }
}

std::shared_ptr<Backend> judge_backend(const RunConfig& config, std::span<const QuestionInstance> questions) {
  if (config.backend == BackendKind::Simulated) {
    return std::make_shared<SimulatedBackend>(config.simulator, questions, config.simulator_logprobs);
  }
  return std::make_shared<HttpBackend>(config.judge_client.value_or(config.client));
}

std::map<std::string, const QuestionInstance*, std::less<>> index_questions(std::span<const QuestionInstance> qs) {
  std::map<std::string, const QuestionInstance*, std::less<>> out;
  for (const auto& q : qs) out.emplace(q.id(), &q);
  return out;
}

int cmd_run(const std::string& config_path, bool resume, const std::string& transcript, const std::string& out_dir) {
  auto config = load_run_config(config_path);
  if (resume) config.resume = true;
  if (!transcript.empty()) config.transcript = transcript;
  if (!out_dir.empty()) config.output_dir = out_dir;
  const auto result = run(config);
  for (const auto& w : result.warnings) std::cerr << "warning: " << w << '\n';
  std::cout << reports_to_table(result.reports);
  std::cerr << result.records_written << " records written, " << result.requests << " model requests, "
            << result.judge_requests << " judge requests; outputs in " << config.output_dir.string() << '\n';
  return 0;
}

int cmd_aggregate(const std::string& log, const std::string& mode, int n, const std::string& out, int bins) {
  AggregationSpec spec;
  spec.mode = parse_aggregation_mode(mode);
  spec.n = n;
  spec.validate();
  const auto aggregated = aggregate_log(read_record_log(log), spec);
  if (!out.empty()) write_record_log(out, aggregated);
  print_reports(score_log(aggregated, bins, false), "table");
  return 0;
}

int cmd_judge(const std::string& log, const std::string& config_path, const std::string& out) {
  const auto config = load_run_config(config_path);
  const auto questions = load_questions(config);
  const auto by_id = index_questions(questions);
  Client client(judge_backend(config, questions), config.judge_client.value_or(config.client));
  const auto cache_path = fs::path(out.empty() ? log : out).parent_path() / "verdicts.jsonl";
  VerdictCache cache(cache_path);
  Judge judge(client, cache);
  std::vector<PredictionRecord> judged;
  std::size_t failures = 0;
  for (const auto& r : read_record_log(log)) {
    const auto it = by_id.find(r.question_id());
    if (it == by_id.end()) throw Error(ErrorCode::SchemaError, "log question '" + r.question_id() + "' not in dataset");
    try {
      judged.push_back(assign_verdict(*it->second, r, &judge));
    } catch (const Error& e) {
      ++failures;
      std::cerr << "warning: " << e.what() << '\n';
      judged.push_back(r.with_verdict(false));
    }
  }
  write_record_log(out.empty() ? fs::path(log) : fs::path(out), judged);
  std::cerr << judged.size() << " records judged, " << client.attempts() << " judge requests, " << failures
            << " failures\n";
  return 0;
}

int cmd_rubric(const std::vector<std::string>& logs, const std::string& config_path, std::uint64_t seed,
               const std::string& out) {
  if (logs.size() != 3) throw Error(ErrorCode::WrongArity, "rubric needs exactly three --log files");
  const auto config = load_run_config(config_path);
  const auto questions = load_questions(config);
  std::vector<std::map<std::string, PredictionRecord, std::less<>>> traces(3);
  for (std::size_t i = 0; i < 3; ++i) {
    for (auto& r : read_record_log(logs[i])) {
      if (r.sample_index() == 0 && !r.aggregation()) traces[i].emplace(r.question_id(), std::move(r));
    }
  }
  Client client(judge_backend(config, questions), config.judge_client.value_or(config.client));
  VerdictCache cache;
  Judge judge(client, cache);
  std::ofstream sink;
  if (!out.empty()) {
    sink.open(out, std::ios::binary | std::ios::trunc);
    if (!sink) throw Error(ErrorCode::IoError, "cannot write " + out);
  }
  std::map<std::string, std::array<double, 3>> totals;
  std::size_t scored = 0;
  for (const auto& q : questions) {
    std::vector<RubricTrace> three;
    for (const auto& t : traces) {
      const auto it = t.find(q.id());
      if (it == t.end()) break;
      three.push_back({it->second.method().name(), it->second.raw_text()});
    }
    if (three.size() != 3) continue;
    const auto result = judge.score_rubric(q.id(), three, mix_seed(seed, fnv1a64(q.id())));
    nlohmann::ordered_json j;
    j["question_id"] = q.id();
    j["seed"] = result.assignment.seed;
    nlohmann::ordered_json slots;
    for (std::size_t s = 0; s < 3; ++s) slots[std::string(kRubricLabels[s])] = three[result.assignment.slot_to_trace[s]].method;
    j["assignment"] = std::move(slots);
    nlohmann::ordered_json scores;
    for (const auto& [method, triple] : result.scores) {
      nlohmann::ordered_json row;
      for (std::size_t c = 0; c < 3; ++c) {
        row[std::string(kRubricCriteria[c])] = triple[c];
        totals[method][c] += triple[c];
      }
      scores[method] = std::move(row);
    }
    j["scores"] = std::move(scores);
    if (sink.is_open()) sink << j.dump() << '\n';
    ++scored;
  }
  std::cout << "method";
  for (const auto c : kRubricCriteria) std::cout << '\t' << c;
  std::cout << '\n';
  for (const auto& [method, sums] : totals) {
    std::cout << method;
    for (const double s : sums) std::cout << '\t' << s / static_cast<double>(scored);
    std::cout << '\n';
  }
  std::cerr << scored << " questions scored\n";
  return 0;
}

int cmd_reward_server(bool stdio, const std::string& host, int port, const std::string& reward) {
  const auto kind = parse_reward_kind(reward);
  if (stdio) {
    std::string line;
    while (std::getline(std::cin, line)) {
      if (line.empty()) continue;
      std::cout << handle_reward_line(line, kind) << '\n' << std::flush;
    }
    return 0;
  }
  httplib::Server server;
  server.Post("/reward", [kind](const httplib::Request& req, httplib::Response& res) {
    const auto body = handle_reward_line(req.body, kind);
    if (body.find("\"error\"") != std::string::npos) res.status = 400;
    res.set_content(body, "application/json");
  });
  std::cerr << "reward server on http://" << host << ':' << port << "/reward\n";
  if (!server.listen(host, port)) throw Error(ErrorCode::IoError, "cannot listen on " + host + ":" + std::to_string(port));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Elicit, parse, score and aggregate verbalized confidence from language models"};
  app.require_subcommand(1);

  std::string config_path;
  std::string log;
  std::vector<std::string> logs;
  std::string out;
  std::string transcript;
  std::string format = "table";
  std::string mode = "weighted";
  std::string reward = "rlcr";
  std::string host = "127.0.0.1";
  int n = 16;
  int bins = 10;
  int port = 8321;
  bool resume = false;
  bool strict = false;
  bool stdio = false;
  std::uint64_t seed = 0;
  std::size_t synth_n = 100;
  int synth_options = 4;

  auto* run_cmd = app.add_subcommand("run", "Run an evaluation from a JSON config");
  run_cmd->add_option("--config", config_path, "Run config")->required()->check(CLI::ExistingFile);
  run_cmd->add_flag("--resume", resume, "Skip samples already in the output log");
  run_cmd->add_option("--transcript", transcript, "Append every request/response to this JSONL file");
  run_cmd->add_option("--output-dir", out, "Override output_dir");

  auto* score_cmd = app.add_subcommand("score", "Recompute metrics from a record log");
  score_cmd->add_option("--log", log, "Record log (JSONL)")->required()->check(CLI::ExistingFile);
  score_cmd->add_option("--bins", bins, "ECE bins")->check(CLI::PositiveNumber);
  score_cmd->add_flag("--strict-auroc", strict, "Count confidence ties as losses");

  auto* report_cmd = app.add_subcommand("report", "Print metrics for a record log");
  report_cmd->add_option("--log", log, "Record log (JSONL)")->required()->check(CLI::ExistingFile);
  report_cmd->add_option("--format", format, "json|table|csv")->check(CLI::IsMember({"json", "table", "csv"}));
  report_cmd->add_option("--bins", bins, "ECE bins")->check(CLI::PositiveNumber);
  report_cmd->add_flag("--strict-auroc", strict, "Count confidence ties as losses");

  auto* agg_cmd = app.add_subcommand("aggregate", "Collapse N samples per question into one answer");
  agg_cmd->add_option("--log", log, "Record log with sample_index per record")->required()->check(CLI::ExistingFile);
  agg_cmd->add_option("--mode", mode, "frequency|weighted")->check(CLI::IsMember({"frequency", "weighted"}));
  agg_cmd->add_option("--n", n, "Samples per question to use")->check(CLI::PositiveNumber);
  agg_cmd->add_option("--out", out, "Write aggregated records here");
  agg_cmd->add_option("--bins", bins, "ECE bins")->check(CLI::PositiveNumber);

  auto* judge_cmd = app.add_subcommand("judge", "Attach correctness verdicts to a record log");
  judge_cmd->add_option("--log", log, "Record log")->required()->check(CLI::ExistingFile);
  judge_cmd->add_option("--config", config_path, "Run config naming the dataset and judge")->required()->check(CLI::ExistingFile);
  judge_cmd->add_option("--out", out, "Output log (default: rewrite --log)");

  auto* rubric_cmd = app.add_subcommand("rubric", "Score three methods' reasoning traces on the rubric");
  rubric_cmd->add_option("--log", logs, "One record log per method; give exactly three")->required()->check(CLI::ExistingFile);
  rubric_cmd->add_option("--config", config_path, "Run config naming the dataset and judge")->required()->check(CLI::ExistingFile);
  rubric_cmd->add_option("--seed", seed, "Seed for the A/B/C label shuffle");
  rubric_cmd->add_option("--out", out, "Per-question scores (JSONL)");

  auto* reward_cmd = app.add_subcommand("reward-server", "Serve rewards over HTTP or stdin/stdout JSONL");
  reward_cmd->add_flag("--stdio", stdio, "Read requests from stdin, one JSON object per line");
  reward_cmd->add_option("--host", host, "Bind address");
  reward_cmd->add_option("--port", port, "HTTP port");
  reward_cmd->add_option("--reward", reward, "rlcr|rlvr")->check(CLI::IsMember({"rlcr", "rlvr"}));

  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic dataset for simulator runs");
  synth_cmd->add_option("--n", synth_n, "Questions")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--options", synth_options, "Options per question; 0 for open-ended");
  synth_cmd->add_option("--seed", seed, "Seed");
  synth_cmd->add_option("--out", out, "Output JSONL")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run_cmd) return cmd_run(config_path, resume, transcript, out);
    if (*score_cmd) {
      print_reports(score_log(read_record_log(log), bins, strict), "table");
      return 0;
    }
    if (*report_cmd) {
      print_reports(score_log(read_record_log(log), bins, strict), format);
      return 0;
    }
    if (*agg_cmd) return cmd_aggregate(log, mode, n, out, bins);
    if (*judge_cmd) return cmd_judge(log, config_path, out);
    if (*rubric_cmd) return cmd_rubric(logs, config_path, seed, out);
    if (*reward_cmd) return cmd_reward_server(stdio, host, port, reward);
    if (*synth_cmd) {
      std::ofstream f(out, std::ios::binary | std::ios::trunc);
      if (!f) throw Error(ErrorCode::IoError, "cannot write " + out);
      f << serialize(synthetic_questions(synth_n, synth_options, seed));
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error [" << to_string(e.code()) << "]: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
