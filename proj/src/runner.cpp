#include "verbcal/runner.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <fstream>
#include <iostream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>
#include <tuple>

#include "verbcal/hash.hpp"
#include "verbcal/parse.hpp"

namespace verbcal {

namespace fs = std::filesystem;

namespace {

void check_keys(const nlohmann::json& j, std::initializer_list<std::string_view> allowed, std::string_view where) {
  if (!j.is_object()) throw Error(ErrorCode::ConfigError, std::string(where) + " must be an object");
  for (const auto& [key, _] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw Error(ErrorCode::ConfigError, "unknown key '" + key + "' in " + std::string(where));
    }
  }
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_relative() ? base / path : path;
}

// Byte length of `path` up to and including its last newline.
std::uintmax_t complete_prefix(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto nl = text.rfind('\n');
  return nl == std::string::npos ? 0 : nl + 1;
}

void drop_partial_line(const fs::path& path) {
  if (!fs::exists(path)) return;
  const auto keep = complete_prefix(path);
  if (keep != fs::file_size(path)) fs::resize_file(path, keep);
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << text;
}

using RecordKey = std::tuple<std::string, std::string, int>;

RecordKey key_of(const PredictionRecord& r) { return {r.question_id(), r.method().name(), r.sample_index()}; }

std::string response_line(const PredictionRecord& record, const Exchange& ex) {
  nlohmann::ordered_json j;
  j["question_id"] = record.question_id();
  j["method"] = record.method().name();
  j["sample_index"] = record.sample_index();
  j["purpose"] = ex.purpose;
  j["request_id"] = ex.response.request_id;
  j["raw_text"] = ex.response.raw_text;
  j["token_usage"] = ex.response.token_usage;
  return j.dump();
}

struct QuestionOutput {
  std::vector<std::string> record_lines;
  std::vector<std::string> response_lines;
};

}  // namespace

// ---------------------------------------------------------------------------

void RunConfig::validate() const {
  if (!manifest && !synthetic) throw Error(ErrorCode::ConfigError, "config needs a dataset manifest or synthetic set");
  if (manifest) manifest->validate();
  client.validate();
  if (judge_client) judge_client->validate();
  if (methods.empty()) throw Error(ErrorCode::ConfigError, "no methods configured");
  if (samples_per_question < 1) throw Error(ErrorCode::ConfigError, "samples_per_question must be >= 1");
  if (aggregation) {
    aggregation->validate();
    if (samples_per_question < 2) throw Error(ErrorCode::ConfigError, "aggregation needs samples_per_question >= 2");
    if (aggregation->n > samples_per_question) {
      throw Error(ErrorCode::ConfigError, "aggregation.n exceeds samples_per_question");
    }
  }
  binning.validate();
  if (temperature && *temperature < 0.0) throw Error(ErrorCode::ConfigError, "temperature must be >= 0");
  if (backend == BackendKind::Simulated) simulator.validate();
}

double RunConfig::sampling_temperature() const {
  if (temperature) return *temperature;
  if (samples_per_question == 1) return 0.0;
  return aggregation ? aggregation->temperature : 0.8;
}

ClientConfig client_config_from_json(const nlohmann::json& j) {
  check_keys(j,
             {"base_url", "endpoint_path", "model", "api_key_env", "temperature", "max_tokens", "top_logprobs",
              "max_parallel", "max_attempts", "backoff_seconds", "timeout_seconds", "logprobs"},
             "client");
  ClientConfig c;
  try {
    c.base_url = j.value("base_url", c.base_url);
    c.endpoint_path = j.value("endpoint_path", c.endpoint_path);
    c.model_name = j.value("model", c.model_name);
    c.api_key_env = j.value("api_key_env", c.api_key_env);
    c.temperature = j.value("temperature", c.temperature);
    c.max_tokens = j.value("max_tokens", c.max_tokens);
    c.top_logprobs = j.value("top_logprobs", c.top_logprobs);
    c.max_parallel = j.value("max_parallel", c.max_parallel);
    c.retry.max_attempts = j.value("max_attempts", c.retry.max_attempts);
    c.retry.backoff_base_seconds = j.value("backoff_seconds", c.retry.backoff_base_seconds);
    c.request_timeout_seconds = j.value("timeout_seconds", c.request_timeout_seconds);
    c.logprobs = j.value("logprobs", c.logprobs);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("client: ") + e.what());
  }
  c.validate();
  return c;
}

RunConfig run_config_from_json(const nlohmann::json& j, const fs::path& base_dir) {
  check_keys(j,
             {"dataset", "backend", "client", "simulator", "judge", "methods", "samples_per_question", "aggregation",
              "bins", "strict_auroc", "temperature", "seed", "output_dir", "resume", "templates_dir", "transcript"},
             "run config");
  RunConfig c;
  try {
    const auto& ds = j.at("dataset");
    check_keys(ds, {"manifest", "synthetic"}, "dataset");
    if (ds.contains("manifest")) {
      c.manifest = read_manifest(resolve(base_dir, ds["manifest"].get<std::string>()));
    } else if (ds.contains("synthetic")) {
      const auto& s = ds["synthetic"];
      check_keys(s, {"n", "options", "seed"}, "dataset.synthetic");
      SyntheticDataset syn;
      syn.n = s.value("n", syn.n);
      syn.options = s.value("options", syn.options);
      syn.seed = s.value("seed", syn.seed);
      if (syn.options < 0 || syn.options == 1 || syn.options > 26) {
        throw Error(ErrorCode::ConfigError, "synthetic options must be 0 or 2..26");
      }
      c.synthetic = syn;
    }
    const auto backend = j.value("backend", std::string("simulated"));
    if (backend == "simulated") {
      c.backend = BackendKind::Simulated;
    } else if (backend == "http") {
      c.backend = BackendKind::Http;
    } else {
      throw Error(ErrorCode::ConfigError, "backend must be \"simulated\" or \"http\"");
    }
    if (j.contains("client")) c.client = client_config_from_json(j["client"]);
    if (j.contains("simulator")) {
      auto sim = j["simulator"];
      check_keys(sim, {"seed", "accuracy", "confidence", "vocabulary", "logprobs"}, "simulator");
      c.simulator_logprobs = sim.value("logprobs", true);
      sim.erase("logprobs");
      c.simulator = simulator_from_json(sim);
    }
    if (j.contains("judge")) {
      const auto& jd = j["judge"];
      check_keys(jd, {"mode", "client"}, "judge");
      const auto mode = jd.value("mode", std::string("llm"));
      if (mode == "llm") {
        c.judge = JudgeMode::Llm;
      } else if (mode == "exact") {
        c.judge = JudgeMode::Exact;
      } else {
        throw Error(ErrorCode::ConfigError, "judge.mode must be \"llm\" or \"exact\"");
      }
      if (jd.contains("client")) c.judge_client = client_config_from_json(jd["client"]);
    }
    if (j.contains("methods")) {
      c.methods.clear();
      for (const auto& m : j["methods"]) {
        const auto method = Method::parse(m.get<std::string>());
        if (std::find(c.methods.begin(), c.methods.end(), method) != c.methods.end()) {
          throw Error(ErrorCode::ConfigError, "method " + method.name() + " listed twice");
        }
        c.methods.push_back(method);
      }
    }
    c.samples_per_question = j.value("samples_per_question", c.samples_per_question);
    if (j.contains("aggregation") && !j["aggregation"].is_null()) {
      const auto& a = j["aggregation"];
      check_keys(a, {"mode", "n", "temperature"}, "aggregation");
      AggregationSpec spec;
      spec.mode = parse_aggregation_mode(a.value("mode", std::string("weighted")));
      spec.n = a.value("n", c.samples_per_question);
      spec.temperature = a.value("temperature", spec.temperature);
      c.aggregation = spec;
    }
    c.binning.bins = j.value("bins", c.binning.bins);
    c.ties = j.value("strict_auroc", false) ? TieMode::Strict : TieMode::Half;
    if (j.contains("temperature")) c.temperature = j["temperature"].get<double>();
    c.seed = j.value("seed", c.seed);
    c.output_dir = resolve(base_dir, j.value("output_dir", std::string("run")));
    c.resume = j.value("resume", false);
    if (j.contains("templates_dir")) c.templates_dir = resolve(base_dir, j["templates_dir"].get<std::string>());
    if (j.contains("transcript")) c.transcript = resolve(base_dir, j["transcript"].get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("run config: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::ConfigError) throw;
    throw Error(ErrorCode::ConfigError, e.what());
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw Error(ErrorCode::IoError, "cannot read config " + file.string());
  const auto j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw Error(ErrorCode::ConfigError, file.string() + " is not valid JSON");
  return run_config_from_json(j, file.parent_path());
}

std::vector<QuestionInstance> load_questions(const RunConfig& config) {
  if (config.manifest) return load_sampled(*config.manifest);
  const auto& s = *config.synthetic;
  return synthetic_questions(s.n, s.options, s.seed);
}

std::uint64_t sample_seed(std::uint64_t run_seed, std::string_view question_id, int index) {
  return mix_seed(mix_seed(run_seed, fnv1a64(question_id)), static_cast<std::uint64_t>(index));
}

// ---------------------------------------------------------------------------

Elicitation elicit(Client& client, const QuestionInstance& q, const Method& method, const PromptTemplates& templates,
                   const RequestOptions& options) {
  std::vector<Exchange> exchanges;
  const auto client_failure = [&](const Error& e, std::string raw, std::int64_t tokens) {
    return Elicitation{
        PredictionRecord::format_error(q.id(), method, std::move(raw), FormatReason::ClientFailure, e.what(), tokens),
        std::move(exchanges)};
  };

  ModelResponse first;
  try {
    first = client.complete(build_elicitation_prompt(q, method, templates), options);
  } catch (const Error& e) {
    return client_failure(e, "", 0);
  }
  exchanges.push_back({"elicit", first});

  switch (method.kind) {
    case MethodKind::Logit: {
      auto record = PredictionRecord::from_outcome(q.id(), method, first.raw_text, parse_logit_response(first),
                                                   first.token_usage);
      return {std::move(record), std::move(exchanges)};
    }
    case MethodKind::PTrue: {
      const auto span = locate_final_answer(first.raw_text);
      if (!span) {
        return {PredictionRecord::format_error(q.id(), method, first.raw_text, FormatReason::SpanNotFound,
                                               "no 'Final answer:' line", first.token_usage),
                std::move(exchanges)};
      }
      ModelResponse second;
      try {
        second = client.complete(build_ptrue_prompt(q, first, templates), options);
      } catch (const Error& e) {
        return client_failure(e, first.raw_text, first.token_usage);
      }
      exchanges.push_back({"ptrue", second});
      const auto tokens = first.token_usage + second.token_usage;
      double p = 0.0;
      try {
        p = parse_ptrue_logprobs(second);
      } catch (const Error& e) {
        return {PredictionRecord::format_error(q.id(), method, first.raw_text, FormatReason::MissingLogprobs, e.what(),
                                               tokens),
                std::move(exchanges)};
      }
      const auto answer = first.raw_text.substr(span->begin, span->end - span->begin);
      return {PredictionRecord::ok(q.id(), method, first.raw_text, answer, p, std::nullopt, tokens),
              std::move(exchanges)};
    }
    default: {
      auto record = PredictionRecord::from_outcome(q.id(), method, first.raw_text,
                                                   parse_verbalized(method, first.raw_text, q.options()),
                                                   first.token_usage);
      return {std::move(record), std::move(exchanges)};
    }
  }
}

// ---------------------------------------------------------------------------

std::vector<PredictionRecord> read_record_log(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot read log " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::vector<PredictionRecord> out;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    const bool complete = end != std::string::npos;
    if (!complete) end = text.size();
    const std::string_view line(text.data() + pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    try {
      out.push_back(record_from_json_line(line));
    } catch (const Error& e) {
      // A run interrupted mid-write leaves an unterminated last line.
      if (!complete) break;
      throw Error(ErrorCode::SchemaError, path.string() + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

void write_record_log(const fs::path& path, std::span<const PredictionRecord> records) {
  std::string text;
  for (const auto& r : records) {
    text += record_to_json_line(r);
    text += '\n';
  }
  write_file(path, text);
}

std::vector<std::vector<PredictionRecord>> split_by_method(std::span<const PredictionRecord> records) {
  std::vector<std::vector<PredictionRecord>> groups;
  std::vector<std::string> names;
  for (const auto& r : records) {
    const auto name = r.method().name();
    const auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) {
      names.push_back(name);
      groups.push_back({r});
    } else {
      groups[static_cast<std::size_t>(it - names.begin())].push_back(r);
    }
  }
  return groups;
}

std::string method_file_stem(const Method& method) {
  if (method.kind == MethodKind::VerbTopK) return "VerbTopK-" + std::to_string(method.k);
  return method.name();
}

// ---------------------------------------------------------------------------

RunResult run(const RunConfig& config) {
  config.validate();
  const auto questions = load_questions(config);
  std::shared_ptr<Backend> backend;
  std::shared_ptr<Backend> judge_backend;
  if (config.backend == BackendKind::Simulated) {
    backend = std::make_shared<SimulatedBackend>(config.simulator, questions, config.simulator_logprobs);
    judge_backend = backend;
  } else {
    backend = std::make_shared<HttpBackend>(config.client);
    judge_backend = std::make_shared<HttpBackend>(config.judge_client.value_or(config.client));
  }
  return run(config, backend, judge_backend);
}

RunResult run(const RunConfig& config, std::shared_ptr<Backend> backend, std::shared_ptr<Backend> judge_backend) {
  config.validate();
  const auto questions = load_questions(config);
  const PromptTemplates templates =
      config.templates_dir ? PromptTemplates::with_overrides(*config.templates_dir) : PromptTemplates::defaults();

  const auto dir = config.output_dir;
  fs::create_directories(dir / "reports");
  const auto records_path = dir / "records.jsonl";
  const auto responses_path = dir / "responses.jsonl";
  const auto verdicts_path = dir / "verdicts.jsonl";

  std::set<RecordKey> done;
  if (config.resume && fs::exists(records_path)) {
    drop_partial_line(records_path);
    drop_partial_line(responses_path);
    drop_partial_line(verdicts_path);
    for (const auto& r : read_record_log(records_path)) done.insert(key_of(r));
  } else {
    for (const auto& p : {records_path, responses_path, verdicts_path}) fs::remove(p);
  }

  Client client(backend, config.client);
  if (config.transcript) client.set_transcript(*config.transcript);
  Client judge_client(judge_backend, config.judge_client.value_or(config.client));
  VerdictCache cache(verdicts_path, true);
  Judge judge(judge_client, cache, templates);
  Judge* judge_ptr = config.judge == JudgeMode::Llm ? &judge : nullptr;

  RunResult result;
  std::vector<Method> active;
  std::vector<std::pair<Method, std::size_t>> skipped;
  for (const auto& m : config.methods) {
    if (m.needs_logprobs() && !client.supports_logprobs()) {
      const auto n = questions.size() * static_cast<std::size_t>(config.samples_per_question);
      skipped.emplace_back(m, n);
      result.warnings.push_back(m.name() + " skipped: backend returns no logprobs (" + std::to_string(n) +
                                " elicitations)");
    } else {
      active.push_back(m);
    }
  }

  std::ofstream records_out(records_path, std::ios::app | std::ios::binary);
  std::ofstream responses_out(responses_path, std::ios::app | std::ios::binary);
  if (!records_out || !responses_out) throw Error(ErrorCode::IoError, "cannot write logs in " + dir.string());

  // Workers finish questions in any order; the committer writes them in
  // question order so logs do not depend on scheduling.
  std::mutex commit_mutex;
  std::vector<std::optional<QuestionOutput>> finished(questions.size());
  std::size_t next_commit = 0;
  std::atomic<std::size_t> next_question{0};
  std::exception_ptr failure;
  std::atomic<bool> stop{false};
  std::vector<std::string> warnings;

  const auto commit = [&](std::size_t index, QuestionOutput output) {
    std::lock_guard lock(commit_mutex);
    finished[index] = std::move(output);
    while (next_commit < finished.size() && finished[next_commit]) {
      for (const auto& line : finished[next_commit]->response_lines) responses_out << line << '\n';
      for (const auto& line : finished[next_commit]->record_lines) records_out << line << '\n';
      cache.flush(questions[next_commit].id());
      result.records_written += finished[next_commit]->record_lines.size();
      finished[next_commit].reset();
      ++next_commit;
    }
    responses_out.flush();
    records_out.flush();
  };

  const auto work = [&] {
    while (!stop.load()) {
      const auto index = next_question.fetch_add(1);
      if (index >= questions.size()) return;
      const auto& q = questions[index];
      QuestionOutput output;
      try {
        for (const auto& method : active) {
          for (int s = 0; s < config.samples_per_question; ++s) {
            if (done.count({q.id(), method.name(), s}) > 0) continue;
            RequestOptions options;
            options.temperature = config.sampling_temperature();
            options.seed = sample_seed(config.seed, q.id(), s);
            auto elicited = elicit(client, q, method, templates, options);
            auto record = elicited.record.with_sample_index(s);
            try {
              record = assign_verdict(q, record, judge_ptr);
            } catch (const Error& e) {
              record = record.with_verdict(false);
              std::lock_guard lock(commit_mutex);
              warnings.push_back("judge failed, counted incorrect: " + std::string(e.what()));
            }
            for (const auto& ex : elicited.exchanges) output.response_lines.push_back(response_line(record, ex));
            output.record_lines.push_back(record_to_json_line(record));
          }
        }
      } catch (...) {
        std::lock_guard lock(commit_mutex);
        if (!failure) failure = std::current_exception();
        stop = true;
        return;
      }
      commit(index, std::move(output));
    }
  };

  const auto n_workers = static_cast<std::size_t>(std::max(1, config.client.max_parallel));
  std::vector<std::thread> pool;
  for (std::size_t i = 0; i < std::min(n_workers, std::max<std::size_t>(questions.size(), 1)); ++i) {
    pool.emplace_back(work);
  }
  for (auto& t : pool) t.join();
  records_out.close();
  responses_out.close();
  if (failure) std::rethrow_exception(failure);

  std::sort(warnings.begin(), warnings.end());
  result.warnings.insert(result.warnings.end(), warnings.begin(), warnings.end());
  result.requests = client.attempts();
  result.judge_requests = judge_client.attempts();

  // Everything below is a function of the log alone.
  std::vector<PredictionRecord> logged;
  for (auto& r : read_record_log(records_path)) {
    if (r.sample_index() < config.samples_per_question) logged.push_back(std::move(r));
  }
  std::vector<PredictionRecord> scored = logged;
  if (config.aggregation) {
    scored = aggregate_log(logged, *config.aggregation);
    write_record_log(dir / "aggregated.jsonl", scored);
  }

  nlohmann::ordered_json summary = nlohmann::ordered_json::array();
  for (const auto& method : config.methods) {
    MetricsReport report;
    const auto skip = std::find_if(skipped.begin(), skipped.end(), [&](const auto& s) { return s.first == method; });
    if (skip != skipped.end()) {
      report.method = method.name();
      report.n_skipped = skip->second;
      report.tie_mode = config.ties;
    } else {
      std::vector<PredictionRecord> subset;
      for (const auto& r : scored) {
        if (r.method() == method) subset.push_back(r);
      }
      if (subset.empty()) continue;
      report = evaluate(subset, config.binning, config.ties);
    }
    const auto stem = dir / "reports" / method_file_stem(method);
    const auto json = report_to_json(report);
    write_file(fs::path(stem).concat(".json"), json + "\n");
    write_file(fs::path(stem).concat(".txt"), reports_to_table(std::span<const MetricsReport>(&report, 1)));
    write_file(fs::path(stem).concat(".csv"), bins_to_csv(report));
    summary.push_back(nlohmann::ordered_json::parse(json));
    result.reports.push_back(std::move(report));
  }
  write_file(dir / "summary.json", summary.dump(2) + "\n");
  write_file(dir / "summary.txt", reports_to_table(result.reports));
  return result;
}

}  // namespace verbcal
