// Acceptance checks A1-A8. Prints one PASS/FAIL/SKIP line per criterion and
// exits non-zero if any check fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "corpus.hpp"
#include "gen.hpp"
#include "oracle.hpp"
#include "verbcal/aggregate.hpp"
#include "verbcal/metrics.hpp"
#include "verbcal/reward.hpp"
#include "verbcal/runner.hpp"

using namespace verbcal;
namespace fs = std::filesystem;

namespace {

enum class Status { Pass, Fail, Skip };

struct Outcome {
  Status status;
  std::string detail;
};

Outcome pass(std::string d) { return {Status::Pass, std::move(d)}; }
Outcome fail(std::string d) { return {Status::Fail, std::move(d)}; }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("verbcal_acceptance_" + name);
  fs::remove_all(dir);
  return dir;
}

bool close(std::optional<double> a, std::optional<double> b, double tol) {
  if (a.has_value() != b.has_value()) return false;
  return !a || std::fabs(*a - *b) <= tol;
}

// ---------------------------------------------------------------------------

Outcome a1_metric_oracle() {
  gen::Rng rng(2024);
  const auto start = std::chrono::steady_clock::now();
  constexpr double tol = 1e-12;
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = rng.between(1, 8);
    std::vector<PredictionRecord> records;
    std::vector<oracle::Point> pts;
    double hits = 0.0;
    double mb_total = 0.0;
    int mb_n = 0;
    for (int i = 0; i < n; ++i) {
      const bool correct = rng.coin();
      if (rng.coin(0.15)) {
        records.push_back(
            PredictionRecord::format_error("q", Method::verb_distrib(), "", FormatReason::SumViolation, "", 1)
                .with_verdict(false));
        continue;
      }
      // A random distribution whose argmax is the answer.
      const int k = rng.between(1, 5);
      std::vector<double> w(static_cast<std::size_t>(k));
      double total = 0.0;
      for (auto& x : w) total += (x = rng.coin(0.3) ? 1.0 : rng.unit() + 1e-3);
      std::vector<Candidate> entries;
      std::vector<double> probs;
      for (int j = 0; j < k; ++j) {
        probs.push_back(w[static_cast<std::size_t>(j)] / total);
        entries.push_back({"c" + std::to_string(j), probs.back()});
      }
      const CandidateDistribution dist(entries);
      const auto top = dist.argmax();
      std::optional<std::size_t> gold;
      if (correct) {
        gold = top;
      } else if (rng.coin()) {
        const auto g = static_cast<std::size_t>(rng.between(0, k - 1));
        if (g != top) gold = g;
      }
      const double conf = probs[top];
      records.push_back(PredictionRecord::ok("q", Method::verb_distrib(), "", entries[top].text, conf, dist, 1)
                            .with_verdict(correct, gold));
      pts.push_back({conf, correct});
      hits += correct ? 1.0 : 0.0;
      mb_total += oracle::multi_brier(probs, gold);
      ++mb_n;
    }
    const int bins = rng.between(1, 15);
    for (auto [ties, weight] : {std::pair{TieMode::Half, 0.5}, std::pair{TieMode::Strict, 0.0}}) {
      const auto rep = evaluate(records, BinningSpec{bins}, ties);
      if (std::fabs(rep.accuracy - hits / n) > tol) return fail(fmt("accuracy mismatch in trial %d", trial));
      if (pts.empty()) {
        if (rep.ece || rep.brier || rep.auroc || rep.multi_brier) return fail(fmt("trial %d: metrics on no points", trial));
        continue;
      }
      if (!close(rep.auroc, oracle::auroc(pts, weight), tol)) return fail(fmt("AUROC mismatch in trial %d", trial));
      if (!close(rep.ece, oracle::ece(pts, bins), tol)) return fail(fmt("ECE mismatch in trial %d", trial));
      if (!close(rep.brier, oracle::brier(pts), tol)) return fail(fmt("Brier mismatch in trial %d", trial));
      if (!close(rep.multi_brier, mb_total / mb_n, tol)) return fail(fmt("multi-Brier mismatch in trial %d", trial));
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (secs >= 10.0) return fail(fmt("took %.2fs", secs));
  return pass(fmt("1000 record sets agree to 1e-12 in %.2fs", secs));
}

Outcome a2_calibrated_ece() {
  RunConfig c;
  c.synthetic = SyntheticDataset{10000, 4, 1};
  c.simulator.seed = 2;
  c.methods = {Method::verb_conf()};
  c.output_dir = scratch("a2");
  c.client.max_parallel = 8;
  const auto rep = run(c).reports.at(0);
  fs::remove_all(c.output_dir);
  double worst = 0.0;
  for (const auto& b : rep.calibration_bins) {
    if (b.count > 0) worst = std::max(worst, std::fabs(*b.accuracy - *b.mean_confidence));
  }
  const auto d = fmt("ECE %.4f (<= 0.02), worst bin gap %.4f (<= 0.05), n=%zu", *rep.ece, worst, rep.n);
  return *rep.ece <= 0.02 && worst <= 0.05 ? pass(d) : fail(d);
}

Outcome a3_overconfident() {
  // Stated confidence ~ Uniform(lo, 1), accuracy(c) = max(0, c - shift).
  const double lo = 0.3;
  const double shift = 0.3;
  RunConfig c;
  c.synthetic = SyntheticDataset{10000, 4, 3};
  c.simulator.seed = 4;
  c.simulator.accuracy_given_confidence = PiecewiseLinear::shifted(shift);
  c.simulator.confidence_sampler = ConfidenceSampler::uniform(lo, 1.0);
  c.methods = {Method::verb_conf()};
  c.output_dir = scratch("a3");
  c.client.max_parallel = 8;
  const auto rep = run(c).reports.at(0);
  fs::remove_all(c.output_dir);

  // AUROC = P(c+ > c-) with c+ ~ f(c)a(c) and c- ~ f(c)(1 - a(c)), by the
  // midpoint rule on a fine grid.
  const int steps = 200000;
  const double h = (1.0 - lo) / steps;
  double pos_mass = 0.0;
  double neg_mass = 0.0;
  double pairs = 0.0;
  for (int i = 0; i < steps; ++i) {
    const double x = lo + (i + 0.5) * h;
    const double a = std::max(0.0, x - shift);
    const double p = a * h;
    const double q = (1.0 - a) * h;
    pairs += p * (neg_mass + 0.5 * q);
    pos_mass += p;
    neg_mass += q;
  }
  const double analytic = pairs / (pos_mass * neg_mass);
  const auto d = fmt("ECE %.4f (>= 0.25), AUROC %.4f vs analytic %.4f (tol 0.02)", *rep.ece, *rep.auroc, analytic);
  return *rep.ece >= 0.25 && std::fabs(*rep.auroc - analytic) <= 0.02 ? pass(d) : fail(d);
}

Outcome a4_reward_surface() {
  for (const bool y : {false, true}) {
    const double yv = y ? 1.0 : 0.0;
    for (int i = 0; i <= 100; ++i) {
      const double p = i / 100.0;
      const double want = yv - (p - yv) * (p - yv);
      const auto got = rlcr_reward(ParseOutcome::ok({"a", p, std::nullopt}), y).reward;
      if (got != want) return fail(fmt("reward(p=%.2f, y=%d) = %.17g, want %.17g", p, y ? 1 : 0, got, want));
    }
  }
  for (const auto reason : kAllFormatReasons) {
    for (const bool y : {false, true}) {
      const auto fe = ParseOutcome::format_error(reason);
      if (rlcr_reward(fe, y).reward != -1.0 || rlvr_reward(fe, y).reward != -1.0) {
        return fail("format error " + std::string(to_string(reason)) + " not penalized with -1");
      }
    }
  }
  gen::Rng rng(7);
  double worst = 0.0;
  for (int g = 0; g < 1000; ++g) {
    std::vector<double> rewards(8);
    for (auto& r : rewards) {
      r = rng.coin(0.2) ? -1.0 : rlcr_reward(ParseOutcome::ok({"a", rng.unit(), std::nullopt}), rng.coin()).reward;
    }
    const auto adv = group_advantages(rewards);
    worst = std::max(worst, std::fabs(std::accumulate(adv.begin(), adv.end(), 0.0)));
  }
  if (worst > 1e-12) return fail(fmt("advantage sum reached %.3g", worst));
  return pass(fmt("202 grid points exact, %zu format reasons give -1, max |sum adv| %.2g",
                  std::size(kAllFormatReasons), worst));
}

Outcome a5_parser_corpus() {
  const auto cases = corpus::load(VERBCAL_TEST_DATA "/parser_corpus.jsonl");
  if (cases.size() < 60) return fail(fmt("corpus has only %zu cases", cases.size()));
  bool nine_option = false;
  for (const auto& c : cases) {
    const auto why = corpus::check(c);
    if (!why.empty()) return fail(c.name + ": " + why);
    if (c.options.size() == 9 && c.expect.value("answer", "") == "I" && c.expect.value("confidence", 0.0) == 0.60) {
      nine_option = true;
    }
  }
  if (!nine_option) return fail("nine-option case missing from the corpus");
  return pass(fmt("%zu cases parse as expected, nine-option case -> (I, 0.60)", cases.size()));
}

Outcome a6_aggregation_trend() {
  RunConfig c;
  c.synthetic = SyntheticDataset{2000, 4, 5};
  c.simulator.seed = 6;
  c.methods = {Method::verb_conf()};
  c.samples_per_question = 16;
  c.aggregation = AggregationSpec{AggregationMode::WeightedConfidence, 16, 0.8};
  c.output_dir = scratch("a6");
  c.client.max_parallel = 8;
  run(c);
  const auto log = read_record_log(c.output_dir / "records.jsonl");
  fs::remove_all(c.output_dir);

  std::vector<double> brier_at;
  std::string trace;
  for (const int n : {1, 2, 4, 8, 16}) {
    const auto agg = aggregate_log(log, AggregationSpec{AggregationMode::WeightedConfidence, n, 0.8});
    brier_at.push_back(*evaluate(agg).brier);
    trace += fmt("%sN=%d %.4f", trace.empty() ? "" : ", ", n, brier_at.back());
  }
  for (std::size_t i = 1; i < brier_at.size(); ++i) {
    if (brier_at[i] > brier_at[i - 1] + 0.005) return fail("Brier rose: " + trace);
  }
  if (!(brier_at.back() < brier_at.front() - 0.01)) return fail("no improvement: " + trace);
  return pass("Brier " + trace);
}

Outcome a7_determinism() {
  RunConfig a;
  a.synthetic = SyntheticDataset{150, 0, 8};
  a.simulator.seed = 9;
  a.methods = {Method::logit(), Method::ptrue(), Method::verb_conf(), Method::verb_topk(2), Method::verb_distrib()};
  a.samples_per_question = 4;
  a.aggregation = AggregationSpec{AggregationMode::WeightedConfidence, 4, 0.8};
  a.output_dir = scratch("a7a");
  a.client.max_parallel = 8;
  auto b = a;
  b.output_dir = scratch("a7b");
  b.client.max_parallel = 3;
  run(a);
  run(b);
  std::size_t compared = 0;
  for (const auto& entry : fs::recursive_directory_iterator(a.output_dir)) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), a.output_dir);
    if (slurp(entry.path()) != slurp(b.output_dir / rel)) return fail(rel.string() + " differs");
    ++compared;
  }
  fs::remove_all(a.output_dir);
  fs::remove_all(b.output_dir);
  return pass(fmt("%zu output files byte-identical across two runs", compared));
}

Outcome a8_live_smoke() {
  const char* base = std::getenv("VERBCAL_BASE_URL");
  const char* model = std::getenv("VERBCAL_MODEL");
  const char* key_env = std::getenv("VERBCAL_API_KEY_ENV");
  const std::string key_var = key_env ? key_env : "OPENAI_API_KEY";
  if (!base || !model || !std::getenv(key_var.c_str())) {
    return {Status::Skip, "set VERBCAL_BASE_URL, VERBCAL_MODEL and " + key_var + " to run against a live endpoint"};
  }
  RunConfig c;
  c.manifest = DatasetManifest{"smoke", VERBCAL_TEST_DATA "/smoke_questions.jsonl", DatasetKind::OpenEnded, 20,
                               std::nullopt, std::nullopt};
  c.backend = BackendKind::Http;
  c.client.base_url = base;
  c.client.model_name = model;
  c.client.api_key_env = key_var;
  c.client.logprobs = false;
  c.judge = JudgeMode::Exact;
  c.methods = {Method::verb_conf(), Method::verb_topk(2), Method::verb_distrib()};
  c.output_dir = scratch("a8");
  const auto result = run(c);
  std::string d;
  bool ok = true;
  for (const auto& rep : result.reports) {
    const double rate = 1.0 - static_cast<double>(rep.n_format_errors) / static_cast<double>(rep.n);
    d += fmt("%s%s ok %.0f%%", d.empty() ? "" : ", ", rep.method.c_str(), rate * 100.0);
    ok = ok && rep.n == 20 && rate >= 0.9;
  }
  for (const auto* stem : {"VerbConf", "VerbTopK-2", "VerbDistrib"}) {
    const auto j = nlohmann::json::parse(slurp(c.output_dir / "reports" / (std::string(stem) + ".json")), nullptr, false);
    ok = ok && !j.is_discarded() && j.contains("ece") && j["calibration_bins"].size() == 10;
  }
  return ok ? pass(d) : fail(d);
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> checks = {
      {"A1", a1_metric_oracle},    {"A2", a2_calibrated_ece},    {"A3", a3_overconfident},
      {"A4", a4_reward_surface},   {"A5", a5_parser_corpus},     {"A6", a6_aggregation_trend},
      {"A7", a7_determinism},      {"A8", a8_live_smoke},
  };
  int failures = 0;
  for (const auto& [name, check] : checks) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = fail(std::string("exception: ") + e.what());
    }
    const char* label = o.status == Status::Pass ? "PASS" : o.status == Status::Fail ? "FAIL" : "SKIP";
    std::printf("%s %s %s\n", name, label, o.detail.c_str());
    std::fflush(stdout);
    if (o.status == Status::Fail) ++failures;
  }
  return failures == 0 ? 0 : 1;
}
