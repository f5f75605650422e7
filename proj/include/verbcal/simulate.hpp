#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "verbcal/client.hpp"
#include "verbcal/model.hpp"
#include "verbcal/prompt.hpp"

namespace verbcal {

/// Piecewise-linear map on [0,1] through sorted knots; flat outside them and
/// clamped to [0,1].
class PiecewiseLinear {
 public:
  explicit PiecewiseLinear(std::vector<std::pair<double, double>> knots);

  /// accuracy(c) = c
  static PiecewiseLinear identity();
  /// accuracy(c) = max(0, c - shift)
  static PiecewiseLinear shifted(double shift);
  static PiecewiseLinear constant(double value);

  double operator()(double x) const;
  const std::vector<std::pair<double, double>>& knots() const { return knots_; }

 private:
  std::vector<std::pair<double, double>> knots_;
};

/// Distribution of the confidence the simulated model states.
struct ConfidenceSampler {
  enum class Kind { Constant, Uniform, Beta };
  Kind kind = Kind::Uniform;
  double a = 0.0;  // constant value | uniform low  | beta alpha
  double b = 1.0;  //                | uniform high | beta beta

  static ConfidenceSampler constant(double value) { return {Kind::Constant, value, value}; }
  static ConfidenceSampler uniform(double low, double high) { return {Kind::Uniform, low, high}; }
  static ConfidenceSampler beta(double alpha, double beta) { return {Kind::Beta, alpha, beta}; }

  double draw(std::mt19937_64& rng) const;
  void validate() const;
};

/// Offline stand-in for a model whose calibration is known by construction:
/// it states confidence c and is right with probability accuracy(c).
struct SimulatedModelSpec {
  std::uint64_t seed = 0;
  PiecewiseLinear accuracy_given_confidence = PiecewiseLinear::identity();
  ConfidenceSampler confidence_sampler;
  std::vector<std::string> candidate_vocabulary;

  void validate() const;
};

SimulatedModelSpec simulator_from_json(const nlohmann::json& j);

/// Uniform double in [0,1) from the top 53 bits.
double uniform01(std::mt19937_64& rng);

/// A syntactically valid completion for whatever the bundle asks for.
/// Deterministic in (spec.seed, question id, method, options.seed).
ModelResponse simulate(const PromptBundle& bundle, const SimulatedModelSpec& spec, const QuestionInstance& q,
                       const RequestOptions& options = {});

/// Backend over a fixed question set.
class SimulatedBackend : public Backend {
 public:
  SimulatedBackend(SimulatedModelSpec spec, std::span<const QuestionInstance> questions, bool logprobs = true);

  ModelResponse send(const PromptBundle& bundle, const RequestOptions& options,
                     const std::string& request_id) override;
  bool supports_logprobs() const override { return logprobs_; }

 private:
  SimulatedModelSpec spec_;
  std::map<std::string, QuestionInstance, std::less<>> questions_;
  bool logprobs_;
};

/// Synthetic benchmark items for simulator runs: `options` > 0 gives
/// multiple-choice questions with that many options, 0 gives open questions.
std::vector<QuestionInstance> synthetic_questions(std::size_t n, int options, std::uint64_t seed);

}  // namespace verbcal
