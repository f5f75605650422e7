#include "verbcal/aggregate.hpp"

#include <algorithm>
#include <map>

namespace verbcal {

namespace {

struct Group {
  std::string key;
  std::string display;
  double weight = 0.0;
};

std::vector<Group> group_votes(std::span<const Vote> votes, bool by_count) {
  std::vector<Group> groups;
  for (const auto& v : votes) {
    auto key = canonicalize_answer(v.answer);
    auto it = std::find_if(groups.begin(), groups.end(), [&](const Group& g) { return g.key == key; });
    if (it == groups.end()) {
      groups.push_back({std::move(key), v.answer, 0.0});
      it = groups.end() - 1;
    }
    it->weight += by_count ? 1.0 : v.confidence;
  }
  return groups;
}

AggregateResult finish(const std::vector<Group>& groups, double total, std::size_t n_valid) {
  AggregateResult r;
  r.n_valid = n_valid;
  for (const auto& g : groups) r.weights.push_back({g.display, std::clamp(g.weight / total, 0.0, 1.0)});
  // Argmax over the normalized weights so it agrees with the distribution's own argmax.
  std::size_t best = 0;
  for (std::size_t i = 1; i < r.weights.size(); ++i) {
    if (r.weights[i].probability > r.weights[best].probability) best = i;
  }
  r.answer = r.weights[best].text;
  r.confidence = r.weights[best].probability;
  return r;
}

std::vector<Vote> votes_of(std::span<const PredictionRecord> samples, std::size_t& dropped) {
  std::vector<Vote> votes;
  dropped = 0;
  for (const auto& s : samples) {
    if (!s.is_ok()) {
      ++dropped;
      continue;
    }
    votes.push_back({*s.answer(), *s.confidence()});
  }
  return votes;
}

}  // namespace

std::string to_string(AggregationMode mode) {
  return mode == AggregationMode::Frequency ? "frequency" : "weighted";
}

AggregationMode parse_aggregation_mode(std::string_view name) {
  if (name == "frequency") return AggregationMode::Frequency;
  if (name == "weighted") return AggregationMode::WeightedConfidence;
  throw Error(ErrorCode::InvalidArgument, "unknown aggregation mode '" + std::string(name) + "'");
}

void AggregationSpec::validate() const {
  if (n < 1) throw Error(ErrorCode::InvalidArgument, "aggregation needs N >= 1");
  if (temperature < 0.0) throw Error(ErrorCode::InvalidArgument, "negative sampling temperature");
}

AggregateResult aggregate_frequency(std::span<const Vote> votes) {
  if (votes.empty()) throw Error(ErrorCode::NoValidSamples, "no parsed samples to aggregate");
  const auto groups = group_votes(votes, true);
  return finish(groups, static_cast<double>(votes.size()), votes.size());
}

AggregateResult aggregate_weighted(std::span<const Vote> votes) {
  if (votes.empty()) throw Error(ErrorCode::NoValidSamples, "no parsed samples to aggregate");
  const auto groups = group_votes(votes, false);
  double total = 0.0;
  for (const auto& g : groups) total += g.weight;
  if (total <= 0.0) {
    auto r = aggregate_frequency(votes);
    r.zero_mass_fallback = true;
    return r;
  }
  return finish(groups, total, votes.size());
}

AggregateResult aggregate_frequency(std::span<const PredictionRecord> samples) {
  std::size_t dropped = 0;
  const auto votes = votes_of(samples, dropped);
  auto r = aggregate_frequency(std::span<const Vote>(votes));
  r.n_dropped = dropped;
  return r;
}

AggregateResult aggregate_weighted(std::span<const PredictionRecord> samples) {
  std::size_t dropped = 0;
  const auto votes = votes_of(samples, dropped);
  auto r = aggregate_weighted(std::span<const Vote>(votes));
  r.n_dropped = dropped;
  return r;
}

PredictionRecord aggregate_records(std::span<const PredictionRecord> samples, const AggregationSpec& spec) {
  spec.validate();
  if (samples.empty()) throw Error(ErrorCode::NoValidSamples, "no samples to aggregate");
  const auto& first = samples.front();
  const AggregationTag tag{to_string(spec.mode), static_cast<int>(samples.size())};
  std::int64_t tokens = 0;
  for (const auto& s : samples) {
    if (s.question_id() != first.question_id()) {
      throw Error(ErrorCode::InvalidArgument, "samples from different questions");
    }
    tokens += s.token_usage();
  }

  const bool any_ok = std::any_of(samples.begin(), samples.end(), [](const auto& s) { return s.is_ok(); });
  if (!any_ok) {
    return PredictionRecord::format_error(first.question_id(), first.method(), "", *first.format_reason(),
                                          "no sample parsed", tokens)
        .with_aggregation(tag);
  }

  const auto result = spec.mode == AggregationMode::Frequency ? aggregate_frequency(samples) : aggregate_weighted(samples);

  // Weights are already normalized; the aggregated answer is their argmax.
  CandidateDistribution dist(result.weights);
  auto rec = PredictionRecord::ok(first.question_id(), first.method(), "", result.answer, result.confidence, dist,
                                  tokens)
                 .with_aggregation(tag);

  // Carry verdicts over from the samples, per canonical answer.
  std::map<std::string, bool> verdicts;
  for (const auto& s : samples) {
    if (s.is_ok() && s.correct()) verdicts.emplace(canonicalize_answer(*s.answer()), *s.correct());
  }
  const auto it = verdicts.find(canonicalize_answer(result.answer));
  if (it != verdicts.end()) {
    std::optional<std::size_t> gold_index;
    for (std::size_t i = 0; i < dist.size(); ++i) {
      const auto v = verdicts.find(canonicalize_answer(dist.entries()[i].text));
      if (v != verdicts.end() && v->second) {
        gold_index = i;
        break;
      }
    }
    rec = rec.with_verdict(it->second, gold_index);
  }
  return rec;
}

std::vector<PredictionRecord> aggregate_log(std::span<const PredictionRecord> records, const AggregationSpec& spec) {
  spec.validate();
  std::vector<std::pair<std::string, std::vector<PredictionRecord>>> groups;
  std::map<std::string, std::size_t> index;
  for (const auto& r : records) {
    if (r.aggregation()) continue;
    if (r.sample_index() >= spec.n) continue;
    const auto key = r.question_id() + '\x1f' + r.method().name();
    const auto [it, inserted] = index.emplace(key, groups.size());
    if (inserted) groups.push_back({key, {}});
    groups[it->second].second.push_back(r);
  }
  std::vector<PredictionRecord> out;
  out.reserve(groups.size());
  for (auto& [key, samples] : groups) {
    std::stable_sort(samples.begin(), samples.end(),
                     [](const auto& a, const auto& b) { return a.sample_index() < b.sample_index(); });
    out.push_back(aggregate_records(samples, spec));
  }
  return out;
}

}  // namespace verbcal
