#include "verbcal/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

namespace verbcal {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const auto v = std::stoull(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return static_cast<T>(v);
  } catch (const std::exception&) {
    throw Error(ErrorCode::ConfigError, "manifest key '" + key + "' needs a non-negative integer, got '" + value + "'");
  }
}

// Uniform in [0, bound) by rejection, so samples do not depend on the
// standard library's distribution implementation.
std::uint64_t bounded(std::mt19937_64& rng, std::uint64_t bound) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % bound;
  for (;;) {
    const auto x = rng();
    if (x < limit) return x % bound;
  }
}

QuestionInstance parse_line(const nlohmann::json& j, DatasetKind kind) {
  if (!j.is_object()) throw Error(ErrorCode::SchemaError, "not a JSON object");
  for (const auto* field : {"id", "question", "answer"}) {
    if (!j.contains(field)) throw Error(ErrorCode::SchemaError, std::string("missing \"") + field + "\"");
  }
  std::string id;
  if (j["id"].is_string()) {
    id = j["id"].get<std::string>();
  } else if (j["id"].is_number_integer()) {
    id = std::to_string(j["id"].get<std::int64_t>());
  } else {
    throw Error(ErrorCode::SchemaError, "\"id\" must be a string or integer");
  }
  if (id.empty()) throw Error(ErrorCode::SchemaError, "empty \"id\"");
  if (!j["question"].is_string()) throw Error(ErrorCode::SchemaError, "\"question\" must be a string");
  if (!j["answer"].is_string()) throw Error(ErrorCode::SchemaError, "\"answer\" must be a string");
  const auto question = j["question"].get<std::string>();
  const auto answer = j["answer"].get<std::string>();

  if (kind == DatasetKind::OpenEnded) {
    if (j.contains("options")) throw Error(ErrorCode::SchemaError, "open-ended item with \"options\"");
    if (canonicalize_answer(answer).empty()) throw Error(ErrorCode::SchemaError, "empty \"answer\"");
    return QuestionInstance::open(id, question, answer);
  }
  if (!j.contains("options")) throw Error(ErrorCode::SchemaError, "missing \"options\"");
  std::vector<std::string> options;
  const auto& o = j["options"];
  if (o.is_array()) {
    for (const auto& v : o) {
      if (!v.is_string()) throw Error(ErrorCode::SchemaError, "option texts must be strings");
      options.push_back(v.get<std::string>());
    }
  } else if (o.is_object()) {
    // Keyed by letter: keys must be exactly A, B, ... in sequence.
    for (std::size_t i = 0; i < o.size(); ++i) {
      const std::string key(1, static_cast<char>('A' + i));
      if (i >= 26 || !o.contains(key) || !o[key].is_string()) {
        throw Error(ErrorCode::SchemaError, "option object must have string keys A, B, ... in sequence");
      }
      options.push_back(o[key].get<std::string>());
    }
  } else {
    throw Error(ErrorCode::SchemaError, "\"options\" must be an array or an object");
  }
  if (options.size() < 2) throw Error(ErrorCode::SchemaError, "multiple choice needs at least two options");
  try {
    return QuestionInstance::known(id, question, std::move(options), answer);
  } catch (const Error& e) {
    throw Error(ErrorCode::SchemaError, e.what());
  }
}

}  // namespace

void DatasetManifest::validate() const {
  if (path.empty()) throw Error(ErrorCode::ConfigError, "manifest without a path");
  if (size && *size < 1) throw Error(ErrorCode::ConfigError, "manifest size must be >= 1");
  if (size && sample_n && *sample_n > *size) throw Error(ErrorCode::NTooLarge, "sample_n exceeds size");
}

DatasetManifest read_manifest(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw Error(ErrorCode::IoError, "cannot read manifest " + file.string());
  DatasetManifest m;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::ConfigError, file.string() + ":" + std::to_string(n) + ": expected key = value");
    }
    const auto key = trim(std::string_view(line).substr(0, eq));
    const auto value = trim(std::string_view(line).substr(eq + 1));
    if (key == "name") {
      m.name = value;
    } else if (key == "path") {
      m.path = value;
    } else if (key == "kind") {
      if (value == "MultipleChoice") {
        m.kind = DatasetKind::MultipleChoice;
      } else if (value == "OpenEnded") {
        m.kind = DatasetKind::OpenEnded;
      } else {
        throw Error(ErrorCode::ConfigError, "kind must be MultipleChoice or OpenEnded, got '" + value + "'");
      }
    } else if (key == "size") {
      m.size = parse_number<std::size_t>(key, value);
    } else if (key == "sample_seed") {
      m.sample_seed = parse_number<std::uint64_t>(key, value);
    } else if (key == "sample_n") {
      m.sample_n = parse_number<std::size_t>(key, value);
    } else {
      throw Error(ErrorCode::ConfigError, file.string() + ":" + std::to_string(n) + ": unknown key '" + key + "'");
    }
  }
  if (m.path.is_relative()) m.path = file.parent_path() / m.path;
  if (m.name.empty()) m.name = m.path.stem().string();
  m.validate();
  return m;
}

std::vector<QuestionInstance> load_jsonl(std::string_view text, DatasetKind kind) {
  std::vector<QuestionInstance> out;
  std::set<std::string, std::less<>> ids;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const auto line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (trim(line).empty()) continue;
    const auto j = nlohmann::json::parse(line, nullptr, false);
    try {
      if (j.is_discarded()) throw Error(ErrorCode::SchemaError, "invalid JSON");
      auto q = parse_line(j, kind);
      if (!ids.insert(q.id()).second) {
        throw Error(ErrorCode::DuplicateId, "line " + std::to_string(line_no) + ": duplicate id '" + q.id() + "'");
      }
      out.push_back(std::move(q));
    } catch (const Error& e) {
      if (e.code() == ErrorCode::DuplicateId) throw;
      throw Error(ErrorCode::SchemaError, "line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::vector<QuestionInstance> load(const DatasetManifest& manifest) {
  manifest.validate();
  std::ifstream in(manifest.path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot read dataset " + manifest.path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  auto out = load_jsonl(buf.str(), manifest.kind);
  if (manifest.size && out.size() != *manifest.size) {
    throw Error(ErrorCode::SchemaError, manifest.path.string() + ": manifest size " + std::to_string(*manifest.size) +
                                            " but file has " + std::to_string(out.size()) + " items");
  }
  return out;
}

std::vector<QuestionInstance> load_sampled(const DatasetManifest& manifest) {
  auto all = load(manifest);
  if (!manifest.sample_n) return all;
  return sample(all, *manifest.sample_n, manifest.sample_seed.value_or(0));
}

std::string serialize(std::span<const QuestionInstance> instances) {
  std::string out;
  for (const auto& q : instances) {
    nlohmann::ordered_json j;
    j["id"] = q.id();
    j["question"] = q.question();
    if (q.is_known()) {
      auto options = nlohmann::ordered_json::array();
      for (const auto& o : q.options()) options.push_back(o.text);
      j["options"] = std::move(options);
    }
    j["answer"] = q.gold();
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::vector<QuestionInstance> sample(std::span<const QuestionInstance> instances, std::size_t n, std::uint64_t seed) {
  if (n > instances.size()) {
    throw Error(ErrorCode::NTooLarge, "cannot sample " + std::to_string(n) + " of " + std::to_string(instances.size()));
  }
  std::vector<std::size_t> order(instances.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return instances[a].id() < instances[b].id(); });
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    const auto j = i + bounded(rng, order.size() - i);
    std::swap(order[i], order[j]);
  }
  order.resize(n);
  std::sort(order.begin(), order.end());
  std::vector<QuestionInstance> out;
  out.reserve(n);
  for (const auto i : order) out.push_back(instances[i]);
  return out;
}

std::vector<QuestionInstance> filter_by_difficulty(std::span<const QuestionInstance> instances, const Probe& probe,
                                                   int attempts, DifficultyFilter keep) {
  if (attempts < 1) throw Error(ErrorCode::InvalidArgument, "attempts must be >= 1");
  std::vector<QuestionInstance> out;
  for (const auto& q : instances) {
    bool solved = false;
    bool failed = false;
    for (int a = 0; a < attempts; ++a) {
      try {
        (probe(q, a) ? solved : failed) = true;
      } catch (const std::exception& e) {
        throw Error(ErrorCode::ProbeFailed, "question " + q.id() + ": " + e.what());
      }
    }
    if ((keep == DifficultyFilter::SolvedAtLeastOnce && solved) ||
        (keep == DifficultyFilter::FailedAtLeastOnce && failed)) {
      out.push_back(q);
    }
  }
  return out;
}

}  // namespace verbcal
