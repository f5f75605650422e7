#pragma once

// Small seeded generators for property tests.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace gen {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double unit() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  // Uniform integer in [lo, hi].
  int between(int lo, int hi) { return lo + static_cast<int>(engine_() % static_cast<std::uint64_t>(hi - lo + 1)); }
  bool coin(double p = 0.5) { return unit() < p; }

  // Confidences drawn from a coarse grid half the time, to force ties and
  // values sitting exactly on bin edges.
  double confidence() {
    if (coin()) return between(0, 20) / 20.0;
    return unit();
  }

  // Valid UTF-8, with punctuation that stresses JSON and text handling.
  std::string text(int max_len) {
    static const std::vector<std::string> pieces = {"a", "b", "c", "X", "Y", "Z", "0", "1", "9", " ", ".", ",", ";", ":",
                                                    "!", "?", "'", "\"", "-", "_", "(", ")", "[", "]", "{", "}", "\t",
                                                    "\n", "\\", "/", "\xc3\xa9", "\xe2\x82\xac"};
    std::string s;
    const int n = between(0, max_len);
    for (int i = 0; i < n; ++i) s += pieces[static_cast<std::size_t>(between(0, static_cast<int>(pieces.size()) - 1))];
    return s;
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace gen
