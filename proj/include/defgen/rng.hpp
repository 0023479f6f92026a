#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace defgen {

/// Deterministic splitmix64 stream. Every source of randomness in the
/// project flows from one master seed; sub-streams are derived by label
/// so adding a consumer never shifts another consumer's draws.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller (no cached spare; keeps the stream
  /// position independent of call parity).
  double gauss() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  /// Uniform integer in [0, n).
  int64_t below(int64_t n) {
    return n <= 1 ? 0 : static_cast<int64_t>(next_u64() % static_cast<uint64_t>(n));
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (int64_t i = static_cast<int64_t>(v.size()) - 1; i > 0; --i) {
      std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(below(i + 1))]);
    }
  }

  Rng derive(const std::string& label) const {
    return Rng(derive_seed(state_, label));
  }

  static uint64_t derive_seed(uint64_t master, const std::string& label) {
    uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a over the label
    for (unsigned char c : label) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    // one splitmix round to decorrelate master and label hash
    uint64_t z = master ^ h;
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  uint64_t state_;
};

}  // namespace defgen
