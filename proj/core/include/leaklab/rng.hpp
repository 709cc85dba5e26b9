#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace leaklab {

// Derives an independent child seed from (base, stream). Used for the
// splittable-counter scheme: replicate seeds are derived as
// derive_seed(master, replicate) and never reused across streams.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

// mt19937_64 with hand-rolled distributions so that sequences are identical
// across standard library implementations (std:: distributions are not
// portable, the engine is).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform double in [0, 1), 53-bit resolution.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Marsaglia polar method, one spare cached.
  double normal();

  // Unbiased integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // k distinct indices from [0, n), returned sorted ascending.
  std::vector<int> sample_without_replacement(int n, int k);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace leaklab
