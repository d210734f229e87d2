#ifndef DCMVC_RNG_HPP
#define DCMVC_RNG_HPP

#include <cmath>
#include <cstdint>
#include <random>

namespace dcmvc {

// Deterministic RNG. All randomness in the project flows through this so
// that a seed fully pins initialization, data generation and training.
// The raw generator is mt19937_64 (sequence pinned by the standard); the
// float conversions below are fixed here rather than delegated to
// std::*_distribution, whose output is implementation-defined.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // uniform in [0, 1)
  double uniform() { return (gen_() >> 11) * 0x1.0p-53; }

  float uniform(float lo, float hi) {
    return lo + static_cast<float>(uniform()) * (hi - lo);
  }

  // inclusive bounds
  int uniform_int(int lo, int hi) {
    return lo + static_cast<int>(gen_() % static_cast<uint64_t>(hi - lo + 1));
  }

  // standard normal via Box-Muller (fixed, platform-independent)
  float normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform(), u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * 3.14159265358979323846 * u2;
    spare_ = static_cast<float>(r * std::sin(a));
    have_spare_ = true;
    return static_cast<float>(r * std::cos(a));
  }

 private:
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  float spare_ = 0.0f;
};

}  // namespace dcmvc

#endif
