#pragma once

#include <cmath>
#include <cstdint>

namespace glfluct {

// Counter-derived substreams: every (seed, sample, component, step) tuple maps
// to an independent stream, so parallel and serial runs agree bit for bit.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9E3779B97F4A7C15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline std::uint64_t mix_key(std::uint64_t a, std::uint64_t b) {
  std::uint64_t st = a ^ (b + 0x9E3779B97F4A7C15ULL + (a << 6) + (a >> 2));
  return splitmix64(st);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) { splitmix64(state_); }
  Rng(std::uint64_t seed, std::uint64_t sample, std::uint64_t component, std::uint64_t step)
      : state_(mix_key(mix_key(mix_key(seed, sample), component), step)) {}

  std::uint64_t next_u64() { return splitmix64(state_); }

  // uniform in (0, 1]
  double next_unit() {
    const double u = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    return u > 0.0 ? u : 0x1.0p-53;
  }

  // standard normal, Box-Muller with a cached spare
  double next_gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = next_unit();
    const double u2 = next_unit();
    const double rad = std::sqrt(-2.0 * std::log(u1));
    const double ang = 2.0 * M_PI * u2;
    spare_ = rad * std::sin(ang);
    have_spare_ = true;
    return rad * std::cos(ang);
  }

 private:
  std::uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace glfluct
