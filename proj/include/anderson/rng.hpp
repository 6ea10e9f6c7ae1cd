#pragma once
#include <cmath>
#include <cstdint>
#include <utility>

namespace anderson {

// splitmix64 finalizer, used as a keyed counter hash. Every random number in
// the artifact is a pure function of (master seed, stream key, counter), so
// results are independent of evaluation order and of the thread schedule.
inline uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// uniform in (0,1], 53-bit mantissa
inline double u01(uint64_t bits) { return static_cast<double>((bits >> 11) + 1) * 0x1.0p-53; }

struct CounterRng {
  uint64_t key;
  uint64_t ctr = 0;

  explicit CounterRng(uint64_t seed, uint64_t a = 0, uint64_t b = 0)
      : key(mix64(mix64(mix64(seed) + a) + b)) {}

  uint64_t bits_at(uint64_t c) const { return mix64(key ^ mix64(c + 0x632be59bd9b4e019ull)); }
  uint64_t bits() { return bits_at(ctr++); }
  double uniform() { return u01(bits()); }

  // Box-Muller; one pair per two counters
  std::pair<double, double> gauss_pair() {
    double u1 = uniform(), u2 = uniform();
    double rad = std::sqrt(-2.0 * std::log(u1));
    return {rad * std::cos(2.0 * M_PI * u2), rad * std::sin(2.0 * M_PI * u2)};
  }
  double gauss() {
    auto [a, b] = gauss_pair();
    (void)b;
    return a;
  }
  // integer in [0, n)
  uint64_t below(uint64_t n) { return bits() % n; }
};

}  // namespace anderson
