#include "anderson/noise.hpp"

#include "anderson/rng.hpp"

namespace anderson {

namespace {
constexpr uint64_t kNoiseStream = 0x5749484e4f495345ull;
}

// One Gaussian pair per conjugate mode pair {k,-k}, keyed by the canonical
// representative, so the realization is independent of traversal order.
NoiseRealization sample_white_noise(const TorusGrid& grid, uint64_t seed) {
  NoiseRealization out{grid, seed, SpectralField(grid), 0.0, constant_field(grid, 1.0)};
  int N = grid.N;
  double sd_pair = 1.0 / (grid.L * std::sqrt(2.0));  // per real/imag part of a +-k pair
  double sd_zero = 1.0 / grid.L;
  for (int i = 0; i < N; ++i) {
    if (!grid.in_core_axis(i)) continue;
    for (int j = 0; j < N; ++j) {
      if (!grid.in_core_axis(j)) continue;
      int i2 = (N - i) % N, j2 = (N - j) % N;
      int self = grid.idx(i, j), mate = grid.idx(i2, j2);
      if (self > mate) continue;  // canonical representative owns the pair
      CounterRng rng(seed, kNoiseStream, static_cast<uint64_t>(self));
      auto [a, b] = rng.gauss_pair();
      if (self == mate) {
        out.field.c[self] = cplx{sd_zero * a, 0.0};
      } else {
        out.field.c[self] = cplx{sd_pair * a, sd_pair * b};
        out.field.c[mate] = cplx{sd_pair * a, -sd_pair * b};
      }
    }
  }
  return out;
}

NoiseRealization heat_regularize(const NoiseRealization& noise, double r) {
  if (r < 0) throw std::invalid_argument("heat_regularize: r must be >= 0");
  NoiseRealization out = noise;
  out.r = noise.r + r;
  out.field.apply_symbol([r](double k2) { return std::exp(-r * k2); });
  return out;
}

double pair(const NoiseRealization& noise, const SpectralField& phi) {
  return dot(phi, noise.field);
}

}  // namespace anderson
