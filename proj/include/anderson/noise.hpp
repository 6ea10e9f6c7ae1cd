#pragma once
#include "anderson/field.hpp"

namespace anderson {

// White noise realization, possibly heat-regularized: xi_r = e^{r Delta} xi.
// Coefficient variance at r=0 is E|xi_k|^2 = 1/L^2 per core mode, matching
// E[xi(f) xi(g)] = \int f g dmu on the truncated mode set.
struct NoiseRealization {
  TorusGrid grid;
  uint64_t seed = 0;
  SpectralField field;
  double r = 0.0;
  SpectralField h;  // coupling field, default constant 1
};

NoiseRealization sample_white_noise(const TorusGrid& grid, uint64_t seed);
NoiseRealization heat_regularize(const NoiseRealization& noise, double r);

// distributional pairing xi(phi) = \int xi phi dmu
double pair(const NoiseRealization& noise, const SpectralField& phi);

}  // namespace anderson
