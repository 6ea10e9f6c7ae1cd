#pragma once
#include "anderson/lp.hpp"
#include "anderson/noise.hpp"

namespace anderson {

// Enhanced noise: the regularized realization together with the resolvent
// lift X = (-Delta + z0)^{-1}(h xi_r) and the Wick-renormalized resonant
// product. The counterterm c_{h,r} = |log r| h^2 / (4 pi) is the diverging
// mean of Pi(X, h xi_r); the operator potential carries h xi_r + c_{h,r}.
struct EnhancedNoise {
  TorusGrid grid;
  SpectralField h;
  double z0 = 1.0;
  double r = 0.0;
  NoiseRealization xi_r;
  SpectralField h_xi;            // dealiased product h . xi_r
  SpectralField X;               // (-Delta + z0)^{-1} (h xi_r)
  SpectralField raw_resonant;    // Pi(X, h xi_r)
  SpectralField renorm_resonant; // raw_resonant - c_hr
  SpectralField c_hr;            // |log r| h^2 / (4 pi), a field when h varies
};

// Build the lift and both resonant fields from an already-regularized
// realization. Requires r in (0,1): at r = 0 the counterterm is infinite, at
// r >= 1 the sign of |log r| degenerates.
EnhancedNoise make_enhanced(const LP& lp, const NoiseRealization& noise_r, const SpectralField& h,
                            double z0);

// Convenience: sample, regularize, enhance.
EnhancedNoise enhance_single(const LP& lp, uint64_t seed, const SpectralField& h, double z0,
                             double r);

struct RenormDiagnostics {
  double mean_raw = 0.0;       // spatial mean of Pi(X, h xi_r)
  double mean_renorm = 0.0;    // spatial mean after subtraction
  double c_mean = 0.0;         // spatial mean of the counterterm field
  double exact_mean = 0.0;     // deterministic mode-sum E[Pi] (constant h only)
  double residual_norm = 0.0;  // H^{-0.2} norm of the renormalized field
};

// One-shot renormalized resonant product with its diagnostics.
std::pair<SpectralField, RenormDiagnostics> renormalized_resonant(const LP& lp,
                                                                  const SpectralField& h,
                                                                  double z0, double r,
                                                                  uint64_t seed);

// Exact expectation of the spatial mean of Pi(X, h0 xi_r) for constant
// coupling h0: every mode pairs with its conjugate inside the same block, so
//   E[mean Pi] = h0^2 sum_k e^{-2 r |kappa_k|^2} / ((|kappa_k|^2 + z0) L^2).
double expected_resonant_mean(const TorusGrid& grid, double h0, double z0, double r);

// counterterm scalar for constant coupling
inline double counterterm(double h0, double r) {
  return std::abs(std::log(r)) * h0 * h0 / (4.0 * M_PI);
}

// r-schedule sweep at fixed seed with Cauchy diagnostics in H^{-s}.
struct EnhanceSweep {
  std::vector<double> r_schedule;
  std::vector<EnhancedNoise> stages;
  std::vector<double> cauchy;  // ||renorm(r_i) - renorm(r_{i+1})||_{H^{-s}}
  double s = 0.2;
};
EnhanceSweep enhance_noise(const LP& lp, const NoiseRealization& noise, const SpectralField& h,
                           double z0, const std::vector<double>& r_schedule, double s = 0.2);

}  // namespace anderson
