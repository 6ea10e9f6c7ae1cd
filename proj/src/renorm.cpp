#include "anderson/renorm.hpp"

namespace anderson {

EnhancedNoise make_enhanced(const LP& lp, const NoiseRealization& noise_r, const SpectralField& h,
                            double z0) {
  if (!(noise_r.grid == lp.grid)) throw std::invalid_argument("make_enhanced: grid mismatch");
  if (noise_r.r <= 0.0 || noise_r.r >= 1.0)
    throw std::invalid_argument("make_enhanced: regularization r must lie in (0,1)");
  if (z0 <= 0.0) throw std::invalid_argument("make_enhanced: z0 must be positive");

  EnhancedNoise en;
  en.grid = noise_r.grid;
  en.h = h;
  en.z0 = z0;
  en.r = noise_r.r;
  en.xi_r = noise_r;
  en.h_xi = multiply_dealiased(h, noise_r.field);
  en.X = en.h_xi;
  en.X.apply_symbol([z0](double k2) { return 1.0 / (k2 + z0); });
  en.raw_resonant = resonant(lp, en.X, en.h_xi);
  en.c_hr = (std::abs(std::log(en.r)) / (4.0 * M_PI)) * multiply_dealiased(h, h);
  en.renorm_resonant = en.raw_resonant - en.c_hr;
  return en;
}

EnhancedNoise enhance_single(const LP& lp, uint64_t seed, const SpectralField& h, double z0,
                             double r) {
  auto xi = heat_regularize(sample_white_noise(lp.grid, seed), r);
  return make_enhanced(lp, xi, h, z0);
}

std::pair<SpectralField, RenormDiagnostics> renormalized_resonant(const LP& lp,
                                                                  const SpectralField& h,
                                                                  double z0, double r,
                                                                  uint64_t seed) {
  EnhancedNoise en = enhance_single(lp, seed, h, z0, r);
  RenormDiagnostics d;
  d.mean_raw = en.raw_resonant.mean();
  d.mean_renorm = en.renorm_resonant.mean();
  d.c_mean = en.c_hr.mean();
  d.exact_mean = expected_resonant_mean(lp.grid, h.mean(), z0, r);
  d.residual_norm = en.renorm_resonant.hs(-0.2);
  return {en.renorm_resonant, d};
}

double expected_resonant_mean(const TorusGrid& grid, double h0, double z0, double r) {
  double s = 0.0;
  for (int i = 0; i < grid.N; ++i)
    for (int j = 0; j < grid.N; ++j) {
      if (!grid.in_core(i, j)) continue;
      double k2 = grid.kappa2(i, j);
      s += std::exp(-2.0 * r * k2) / (k2 + z0);
    }
  return h0 * h0 * s / grid.mu();
}

EnhanceSweep enhance_noise(const LP& lp, const NoiseRealization& noise, const SpectralField& h,
                           double z0, const std::vector<double>& r_schedule, double s) {
  if (r_schedule.empty()) throw std::invalid_argument("enhance_noise: empty r schedule");
  EnhanceSweep sweep;
  sweep.r_schedule = r_schedule;
  sweep.s = s;
  for (double r : r_schedule)
    sweep.stages.push_back(make_enhanced(lp, heat_regularize(noise, r), h, z0));
  for (size_t i = 0; i + 1 < sweep.stages.size(); ++i)
    sweep.cauchy.push_back(
        (sweep.stages[i].renorm_resonant - sweep.stages[i + 1].renorm_resonant).hs(-s));
  return sweep;
}

}  // namespace anderson
