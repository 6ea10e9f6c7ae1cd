#pragma once
#include "anderson/galerkin.hpp"

namespace anderson {

// Resolvent of the renormalized operator built from the enhanced-noise data
// alone, through the fixed-point identity
//     (H - z) Gamma A^{-1} v = v + B_z v,   A = -Delta + z0,
//     B_z v = P_{h xi} w + Pi(A^{-1} v, h xi) - Cbar(w, X, h xi)
//             - w . rho - (z + z0) w,        w = Gamma A^{-1} v,
// where rho is the renormalized resonant field. The potential is never
// multiplied directly; the counterterm enters only through rho. The identity
// is exact on the truncated grid (all products dealiased), so the agreement
// with the dense resolvent is limited by the inner solver tolerance, not
// by r.
//
// apply(f) solves (Id + B_z) v = f with full GMRES (modified Gram-Schmidt,
// Givens least squares) and returns Gamma A^{-1} v.
struct FixedPointResolvent {
  LP lp;
  EnhancedNoise en;
  double z = 0.0;
  double tol = 1e-8;
  int max_iter = 400;

  mutable int iterations = 0;     // last apply
  mutable double residual = 0.0;  // last apply, relative to ||f||

  SpectralField apply(const SpectralField& f) const;
};

// requires the contraction certificate ||Pbar_(.) X|| < 1 (throws otherwise,
// naming the offending norm and suggesting a larger z0)
FixedPointResolvent make_fixed_point_resolvent(const LP& lp, const EnhancedNoise& en, double z,
                                               double tol = 1e-8, int max_iter = 400);

// right-hand side map v -> v + B_z v, exposed so the identity
// (H - z) Gamma A^{-1} v = v + B_z v can be tested against the dense route
SpectralField fixed_point_operator(const LP& lp, const EnhancedNoise& en, double z,
                                   const SpectralField& v);
// w = Gamma A^{-1} v, the paracontrolled image of an inner iterate
SpectralField paracontrolled_image(const LP& lp, const EnhancedNoise& en,
                                   const SpectralField& v);

// Dual-route comparison: the dense factorized resolvent and the fixed-point
// resolvent applied to random smooth probes. quadratic_form is <f, R(z) f>
// for the first probe (the frozen regression observable).
struct ResolventComparison {
  double z = 0.0;
  double lambda0 = 0.0;
  std::vector<double> rel_discrepancy;  // per probe
  double max_rel = 0.0;
  double quadratic_form = 0.0;
  int max_iterations = 0;
};
ResolventComparison compare_resolvents(const LP& lp, const EnhancedNoise& en, double z,
                                       int n_probes, uint64_t probe_seed);

}  // namespace anderson
