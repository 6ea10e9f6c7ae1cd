#pragma once
#include "anderson/galerkin.hpp"

namespace anderson {

// Heat kernel p_t(x,y) = sum_n e^{-t lambda_n} u_n(x) u_n(y) of a spectral
// decomposition, evaluated at grid points (point index = i*N + j). For a
// full decomposition the sum is exact for the truncated operator; for a
// partial one the crude tail certificate e^{-t lambda_last} * (dim - kept)
// * max_n sup|u_n|^2 (sup over the kept eigenfunctions, a recorded proxy)
// is attached. Grid values of the eigenfunctions are materialized on first
// kernel use.
struct HeatKernelEvaluator {
  SpectralDecomposition dec;
  std::vector<double> u_vals;  // [point * kept + n], lazy

  int points() const { return dec.grid.size(); }
  bool full() const { return dec.kept == dec.layout.dim(); }
  void ensure_values();
};

HeatKernelEvaluator make_heat_evaluator(SpectralDecomposition dec);

double heat_kernel(HeatKernelEvaluator& ev, double t, int ix, int iy);
double heat_tail_certificate(HeatKernelEvaluator& ev, double t);
// rows of the kernel matrix over all grid columns for the given x points
std::vector<double> heat_kernel_rows(HeatKernelEvaluator& ev, double t,
                                     const std::vector<int>& xs);
// e^{-tH} f through the spectral representation (projects onto the kept
// span when the decomposition is partial)
SpectralField heat_apply(const HeatKernelEvaluator& ev, double t, const SpectralField& f);
// p_t(., y) as an exact core field
SpectralField kernel_slice(HeatKernelEvaluator& ev, double t, int iy);
// core-truncated free kernel p^Delta_t(., y); same truncation as the
// operator kernel so differences compare like with like
SpectralField free_kernel_slice(const TorusGrid& g, double t, int iy);

// continuum oracles for p^Delta at grid displacement (di, dj):
// Fourier theta sum over |k|_inf <= kmax, and the 9x9 image-sum form
double theta_kernel(const TorusGrid& g, double t, int di, int dj, int kmax);
double theta_kernel_images(const TorusGrid& g, double t, int di, int dj);

// smallest t on a 5% log grid where the core theta sum matches the full
// lattice sum to 1e-8 relative at the diagonal; the trusted range is
// [t_min, infinity). The diagonal is where every lattice term adds
// positively, so this bounds the absolute truncation error at every
// displacement by 1e-8 of the kernel's sup. At displacements where the
// kernel itself is exponentially smaller than that floor the relative
// error is necessarily large; certificates sampling such pairs must gate
// on d^2/t.
double trusted_t_min(const TorusGrid& g);

// flat torus distance between grid points
double torus_distance(const TorusGrid& g, int ix, int iy);

double trace_eigen(const HeatKernelEvaluator& ev, double t);
double trace_diagonal(HeatKernelEvaluator& ev, double t);

struct TraceFit {
  std::vector<double> t, trace;
  double leading = 0.0;             // coefficient of 1/t
  double remainder_exponent = 0.0;  // remainder ~ t^{-e} fit
};
TraceFit trace_asymptotic_fit(HeatKernelEvaluator& ev, const std::vector<double>& ts);

struct KernelDifferenceProfile {
  std::vector<double> t, sup_diff, besov_diff;
  double exponent = 0.0;  // sup-norm growth exponent as t decreases
};
KernelDifferenceProfile kernel_difference_profile(HeatKernelEvaluator& ev, const LP& lp,
                                                  const std::vector<double>& ts, int iy,
                                                  double rho = 0.1);

// joint (m, c) search for the two-sided Gaussian bound
//   e^{-t lambda_0}/(m c t) exp(-c d^2/t) <= p_t <= m c e^{-t lambda_0}/t exp(-d^2/(c t))
// over the (t, x, y) sample lattice. The required m(c) is monotone
// decreasing in c (both envelope factors loosen), so the search minimizes
// max(m, c); that makes both reported constants meaningful. violations
// counts non-positive kernel samples, which no (m, c) can repair.
struct GaussianCertificate {
  double m = 0.0;
  double c = 0.0;
  int violations = 0;
  int samples = 0;
};
GaussianCertificate gaussian_bound_certificate(HeatKernelEvaluator& ev,
                                               const std::vector<double>& ts, int stride);
// prediction from the ground-state conjugation argument: the free-kernel
// certificate inflated by the oscillation (max u0 / min u0)^2
GaussianCertificate gaussian_replay(HeatKernelEvaluator& ev, const GaussianCertificate& free_cert);

// sup_x (sum_y p_t(x,y) d(x,y)^k dy)^{1/k}
double moment_scaling(HeatKernelEvaluator& ev, double t, int k);

// sup over probes of ||e^{-t(H - lambda_0)} f||_{L^p} / ||f||_{L^2}, p in {2, 4}
double hypercontractivity_probe(const HeatKernelEvaluator& ev, double t, int p, int n_probes,
                                uint64_t seed);

// min over the doubled grid of e^{-tH} f, the maximum-principle surrogate
double semigroup_min(const HeatKernelEvaluator& ev, double t, const SpectralField& f);

}  // namespace anderson
