#pragma once
#include <optional>

#include "anderson/heat.hpp"

namespace anderson {

// Gaussian free field of the operator: phi = sum_n gamma_n (c+lambda_n)^{-1/2} u_n
// with iid standard gaussians gamma_n. Randomness has two layers: the noise
// seed lives in the decomposition, the gamma stream is keyed by (gff seed,
// noise seed), so the pair determines phi bit for bit.
//
// Wick squares carry the occupation-time normalization
//   :phi_r^2: = (phi_r^2 - E'[phi_r^2]) / 2,
// under which E'[e^{-lambda :phi^2:(1)}] = det_2(Id + lambda (H+c)^{-1})^{-1/2}
// holds exactly (per-mode check: E e^{-(lambda mu/2)(gamma^2-1)} =
// ((1+lambda mu) e^{-lambda mu})^{-1/2}). With the bare square the same
// identity holds with lambda replaced by 2 lambda; the variance cross-check
// in the partition tests pins the convention down numerically.
struct GFFSample {
  TorusGrid grid;
  double c = 0.0;
  uint64_t gff_seed = 0;
  SpectralField phi;
};

// default mass shift -lambda_0 + 1, strictly inside the allowed c > -lambda_0
double default_mass_shift(const SpectralDecomposition& dec);

// gaussian coefficient stream of a sample; exposed so ensemble statistics
// can be computed in the eigenbasis without rebuilding fields
std::vector<double> gff_gammas(const SpectralDecomposition& dec, uint64_t gff_seed);

GFFSample sample_gff(const SpectralDecomposition& dec, double c, uint64_t gff_seed);

// Green function G(x,y) = sum_n (c+lambda_n)^{-1} u_n(x) u_n(y)
double green_function(HeatKernelEvaluator& ev, double c, int ix, int iy);

// regression of G(x, .) against |log d(x, .)| over the window d in [4/N, L/4]
struct GreenLogFit {
  double slope = 0.0;
  double r2 = 0.0;
  int pairs = 0;
};
GreenLogFit green_log_fit(HeatKernelEvaluator& ev, double c, int ix);

// a_n = sum_k (lambda_k+c)^{-n}; n >= 2 (a_1 is a divergent quantity of the
// continuum, excluded by contract)
double trace_power(const SpectralDecomposition& dec, double c, int n);
// same a_n through the closed Green-kernel chain integral on the grid,
// n in {2, 3}; pair products of core eigenfunctions make the quadrature
// alias-free, so this route differs from the spectral one only in rounding
double trace_power_quadrature(HeatKernelEvaluator& ev, double c, int n);

// E'[phi_r^2] as an exact core field plus the data needed for Wick squares
struct WickTransform {
  double c = 0.0;
  double r = 0.0;
  SpectralField mean_field;   // core projection of sum_n mu_n (e^{-r Delta} u_n)^2
  double mean_total = 0.0;    // its integral = E' int phi_r^2
};
WickTransform make_wick_transform(const SpectralDecomposition& dec, double c, double r);

// :phi_r^2: as a core field; pairings with core test functions see no
// truncation error since high modes of phi_r^2 are orthogonal to them
SpectralField wick_square_field(const WickTransform& wt, const GFFSample& s);

// exact ensemble variance of :phi_r^2:(f) by the Isserlis formula,
// Var = (1/2) sum_{nm} mu_n mu_m <u_n^r u_m^r, f>^2
double wick_variance_exact(const SpectralDecomposition& dec, double c, double r,
                           const SpectralField& f);

// F_{nm} = <u_n^r u_m^r, f> by alias-free quadrature on the doubled grid;
// the Gram data behind the Isserlis variance and the occupation moments
std::vector<double> pair_quadrature_matrix(const SpectralDecomposition& dec, double r,
                                           const SpectralField& f);

// exact L^2(Omega') distance sqrt E'[(:phi_r^2:(1) - :phi_{r/2}^2:(1))^2],
// the Cauchy-in-r' statistic of the Wick approximation
double wick_cauchy_distance(const SpectralDecomposition& dec, double c, double r);

// ensemble statistics of :phi_r^2:(f) over `count` gff seeds seed0, seed0+1, ...
struct WickEnsemble {
  int count = 0;
  double mean = 0.0;
  double mean_stderr = 0.0;
  double var = 0.0;
  double var_stderr = 0.0;
};
WickEnsemble wick_ensemble(const SpectralDecomposition& dec, double c, double r,
                           const SpectralField& f, int count, uint64_t seed0);

// Z(lambda) three ways: Monte Carlo over the gamma stream, the a_n trace
// series (refused outside the geometric-certificate radius
// lambda * max mu_k < 1/2), and the finite-rank det_2 product.
struct PartitionResult {
  double lambda = 0.0;
  double z_mc = 0.0;
  double z_mc_stderr = 0.0;
  double z_det2 = 0.0;
  std::optional<double> z_series;
  int series_terms = 0;
};
PartitionResult partition_function(const SpectralDecomposition& dec, double c, double lambda,
                                   int count, uint64_t seed0);

// weighted partition Z(f) = E'[e^{-:phi^2:(f)}] against
// det_2(Id + M_{sqrt f} (H+c)^{-1} M_{sqrt f})^{-1/2}; requires f >= 0 on
// the refined grid
struct WeightedPartitionResult {
  double z_mc = 0.0;
  double z_mc_stderr = 0.0;
  double z_det2 = 0.0;
};
WeightedPartitionResult weighted_partition(const SpectralDecomposition& dec, double c,
                                           const SpectralField& f, int count, uint64_t seed0);

// zeros of D(lambda) = prod_k (1 + lambda mu_k) e^{-lambda mu_k} on the
// negative axis, located by bisection on sign changes of D; they sit at
// -1/mu_k = -(lambda_k + c) and recover the spectrum (the grid incarnation
// of "the partition function determines the law of the spectrum"). Returns
// the `count` roots closest to the origin, ascending in |root|.
std::vector<double> det2_zeros(const SpectralDecomposition& dec, double c, int count);

}  // namespace anderson
