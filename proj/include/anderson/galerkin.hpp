#pragma once
#include "anderson/lp.hpp"
#include "anderson/renorm.hpp"

namespace anderson {

// Real trigonometric basis of the core modes: index 0 is the constant 1/L,
// then per canonical conjugate pair {k,-k} the L^2-normalized pair
// sqrt(2) cos(kappa_k x)/L and sqrt(2) sin(kappa_k x)/L. In this basis the
// Galerkin operator -Delta + M_W is a real symmetric matrix of dimension
// (N-1)^2 and real LAPACK solvers apply; the complex Hermitian assembly in
// the exponential basis is kept in the tests as an independent oracle.
struct BasisLayout {
  TorusGrid grid;
  std::vector<int> pair_rep;  // canonical reps (storage indices), ascending

  int dim() const { return 1 + 2 * static_cast<int>(pair_rep.size()); }
};

BasisLayout make_layout(const TorusGrid& grid);

SpectralField basis_to_field(const BasisLayout& lay, const double* v);
void field_to_basis(const BasisLayout& lay, const SpectralField& f, double* v);

// Dense Galerkin matrix of -Delta + M_W restricted to the core modes.
// Diagonal carries the Laplacian symbols plus potential coefficients; the
// matrix is symmetric by construction.
struct OperatorMatrix {
  BasisLayout layout;
  std::vector<double> a;  // dim x dim, row-major

  double r = 0.0;
  double z0 = 0.0;
  uint64_t seed = 0;
  double h_mean = 0.0;
  SpectralField potential;  // W = h xi_r + c_hr (or caller-supplied)

  int dim() const { return layout.dim(); }
};

// H = -Delta + M_W for an arbitrary real potential field W
OperatorMatrix assemble_potential(const TorusGrid& grid, const SpectralField& W);
// H_r with the renormalized potential; requires the enhanced pair (r > 0)
OperatorMatrix assemble(const EnhancedNoise& enhanced);

// independent field-space application of the same Galerkin operator
SpectralField apply_operator(const OperatorMatrix& m, const SpectralField& f);

struct SpectralDecomposition {
  TorusGrid grid;
  BasisLayout layout;
  int kept = 0;                     // number of eigenpairs stored
  std::vector<double> eigenvalues;  // ascending
  std::vector<double> vectors;      // dim x kept, [i*kept + n] = <b_i, u_n>
  std::vector<double> residuals;    // ||H u_n - lambda_n u_n||_{L^2}
  double ortho_defect = 0.0;        // max |<u_m,u_n> - delta_mn|

  double r = 0.0;
  double z0 = 0.0;
  uint64_t seed = 0;

  SpectralField field(int n) const;
  std::vector<double> grid_values(int n) const;  // u_n on the N x N grid
};

// full decomposition (k < 0) or the k lowest eigenpairs; eigenvectors are
// sign-fixed (u_0 positive mean, others largest component positive) so
// decompositions are reproducible
SpectralDecomposition eigendecompose(const OperatorMatrix& m, int k = -1);
std::vector<double> eigenvalues_only(const OperatorMatrix& m);

// (H - z)^{-1} through a factorized dense solve. Rejects z within 1e-8 of
// the spectrum, reporting the nearest eigenvalue.
struct DirectResolvent {
  BasisLayout layout;
  double z = 0.0;
  std::vector<double> lu;
  std::vector<int> ipiv;

  SpectralField apply(const SpectralField& f) const;
};
DirectResolvent make_direct_resolvent(const OperatorMatrix& m, const std::vector<double>& eigs,
                                      double z);

// Counting-function fit N(lambda) ~ (L^2/4pi) lambda on the trusted band
// [5, 0.3 kappa2_max]; the 0.3 cap keeps truncation distortion out.
struct WeylFit {
  double slope = 0.0;
  double r2 = 0.0;
  double band_lo = 0.0;
  double band_hi = 0.0;
  int in_band = 0;
};
WeylFit weyl_counting(const std::vector<double>& eigs, const TorusGrid& grid, double band_lo = 5.0,
                      double band_frac = 0.3);

// max_n |lambda_n(W + v) - lambda_n(W) - v|
double spectrum_shift_check(const TorusGrid& grid, const SpectralField& W, double v);

// Spectral-gap lower bounds from the ground state alone. Cheeger constant of
// the flat torus is 2/L; the log-Sobolev constant of its volume measure is
// C_LS = (L/2pi)^2 (sharp on the circle by Rothaus, tensorizes to the torus).
// u_0 extrema are taken on the 2N refinement of the grid.
struct GapCertificates {
  double lambda0 = 0.0;
  double lambda1 = 0.0;
  double gap = 0.0;
  double min_u0 = 0.0;
  double max_u0 = 0.0;
  double cheeger_bound = 0.0;
  double lsi_bound = 0.0;
  double c_ls = 0.0;
  bool cheeger_ok = false;
  bool lsi_ok = false;
};
GapCertificates spectral_gap_certificates(const SpectralDecomposition& dec);

// log-log regression of the Besov C^a norms of eigenfunctions against their
// eigenvalues over a fit window (defaults to the Weyl trusted band)
struct HolderScaling {
  double slope = 0.0;
  std::vector<double> lambda;
  std::vector<double> norm;
};
HolderScaling holder_norm_scaling(const LP& lp, const SpectralDecomposition& dec, double a,
                                  double lambda_min = 5.0, double lambda_max = -1.0);

// ||pi_{<=lambda} f||_{H^{1-eps}} / ||f||_{L^2}
double spectral_projector_bound(const SpectralDecomposition& dec, double lambda, double eps,
                                const SpectralField& f);

double spearman(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace anderson
