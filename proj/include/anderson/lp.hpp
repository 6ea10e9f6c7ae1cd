#pragma once
#include <vector>

#include "anderson/field.hpp"

namespace anderson {

// Sharp Littlewood-Paley blocks on the truncated frequency set: block j >= 0
// keeps |kappa| in [2^{j-1}, 2^j), block -1 keeps |kappa| < 1/2. The blocks
// partition the core modes, so sum_j P_j f = f exactly.
struct LP {
  TorusGrid grid;
  int jmax = 0;
  std::vector<int> block;  // per storage index; -2 marks non-core (always zero) modes
};

LP make_lp(const TorusGrid& grid);

int block_of_kappa2(double kappa2);

SpectralField lp_block(const LP& lp, const SpectralField& f, int j);
// S_jcap f = sum_{j <= jcap} P_j f
SpectralField lp_sum_below(const LP& lp, const SpectralField& f, int jcap);

// P_f g = sum_{i <= j-2} (P_i f)(P_j g), products dealiased on the 2N grid
SpectralField paraproduct(const LP& lp, const SpectralField& f, const SpectralField& g);
// Pi(f,g) = sum_{|i-j| <= 1} (P_i f)(P_j g); symmetric
SpectralField resonant(const LP& lp, const SpectralField& f, const SpectralField& g);
// C(a,b,c) = Pi(P_a b, c) - a Pi(b,c)
SpectralField corrector(const LP& lp, const SpectralField& a, const SpectralField& b,
                        const SpectralField& c);

// intertwined paraproduct: (-Delta + z0) Pbar_f g = P_f((-Delta + z0) g)
SpectralField modified_paraproduct(const LP& lp, const SpectralField& f, const SpectralField& g,
                                   double z0);
// Cbar(u, X, eta) = Pi(Pbar_u X, eta) - u Pi(X, eta)
SpectralField modified_corrector(const LP& lp, const SpectralField& u, const SpectralField& X,
                                 const SpectralField& eta, double z0);

// Gamma^{-1} f = f + Pbar_f X
SpectralField gamma_inverse(const LP& lp, const SpectralField& f, const SpectralField& X,
                            double z0);
// Gamma = (Gamma^{-1})^{-1} by Neumann series sum_k (-Pbar_. X)^k f; requires
// a contraction certificate (operator norm of Pbar_. X below 1)
struct GammaResult {
  SpectralField value;
  int terms = 0;
  double last_increment = 0.0;
};
GammaResult gamma(const LP& lp, const SpectralField& f, const SpectralField& X, double z0,
                  double tol = 1e-12, int max_terms = 200);

// power-iteration estimate of the L^2 operator norm of u -> Pbar_u X
double pbar_op_norm(const LP& lp, const SpectralField& X, double z0, int iterations = 20,
                    uint64_t probe_seed = 1);

// z0 policy: start at 1, double until the norm estimate is < 1/2
struct Z0Choice {
  double z0 = 1.0;
  double op_norm = 0.0;
  int doublings = 0;
};
Z0Choice choose_z0(const LP& lp, const SpectralField& xi_h_field, double z0_start = 1.0);

// Besov norm B^a_{inf,inf} (Holder C^a for non-integer a): sup_j 2^{ja} ||P_j f||_inf
double besov_norm(const LP& lp, const SpectralField& f, double a);

}  // namespace anderson
