#pragma once
#include <cstdint>
#include <map>
#include <vector>

#include "anderson/gff.hpp"

namespace anderson {

// Path-space laws of the operator: polymer measure, Anderson diffusion,
// bridges, and the loop soup. Every sampler is an exact kernel chain: the
// single-step law is the grid quadrature of a spectral heat kernel row,
// sampled by inverse CDF, so finite-dimensional marginals are exact up to
// quadrature and no SDE discretization of the (distributional) drift ever
// appears. Positions are flat grid indices; increments wrap on the torus.

enum class PathKind { polymer, diffusion, bridge };

struct Path {
  PathKind kind = PathKind::polymer;
  double delta = 0.0;
  uint64_t seed = 0;
  std::vector<int> pos;
  bool killed = false;  // diffusion only: ended by the killing clock
};

// single-step kernel data shared by the samplers: the full symmetric row
// matrix of p_delta plus the ground-state data of the h-transform
struct TransitionCache {
  HeatKernelEvaluator ev;
  double delta = 0.0;
  double lambda0 = 0.0;
  double cell = 0.0;           // mu / np
  std::vector<double> u0;      // ground state on the grid
  std::vector<double> rows;    // [x * np + y] = p_delta(x, y)
  // cumulated diagonal-kernel laws at lifetime M * delta, filled on demand
  // by the loop sampler (independent of the mass shift, which cancels)
  std::map<int, std::vector<double>> diag_cum;
};
// requires delta in the trusted kernel range of the grid
TransitionCache make_transition_cache(const SpectralDecomposition& dec, double delta);

// polymer measure on [0, T]: inhomogeneous transitions
// p_delta(x, z) m_{T-(i+1)delta}(z) / m_{T-i delta}(x) with m_s = e^{-sH} 1
struct PolymerLaw {
  const TransitionCache* cache = nullptr;
  double T = 0.0;
  int M = 0;
  std::vector<double> mass;  // [j * np + z] = m_{j delta}(z), j = 0..M
};
PolymerLaw make_polymer_law(const TransitionCache& cache, double T, int M);
Path sample_polymer(const PolymerLaw& law, int x, uint64_t seed);

// Anderson diffusion: homogeneous conservative transitions
// e^{delta(lambda0 - a)} p_delta(x, y) u0(y) / u0(x), killed at rate a
struct DiffusionLaw {
  const TransitionCache* cache = nullptr;
  double a = 0.0;
  double survival = 1.0;               // e^{-a delta} per step
  double conservativity_defect = 0.0;  // max_x |quadrature row mass - 1|
  std::vector<double> cdf;             // [x * np + y] row-wise CDFs
};
DiffusionLaw make_diffusion_law(const TransitionCache& cache, double a);
Path sample_diffusion(const DiffusionLaw& law, int x, int M, uint64_t seed);

// bridge to y over [0, M delta]: step law
// p_delta(x_i, z) p_{(M-i-1)delta}(z, y) / p_{(M-i)delta}(x_i, y)
struct BridgeLaw {
  const TransitionCache* cache = nullptr;
  int y = 0;
  int M = 0;
  std::vector<double> cols;  // [(j-1) * np + z] = p_{j delta}(z, y), j = 1..M-1
};
BridgeLaw make_bridge_law(const TransitionCache& cache, int y, int M);
Path sample_bridge(const BridgeLaw& law, int x, uint64_t seed);

// sum of squared torus increments; ensemble mean kappa T with kappa = 4
// calibrated on the flat chain (generator Delta gives variance 2t per axis)
double quadratic_variation(const TorusGrid& g, const Path& p);

// empirical sup over pairs of d(w_i, w_j) / |t_i - t_j|^a
double holder_ratio(const TorusGrid& g, const Path& p, double a);

// Poisson loop soup of intensity gamma * M restricted to lifetimes in
// [eps, t_max], t_max = 10 / (lambda_0 + c). Lifetimes live on a fixed
// log grid (their intensity (1/t) tr e^{-t(H+c)} integrated per bin), the
// root is drawn from the diagonal kernel at the bin lifetime, and the body
// is a kernel-chain bridge back to the root with step about delta_target.
struct Loop {
  double zeta = 0.0;
  std::vector<int> pos;  // step zeta / pos.size(), closing to pos[0]
};
struct LoopEnsemble {
  double c = 0.0;
  double gamma = 0.0;
  double eps = 0.0;
  double t_max = 0.0;
  double delta_target = 0.0;
  double measure_mass = 0.0;  // quadrature of gamma-free lifetime intensity
  std::vector<Loop> loops;
};
LoopEnsemble sample_loop_soup(TransitionCache& cache, double c, double gamma, double eps,
                              uint64_t seed);

// occupation integral of one loop, (zeta/M) sum_i f(w_i)
double loop_occupation(const TorusGrid& g, const Loop& loop, const std::vector<double>& fvals);

// compensated occupation field O_gamma^eps(f) = sum_loops l(f) - gamma E_M[1 l(f)];
// the compensator is closed-form over the lifetime grid, exactly matching
// the sampler's law, so the empirical mean is zero up to MC error
double occupation_field(TransitionCache& cache, const LoopEnsemble& ens, const SpectralField& f);

// exact Var O under the sampler's own discrete law: cyclic pair marginals
// summed over the snapped lifetime grid. The eps -> 0 limit is gamma times
// occupation_moment(., 2); the truncated value undershoots by the sub-eps
// lifetime mass, and Richardson in eps over {eps, 2eps, 4eps} recovers the
// continuum double Green integral at the percent level
double occupation_variance_closed(TransitionCache& cache, double c, double gamma, double eps,
                                  const SpectralField& f);

// E_M[l(f)^n] = (n-1)! tr B^n with B_{nm} = sqrt(mu_n mu_m) <u_n u_m, f>;
// n in {2, 3} (the cyclic Green chain of the occupation moments)
double occupation_moment(const SpectralDecomposition& dec, double c, const SpectralField& f,
                         int n);

// Laplace-transform comparison of the gamma = 1/2 occupation field against
// the Wick square: loop-soup MC extrapolated in eps against the det_2
// transform of :phi^2:(f), with a fitted scale beta (measured 1 under the
// occupation-time normalization of the Wick square)
struct IsomorphismResult {
  std::vector<double> s;
  std::vector<double> loop_mc;      // eps-extrapolated E[e^{-s O_{1/2}(f)}]
  std::vector<double> loop_stderr;
  std::vector<double> gff_det2;     // E'[e^{-s :phi^2:(f)}], exact route
  double beta = 0.0;
  double residual = 0.0;            // max_s |loop - det2(beta s)| after fit
  double residual_gate = 0.0;       // 3 sigma of the extrapolated MC
};
IsomorphismResult isomorphism_check(TransitionCache& cache, double c, const SpectralField& f,
                                    int soups, uint64_t seed);

// short-time decay fit t log p_t(x, y) ~ alpha(t) - kappa d(x, y)^2 over
// grid pairs with d^2 <= 12 t; kappa is 1/4 on the flat chain and is
// noise-independent across realizations (the rate function does not see
// the potential)
struct LdpProbe {
  std::vector<double> ts;
  std::vector<double> kappa;
  std::vector<double> kappa_stderr;
  std::vector<double> intercept;  // alpha(t) -> 0 as t -> 0
};
LdpProbe ldp_exponent_probe(HeatKernelEvaluator& ev, int x, const std::vector<double>& ts);

// E_W[D_r^{1/2}] of the singularity proof: the Feynman-Kac average
// E_W[exp(-(1/2) int_0^T (h xi_r + h^2 c_{1,r})(w_t) dt)] over flat
// Brownian chains, against the semigroup route (e^{-T(-Delta + W_r)} 1)(x).
// The half coupling pairs with the full constant, leaving the deterministic
// deficit e^{-T h^2 |log r| / 16 pi}: the statistic decays along r -> 0
struct SingularityStatistic {
  std::vector<double> r;
  std::vector<double> mc;
  std::vector<double> mc_stderr;
  std::vector<double> semigroup;
};
SingularityStatistic singularity_statistic(const TorusGrid& g, double h, double T, int steps,
                                           const std::vector<double>& rs, int samples,
                                           uint64_t seed);

}  // namespace anderson
