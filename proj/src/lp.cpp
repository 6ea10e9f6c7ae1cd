#include "anderson/lp.hpp"

#include <algorithm>

#include "anderson/rng.hpp"

namespace anderson {

// Exact-comparison block index: j = -1 iff kappa^2 < 1/4, else the unique
// j >= 0 with kappa^2 in [4^{j-1}, 4^j). Avoids log2 boundary jitter on
// integer shells.
int block_of_kappa2(double k2) {
  if (k2 < 0.25) return -1;
  int j = 0;
  double hi = 1.0;  // 4^j
  while (k2 >= hi) {
    ++j;
    hi *= 4.0;
  }
  return j;
}

LP make_lp(const TorusGrid& grid) {
  LP lp{grid, 0, std::vector<int>(grid.size(), -2)};
  for (int i = 0; i < grid.N; ++i)
    for (int j = 0; j < grid.N; ++j) {
      if (!grid.in_core(i, j)) continue;
      int b = block_of_kappa2(grid.kappa2(i, j));
      lp.block[grid.idx(i, j)] = b;
      lp.jmax = std::max(lp.jmax, b);
    }
  return lp;
}

SpectralField lp_block(const LP& lp, const SpectralField& f, int j) {
  SpectralField out(f.grid);
  if (j < -1 || j > lp.jmax) return out;
  for (int i = 0; i < f.grid.size(); ++i)
    if (lp.block[i] == j) out.c[i] = f.c[i];
  return out;
}

SpectralField lp_sum_below(const LP& lp, const SpectralField& f, int jcap) {
  SpectralField out(f.grid);
  for (int i = 0; i < f.grid.size(); ++i)
    if (lp.block[i] != -2 && lp.block[i] <= jcap) out.c[i] = f.c[i];
  return out;
}

namespace {

using Space = std::vector<cplx>;  // values on the 2N x 2N dealiasing grid

// backward transform of a single block, zero-padded to the 2N grid
Space block_space(const LP& lp, const SpectralField& f, int j) {
  int N = f.grid.N, M = 2 * N;
  Space freq(static_cast<size_t>(M) * M, cplx{0.0, 0.0});
  for (int i = 0; i < N; ++i)
    for (int jj = 0; jj < N; ++jj) {
      if (lp.block[f.grid.idx(i, jj)] != j) continue;
      int kx = f.grid.kof(i), ky = f.grid.kof(jj);
      int I = kx >= 0 ? kx : kx + M, J = ky >= 0 ? ky : ky + M;
      freq[static_cast<size_t>(I) * M + J] = f.c[f.grid.idx(i, jj)];
    }
  Space out(freq.size());
  fft_backward(M, freq.data(), out.data());
  return out;
}

std::vector<Space> block_spaces(const LP& lp, const SpectralField& f) {
  std::vector<Space> out;
  out.reserve(lp.jmax + 2);
  for (int j = -1; j <= lp.jmax; ++j) out.push_back(block_space(lp, f, j));
  return out;
}

// forward transform of a 2N-grid signal, projected onto the core modes
SpectralField project_core(const TorusGrid& grid, Space& space) {
  int N = grid.N, M = 2 * N;
  Space freq(space.size());
  fft_forward(M, space.data(), freq.data());
  SpectralField out(grid);
  int h = N / 2 - 1;
  for (int kx = -h; kx <= h; ++kx)
    for (int ky = -h; ky <= h; ++ky) {
      int I = kx >= 0 ? kx : kx + M, J = ky >= 0 ? ky : ky + M;
      out.c[grid.idx(grid.iof(kx), grid.iof(ky))] = freq[static_cast<size_t>(I) * M + J];
    }
  return out;
}

void mul_acc(Space& acc, const Space& a, const Space& b) {
  for (size_t i = 0; i < acc.size(); ++i) acc[i] += a[i] * b[i];
}

}  // namespace

SpectralField paraproduct(const LP& lp, const SpectralField& f, const SpectralField& g) {
  f.check_grid(g);
  auto Bf = block_spaces(lp, f);
  auto Bg = block_spaces(lp, g);
  size_t n = Bf[0].size();
  Space cum(n, cplx{0.0, 0.0});  // S_{j-2} f, grown incrementally
  Space acc(n, cplx{0.0, 0.0});
  for (int j = 1; j <= lp.jmax; ++j) {
    const Space& fb = Bf[static_cast<size_t>(j - 2) + 1];
    for (size_t i = 0; i < n; ++i) cum[i] += fb[i];
    mul_acc(acc, cum, Bg[static_cast<size_t>(j) + 1]);
  }
  return project_core(f.grid, acc);
}

SpectralField resonant(const LP& lp, const SpectralField& f, const SpectralField& g) {
  f.check_grid(g);
  auto Bf = block_spaces(lp, f);
  auto Bg = block_spaces(lp, g);
  size_t n = Bf[0].size();
  Space acc(n, cplx{0.0, 0.0});
  // grouped as diagonal + commuted near-diagonal pairs so that swapping the
  // arguments reproduces the same floating-point sums exactly
  for (int j = -1; j <= lp.jmax; ++j) {
    const Space& a = Bf[static_cast<size_t>(j) + 1];
    const Space& b = Bg[static_cast<size_t>(j) + 1];
    for (size_t i = 0; i < n; ++i) acc[i] += a[i] * b[i];
  }
  for (int j = -1; j < lp.jmax; ++j) {
    const Space& a0 = Bf[static_cast<size_t>(j) + 1];
    const Space& a1 = Bf[static_cast<size_t>(j) + 2];
    const Space& b0 = Bg[static_cast<size_t>(j) + 1];
    const Space& b1 = Bg[static_cast<size_t>(j) + 2];
    for (size_t i = 0; i < n; ++i) acc[i] += a0[i] * b1[i] + a1[i] * b0[i];
  }
  return project_core(f.grid, acc);
}

SpectralField corrector(const LP& lp, const SpectralField& a, const SpectralField& b,
                        const SpectralField& c) {
  SpectralField pa_b = paraproduct(lp, a, b);
  SpectralField lhs = resonant(lp, pa_b, c);
  SpectralField rhs = multiply_dealiased(a, resonant(lp, b, c));
  return lhs - rhs;
}

SpectralField modified_paraproduct(const LP& lp, const SpectralField& f, const SpectralField& g,
                                   double z0) {
  if (z0 <= 0) throw std::invalid_argument("modified_paraproduct: z0 must be positive");
  SpectralField ag = g;
  ag.apply_symbol([z0](double k2) { return k2 + z0; });
  SpectralField out = paraproduct(lp, f, ag);
  out.apply_symbol([z0](double k2) { return 1.0 / (k2 + z0); });
  return out;
}

SpectralField modified_corrector(const LP& lp, const SpectralField& u, const SpectralField& X,
                                 const SpectralField& eta, double z0) {
  SpectralField pbar = modified_paraproduct(lp, u, X, z0);
  return resonant(lp, pbar, eta) - multiply_dealiased(u, resonant(lp, X, eta));
}

SpectralField gamma_inverse(const LP& lp, const SpectralField& f, const SpectralField& X,
                            double z0) {
  return f + modified_paraproduct(lp, f, X, z0);
}

GammaResult gamma(const LP& lp, const SpectralField& f, const SpectralField& X, double z0,
                  double tol, int max_terms) {
  GammaResult res{f, 1, 0.0};
  SpectralField term = f;
  double ref = f.l2();
  if (ref == 0.0) return res;
  for (int k = 1; k <= max_terms; ++k) {
    term = modified_paraproduct(lp, term, X, z0);
    term *= -1.0;
    res.value += term;
    res.terms = k + 1;
    res.last_increment = term.l2();
    if (res.last_increment < tol * ref) return res;
  }
  throw std::runtime_error(
      "gamma: Neumann series did not reach tolerance; increase z0 (contraction too weak)");
}

double pbar_op_norm(const LP& lp, const SpectralField& X, double z0, int iterations,
                    uint64_t probe_seed) {
  const TorusGrid& grid = X.grid;
  SpectralField AX = X;
  AX.apply_symbol([z0](double k2) { return k2 + z0; });
  auto B_AX = block_spaces(lp, AX);
  int N = grid.N, M = 2 * N;
  size_t n = B_AX[0].size();

  auto T = [&](const SpectralField& u) { return modified_paraproduct(lp, u, X, z0); };
  // adjoint: T* g = sum_j S_{j-2}[ (P_j AX) . (A^{-1} g) ], AX real
  auto Tstar = [&](const SpectralField& g) {
    SpectralField w = g;
    w.apply_symbol([z0](double k2) { return 1.0 / (k2 + z0); });
    Space ws(n);
    {
      Space freq(n, cplx{0.0, 0.0});
      int h = N / 2 - 1;
      for (int kx = -h; kx <= h; ++kx)
        for (int ky = -h; ky <= h; ++ky) {
          int I = kx >= 0 ? kx : kx + M, J = ky >= 0 ? ky : ky + M;
          freq[static_cast<size_t>(I) * M + J] = w.c[grid.idx(grid.iof(kx), grid.iof(ky))];
        }
      fft_backward(M, freq.data(), ws.data());
    }
    SpectralField acc(grid);
    Space prod(n);
    for (int j = 1; j <= lp.jmax; ++j) {
      const Space& bj = B_AX[static_cast<size_t>(j) + 1];
      for (size_t i = 0; i < n; ++i) prod[i] = bj[i] * ws[i];
      SpectralField pf = project_core(grid, prod);
      for (int i = 0; i < grid.size(); ++i)
        if (lp.block[i] != -2 && lp.block[i] <= j - 2) acc.c[i] += pf.c[i];
    }
    return acc;
  };

  // random real start field
  SpectralField u(grid);
  CounterRng rng(probe_seed, 0x504f574552ull);
  for (int i = 0; i < grid.size(); ++i) u.c[i] = rng.gauss();
  u = from_grid(grid, to_grid(u));  // symmetrize through a real sample
  double nu = u.l2();
  if (nu == 0) return 0.0;
  u *= 1.0 / nu;

  double sigma = 0.0;
  for (int it = 0; it < iterations; ++it) {
    SpectralField v = T(u);
    sigma = v.l2();
    SpectralField u2 = Tstar(v);
    double n2 = u2.l2();
    if (n2 == 0) return 0.0;
    u = (1.0 / n2) * u2;
  }
  return sigma;
}

Z0Choice choose_z0(const LP& lp, const SpectralField& xi_h_field, double z0_start) {
  Z0Choice ch;
  ch.z0 = z0_start;
  for (int d = 0; d < 60; ++d) {
    SpectralField X = xi_h_field;
    double z0 = ch.z0;
    X.apply_symbol([z0](double k2) { return 1.0 / (k2 + z0); });
    ch.op_norm = pbar_op_norm(lp, X, z0);
    if (ch.op_norm < 0.5) return ch;
    ch.z0 *= 2.0;
    ch.doublings = d + 1;
  }
  throw std::runtime_error("choose_z0: no contractive z0 found");
}

double besov_norm(const LP& lp, const SpectralField& f, double a) {
  double best = 0.0;
  for (int j = -1; j <= lp.jmax; ++j) {
    SpectralField pj = lp_block(lp, f, j);
    auto vals = to_grid_padded(pj, 2);
    double sup = 0.0;
    for (double v : vals) sup = std::max(sup, std::abs(v));
    best = std::max(best, std::pow(2.0, j * a) * sup);
  }
  return best;
}

}  // namespace anderson
