#include "anderson/galerkin.hpp"

#include <cblas.h>
#include <lapacke.h>

#include <algorithm>
#include <numeric>

extern "C" void openblas_set_num_threads(int);

namespace anderson {

namespace {

// BLAS threading is pinned to one thread: reductions change their summation
// order under thread scheduling and would break bit-reproducibility.
void pin_blas() {
  static const bool done = [] {
    openblas_set_num_threads(1);
    return true;
  }();
  (void)done;
}

struct KVec {
  int kx, ky;
};

KVec kvec_of(const TorusGrid& g, int storage) {
  return {g.kof(storage / g.N), g.kof(storage % g.N)};
}

double re_w(const SpectralField& W, int kx, int ky) { return W.coeff_k(kx, ky).real(); }
double im_w(const SpectralField& W, int kx, int ky) { return W.coeff_k(kx, ky).imag(); }

double ls_slope2(const std::vector<double>& x, const std::vector<double>& y, double* r2) {
  double n = x.size(), sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
  }
  double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  double icept = (sy - slope * sx) / n;
  if (r2) {
    double ssr = 0, sst = 0, my = sy / n;
    for (size_t i = 0; i < x.size(); ++i) {
      double e = y[i] - slope * x[i] - icept;
      ssr += e * e;
      sst += (y[i] - my) * (y[i] - my);
    }
    *r2 = sst > 0 ? 1.0 - ssr / sst : 1.0;
  }
  return slope;
}

}  // namespace

BasisLayout make_layout(const TorusGrid& grid) {
  BasisLayout lay{grid, {}};
  for (int idx = 0; idx < grid.size(); ++idx) {
    int i = idx / grid.N, j = idx % grid.N;
    if (!grid.in_core(i, j) || idx == 0) continue;
    int mate = grid.idx((grid.N - i) % grid.N, (grid.N - j) % grid.N);
    if (idx < mate) lay.pair_rep.push_back(idx);
  }
  return lay;
}

SpectralField basis_to_field(const BasisLayout& lay, const double* v) {
  const TorusGrid& g = lay.grid;
  SpectralField f(g);
  f.c[0] = v[0] / g.L;
  double s = std::sqrt(2.0) / (2.0 * g.L);
  for (size_t p = 0; p < lay.pair_rep.size(); ++p) {
    int rep = lay.pair_rep[p];
    int i = rep / g.N, j = rep % g.N;
    int mate = g.idx((g.N - i) % g.N, (g.N - j) % g.N);
    cplx c{s * v[1 + 2 * p], -s * v[2 + 2 * p]};
    f.c[rep] = c;
    f.c[mate] = std::conj(c);
  }
  return f;
}

void field_to_basis(const BasisLayout& lay, const SpectralField& f, double* v) {
  const TorusGrid& g = lay.grid;
  v[0] = g.L * f.c[0].real();
  double s = std::sqrt(2.0) * g.L;
  for (size_t p = 0; p < lay.pair_rep.size(); ++p) {
    int rep = lay.pair_rep[p];
    v[1 + 2 * p] = s * f.c[rep].real();
    v[2 + 2 * p] = -s * f.c[rep].imag();
  }
}

OperatorMatrix assemble_potential(const TorusGrid& grid, const SpectralField& W) {
  if (!(W.grid == grid)) throw std::invalid_argument("assemble_potential: grid mismatch");
  OperatorMatrix m;
  m.layout = make_layout(grid);
  m.potential = W;
  int dim = m.dim();
  int P = static_cast<int>(m.layout.pair_rep.size());
  m.a.assign(static_cast<size_t>(dim) * dim, 0.0);
  auto A = [&](int i, int j) -> double& { return m.a[static_cast<size_t>(i) * dim + j]; };

  double w00 = re_w(W, 0, 0);
  A(0, 0) = w00;
  double rt2 = std::sqrt(2.0);
  for (int p = 0; p < P; ++p) {
    KVec k = kvec_of(grid, m.layout.pair_rep[p]);
    int cp = 1 + 2 * p, sp = 2 + 2 * p;
    A(0, cp) = A(cp, 0) = rt2 * re_w(W, k.kx, k.ky);
    A(0, sp) = A(sp, 0) = -rt2 * im_w(W, k.kx, k.ky);
    for (int q = p; q < P; ++q) {
      KVec l = kvec_of(grid, m.layout.pair_rep[q]);
      int cq = 1 + 2 * q, sq = 2 + 2 * q;
      int dx = k.kx - l.kx, dy = k.ky - l.ky;
      int ex = k.kx + l.kx, ey = k.ky + l.ky;
      double red = re_w(W, dx, dy), res = re_w(W, ex, ey);
      double imd = im_w(W, dx, dy), ims = im_w(W, ex, ey);
      A(cp, cq) = A(cq, cp) = red + res;
      A(sp, sq) = A(sq, sp) = red - res;
      // <c_k, W s_l> = Im W(k-l) - Im W(k+l); <s_k, W c_l> by symmetry
      A(cp, sq) = A(sq, cp) = imd - ims;
      A(sp, cq) = A(cq, sp) = -imd - ims;
    }
    double k2 = grid.kappa2(m.layout.pair_rep[p] / grid.N, m.layout.pair_rep[p] % grid.N);
    A(cp, cp) += k2;
    A(sp, sp) += k2;
  }
  return m;
}

OperatorMatrix assemble(const EnhancedNoise& enhanced) {
  if (enhanced.r <= 0.0)
    throw std::invalid_argument("assemble: r must be positive (no limit matrix exists at r=0)");
  OperatorMatrix m = assemble_potential(enhanced.grid, enhanced.h_xi + enhanced.c_hr);
  m.r = enhanced.r;
  m.z0 = enhanced.z0;
  m.seed = enhanced.xi_r.seed;
  m.h_mean = enhanced.h.mean();
  return m;
}

SpectralField apply_operator(const OperatorMatrix& m, const SpectralField& f) {
  pin_blas();
  int dim = m.dim();
  std::vector<double> v(dim), w(dim);
  field_to_basis(m.layout, f, v.data());
  cblas_dgemv(CblasRowMajor, CblasNoTrans, dim, dim, 1.0, m.a.data(), dim, v.data(), 1, 0.0,
              w.data(), 1);
  return basis_to_field(m.layout, w.data());
}

SpectralField SpectralDecomposition::field(int n) const {
  std::vector<double> v(layout.dim());
  for (int i = 0; i < layout.dim(); ++i) v[i] = vectors[static_cast<size_t>(i) * kept + n];
  return basis_to_field(layout, v.data());
}

std::vector<double> SpectralDecomposition::grid_values(int n) const { return to_grid(field(n)); }

namespace {

// canonical signs: ground state positive mean, others largest component
// positive; applied before residuals so stored vectors match reports
void fix_signs(std::vector<double>& z, int dim, int kept) {
  for (int n = 0; n < kept; ++n) {
    double flip = 0.0;
    if (n == 0 && std::abs(z[static_cast<size_t>(0) * kept + n]) > 1e-12) {
      flip = z[static_cast<size_t>(0) * kept + n] < 0 ? -1.0 : 1.0;
    } else {
      int best = 0;
      double bv = 0.0;
      for (int i = 0; i < dim; ++i) {
        double a = std::abs(z[static_cast<size_t>(i) * kept + n]);
        if (a > bv) {
          bv = a;
          best = i;
        }
      }
      flip = z[static_cast<size_t>(best) * kept + n] < 0 ? -1.0 : 1.0;
    }
    if (flip < 0)
      for (int i = 0; i < dim; ++i) z[static_cast<size_t>(i) * kept + n] *= -1.0;
  }
}

void check_info(int info, const char* what) {
  if (info != 0)
    throw std::runtime_error(std::string(what) + ": LAPACK info = " + std::to_string(info));
}

}  // namespace

SpectralDecomposition eigendecompose(const OperatorMatrix& m, int k) {
  pin_blas();
  int dim = m.dim();
  if (k < 0 || k > dim) k = dim;
  if (k == 0) throw std::invalid_argument("eigendecompose: k must be nonzero");

  SpectralDecomposition dec;
  dec.grid = m.layout.grid;
  dec.layout = m.layout;
  dec.kept = k;
  dec.r = m.r;
  dec.z0 = m.z0;
  dec.seed = m.seed;
  dec.eigenvalues.assign(k, 0.0);
  std::vector<double> work = m.a;

  if (k == dim) {
    check_info(LAPACKE_dsyevd(LAPACK_ROW_MAJOR, 'V', 'L', dim, work.data(), dim,
                              dec.eigenvalues.data()),
               "dsyevd");
    dec.vectors = std::move(work);
  } else {
    std::vector<double> w(dim);
    dec.vectors.assign(static_cast<size_t>(dim) * k, 0.0);
    std::vector<lapack_int> isuppz(2 * static_cast<size_t>(dim));
    lapack_int found = 0;
    double abstol = 2.0 * LAPACKE_dlamch('S');
    check_info(LAPACKE_dsyevr(LAPACK_ROW_MAJOR, 'V', 'I', 'L', dim, work.data(), dim, 0.0, 0.0, 1,
                              k, abstol, &found, w.data(), dec.vectors.data(), k, isuppz.data()),
               "dsyevr");
    if (found != k) throw std::runtime_error("dsyevr: fewer eigenpairs than requested");
    std::copy(w.begin(), w.begin() + k, dec.eigenvalues.begin());
  }

  fix_signs(dec.vectors, dim, k);

  // residuals ||H u - lambda u|| and orthonormality defect, dense certificates
  std::vector<double> hu(static_cast<size_t>(dim) * k);
  cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, dim, k, dim, 1.0, m.a.data(), dim,
              dec.vectors.data(), k, 0.0, hu.data(), k);
  dec.residuals.assign(k, 0.0);
  for (int n = 0; n < k; ++n) {
    double s = 0.0;
    for (int i = 0; i < dim; ++i) {
      double e = hu[static_cast<size_t>(i) * k + n] -
                 dec.eigenvalues[n] * dec.vectors[static_cast<size_t>(i) * k + n];
      s += e * e;
    }
    dec.residuals[n] = std::sqrt(s);
  }
  std::vector<double> gram(static_cast<size_t>(k) * k);
  cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, k, k, dim, 1.0, dec.vectors.data(), k,
              dec.vectors.data(), k, 0.0, gram.data(), k);
  double defect = 0.0;
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j)
      defect = std::max(defect,
                        std::abs(gram[static_cast<size_t>(i) * k + j] - (i == j ? 1.0 : 0.0)));
  dec.ortho_defect = defect;
  return dec;
}

std::vector<double> eigenvalues_only(const OperatorMatrix& m) {
  pin_blas();
  int dim = m.dim();
  std::vector<double> work = m.a, w(dim);
  check_info(LAPACKE_dsyev(LAPACK_ROW_MAJOR, 'N', 'L', dim, work.data(), dim, w.data()), "dsyev");
  return w;
}

DirectResolvent make_direct_resolvent(const OperatorMatrix& m, const std::vector<double>& eigs,
                                      double z) {
  pin_blas();
  double nearest = eigs.empty() ? 1e300 : eigs[0];
  for (double ev : eigs)
    if (std::abs(ev - z) < std::abs(nearest - z)) nearest = ev;
  if (!eigs.empty() && std::abs(nearest - z) < 1e-8)
    throw std::invalid_argument("resolvent: z within 1e-8 of the spectrum (nearest eigenvalue " +
                                std::to_string(nearest) + ")");
  DirectResolvent res;
  res.layout = m.layout;
  res.z = z;
  int dim = m.dim();
  res.lu = m.a;
  for (int i = 0; i < dim; ++i) res.lu[static_cast<size_t>(i) * dim + i] -= z;
  res.ipiv.assign(dim, 0);
  check_info(LAPACKE_dsytrf(LAPACK_ROW_MAJOR, 'L', dim, res.lu.data(), dim, res.ipiv.data()),
             "dsytrf");
  return res;
}

SpectralField DirectResolvent::apply(const SpectralField& f) const {
  int dim = layout.dim();
  std::vector<double> v(dim);
  field_to_basis(layout, f, v.data());
  int info = LAPACKE_dsytrs(LAPACK_ROW_MAJOR, 'L', dim, 1, lu.data(), dim, ipiv.data(), v.data(),
                            1);
  check_info(info, "dsytrs");
  return basis_to_field(layout, v.data());
}

WeylFit weyl_counting(const std::vector<double>& eigs, const TorusGrid& grid, double band_lo,
                      double band_frac) {
  WeylFit fit;
  fit.band_lo = band_lo;
  fit.band_hi = band_frac * grid.kappa2_max();
  std::vector<double> xs, ys;
  for (size_t i = 0; i < eigs.size(); ++i) {
    if (eigs[i] < band_lo || eigs[i] > fit.band_hi) continue;
    xs.push_back(eigs[i]);
    ys.push_back(static_cast<double>(i + 1));  // eigenvalues sorted: count = index+1
  }
  fit.in_band = static_cast<int>(xs.size());
  if (fit.in_band < 8) throw std::runtime_error("weyl_counting: trusted band holds < 8 levels");
  fit.slope = ls_slope2(xs, ys, &fit.r2);
  return fit;
}

double spectrum_shift_check(const TorusGrid& grid, const SpectralField& W, double v) {
  auto base = eigenvalues_only(assemble_potential(grid, W));
  SpectralField Wv = W;
  Wv.c[0] += v;
  auto shifted = eigenvalues_only(assemble_potential(grid, Wv));
  double worst = 0.0;
  for (size_t i = 0; i < base.size(); ++i)
    worst = std::max(worst, std::abs(shifted[i] - base[i] - v));
  return worst;
}

GapCertificates spectral_gap_certificates(const SpectralDecomposition& dec) {
  if (dec.kept < 2) throw std::invalid_argument("gap certificates need two eigenpairs");
  GapCertificates c;
  c.lambda0 = dec.eigenvalues[0];
  c.lambda1 = dec.eigenvalues[1];
  c.gap = c.lambda1 - c.lambda0;
  auto vals = to_grid_padded(dec.field(0), 2);
  c.min_u0 = *std::min_element(vals.begin(), vals.end());
  c.max_u0 = *std::max_element(vals.begin(), vals.end());
  double L = dec.grid.L;
  double ratio = c.min_u0 / c.max_u0;
  c.cheeger_bound = std::pow(ratio, 4) * (2.0 / L) * (2.0 / L) / 4.0;
  c.c_ls = (L / (2.0 * M_PI)) * (L / (2.0 * M_PI));
  double m4 = std::pow(c.max_u0, 4), mi4 = 1.0 / std::pow(c.min_u0, 4);
  c.lsi_bound = ratio * ratio / ((m4 + mi4) * 2.0 * c.c_ls);
  c.cheeger_ok = c.min_u0 > 0.0 && c.gap >= c.cheeger_bound;
  c.lsi_ok = c.min_u0 > 0.0 && c.gap >= c.lsi_bound;
  return c;
}

HolderScaling holder_norm_scaling(const LP& lp, const SpectralDecomposition& dec, double a,
                                  double lambda_min, double lambda_max) {
  if (lambda_max <= 0.0) lambda_max = 0.3 * dec.grid.kappa2_max();
  HolderScaling hs;
  for (int n = 0; n < dec.kept; ++n) {
    double ev = dec.eigenvalues[n];
    if (ev < lambda_min || ev > lambda_max) continue;
    hs.lambda.push_back(ev);
    hs.norm.push_back(besov_norm(lp, dec.field(n), a));
  }
  if (hs.lambda.size() < 8)
    throw std::runtime_error("holder_norm_scaling: fit window holds < 8 eigenfunctions");
  std::vector<double> lx, ly;
  for (size_t i = 0; i < hs.lambda.size(); ++i) {
    lx.push_back(std::log(hs.lambda[i]));
    ly.push_back(std::log(hs.norm[i]));
  }
  hs.slope = ls_slope2(lx, ly, nullptr);
  return hs;
}

double spectral_projector_bound(const SpectralDecomposition& dec, double lambda, double eps,
                                const SpectralField& f) {
  SpectralField acc(dec.grid);
  for (int n = 0; n < dec.kept; ++n) {
    if (dec.eigenvalues[n] > lambda) break;
    SpectralField u = dec.field(n);
    double coef = dot(u, f);
    u *= coef;
    acc += u;
  }
  return acc.hs(1.0 - eps) / f.l2();
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("spearman: bad input");
  auto ranks = [](const std::vector<double>& v) {
    std::vector<size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    size_t i = 0;
    while (i < idx.size()) {
      size_t j = i;
      while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
      double avg = 0.5 * (i + j) + 1.0;  // average rank of the tie group
      for (size_t t = i; t <= j; ++t) r[idx[t]] = avg;
      i = j + 1;
    }
    return r;
  };
  auto rx = ranks(x), ry = ranks(y);
  double n = x.size();
  double mx = (n + 1) / 2.0;
  double num = 0, dx = 0, dy = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    num += (rx[i] - mx) * (ry[i] - mx);
    dx += (rx[i] - mx) * (rx[i] - mx);
    dy += (ry[i] - mx) * (ry[i] - mx);
  }
  return num / std::sqrt(dx * dy);
}

}  // namespace anderson
