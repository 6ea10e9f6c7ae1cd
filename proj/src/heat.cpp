#include "anderson/heat.hpp"

#include <cblas.h>

#include <algorithm>

#include "anderson/rng.hpp"

extern "C" void openblas_set_num_threads(int);

namespace anderson {

namespace {

void pin_blas() {
  static const bool done = [] {
    openblas_set_num_threads(1);
    return true;
  }();
  (void)done;
}

void check_t(double t) {
  if (t <= 0.0) throw std::invalid_argument("heat kernel: t must be positive");
}

double ls_slope(const std::vector<double>& x, const std::vector<double>& y) {
  double n = x.size(), sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace

HeatKernelEvaluator make_heat_evaluator(SpectralDecomposition dec) {
  HeatKernelEvaluator ev;
  ev.dec = std::move(dec);
  return ev;
}

void HeatKernelEvaluator::ensure_values() {
  if (!u_vals.empty()) return;
  int np = points(), kept = dec.kept;
  u_vals.assign(static_cast<size_t>(np) * kept, 0.0);
  for (int n = 0; n < kept; ++n) {
    auto vals = dec.grid_values(n);
    for (int x = 0; x < np; ++x) u_vals[static_cast<size_t>(x) * kept + n] = vals[x];
  }
}

double heat_kernel(HeatKernelEvaluator& ev, double t, int ix, int iy) {
  check_t(t);
  ev.ensure_values();
  int kept = ev.dec.kept;
  const double* ux = ev.u_vals.data() + static_cast<size_t>(ix) * kept;
  const double* uy = ev.u_vals.data() + static_cast<size_t>(iy) * kept;
  double s = 0.0;
  for (int n = 0; n < kept; ++n) s += std::exp(-t * ev.dec.eigenvalues[n]) * ux[n] * uy[n];
  return s;
}

double heat_tail_certificate(HeatKernelEvaluator& ev, double t) {
  check_t(t);
  if (ev.full()) return 0.0;
  ev.ensure_values();
  double sup2 = 0.0;
  for (double v : ev.u_vals) sup2 = std::max(sup2, v * v);
  int missing = ev.dec.layout.dim() - ev.dec.kept;
  return missing * std::exp(-t * ev.dec.eigenvalues.back()) * sup2;
}

std::vector<double> heat_kernel_rows(HeatKernelEvaluator& ev, double t,
                                     const std::vector<int>& xs) {
  check_t(t);
  pin_blas();
  ev.ensure_values();
  int kept = ev.dec.kept, np = ev.points(), nx = static_cast<int>(xs.size());
  std::vector<double> a(static_cast<size_t>(nx) * kept);
  for (int r = 0; r < nx; ++r)
    for (int n = 0; n < kept; ++n)
      a[static_cast<size_t>(r) * kept + n] =
          std::exp(-t * ev.dec.eigenvalues[n]) * ev.u_vals[static_cast<size_t>(xs[r]) * kept + n];
  std::vector<double> rows(static_cast<size_t>(nx) * np);
  cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, nx, np, kept, 1.0, a.data(), kept,
              ev.u_vals.data(), kept, 0.0, rows.data(), np);
  return rows;
}

SpectralField heat_apply(const HeatKernelEvaluator& ev, double t, const SpectralField& f) {
  check_t(t);
  pin_blas();
  int dim = ev.dec.layout.dim(), kept = ev.dec.kept;
  std::vector<double> v(dim), coef(kept), w(dim);
  field_to_basis(ev.dec.layout, f, v.data());
  cblas_dgemv(CblasRowMajor, CblasTrans, dim, kept, 1.0, ev.dec.vectors.data(), kept, v.data(), 1,
              0.0, coef.data(), 1);
  for (int n = 0; n < kept; ++n) coef[n] *= std::exp(-t * ev.dec.eigenvalues[n]);
  cblas_dgemv(CblasRowMajor, CblasNoTrans, dim, kept, 1.0, ev.dec.vectors.data(), kept,
              coef.data(), 1, 0.0, w.data(), 1);
  return basis_to_field(ev.dec.layout, w.data());
}

SpectralField kernel_slice(HeatKernelEvaluator& ev, double t, int iy) {
  check_t(t);
  pin_blas();
  ev.ensure_values();
  int dim = ev.dec.layout.dim(), kept = ev.dec.kept;
  std::vector<double> wn(kept), b(dim);
  for (int n = 0; n < kept; ++n)
    wn[n] = std::exp(-t * ev.dec.eigenvalues[n]) *
            ev.u_vals[static_cast<size_t>(iy) * kept + n];
  cblas_dgemv(CblasRowMajor, CblasNoTrans, dim, kept, 1.0, ev.dec.vectors.data(), kept, wn.data(),
              1, 0.0, b.data(), 1);
  return basis_to_field(ev.dec.layout, b.data());
}

SpectralField free_kernel_slice(const TorusGrid& g, double t, int iy) {
  check_t(t);
  SpectralField f(g);
  int i0 = iy / g.N, j0 = iy % g.N;
  for (int i = 0; i < g.N; ++i)
    for (int j = 0; j < g.N; ++j) {
      if (!g.in_core(i, j)) continue;
      double phase = -2.0 * M_PI * (g.kof(i) * static_cast<double>(i0) +
                                    g.kof(j) * static_cast<double>(j0)) / g.N;
      f.at(i, j) = std::exp(-t * g.kappa2(i, j)) / (g.L * g.L) *
                   cplx{std::cos(phase), std::sin(phase)};
    }
  return f;
}

double theta_kernel(const TorusGrid& g, double t, int di, int dj, int kmax) {
  check_t(t);
  double dx = g.dx(), two_pi_over_l = 2.0 * M_PI / g.L;
  double s = 0.0;
  for (int kx = -kmax; kx <= kmax; ++kx)
    for (int ky = -kmax; ky <= kmax; ++ky) {
      double k2 = two_pi_over_l * two_pi_over_l * (static_cast<double>(kx) * kx +
                                                   static_cast<double>(ky) * ky);
      double phase = two_pi_over_l * (kx * di * dx + ky * dj * dx);
      s += std::exp(-t * k2) * std::cos(phase);
    }
  return s / (g.L * g.L);
}

double theta_kernel_images(const TorusGrid& g, double t, int di, int dj) {
  check_t(t);
  double dxv = di * g.dx(), dyv = dj * g.dx();
  double s = 0.0;
  for (int mi = -4; mi <= 4; ++mi)
    for (int mj = -4; mj <= 4; ++mj) {
      double ax = dxv + mi * g.L, ay = dyv + mj * g.L;
      s += std::exp(-(ax * ax + ay * ay) / (4.0 * t));
    }
  return s / (4.0 * M_PI * t);
}

double trusted_t_min(const TorusGrid& g) {
  // the diagonal is the worst case: every lattice term adds positively
  int h = g.N / 2 - 1, kbig = 3 * g.N;
  for (double t = 1e-3; t < 10.0; t *= 1.05) {
    double core = 0.0, full = 0.0, w = 2.0 * M_PI / g.L;
    for (int kx = -kbig; kx <= kbig; ++kx)
      for (int ky = -kbig; ky <= kbig; ++ky) {
        double e = std::exp(-t * w * w * (static_cast<double>(kx) * kx +
                                          static_cast<double>(ky) * ky));
        full += e;
        if (std::abs(kx) <= h && std::abs(ky) <= h) core += e;
      }
    if ((full - core) / full < 1e-8) return t;
  }
  throw std::runtime_error("trusted_t_min: no certified t below 10");
}

double torus_distance(const TorusGrid& g, int ix, int iy) {
  double dx = g.dx();
  double ax = std::abs(ix / g.N - iy / g.N) * dx, ay = std::abs(ix % g.N - iy % g.N) * dx;
  ax = std::min(ax, g.L - ax);
  ay = std::min(ay, g.L - ay);
  return std::hypot(ax, ay);
}

double trace_eigen(const HeatKernelEvaluator& ev, double t) {
  check_t(t);
  double s = 0.0;
  for (double ev_n : ev.dec.eigenvalues) s += std::exp(-t * ev_n);
  return s;
}

double trace_diagonal(HeatKernelEvaluator& ev, double t) {
  check_t(t);
  ev.ensure_values();
  int kept = ev.dec.kept, np = ev.points();
  double cell = ev.dec.grid.mu() / np;
  double s = 0.0;
  for (int x = 0; x < np; ++x) {
    const double* ux = ev.u_vals.data() + static_cast<size_t>(x) * kept;
    double diag = 0.0;
    for (int n = 0; n < kept; ++n) diag += std::exp(-t * ev.dec.eigenvalues[n]) * ux[n] * ux[n];
    s += diag * cell;
  }
  return s;
}

TraceFit trace_asymptotic_fit(HeatKernelEvaluator& ev, const std::vector<double>& ts) {
  if (ts.size() < 3) throw std::invalid_argument("trace fit needs at least 3 points");
  TraceFit fit;
  double mu = ev.dec.grid.mu();
  std::vector<double> inv_t, log_inv_t, log_rem;
  for (double t : ts) {
    double tr = trace_eigen(ev, t);
    fit.t.push_back(t);
    fit.trace.push_back(tr);
    inv_t.push_back(1.0 / t);
    double rem = std::abs(tr - mu / (4.0 * M_PI * t));
    log_inv_t.push_back(std::log(1.0 / t));
    log_rem.push_back(std::log(std::max(rem, 1e-300)));
  }
  fit.leading = ls_slope(inv_t, fit.trace);
  fit.remainder_exponent = ls_slope(log_inv_t, log_rem);
  return fit;
}

KernelDifferenceProfile kernel_difference_profile(HeatKernelEvaluator& ev, const LP& lp,
                                                  const std::vector<double>& ts, int iy,
                                                  double rho) {
  KernelDifferenceProfile prof;
  std::vector<double> log_inv_t, log_sup;
  for (double t : ts) {
    SpectralField diff = kernel_slice(ev, t, iy) - free_kernel_slice(ev.dec.grid, t, iy);
    double sup = sup_norm(diff);
    prof.t.push_back(t);
    prof.sup_diff.push_back(sup);
    prof.besov_diff.push_back(besov_norm(lp, diff, rho));
    log_inv_t.push_back(std::log(1.0 / t));
    log_sup.push_back(std::log(std::max(sup, 1e-300)));
  }
  prof.exponent = ls_slope(log_inv_t, log_sup);
  return prof;
}

GaussianCertificate gaussian_bound_certificate(HeatKernelEvaluator& ev,
                                               const std::vector<double>& ts, int stride) {
  const TorusGrid& g = ev.dec.grid;
  std::vector<int> pts;
  for (int i = 0; i < g.N; i += stride)
    for (int j = 0; j < g.N; j += stride) pts.push_back(g.idx(i, j));

  double l0 = ev.dec.eigenvalues[0];
  struct Sample {
    double t, d2, p;
  };
  std::vector<Sample> samples;
  GaussianCertificate cert;
  for (double t : ts) {
    check_t(t);
    auto rows = heat_kernel_rows(ev, t, pts);
    for (size_t r = 0; r < pts.size(); ++r)
      for (int y : pts) {
        double d = torus_distance(g, pts[r], y);
        // beyond d^2/t = 12 the kernel sits under the truncation ringing
        // floor and no finite-sample certificate is meaningful
        if (d * d / t > 12.0) continue;
        double p = rows[r * static_cast<size_t>(ev.points()) + y];
        ++cert.samples;
        if (p <= 0.0) {
          ++cert.violations;
          continue;
        }
        samples.push_back({t, d * d, p});
      }
  }

  double best_score = 1e300, best_log_m = 0.0, best_c = 1.0;
  for (int jc = -8; jc <= 16; ++jc) {
    double c = std::pow(2.0, jc / 4.0);
    double need = -1e300;
    for (const auto& s : samples) {
      double up = std::log(s.p) + std::log(s.t) + s.t * l0 + s.d2 / (c * s.t) - std::log(c);
      double lo = -s.t * l0 - c * s.d2 / s.t - std::log(c * s.t * s.p);
      need = std::max(need, std::max(up, lo));
    }
    double score = std::max(need, std::log(c));
    if (score < best_score) {
      best_score = score;
      best_log_m = need;
      best_c = c;
    }
  }
  cert.m = std::exp(best_log_m);
  cert.c = best_c;
  return cert;
}

GaussianCertificate gaussian_replay(HeatKernelEvaluator& ev, const GaussianCertificate& free_cert) {
  SpectralDecomposition& dec = ev.dec;
  auto vals = to_grid_padded(dec.field(0), 2);
  double lo = *std::min_element(vals.begin(), vals.end());
  double hi = *std::max_element(vals.begin(), vals.end());
  if (lo <= 0.0) throw std::runtime_error("gaussian replay: ground state not positive");
  GaussianCertificate pred = free_cert;
  pred.m = free_cert.m * (hi / lo) * (hi / lo);
  return pred;
}

double moment_scaling(HeatKernelEvaluator& ev, double t, int k) {
  check_t(t);
  if (k < 1) throw std::invalid_argument("moment_scaling: k must be positive");
  const TorusGrid& g = ev.dec.grid;
  int np = ev.points();
  double cell = g.mu() / np;
  double sup = 0.0;
  std::vector<int> xs(64);
  for (int x0 = 0; x0 < np; x0 += 64) {
    xs.clear();
    for (int x = x0; x < std::min(np, x0 + 64); ++x) xs.push_back(x);
    auto rows = heat_kernel_rows(ev, t, xs);
    for (size_t r = 0; r < xs.size(); ++r) {
      double acc = 0.0;
      for (int y = 0; y < np; ++y)
        acc += rows[r * static_cast<size_t>(np) + y] *
               std::pow(torus_distance(g, xs[r], y), k) * cell;
      sup = std::max(sup, std::pow(std::max(acc, 0.0), 1.0 / k));
    }
  }
  return sup;
}

double hypercontractivity_probe(const HeatKernelEvaluator& ev, double t, int p, int n_probes,
                                uint64_t seed) {
  check_t(t);
  if (p != 2 && p != 4)
    throw std::invalid_argument("hypercontractivity probe: p must be 2 or 4");
  const TorusGrid& g = ev.dec.grid;
  double l0 = ev.dec.eigenvalues[0];
  double sup = 0.0;
  for (int i = 0; i < n_probes; ++i) {
    CounterRng rng(seed, 0x68797065ull + i);
    std::vector<double> vals(g.size());
    for (auto& v : vals) v = rng.gauss();
    SpectralField f = from_grid(g, vals);
    SpectralField gfld = heat_apply(ev, t, f);
    gfld *= std::exp(t * l0);
    double num = p == 4 ? std::pow(integral_power(gfld, 4), 0.25) : gfld.l2();
    sup = std::max(sup, num / f.l2());
  }
  return sup;
}

double semigroup_min(const HeatKernelEvaluator& ev, double t, const SpectralField& f) {
  auto vals = to_grid_padded(heat_apply(ev, t, f), 2);
  return *std::min_element(vals.begin(), vals.end());
}

}  // namespace anderson
