#include "anderson/gff.hpp"

#include <cblas.h>
#include <lapacke.h>

#include <algorithm>

#include "anderson/accum.hpp"
#include "anderson/rng.hpp"

namespace anderson {

namespace {

constexpr uint64_t kGffSalt = 0x676666ull;

void check_mass(const SpectralDecomposition& dec, double c) {
  if (c + dec.eigenvalues[0] <= 1e-6)
    throw std::invalid_argument("mass shift c = " + std::to_string(c) +
                                " too small: need c > -lambda0 + 1e-6 with lambda0 = " +
                                std::to_string(dec.eigenvalues[0]));
}

std::vector<double> mass_weights(const SpectralDecomposition& dec, double c, int power) {
  std::vector<double> mu(dec.kept);
  for (int n = 0; n < dec.kept; ++n) mu[n] = std::pow(c + dec.eigenvalues[n], -power);
  return mu;
}

// grid matrix of sum_n w_n u_n(x) u_n(y)
std::vector<double> weighted_kernel_matrix(HeatKernelEvaluator& ev,
                                           const std::vector<double>& w) {
  ev.ensure_values();
  int np = ev.points(), kept = ev.dec.kept;
  std::vector<double> a(static_cast<size_t>(np) * kept);
  for (int x = 0; x < np; ++x)
    for (int n = 0; n < kept; ++n)
      a[static_cast<size_t>(x) * kept + n] = w[n] * ev.u_vals[static_cast<size_t>(x) * kept + n];
  std::vector<double> m(static_cast<size_t>(np) * np);
  cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, np, np, kept, 1.0, a.data(), kept,
              ev.u_vals.data(), kept, 0.0, m.data(), np);
  return m;
}

// F_{nm} = <u_n^r u_m^r, f> through the alias-free doubled grid
std::vector<double> smoothed_pair_matrix(const SpectralDecomposition& dec, double r,
                                         const SpectralField& f) {
  const TorusGrid& g = dec.grid;
  int kept = dec.kept, np2 = 4 * g.size();
  std::vector<double> p(static_cast<size_t>(np2) * kept);
  for (int n = 0; n < kept; ++n) {
    SpectralField u = dec.field(n);
    if (r > 0.0) u.apply_symbol([r](double k2) { return std::exp(-r * k2); });
    auto vals = to_grid_padded(u, 2);
    for (int x = 0; x < np2; ++x) p[static_cast<size_t>(x) * kept + n] = vals[x];
  }
  auto fvals = to_grid_padded(f, 2);
  double cell = g.mu() / np2;
  std::vector<double> pf = p;
  for (int x = 0; x < np2; ++x)
    for (int n = 0; n < kept; ++n) pf[static_cast<size_t>(x) * kept + n] *= fvals[x] * cell;
  std::vector<double> fmat(static_cast<size_t>(kept) * kept);
  cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, kept, kept, np2, 1.0, p.data(), kept,
              pf.data(), kept, 0.0, fmat.data(), kept);
  return fmat;
}

// eigenbasis gram sqrt(mu) V^T diag(e^{-s kappa^2}) V sqrt(mu); s = 0 gives
// the matrix of (H+c)^{-1} itself
std::vector<double> smoothed_resolvent_gram(const SpectralDecomposition& dec, double c,
                                            double s) {
  int dim = dec.layout.dim(), kept = dec.kept;
  std::vector<double> d(dim);
  d[0] = 1.0;
  for (size_t p = 0; p < dec.layout.pair_rep.size(); ++p) {
    int rep = dec.layout.pair_rep[p];
    double k2 = dec.grid.kappa2(rep / dec.grid.N, rep % dec.grid.N);
    d[1 + 2 * p] = d[2 + 2 * p] = std::exp(-s * k2);
  }
  std::vector<double> w(static_cast<size_t>(dim) * kept);
  for (int i = 0; i < dim; ++i)
    for (int n = 0; n < kept; ++n)
      w[static_cast<size_t>(i) * kept + n] = d[i] * dec.vectors[static_cast<size_t>(i) * kept + n];
  std::vector<double> q(static_cast<size_t>(kept) * kept);
  cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, kept, kept, dim, 1.0, dec.vectors.data(),
              kept, w.data(), kept, 0.0, q.data(), kept);
  auto mu = mass_weights(dec, c, 1);
  for (int n = 0; n < kept; ++n)
    for (int m = 0; m < kept; ++m)
      q[static_cast<size_t>(n) * kept + m] *= std::sqrt(mu[n] * mu[m]);
  return q;
}

}  // namespace

double default_mass_shift(const SpectralDecomposition& dec) { return -dec.eigenvalues[0] + 1.0; }

std::vector<double> gff_gammas(const SpectralDecomposition& dec, uint64_t gff_seed) {
  CounterRng rng(gff_seed, kGffSalt, dec.seed);
  std::vector<double> g(dec.kept);
  for (auto& x : g) x = rng.gauss();
  return g;
}

GFFSample sample_gff(const SpectralDecomposition& dec, double c, uint64_t gff_seed) {
  check_mass(dec, c);
  auto gamma = gff_gammas(dec, gff_seed);
  auto mu = mass_weights(dec, c, 1);
  int dim = dec.layout.dim();
  std::vector<double> coef(dec.kept), w(dim);
  for (int n = 0; n < dec.kept; ++n) coef[n] = gamma[n] * std::sqrt(mu[n]);
  cblas_dgemv(CblasRowMajor, CblasNoTrans, dim, dec.kept, 1.0, dec.vectors.data(), dec.kept,
              coef.data(), 1, 0.0, w.data(), 1);
  GFFSample s;
  s.grid = dec.grid;
  s.c = c;
  s.gff_seed = gff_seed;
  s.phi = basis_to_field(dec.layout, w.data());
  return s;
}

double green_function(HeatKernelEvaluator& ev, double c, int ix, int iy) {
  check_mass(ev.dec, c);
  ev.ensure_values();
  int kept = ev.dec.kept;
  const double* ux = ev.u_vals.data() + static_cast<size_t>(ix) * kept;
  const double* uy = ev.u_vals.data() + static_cast<size_t>(iy) * kept;
  double s = 0.0;
  for (int n = 0; n < kept; ++n) s += ux[n] * uy[n] / (c + ev.dec.eigenvalues[n]);
  return s;
}

GreenLogFit green_log_fit(HeatKernelEvaluator& ev, double c, int ix) {
  const TorusGrid& g = ev.dec.grid;
  double lo = 4.0 / g.N, hi = g.L / 4.0;
  GreenLogFit fit;
  double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
  for (int iy = 0; iy < g.size(); ++iy) {
    double d = torus_distance(g, ix, iy);
    if (d < lo || d > hi) continue;
    double x = std::abs(std::log(d)), y = green_function(ev, c, ix, iy);
    ++fit.pairs;
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
    syy += y * y;
  }
  if (fit.pairs < 8) throw std::runtime_error("green log fit: window holds < 8 points");
  double n = fit.pairs;
  fit.slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  double num = n * sxy - sx * sy;
  fit.r2 = num * num / ((n * sxx - sx * sx) * (n * syy - sy * sy));
  return fit;
}

double trace_power(const SpectralDecomposition& dec, double c, int n) {
  if (n < 2)
    throw std::invalid_argument(
        "trace power a_n: n must be at least 2 (a_1 diverges in the continuum limit)");
  check_mass(dec, c);
  KahanSum s;
  for (double lam : dec.eigenvalues) s.add(std::pow(lam + c, -n));
  return s.value();
}

double trace_power_quadrature(HeatKernelEvaluator& ev, double c, int n) {
  if (n != 2 && n != 3)
    throw std::invalid_argument("trace power quadrature: only n = 2, 3 supported");
  check_mass(ev.dec, c);
  auto mu = mass_weights(ev.dec, c, 1);
  auto m = weighted_kernel_matrix(ev, mu);
  int np = ev.points();
  double cell = ev.dec.grid.mu() / np;
  if (n == 2) {
    KahanSum s;
    for (double v : m) s.add(v * v);
    return s.value() * cell * cell;
  }
  std::vector<double> m2(static_cast<size_t>(np) * np);
  cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, np, np, np, 1.0, m.data(), np, m.data(),
              np, 0.0, m2.data(), np);
  KahanSum s;
  for (int x = 0; x < np; ++x)
    for (int y = 0; y < np; ++y)
      s.add(m2[static_cast<size_t>(x) * np + y] * m[static_cast<size_t>(y) * np + x]);
  return s.value() * cell * cell * cell;
}

WickTransform make_wick_transform(const SpectralDecomposition& dec, double c, double r) {
  check_mass(dec, c);
  if (r < 0.0) throw std::invalid_argument("wick transform: r must be nonnegative");
  WickTransform wt;
  wt.c = c;
  wt.r = r;
  wt.mean_field = SpectralField(dec.grid);
  auto mu = mass_weights(dec, c, 1);
  for (int n = 0; n < dec.kept; ++n) {
    SpectralField u = dec.field(n);
    if (r > 0.0) u.apply_symbol([r](double k2) { return std::exp(-r * k2); });
    SpectralField sq = multiply_dealiased(u, u);
    sq *= mu[n];
    wt.mean_field += sq;
  }
  wt.mean_total = wt.mean_field.integral();
  return wt;
}

SpectralField wick_square_field(const WickTransform& wt, const GFFSample& s) {
  if (!(s.grid == wt.mean_field.grid))
    throw std::invalid_argument("wick square: sample and transform grids differ");
  SpectralField phi_r = s.phi;
  if (wt.r > 0.0) {
    double r = wt.r;
    phi_r.apply_symbol([r](double k2) { return std::exp(-r * k2); });
  }
  SpectralField w = multiply_dealiased(phi_r, phi_r);
  w -= wt.mean_field;
  w *= 0.5;
  return w;
}

double wick_variance_exact(const SpectralDecomposition& dec, double c, double r,
                           const SpectralField& f) {
  check_mass(dec, c);
  auto fmat = smoothed_pair_matrix(dec, r, f);
  auto mu = mass_weights(dec, c, 1);
  KahanSum s;
  for (int n = 0; n < dec.kept; ++n)
    for (int m = 0; m < dec.kept; ++m) {
      double v = fmat[static_cast<size_t>(n) * dec.kept + m];
      s.add(mu[n] * mu[m] * v * v);
    }
  return 0.5 * s.value();
}

double wick_cauchy_distance(const SpectralDecomposition& dec, double c, double r) {
  check_mass(dec, c);
  if (r <= 0.0) throw std::invalid_argument("wick cauchy distance: r must be positive");
  // <u_n^s u_m^s> = <u_n, e^{-2s Delta} u_m>, so the gram of :phi_s^2:
  // coefficients is the resolvent gram smoothed at 2s
  auto qa = smoothed_resolvent_gram(dec, c, 2.0 * r);
  auto qb = smoothed_resolvent_gram(dec, c, r);
  KahanSum s;
  for (size_t i = 0; i < qa.size(); ++i) {
    double d = qa[i] - qb[i];
    s.add(d * d);
  }
  return std::sqrt(0.5 * s.value());
}

WickEnsemble wick_ensemble(const SpectralDecomposition& dec, double c, double r,
                           const SpectralField& f, int count, uint64_t seed0) {
  if (count < 2) throw std::invalid_argument("wick ensemble: need at least 2 samples");
  WickTransform wt = make_wick_transform(dec, c, r);
  std::vector<double> xs(count);
  for (int i = 0; i < count; ++i) {
    GFFSample s = sample_gff(dec, c, seed0 + i);
    xs[i] = dot(wick_square_field(wt, s), f);
  }
  auto m = compute_moments(xs);
  WickEnsemble e;
  e.count = count;
  e.mean = m.mean;
  e.mean_stderr = m.mean_stderr;
  e.var = m.var;
  e.var_stderr = m.var_stderr;
  return e;
}

PartitionResult partition_function(const SpectralDecomposition& dec, double c, double lambda,
                                   int count, uint64_t seed0) {
  check_mass(dec, c);
  if (count < 2) throw std::invalid_argument("partition function: need at least 2 samples");
  auto mu = mass_weights(dec, c, 1);
  PartitionResult res;
  res.lambda = lambda;

  // det_2 route: prod (1 + lambda mu_k) e^{-lambda mu_k}, log-domain
  KahanSum logdet;
  for (double m : mu) {
    if (1.0 + lambda * m <= 0.0)
      throw std::domain_error("det2 factor vanishes: lambda at or beyond -1/mu_k = " +
                              std::to_string(-1.0 / m));
    logdet.add(std::log1p(lambda * m) - lambda * m);
  }
  res.z_det2 = std::exp(-0.5 * logdet.value());

  // series route behind the geometric-decay certificate
  double mu_max = *std::max_element(mu.begin(), mu.end());
  if (std::abs(lambda) * mu_max < 0.5) {
    std::vector<double> p(mu.size());
    for (size_t k = 0; k < mu.size(); ++k) p[k] = mu[k] * mu[k];
    KahanSum log_series;
    double q = lambda * lambda;  // (-lambda)^n, n starting at 2
    for (int n = 2; n <= 400; ++n) {
      KahanSum an;
      for (double v : p) an.add(v);
      double term = q * an.value() / (2.0 * n);
      log_series.add(term);
      res.series_terms = n - 1;
      if (std::abs(term) < 1e-12) break;
      for (size_t k = 0; k < p.size(); ++k) p[k] *= mu[k];
      q *= -lambda;
    }
    res.z_series = std::exp(log_series.value());
  }

  // Monte Carlo route over the shared gamma stream
  std::vector<double> zs(count);
  for (int i = 0; i < count; ++i) {
    auto gamma = gff_gammas(dec, seed0 + i);
    KahanSum x;
    for (size_t n = 0; n < mu.size(); ++n) x.add(mu[n] * (gamma[n] * gamma[n] - 1.0));
    zs[i] = std::exp(-lambda * 0.5 * x.value());
  }
  auto m = compute_moments(zs);
  res.z_mc = m.mean;
  res.z_mc_stderr = m.mean_stderr;
  return res;
}

WeightedPartitionResult weighted_partition(const SpectralDecomposition& dec, double c,
                                           const SpectralField& f, int count, uint64_t seed0) {
  check_mass(dec, c);
  if (count < 2) throw std::invalid_argument("weighted partition: need at least 2 samples");
  auto fvals = to_grid_padded(f, 2);
  double fmin = *std::min_element(fvals.begin(), fvals.end());
  if (fmin < -1e-12)
    throw std::invalid_argument("weighted partition: f must be nonnegative (min = " +
                                std::to_string(fmin) + ")");

  int kept = dec.kept;
  auto fmat = smoothed_pair_matrix(dec, 0.0, f);
  auto mu = mass_weights(dec, c, 1);
  for (int n = 0; n < kept; ++n)
    for (int m = 0; m < kept; ++m)
      fmat[static_cast<size_t>(n) * kept + m] *= std::sqrt(mu[n] * mu[m]);

  WeightedPartitionResult res;
  std::vector<double> nu(kept);
  {
    std::vector<double> k = fmat;  // dsyev overwrites
    int info = LAPACKE_dsyev(LAPACK_ROW_MAJOR, 'N', 'L', kept, k.data(), kept, nu.data());
    if (info != 0) throw std::runtime_error("weighted partition: dsyev info = " +
                                            std::to_string(info));
  }
  KahanSum logdet;
  for (double v : nu) {
    if (1.0 + v <= 0.0)
      throw std::domain_error("weighted det2 factor vanishes at eigenvalue " + std::to_string(v));
    logdet.add(std::log1p(v) - v);
  }
  res.z_det2 = std::exp(-0.5 * logdet.value());

  double tr = 0.0;
  for (int n = 0; n < kept; ++n) tr += fmat[static_cast<size_t>(n) * kept + n];
  std::vector<double> zs(count), kg(kept);
  for (int i = 0; i < count; ++i) {
    auto gamma = gff_gammas(dec, seed0 + i);
    cblas_dgemv(CblasRowMajor, CblasNoTrans, kept, kept, 1.0, fmat.data(), kept, gamma.data(), 1,
                0.0, kg.data(), 1);
    double quad = cblas_ddot(kept, gamma.data(), 1, kg.data(), 1);
    zs[i] = std::exp(-0.5 * (quad - tr));
  }
  auto m = compute_moments(zs);
  res.z_mc = m.mean;
  res.z_mc_stderr = m.mean_stderr;
  return res;
}

std::vector<double> det2_zeros(const SpectralDecomposition& dec, double c, int count) {
  check_mass(dec, c);
  if (count < 1 || count > dec.kept) throw std::invalid_argument("det2 zeros: bad count");
  auto mu = mass_weights(dec, c, 1);
  // sign of prod (1 + lambda mu_k): parity of negative factors; e^{-lambda mu}
  // never changes sign, so this is sgn D(lambda) without overflow
  auto sgn = [&mu](double lambda) {
    int neg = 0;
    for (double m : mu) neg += (1.0 + lambda * m) < 0.0;
    return neg % 2 == 0 ? 1 : -1;
  };
  double reach = 1.05 * (c + dec.eigenvalues[count - 1]);
  int steps = 20000;
  std::vector<double> roots;
  double prev_l = -1e-9;
  int prev_s = sgn(prev_l);
  for (int i = 1; i <= steps && static_cast<int>(roots.size()) < count; ++i) {
    double l = -reach * i / steps;
    int s = sgn(l);
    if (s != prev_s) {
      double a = prev_l, b = l;
      for (int it = 0; it < 80; ++it) {
        double mid = 0.5 * (a + b);
        if (sgn(mid) == prev_s)
          a = mid;
        else
          b = mid;
      }
      roots.push_back(0.5 * (a + b));
    }
    prev_l = l;
    prev_s = s;
  }
  if (static_cast<int>(roots.size()) < count)
    throw std::runtime_error("det2 zeros: found only " + std::to_string(roots.size()) +
                             " sign changes; clustered or degenerate eigenvalues");
  return roots;
}

std::vector<double> pair_quadrature_matrix(const SpectralDecomposition& dec, double r,
                                           const SpectralField& f) {
  return smoothed_pair_matrix(dec, r, f);
}

}  // namespace anderson
