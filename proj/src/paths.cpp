#include "anderson/paths.hpp"

#include <cblas.h>
#include <lapacke.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <string>

#include "anderson/accum.hpp"
#include "anderson/noise.hpp"
#include "anderson/rng.hpp"

namespace anderson {

namespace {

constexpr uint64_t kPathSalt = 0x70617468ull;
constexpr uint64_t kLoopSalt = 0x6c6f6f70ull;
constexpr uint64_t kSingSalt = 0x73696e67ull;
constexpr int kLifetimeBins = 160;

// index of the first cumulative entry exceeding u
int sample_index(const double* cum, int n, double u) {
  int lo = 0, hi = n - 1;
  while (lo < hi) {
    int mid = (lo + hi) / 2;
    if (cum[mid] > u)
      hi = mid;
    else
      lo = mid + 1;
  }
  return lo;
}

struct LineFit {
  double slope = 0.0, intercept = 0.0, slope_stderr = 0.0;
};

LineFit fit_line(const std::vector<double>& xs, const std::vector<double>& ys) {
  int n = static_cast<int>(xs.size());
  double mx = 0.0, my = 0.0;
  for (int i = 0; i < n; ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0;
  for (int i = 0; i < n; ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
  }
  LineFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double ss = 0.0;
  for (int i = 0; i < n; ++i) {
    double r = ys[i] - f.intercept - f.slope * xs[i];
    ss += r * r;
  }
  if (n > 2) f.slope_stderr = std::sqrt(ss / (n - 2) / sxx);
  return f;
}

int poisson_draw(CounterRng& rng, double mean) {
  double limit = std::exp(-mean), prod = rng.uniform();
  int k = 0;
  while (prod > limit) {
    prod *= rng.uniform();
    ++k;
  }
  return k;
}

// lifetime log-grid of the loop measure on [eps, t_max]: per-bin mass of
// (1/t) tr e^{-t(H+c)} (Simpson in log t) with the representative lifetime
// snapped to the step grid so loop bodies reuse the cached p_delta rows
struct LifetimeGrid {
  std::vector<double> mass;   // bin integrals, sum = measure_mass
  std::vector<double> zeta;   // snapped representative lifetime M * delta
  std::vector<int> steps;     // M
};

LifetimeGrid build_lifetime_grid(const SpectralDecomposition& dec, double c, double eps,
                                 double t_max, double delta) {
  auto trace = [&](double t) {
    KahanSum s;
    for (int n = 0; n < dec.kept; ++n) s.add(std::exp(-t * (dec.eigenvalues[n] + c)));
    return s.value();
  };
  LifetimeGrid lg;
  double la = std::log(eps), lb = std::log(t_max);
  double width = (lb - la) / kLifetimeBins;
  for (int b = 0; b < kLifetimeBins; ++b) {
    double t0 = la + b * width, t1 = t0 + width;
    // d(mass) = (1/t) tr dt = tr d(log t)
    double m = width / 6.0 *
               (trace(std::exp(t0)) + 4.0 * trace(std::exp(0.5 * (t0 + t1))) + trace(std::exp(t1)));
    double mid = std::exp(0.5 * (t0 + t1));
    int steps = std::max(1, static_cast<int>(std::lround(mid / delta)));
    lg.mass.push_back(m);
    lg.zeta.push_back(steps * delta);
    lg.steps.push_back(steps);
  }
  return lg;
}

}  // namespace

TransitionCache make_transition_cache(const SpectralDecomposition& dec, double delta) {
  if (delta <= 0.0) throw std::invalid_argument("transition cache: delta must be positive");
  double tmin = trusted_t_min(dec.grid);
  if (delta < tmin * (1.0 - 1e-12))
    throw std::invalid_argument("transition cache: delta " + std::to_string(delta) +
                                " below the trusted kernel range t >= " + std::to_string(tmin));
  TransitionCache tc;
  tc.ev = make_heat_evaluator(dec);
  tc.ev.ensure_values();
  tc.delta = delta;
  tc.lambda0 = dec.eigenvalues[0];
  const TorusGrid& g = dec.grid;
  int np = g.size();
  tc.cell = g.mu() / np;
  tc.u0.resize(np);
  for (int x = 0; x < np; ++x) tc.u0[x] = tc.ev.u_vals[static_cast<size_t>(x) * dec.kept];
  if (*std::min_element(tc.u0.begin(), tc.u0.end()) <= 0.0)
    throw std::runtime_error("transition cache: ground state is not positive on the grid");
  std::vector<int> xs(np);
  for (int x = 0; x < np; ++x) xs[x] = x;
  tc.rows = heat_kernel_rows(tc.ev, delta, xs);
  return tc;
}

PolymerLaw make_polymer_law(const TransitionCache& cache, double T, int M) {
  if (M < 1) throw std::invalid_argument("polymer law: need at least one step");
  if (std::abs(T - M * cache.delta) > 1e-9 * std::max(1.0, T))
    throw std::invalid_argument("polymer law: T must equal M * delta of the cache");
  PolymerLaw law;
  law.cache = &cache;
  law.T = T;
  law.M = M;
  const TorusGrid& g = cache.ev.dec.grid;
  int np = g.size();
  law.mass.assign(static_cast<size_t>(M + 1) * np, 1.0);
  SpectralField one = constant_field(g, 1.0);
  for (int j = 1; j <= M; ++j) {
    auto vals = to_grid(heat_apply(cache.ev, j * cache.delta, one));
    for (int z = 0; z < np; ++z) {
      if (vals[z] <= 0.0)
        throw std::runtime_error("polymer law: survival mass not positive at step " +
                                 std::to_string(j));
      law.mass[static_cast<size_t>(j) * np + z] = vals[z];
    }
  }
  return law;
}

Path sample_polymer(const PolymerLaw& law, int x, uint64_t seed) {
  const TransitionCache& tc = *law.cache;
  int np = tc.ev.dec.grid.size();
  CounterRng rng(seed, kPathSalt, 0);
  Path p;
  p.kind = PathKind::polymer;
  p.delta = tc.delta;
  p.seed = seed;
  p.pos.reserve(law.M + 1);
  p.pos.push_back(x);
  std::vector<double> cum(np);
  int cur = x;
  for (int i = 0; i < law.M; ++i) {
    const double* row = &tc.rows[static_cast<size_t>(cur) * np];
    const double* m = &law.mass[static_cast<size_t>(law.M - i - 1) * np];
    double acc = 0.0;
    for (int z = 0; z < np; ++z) {
      double w = row[z] * m[z];
      if (w > 0.0) acc += w;  // truncation ringing can dip negative; clamp
      cum[z] = acc;
    }
    cur = sample_index(cum.data(), np, rng.uniform() * acc);
    p.pos.push_back(cur);
  }
  return p;
}

DiffusionLaw make_diffusion_law(const TransitionCache& cache, double a) {
  if (a < 0.0) throw std::invalid_argument("diffusion law: killing rate must be >= 0");
  DiffusionLaw law;
  law.cache = &cache;
  law.a = a;
  law.survival = std::exp(-a * cache.delta);
  int np = cache.ev.dec.grid.size();
  law.cdf.resize(static_cast<size_t>(np) * np);
  double boost = std::exp(cache.delta * cache.lambda0) * cache.cell;
  for (int x = 0; x < np; ++x) {
    double acc = 0.0;
    for (int z = 0; z < np; ++z) {
      double w = boost * cache.rows[static_cast<size_t>(x) * np + z] * cache.u0[z] / cache.u0[x];
      if (w > 0.0) acc += w;
      law.cdf[static_cast<size_t>(x) * np + z] = acc;
    }
    law.conservativity_defect = std::max(law.conservativity_defect, std::abs(acc - 1.0));
  }
  return law;
}

Path sample_diffusion(const DiffusionLaw& law, int x, int M, uint64_t seed) {
  const TransitionCache& tc = *law.cache;
  int np = tc.ev.dec.grid.size();
  CounterRng rng(seed, kPathSalt, 1);
  Path p;
  p.kind = PathKind::diffusion;
  p.delta = tc.delta;
  p.seed = seed;
  p.pos.reserve(M + 1);
  p.pos.push_back(x);
  int cur = x;
  for (int i = 0; i < M; ++i) {
    if (law.a > 0.0 && rng.uniform() > law.survival) {
      p.killed = true;
      break;
    }
    const double* cum = &law.cdf[static_cast<size_t>(cur) * np];
    cur = sample_index(cum, np, rng.uniform() * cum[np - 1]);
    p.pos.push_back(cur);
  }
  return p;
}

BridgeLaw make_bridge_law(const TransitionCache& cache, int y, int M) {
  if (M < 1) throw std::invalid_argument("bridge law: need at least one step");
  const SpectralDecomposition& dec = cache.ev.dec;
  BridgeLaw law;
  law.y = y;
  law.M = M;
  law.cache = &cache;
  int np = dec.grid.size(), kept = dec.kept;
  law.cols.resize(static_cast<size_t>(std::max(0, M - 1)) * np);
  if (M > 1) {
    // cols^T = E^T U^T with E[n][j-1] = e^{-j delta lambda_n} u_n(y)
    std::vector<double> e(static_cast<size_t>(kept) * (M - 1));
    const double* uy = &cache.ev.u_vals[static_cast<size_t>(y) * kept];
    for (int n = 0; n < kept; ++n)
      for (int j = 1; j < M; ++j)
        e[static_cast<size_t>(n) * (M - 1) + (j - 1)] =
            std::exp(-j * cache.delta * dec.eigenvalues[n]) * uy[n];
    cblas_dgemm(CblasRowMajor, CblasTrans, CblasTrans, M - 1, np, kept, 1.0, e.data(), M - 1,
                cache.ev.u_vals.data(), kept, 0.0, law.cols.data(), np);
  }
  return law;
}

Path sample_bridge(const BridgeLaw& law, int x, uint64_t seed) {
  const TransitionCache& tc = *law.cache;
  int np = tc.ev.dec.grid.size();
  CounterRng rng(seed, kPathSalt, 2);
  Path p;
  p.kind = PathKind::bridge;
  p.delta = tc.delta;
  p.seed = seed;
  p.pos.reserve(law.M + 1);
  p.pos.push_back(x);
  std::vector<double> cum(np);
  int cur = x;
  for (int i = 0; i < law.M - 1; ++i) {
    const double* row = &tc.rows[static_cast<size_t>(cur) * np];
    const double* col = &law.cols[static_cast<size_t>(law.M - i - 2) * np];
    double acc = 0.0;
    for (int z = 0; z < np; ++z) {
      double w = row[z] * col[z];
      if (w > 0.0) acc += w;
      cum[z] = acc;
    }
    cur = sample_index(cum.data(), np, rng.uniform() * acc);
    p.pos.push_back(cur);
  }
  p.pos.push_back(law.y);
  return p;
}

double quadratic_variation(const TorusGrid& g, const Path& p) {
  double qv = 0.0;
  for (size_t i = 1; i < p.pos.size(); ++i) {
    double d = torus_distance(g, p.pos[i - 1], p.pos[i]);
    qv += d * d;
  }
  return qv;
}

double holder_ratio(const TorusGrid& g, const Path& p, double a) {
  double sup = 0.0;
  int n = static_cast<int>(p.pos.size());
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      double d = torus_distance(g, p.pos[i], p.pos[j]);
      sup = std::max(sup, d / std::pow((j - i) * p.delta, a));
    }
  return sup;
}

LoopEnsemble sample_loop_soup(TransitionCache& cache, double c, double gamma, double eps,
                              uint64_t seed) {
  const SpectralDecomposition& dec = cache.ev.dec;
  if (gamma <= 0.0) throw std::invalid_argument("loop soup: intensity must be positive");
  if (c + dec.eigenvalues[0] <= 1e-6)
    throw std::invalid_argument("loop soup: mass shift too small");
  double tmin = trusted_t_min(dec.grid);
  if (eps < tmin * (1.0 - 1e-12))
    throw std::invalid_argument("loop soup: eps " + std::to_string(eps) +
                                " below the trusted kernel range t >= " + std::to_string(tmin));
  LoopEnsemble ens;
  ens.c = c;
  ens.gamma = gamma;
  ens.eps = eps;
  ens.t_max = 10.0 / (dec.eigenvalues[0] + c);
  ens.delta_target = cache.delta;
  if (ens.t_max <= eps) throw std::invalid_argument("loop soup: eps beyond the lifetime cutoff");

  LifetimeGrid lg = build_lifetime_grid(dec, c, eps, ens.t_max, cache.delta);
  std::vector<double> cum(lg.mass.size());
  double acc = 0.0;
  for (size_t b = 0; b < lg.mass.size(); ++b) {
    acc += lg.mass[b];
    cum[b] = acc;
  }
  ens.measure_mass = acc;

  cache.ev.ensure_values();
  int np = dec.grid.size(), kept = dec.kept;
  // root law per bin: diagonal kernel at the snapped lifetime, cumulated
  auto root_law = [&](int b) -> const std::vector<double>& {
    auto [it, fresh] = cache.diag_cum.try_emplace(lg.steps[b]);
    auto& rc = it->second;
    if (fresh) {
      rc.resize(np);
      double t = lg.zeta[b], run = 0.0;
      std::vector<double> w(kept);
      for (int n = 0; n < kept; ++n) w[n] = std::exp(-t * dec.eigenvalues[n]);
      for (int x = 0; x < np; ++x) {
        const double* u = &cache.ev.u_vals[static_cast<size_t>(x) * kept];
        double d = 0.0;
        for (int n = 0; n < kept; ++n) d += w[n] * u[n] * u[n];
        run += std::max(d, 0.0);
        rc[x] = run;
      }
    }
    return rc;
  };

  CounterRng rng(seed, kLoopSalt, dec.seed);
  int count = poisson_draw(rng, gamma * ens.measure_mass);
  std::vector<double> colbuf, wbuf(np);
  for (int l = 0; l < count; ++l) {
    int b = sample_index(cum.data(), static_cast<int>(cum.size()), rng.uniform() * acc);
    const auto& rc = root_law(b);
    int root = sample_index(rc.data(), np, rng.uniform() * rc[np - 1]);
    Loop loop;
    loop.zeta = lg.zeta[b];
    int M = lg.steps[b];
    loop.pos.push_back(root);
    if (M > 1) {
      // batched bridge columns p_{j delta}(., root), j = 1..M-1
      colbuf.assign(static_cast<size_t>(M - 1) * np, 0.0);
      std::vector<double> e(static_cast<size_t>(kept) * (M - 1));
      const double* ur = &cache.ev.u_vals[static_cast<size_t>(root) * kept];
      for (int n = 0; n < kept; ++n)
        for (int j = 1; j < M; ++j)
          e[static_cast<size_t>(n) * (M - 1) + (j - 1)] =
              std::exp(-j * cache.delta * dec.eigenvalues[n]) * ur[n];
      cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, np, M - 1, kept, 1.0,
                  cache.ev.u_vals.data(), kept, e.data(), M - 1, 0.0, colbuf.data(), M - 1);
      int cur = root;
      for (int i = 0; i < M - 1; ++i) {
        const double* row = &cache.rows[static_cast<size_t>(cur) * np];
        int back = M - i - 2;  // colbuf column of p_{(M-i-1) delta}(., root)
        double run = 0.0;
        for (int z = 0; z < np; ++z) {
          double w = row[z] * colbuf[static_cast<size_t>(z) * (M - 1) + back];
          if (w > 0.0) run += w;
          wbuf[z] = run;
        }
        cur = sample_index(wbuf.data(), np, rng.uniform() * run);
        loop.pos.push_back(cur);
      }
    }
    ens.loops.push_back(std::move(loop));
  }
  return ens;
}

double loop_occupation(const TorusGrid& g, const Loop& loop, const std::vector<double>& fvals) {
  (void)g;
  double s = 0.0;
  for (int x : loop.pos) s += fvals[x];
  return s * loop.zeta / static_cast<double>(loop.pos.size());
}

double occupation_field(TransitionCache& cache, const LoopEnsemble& ens, const SpectralField& f) {
  const SpectralDecomposition& dec = cache.ev.dec;
  const TorusGrid& g = dec.grid;
  auto fvals = to_grid(f);
  KahanSum sum;
  for (const auto& loop : ens.loops) sum.add(loop_occupation(g, loop, fvals));

  // compensator gamma E_M[1_{zeta > eps} l(f)] in closed form over the same
  // lifetime grid: every time marginal of a loop is the diagonal law
  // diag_zeta / tr, by stationarity and the exact grid Chapman-Kolmogorov
  // identity, so E[l(f) | zeta] = zeta sum_n e^{-zeta lambda_n} q_n /
  // sum_n e^{-zeta lambda_n} with q_n the grid quadrature of u_n^2 f (the
  // same grid sum the sampler draws from, aliasing included)
  cache.ev.ensure_values();
  int np = g.size(), kept = dec.kept;
  std::vector<double> q(kept, 0.0);
  for (int x = 0; x < np; ++x) {
    const double* u = &cache.ev.u_vals[static_cast<size_t>(x) * kept];
    for (int n = 0; n < kept; ++n) q[n] += u[n] * u[n] * fvals[x];
  }
  for (int n = 0; n < kept; ++n) q[n] *= cache.cell;
  LifetimeGrid lg = build_lifetime_grid(dec, ens.c, ens.eps, ens.t_max, ens.delta_target);
  KahanSum comp;
  for (size_t b = 0; b < lg.mass.size(); ++b) {
    double t = lg.zeta[b];
    KahanSum num, den;
    for (int n = 0; n < kept; ++n) {
      double w = std::exp(-t * dec.eigenvalues[n]);
      num.add(w * q[n]);
      den.add(w);
    }
    comp.add(lg.mass[b] * t * num.value() / den.value());
  }
  return sum.value() - ens.gamma * comp.value();
}

double occupation_variance_closed(TransitionCache& cache, double c, double gamma, double eps,
                                  const SpectralField& f) {
  const SpectralDecomposition& dec = cache.ev.dec;
  if (gamma <= 0.0) throw std::invalid_argument("variance closed: intensity must be positive");
  if (c + dec.eigenvalues[0] <= 1e-6)
    throw std::invalid_argument("variance closed: mass shift too small");
  double t_max = 10.0 / (dec.eigenvalues[0] + c);
  if (eps <= 0.0 || eps >= t_max)
    throw std::invalid_argument("variance closed: eps outside the lifetime window");
  cache.ev.ensure_values();
  int np = dec.grid.size(), kept = dec.kept;
  double delta = cache.delta;
  LifetimeGrid lg = build_lifetime_grid(dec, c, eps, t_max, delta);
  int max_m = 1;
  for (int m : lg.steps) max_m = std::max(max_m, m);

  // squared pair quadrature G_nm^2 on the sampler's own grid (aliased on
  // purpose: the loop positions live there)
  auto fvals = to_grid(f);
  std::vector<double> a(cache.ev.u_vals);
  for (int x = 0; x < np; ++x)
    for (int n = 0; n < kept; ++n) a[static_cast<size_t>(x) * kept + n] *= fvals[x];
  std::vector<double> gram(static_cast<size_t>(kept) * kept);
  cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, kept, kept, np, cache.cell,
              cache.ev.u_vals.data(), kept, a.data(), kept, 0.0, gram.data(), kept);
  for (double& v : gram) v *= v;
  std::vector<double> q2(kept, 0.0);
  for (int x = 0; x < np; ++x) {
    const double* u = &cache.ev.u_vals[static_cast<size_t>(x) * kept];
    for (int n = 0; n < kept; ++n) q2[n] += u[n] * u[n] * fvals[x] * fvals[x];
  }
  for (int n = 0; n < kept; ++n) q2[n] *= cache.cell;

  int nd = std::max(1, max_m - 1);
  std::vector<double> decay(static_cast<size_t>(kept) * nd);
  for (int n = 0; n < kept; ++n)
    for (int d = 1; d <= nd; ++d)
      decay[static_cast<size_t>(n) * nd + (d - 1)] = std::exp(-d * delta * dec.eigenvalues[n]);
  std::vector<double> w(static_cast<size_t>(kept) * nd);
  cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, kept, nd, kept, 1.0, gram.data(), kept,
              decay.data(), nd, 0.0, w.data(), nd);

  KahanSum total;
  for (size_t b = 0; b < lg.mass.size(); ++b) {
    int m = lg.steps[b];
    double zt = lg.zeta[b];
    KahanSum tz, diag;
    for (int n = 0; n < kept; ++n) {
      double e = std::exp(-zt * dec.eigenvalues[n]);
      tz.add(e);
      diag.add(e * q2[n]);
    }
    double cross = 0.0;
    for (int d = 1; d <= m - 1; ++d) {
      KahanSum s;
      for (int n = 0; n < kept; ++n)
        s.add(decay[static_cast<size_t>(n) * nd + (m - d - 1)] *
              w[static_cast<size_t>(n) * nd + (d - 1)]);
      cross += s.value();
    }
    total.add(lg.mass[b] * (zt * zt / static_cast<double>(m)) * (diag.value() + cross) /
              tz.value());
  }
  return gamma * total.value();
}

double occupation_moment(const SpectralDecomposition& dec, double c, const SpectralField& f,
                         int n) {
  if (n != 2 && n != 3)
    throw std::invalid_argument("occupation moment: only n = 2, 3 supported");
  if (c + dec.eigenvalues[0] <= 1e-6)
    throw std::invalid_argument("occupation moment: mass shift too small");
  int kept = dec.kept;
  std::vector<double> b = pair_quadrature_matrix(dec, 0.0, f);
  std::vector<double> rootmu(kept);
  for (int k = 0; k < kept; ++k) rootmu[k] = 1.0 / std::sqrt(c + dec.eigenvalues[k]);
  for (int i = 0; i < kept; ++i)
    for (int j = 0; j < kept; ++j) b[static_cast<size_t>(i) * kept + j] *= rootmu[i] * rootmu[j];
  KahanSum tr;
  if (n == 2) {
    for (size_t i = 0; i < b.size(); ++i) tr.add(b[i] * b[i]);
    return tr.value();
  }
  std::vector<double> b2(b.size());
  cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, kept, kept, kept, 1.0, b.data(), kept,
              b.data(), kept, 0.0, b2.data(), kept);
  for (int i = 0; i < kept; ++i)
    for (int j = 0; j < kept; ++j)
      tr.add(b2[static_cast<size_t>(i) * kept + j] * b[static_cast<size_t>(j) * kept + i]);
  return 2.0 * tr.value();
}

IsomorphismResult isomorphism_check(TransitionCache& cache, double c, const SpectralField& f,
                                    int soups, uint64_t seed) {
  const SpectralDecomposition& dec = cache.ev.dec;
  int kept = dec.kept;
  IsomorphismResult res;

  // exact side: K = sqrt(mu) F sqrt(mu), Z(s) = prod ((1+s nu) e^{-s nu})^{-1/2}
  std::vector<double> k = pair_quadrature_matrix(dec, 0.0, f);
  std::vector<double> rootmu(kept);
  for (int n = 0; n < kept; ++n) rootmu[n] = 1.0 / std::sqrt(c + dec.eigenvalues[n]);
  for (int i = 0; i < kept; ++i)
    for (int j = 0; j < kept; ++j) k[static_cast<size_t>(i) * kept + j] *= rootmu[i] * rootmu[j];
  std::vector<double> nu(kept);
  int info = LAPACKE_dsyev(LAPACK_ROW_MAJOR, 'N', 'L', kept, k.data(), kept, nu.data());
  if (info != 0) throw std::runtime_error("isomorphism: eigensolve failed " + std::to_string(info));
  auto z_det2 = [&](double s) {
    KahanSum lg;
    for (int n = 0; n < kept; ++n) {
      if (1.0 + s * nu[n] <= 0.0)
        throw std::domain_error("isomorphism: s beyond the det2 domain");
      lg.add(std::log1p(s * nu[n]) - s * nu[n]);
    }
    return std::exp(-0.5 * lg.value());
  };

  double var = 0.5 * occupation_moment(dec, c, f, 2);
  double s1 = 0.3 / std::sqrt(var);
  res.s = {s1, 2.0 * s1, 3.0 * s1};

  // loop MC at eps, 2 eps, 4 eps, Richardson-extrapolated in the cutoff
  std::vector<std::array<double, 3>> mean(res.s.size()), err(res.s.size());
  for (int le = 0; le < 3; ++le) {
    double eps = cache.delta * (1 << le);
    std::vector<std::vector<double>> vals(res.s.size(), std::vector<double>(soups));
    for (int e = 0; e < soups; ++e) {
      LoopEnsemble ens =
          sample_loop_soup(cache, c, 0.5, eps, seed + 1000003ull * le + static_cast<uint64_t>(e));
      double o = occupation_field(cache, ens, f);
      for (size_t j = 0; j < res.s.size(); ++j) vals[j][e] = std::exp(-res.s[j] * o);
    }
    for (size_t j = 0; j < res.s.size(); ++j) {
      SampleMoments m = compute_moments(vals[j]);
      mean[j][le] = m.mean;
      err[j][le] = m.mean_stderr;
    }
  }
  double gate = 0.0;
  for (size_t j = 0; j < res.s.size(); ++j) {
    double d1 = mean[j][0] - mean[j][1], d2 = mean[j][1] - mean[j][2];
    double q = 1.0;
    if (d1 != 0.0 && d2 / d1 > std::pow(2.0, 0.5) * 0.9) q = std::log2(d2 / d1);
    q = std::min(std::max(q, 0.5), 3.0);
    double kfac = 1.0 / (std::pow(2.0, q) - 1.0);
    res.loop_mc.push_back(mean[j][0] + kfac * d1);
    double se = std::sqrt((1.0 + kfac) * (1.0 + kfac) * err[j][0] * err[j][0] +
                          kfac * kfac * (err[j][1] * err[j][1] + err[j][2] * err[j][2]));
    res.loop_stderr.push_back(se);
    res.gff_det2.push_back(z_det2(res.s[j]));
    gate = std::max(gate, 3.0 * se);
  }
  res.residual_gate = gate;

  // one-parameter calibration O = beta :phi^2: by golden section
  auto loss = [&](double beta) {
    double l = 0.0;
    for (size_t j = 0; j < res.s.size(); ++j) {
      double d = res.loop_mc[j] - z_det2(beta * res.s[j]);
      l += d * d;
    }
    return l;
  };
  double lo = 0.5, hi = 2.0, gr = 0.5 * (std::sqrt(5.0) - 1.0);
  double x1 = hi - gr * (hi - lo), x2 = lo + gr * (hi - lo);
  double f1 = loss(x1), f2 = loss(x2);
  for (int it = 0; it < 70; ++it) {
    if (f1 < f2) {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - gr * (hi - lo);
      f1 = loss(x1);
    } else {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + gr * (hi - lo);
      f2 = loss(x2);
    }
  }
  res.beta = 0.5 * (lo + hi);
  for (size_t j = 0; j < res.s.size(); ++j)
    res.residual = std::max(res.residual, std::abs(res.loop_mc[j] - z_det2(res.beta * res.s[j])));
  return res;
}

LdpProbe ldp_exponent_probe(HeatKernelEvaluator& ev, int x, const std::vector<double>& ts) {
  const TorusGrid& g = ev.dec.grid;
  int np = g.size();
  LdpProbe probe;
  for (double t : ts) {
    auto row = heat_kernel_rows(ev, t, {x});
    std::vector<double> d2s, vals;
    for (int y = 0; y < np; ++y) {
      if (y == x) continue;
      double d = torus_distance(g, x, y);
      if (d * d > 12.0 * t) continue;
      if (row[y] <= 0.0) continue;
      d2s.push_back(d * d);
      vals.push_back(t * std::log(row[y]));
    }
    if (d2s.size() < 8) throw std::runtime_error("ldp probe: too few pairs inside the gate");
    LineFit fit = fit_line(d2s, vals);
    probe.ts.push_back(t);
    probe.kappa.push_back(-fit.slope);
    probe.kappa_stderr.push_back(fit.slope_stderr);
    probe.intercept.push_back(fit.intercept);
  }
  return probe;
}

SingularityStatistic singularity_statistic(const TorusGrid& g, double h, double T, int steps,
                                           const std::vector<double>& rs, int samples,
                                           uint64_t seed) {
  if (steps < 1 || T <= 0.0) throw std::invalid_argument("singularity: need T > 0 and steps >= 1");
  int np = g.size();
  double delta = T / steps;
  // flat increment law: image-sum kernel row, exact at any delta
  std::vector<double> inc_cum(np);
  double acc = 0.0;
  for (int a = 0; a < g.N; ++a)
    for (int b = 0; b < g.N; ++b) {
      acc += std::max(theta_kernel_images(g, delta, a, b), 0.0);
      inc_cum[g.idx(a, b)] = acc;
    }

  NoiseRealization xi = sample_white_noise(g, seed);
  SpectralField one = constant_field(g, 1.0);
  int x0 = 0;
  SingularityStatistic st;
  for (double r : rs) {
    if (r <= 0.0 || r >= 1.0) throw std::invalid_argument("singularity: need 0 < r < 1");
    SpectralField w = heat_regularize(xi, r).field;
    for (auto& cc : w.c) cc *= 0.5 * h;
    w.at(0, 0) += cplx{0.5 * h * h * std::log(1.0 / r) / (4.0 * M_PI), 0.0};
    auto wg = to_grid(w);

    auto dec = eigendecompose(assemble_potential(g, w));
    auto ev = make_heat_evaluator(dec);
    double semi = to_grid(heat_apply(ev, T, one))[x0];

    std::vector<double> vals(samples);
    for (int s = 0; s < samples; ++s) {
      CounterRng rng(seed, kSingSalt, static_cast<uint64_t>(s));
      int ci = x0 / g.N, cj = x0 % g.N;
      KahanSum act;
      act.add(0.5 * wg[x0]);
      for (int k = 1; k <= steps; ++k) {
        int off = sample_index(inc_cum.data(), np, rng.uniform() * acc);
        ci = (ci + off / g.N) % g.N;
        cj = (cj + off % g.N) % g.N;
        act.add((k == steps ? 0.5 : 1.0) * wg[g.idx(ci, cj)]);
      }
      vals[s] = std::exp(-delta * act.value());
    }
    SampleMoments m = compute_moments(vals);
    st.r.push_back(r);
    st.mc.push_back(m.mean);
    st.mc_stderr.push_back(m.mean_stderr);
    st.semigroup.push_back(semi);
  }
  return st;
}

}  // namespace anderson
