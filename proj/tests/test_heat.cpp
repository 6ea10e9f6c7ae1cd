#include <algorithm>

#include "anderson/heat.hpp"
#include "anderson/rng.hpp"
#include "doctest.h"

using namespace anderson;

namespace {

HeatKernelEvaluator free_evaluator(const TorusGrid& g) {
  return make_heat_evaluator(eigendecompose(assemble_potential(g, SpectralField(g))));
}

// required m at a fixed c, same sampling as the certificate search
double required_m_at(HeatKernelEvaluator& ev, const std::vector<double>& ts, int stride,
                     double c) {
  const TorusGrid& g = ev.dec.grid;
  std::vector<int> pts;
  for (int i = 0; i < g.N; i += stride)
    for (int j = 0; j < g.N; j += stride) pts.push_back(g.idx(i, j));
  double l0 = ev.dec.eigenvalues[0], need = -1e300;
  for (double t : ts) {
    auto rows = heat_kernel_rows(ev, t, pts);
    for (size_t r = 0; r < pts.size(); ++r)
      for (int y : pts) {
        double d = torus_distance(g, pts[r], y);
        if (d * d / t > 12.0) continue;
        double p = rows[r * static_cast<size_t>(ev.points()) + y];
        if (p <= 0.0) continue;
        double up = std::log(p) + std::log(t) + t * l0 + d * d / (c * t) - std::log(c);
        double lo = -t * l0 - c * d * d / t - std::log(c * t * p);
        need = std::max(need, std::max(up, lo));
      }
  }
  return std::exp(need);
}

}  // namespace

TEST_SUITE("heat") {
  TEST_CASE("trusted range certificate shrinks with resolution") {
    double t16 = trusted_t_min(make_grid(2.0 * M_PI, 16));
    double t32 = trusted_t_min(make_grid(2.0 * M_PI, 32));
    double t48 = trusted_t_min(make_grid(2.0 * M_PI, 48));
    CHECK(t16 == doctest::Approx(0.301403).epsilon(1e-3));
    CHECK(t32 == doctest::Approx(0.073225).epsilon(1e-3));
    CHECK(t16 > t32);
    CHECK(t32 > t48);
  }

  TEST_CASE("free kernel matches the theta-function oracles") {
    auto g = make_grid(2.0 * M_PI, 32);
    auto ev = free_evaluator(g);
    double tmin = trusted_t_min(g);
    int ix = g.idx(3, 5), iy = g.idx(20, 9);
    int di = 3 - 20, dj = 5 - 9;
    for (double t : {tmin, 2 * tmin, 0.5}) {
      double diag = theta_kernel(g, t, 0, 0, 3 * g.N);
      double pk = heat_kernel(ev, t, ix, iy);
      // spectral sum and the core theta sum are the same object
      CHECK(std::abs(pk - theta_kernel(g, t, di, dj, g.N / 2 - 1)) < 1e-12 * diag);
      // inside the trusted range the full lattice sum is matched to 1e-8
      // of the kernel sup (absolute floor; see trusted_t_min)
      CHECK(std::abs(pk - theta_kernel(g, t, di, dj, 3 * g.N)) < 1e-8 * diag);
    }
    // image-sum form of the same theta function
    for (double t : {0.15, 0.5, 2.0}) {
      double full = theta_kernel(g, t, di, dj, 3 * g.N);
      CHECK(theta_kernel_images(g, t, di, dj) == doctest::Approx(full).epsilon(1e-8));
    }
  }

  TEST_CASE("kernel is symmetric and satisfies Chapman-Kolmogorov") {
    auto g = make_grid(2.0 * M_PI, 32);
    LP lp = make_lp(g);
    auto en = enhance_single(lp, 5, constant_field(g, 1.0), 4.0, std::pow(2.0, -8));
    auto ev = make_heat_evaluator(eigendecompose(assemble(en)));

    double t = 0.11, s = 0.07;
    int ix = g.idx(4, 7), iz = g.idx(19, 25);
    auto row_x = heat_kernel_rows(ev, t, {ix});
    auto row_z = heat_kernel_rows(ev, t, {iz});
    CHECK(std::abs(row_x[iz] - row_z[ix]) < 1e-12 * std::abs(row_x[ix]));

    // composition over the grid is exact: eigenfunction products are core
    // pair products, so the quadrature in y has no aliasing error
    auto row_s = heat_kernel_rows(ev, s, {iz});
    double cell = g.mu() / g.size();
    double ck = 0.0;
    for (int y = 0; y < g.size(); ++y) ck += row_x[y] * row_s[y] * cell;
    CHECK(ck == doctest::Approx(heat_kernel(ev, t + s, ix, iz)).epsilon(1e-8));
  }

  TEST_CASE("constant potential shifts the free kernel exactly") {
    auto g = make_grid(2.0 * M_PI, 32);
    double v = 1.7, t = 0.3;
    auto ev = make_heat_evaluator(eigendecompose(assemble_potential(g, constant_field(g, v))));
    int iy = g.idx(11, 2);
    auto slice = kernel_slice(ev, t, iy);
    auto pred = free_kernel_slice(g, t, iy);
    pred *= std::exp(-t * v);
    auto d = slice;
    d -= pred;
    CHECK(d.l2() < 1e-12 * pred.l2());
  }

  TEST_CASE("kernel difference against the free kernel vanishes at zero noise") {
    auto g = make_grid(2.0 * M_PI, 32);
    auto ev = free_evaluator(g);
    LP lp = make_lp(g);
    auto prof = kernel_difference_profile(ev, lp, {0.2}, g.idx(9, 21));
    CHECK(prof.sup_diff[0] < 1e-12);
    CHECK(prof.besov_diff[0] < 1e-12);
  }

  TEST_CASE("difference profile of the renormalized kernel grows slower than the free sup") {
    auto g = make_grid(2.0 * M_PI, 32);
    LP lp = make_lp(g);
    auto en = enhance_single(lp, 5, constant_field(g, 1.0), 4.0, std::pow(2.0, -8));
    auto ev = make_heat_evaluator(eigendecompose(assemble(en)));
    double tmin = trusted_t_min(g);
    std::vector<double> ts;
    for (double t = tmin; t <= 0.5; t *= 1.25) ts.push_back(t);
    auto prof = kernel_difference_profile(ev, lp, ts, g.idx(9, 21));
    // measured 0.685 on this seed; the free kernel itself grows like 1/t
    CHECK(prof.exponent < 0.85);
    CHECK(prof.exponent > 0.0);
    CHECK(prof.sup_diff.front() > prof.sup_diff.back());
    for (double b : prof.besov_diff) CHECK(b > 0.0);
  }

  TEST_CASE("two trace routes agree and reproduce the Weyl prefactor") {
    auto g = make_grid(2.0 * M_PI, 32);
    auto ev_free = free_evaluator(g);
    double tmin = trusted_t_min(g);

    CHECK(std::abs(trace_eigen(ev_free, tmin) - trace_diagonal(ev_free, tmin)) <
          1e-6 * trace_eigen(ev_free, tmin));
    CHECK(tmin * trace_eigen(ev_free, tmin) == doctest::Approx(M_PI).epsilon(1e-5));

    std::vector<double> ts;
    for (double t = tmin; t <= 0.81; t *= 1.3) ts.push_back(t);
    auto fit_free = trace_asymptotic_fit(ev_free, ts);
    CHECK(fit_free.leading == doctest::Approx(M_PI).epsilon(1e-4));

    LP lp = make_lp(g);
    auto en = enhance_single(lp, 5, constant_field(g, 1.0), 4.0, std::pow(2.0, -8));
    auto ev = make_heat_evaluator(eigendecompose(assemble(en)));
    CHECK(std::abs(trace_eigen(ev, tmin) - trace_diagonal(ev, tmin)) <
          1e-6 * trace_eigen(ev, tmin));
    auto fit = trace_asymptotic_fit(ev, ts);
    // renormalized potential leaves the area term intact...
    CHECK(fit.leading == doctest::Approx(M_PI).epsilon(0.05));
    // ...and the remainder stays strictly below the leading 1/t order
    // (measured exponent 0.381 on this seed)
    CHECK(fit.remainder_exponent > 0.0);
    CHECK(fit.remainder_exponent < 0.85);
  }

  TEST_CASE("gaussian bound certificates have O(1) constants and no sign violations") {
    auto g = make_grid(2.0 * M_PI, 32);
    auto ev_free = free_evaluator(g);
    std::vector<double> ts = {0.1, 0.2, 0.4, 0.8};
    auto cf = gaussian_bound_certificate(ev_free, ts, 4);
    CHECK(cf.violations == 0);
    CHECK(cf.samples == 5120);
    CHECK(cf.m == doctest::Approx(3.736004).epsilon(1e-4));
    CHECK(cf.c == doctest::Approx(std::pow(2.0, 7.0 / 4.0)).epsilon(1e-9));

    LP lp = make_lp(g);
    auto en = enhance_single(lp, 5, constant_field(g, 1.0), 4.0, std::pow(2.0, -8));
    auto ev = make_heat_evaluator(eigendecompose(assemble(en)));
    auto cr = gaussian_bound_certificate(ev, ts, 4);
    CHECK(cr.violations == 0);
    CHECK(std::max(cr.m, cr.c) < 8.0);

    // ground-state conjugation replay: the free certificate inflated by the
    // oscillation squared must still cover the renormalized kernel at the
    // same c, and not by an absurd margin (measured ratio 0.149)
    auto pred = gaussian_replay(ev, cf);
    CHECK(pred.c == cf.c);
    double req = required_m_at(ev, ts, 4, cf.c);
    CHECK(req < pred.m);
    CHECK(req > pred.m / 16.0);
  }

  TEST_CASE("heat flow moments scale diffusively") {
    auto g = make_grid(2.0 * M_PI, 32);
    auto ev = free_evaluator(g);
    // E|B_t|^2 = 4t in two dimensions
    CHECK(moment_scaling(ev, 0.1, 2) == doctest::Approx(2.0 * std::sqrt(0.1)).epsilon(2e-3));
    for (int k : {1, 2, 4, 6}) {
      double mk = moment_scaling(ev, 0.2, k);
      CHECK(mk < 2.0 * std::pow(std::tgamma(k + 1.0), 1.0 / k) * std::sqrt(0.2));
      double ratio = mk / moment_scaling(ev, 0.1, k);
      CHECK(ratio == doctest::Approx(M_SQRT2).epsilon(0.10));
    }
  }

  TEST_CASE("hypercontractivity probe relaxes to the ground-state envelope") {
    auto g = make_grid(2.0 * M_PI, 16);
    LP lp = make_lp(g);
    auto en = enhance_single(lp, 3, constant_field(g, 1.0), 4.0, 0.05);
    auto dec = eigendecompose(assemble(en));
    auto ev = make_heat_evaluator(dec);
    auto u0 = dec.field(0);
    double l4u0 = std::pow(integral_power(u0, 4), 0.25);
    CHECK(l4u0 == doctest::Approx(0.435220739).epsilon(1e-8));

    // f = u0 is invariant under e^{-t(H - lambda0)}
    auto gf = heat_apply(ev, 0.7, u0);
    gf *= std::exp(0.7 * dec.eigenvalues[0]);
    CHECK(std::pow(integral_power(gf, 4), 0.25) / u0.l2() ==
          doctest::Approx(l4u0).epsilon(1e-9));

    double s4_early = hypercontractivity_probe(ev, 0.5, 4, 50, 11);
    double s4_late = hypercontractivity_probe(ev, 16.0, 4, 50, 11);
    CHECK(s4_early == doctest::Approx(0.101320484).epsilon(1e-7));
    CHECK(s4_early >= s4_late);
    // p = 2 after the lambda0 shift is a contraction
    for (double t : {0.25, 1.0, 4.0}) {
      CHECK(hypercontractivity_probe(ev, t, 2, 50, 11) <= 1.0 + 1e-12);
    }
    // late-time sup matches the rank-one envelope ||u0||_4 |<f,u0>| / ||f||_2
    double env = 0.0;
    for (int i = 0; i < 50; ++i) {
      CounterRng rng(11, 0x68797065ull + i);
      std::vector<double> vals(g.size());
      for (auto& v : vals) v = rng.gauss();
      auto f = from_grid(g, vals);
      env = std::max(env, l4u0 * std::abs(dot(f, u0)) / f.l2());
    }
    CHECK(s4_late == doctest::Approx(env).epsilon(1e-4));
  }

  TEST_CASE("semigroup of a positive function stays positive") {
    auto g = make_grid(2.0 * M_PI, 16);
    LP lp = make_lp(g);
    auto en = enhance_single(lp, 3, constant_field(g, 1.0), 4.0, 0.05);
    auto ev = make_heat_evaluator(eigendecompose(assemble(en)));
    auto f = heat_regularize(sample_white_noise(g, 9), 0.1).field;
    f *= 0.5 / sup_norm(f);
    f += constant_field(g, 2.0);  // min f >= 1.5 on the refined grid
    CHECK(semigroup_min(ev, 0.5, f) > 0.0);
  }

  TEST_CASE("partial decompositions carry a tail certificate") {
    auto g = make_grid(2.0 * M_PI, 16);
    auto op = assemble_potential(g, SpectralField(g));
    auto full = make_heat_evaluator(eigendecompose(op));
    auto part = make_heat_evaluator(eigendecompose(op, 50));
    CHECK(heat_tail_certificate(full, 1.0) == 0.0);
    double t = 1.0;
    double cert = heat_tail_certificate(part, t);
    CHECK(cert > 0.0);
    for (int ix : {g.idx(0, 0), g.idx(3, 9), g.idx(8, 8)}) {
      for (int iy : {g.idx(1, 2), g.idx(12, 5)}) {
        CHECK(std::abs(heat_kernel(full, t, ix, iy) - heat_kernel(part, t, ix, iy)) <= cert);
      }
    }
  }

  TEST_CASE("invalid arguments are rejected") {
    auto g = make_grid(2.0 * M_PI, 16);
    auto ev = free_evaluator(g);
    CHECK_THROWS_AS(heat_kernel(ev, 0.0, 0, 0), std::invalid_argument);
    CHECK_THROWS_AS(heat_apply(ev, -1.0, SpectralField(g)), std::invalid_argument);
    CHECK_THROWS_AS(moment_scaling(ev, 0.5, 0), std::invalid_argument);
    CHECK_THROWS_AS(hypercontractivity_probe(ev, 0.5, 3, 1, 1), std::invalid_argument);
    CHECK_THROWS_AS(trace_asymptotic_fit(ev, {0.1, 0.2}), std::invalid_argument);
  }
}
