#include "anderson/paracontrolled.hpp"

#include "anderson/rng.hpp"

namespace anderson {

namespace {

SpectralField apply_a_inverse(const EnhancedNoise& en, const SpectralField& v) {
  SpectralField out = v;
  double z0 = en.z0;
  out.apply_symbol([z0](double k2) { return 1.0 / (k2 + z0); });
  return out;
}

}  // namespace

SpectralField paracontrolled_image(const LP& lp, const EnhancedNoise& en, const SpectralField& v) {
  return gamma(lp, apply_a_inverse(en, v), en.X, en.z0).value;
}

SpectralField fixed_point_operator(const LP& lp, const EnhancedNoise& en, double z,
                                   const SpectralField& v) {
  SpectralField ainv_v = apply_a_inverse(en, v);
  SpectralField w = gamma(lp, ainv_v, en.X, en.z0).value;

  SpectralField out = paraproduct(lp, en.h_xi, w);
  out += resonant(lp, ainv_v, en.h_xi);
  out -= modified_corrector(lp, w, en.X, en.h_xi, en.z0);
  out -= multiply_dealiased(w, en.renorm_resonant);
  SpectralField zw = w;
  zw *= z + en.z0;
  out -= zw;

  out += v;
  return out;
}

FixedPointResolvent make_fixed_point_resolvent(const LP& lp, const EnhancedNoise& en, double z,
                                               double tol, int max_iter) {
  double norm = pbar_op_norm(lp, en.X, en.z0);
  if (norm >= 1.0)
    throw std::runtime_error("fixed-point resolvent: ||Pbar_(.) X|| = " + std::to_string(norm) +
                             " >= 1, Gamma series diverges; rebuild the enhanced noise with a "
                             "larger z0");
  FixedPointResolvent r;
  r.lp = lp;
  r.en = en;
  r.z = z;
  r.tol = tol;
  r.max_iter = max_iter;
  return r;
}

SpectralField FixedPointResolvent::apply(const SpectralField& f) const {
  double fnorm = f.l2();
  if (fnorm == 0.0) return SpectralField(f.grid);

  // full GMRES on v -> v + B_z v
  std::vector<SpectralField> q;
  SpectralField q0 = f;
  q0 *= 1.0 / fnorm;
  q.push_back(q0);

  std::vector<std::vector<double>> R;  // rotated Hessenberg columns
  std::vector<double> cs, sn, s{fnorm};

  int it = 0;
  for (; it < max_iter; ++it) {
    SpectralField w = fixed_point_operator(lp, en, z, q[it]);
    std::vector<double> col(it + 2, 0.0);
    for (int i = 0; i <= it; ++i) {
      col[i] = dot(q[i], w);
      SpectralField scaled = q[i];
      scaled *= col[i];
      w -= scaled;
    }
    double hraw = w.l2();
    col[it + 1] = hraw;

    for (int i = 0; i < it; ++i) {
      double a = col[i], b = col[i + 1];
      col[i] = cs[i] * a + sn[i] * b;
      col[i + 1] = -sn[i] * a + cs[i] * b;
    }
    double denom = std::hypot(col[it], col[it + 1]);
    cs.push_back(denom > 0 ? col[it] / denom : 1.0);
    sn.push_back(denom > 0 ? col[it + 1] / denom : 0.0);
    col[it] = denom;
    col[it + 1] = 0.0;
    s.push_back(-sn[it] * s[it]);
    s[it] *= cs[it];
    R.push_back(col);

    double rel = std::abs(s[it + 1]) / fnorm;
    bool happy = hraw < 1e-14 * fnorm;
    if (rel <= tol || happy) {
      ++it;
      break;
    }
    SpectralField qn = w;
    qn *= 1.0 / hraw;
    q.push_back(qn);
  }

  iterations = it;
  residual = std::abs(s[it]) / fnorm;
  if (residual > tol)
    throw std::runtime_error(
        "fixed-point resolvent: inner GMRES stalled at relative residual " +
        std::to_string(residual) + " after " + std::to_string(it) +
        " iterations; increase z0 (rebuild the enhanced noise) or move z away from the spectrum");

  // back-substitute R y = s
  std::vector<double> y(it, 0.0);
  for (int i = it - 1; i >= 0; --i) {
    double acc = s[i];
    for (int j = i + 1; j < it; ++j) acc -= R[j][i] * y[j];
    y[i] = acc / R[i][i];
  }
  SpectralField v(f.grid);
  for (int i = 0; i < it; ++i) {
    SpectralField scaled = q[i];
    scaled *= y[i];
    v += scaled;
  }
  return paracontrolled_image(lp, en, v);
}

ResolventComparison compare_resolvents(const LP& lp, const EnhancedNoise& en, double z,
                                       int n_probes, uint64_t probe_seed) {
  OperatorMatrix m = assemble(en);
  std::vector<double> eigs = eigenvalues_only(m);
  DirectResolvent direct = make_direct_resolvent(m, eigs, z);
  FixedPointResolvent fixed = make_fixed_point_resolvent(lp, en, z);

  ResolventComparison cmp;
  cmp.z = z;
  cmp.lambda0 = eigs[0];
  for (int p = 0; p < n_probes; ++p) {
    CounterRng rng(probe_seed, 0x70726f6265ull + p);
    std::vector<double> vals(en.grid.size());
    for (auto& v : vals) v = rng.gauss();
    SpectralField f = from_grid(en.grid, vals);
    f.apply_symbol([](double k2) { return std::pow(1.0 + k2, -0.5); });

    SpectralField a = direct.apply(f);
    SpectralField b = fixed.apply(f);
    double rel = (a - b).l2() / a.l2();
    cmp.rel_discrepancy.push_back(rel);
    cmp.max_rel = std::max(cmp.max_rel, rel);
    cmp.max_iterations = std::max(cmp.max_iterations, fixed.iterations);
    if (p == 0) cmp.quadratic_form = dot(f, b);
  }
  return cmp;
}

}  // namespace anderson
