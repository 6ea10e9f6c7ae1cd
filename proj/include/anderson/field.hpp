#pragma once
#include <cmath>
#include <complex>
#include <stdexcept>
#include <vector>

#include "anderson/fft.hpp"
#include "anderson/grid.hpp"

namespace anderson {

// Real field on the torus stored as Fourier amplitudes with conjugate
// symmetry, c(-k) = conj(c(k)). The coefficient convention is
// c_k = (1/L^2) \int f e^{-i 2 pi k x / L} dmu, so Parseval reads
// ||f||_{L^2}^2 = L^2 sum_k |c_k|^2 and the spatial mean is c_0.
struct SpectralField {
  TorusGrid grid;
  std::vector<cplx> c;

  SpectralField() = default;
  explicit SpectralField(const TorusGrid& g) : grid(g), c(g.size(), cplx{0.0, 0.0}) {}

  cplx& at(int i, int j) { return c[grid.idx(i, j)]; }
  const cplx& at(int i, int j) const { return c[grid.idx(i, j)]; }
  // signed-frequency access; out-of-range returns 0
  cplx coeff_k(int kx, int ky) const {
    int h = grid.N / 2 - 1;
    if (kx < -h || kx > h || ky < -h || ky > h) return {0.0, 0.0};
    return c[grid.idx(grid.iof(kx), grid.iof(ky))];
  }

  SpectralField& operator+=(const SpectralField& o) {
    check_grid(o);
    for (size_t i = 0; i < c.size(); ++i) c[i] += o.c[i];
    return *this;
  }
  SpectralField& operator-=(const SpectralField& o) {
    check_grid(o);
    for (size_t i = 0; i < c.size(); ++i) c[i] -= o.c[i];
    return *this;
  }
  SpectralField& operator*=(double s) {
    for (auto& v : c) v *= s;
    return *this;
  }
  friend SpectralField operator+(SpectralField a, const SpectralField& b) { return a += b; }
  friend SpectralField operator-(SpectralField a, const SpectralField& b) { return a -= b; }
  friend SpectralField operator*(double s, SpectralField a) { return a *= s; }

  void check_grid(const SpectralField& o) const {
    if (!(grid == o.grid)) throw std::invalid_argument("field grid mismatch");
  }

  // multiply coefficients by fn(|kappa|^2)
  template <class F>
  void apply_symbol(F&& fn) {
    for (int i = 0; i < grid.N; ++i)
      for (int j = 0; j < grid.N; ++j) c[grid.idx(i, j)] *= fn(grid.kappa2(i, j));
  }

  void zero_non_core() {
    for (int i = 0; i < grid.N; ++i)
      for (int j = 0; j < grid.N; ++j)
        if (!grid.in_core(i, j)) c[grid.idx(i, j)] = 0.0;
  }

  void symmetrize() {
    int N = grid.N;
    for (int i = 0; i < N; ++i)
      for (int j = 0; j < N; ++j) {
        int i2 = (N - i) % N, j2 = (N - j) % N;
        if (grid.idx(i, j) > grid.idx(i2, j2)) continue;
        cplx a = c[grid.idx(i, j)], b = std::conj(c[grid.idx(i2, j2)]);
        cplx m = 0.5 * (a + b);
        c[grid.idx(i, j)] = m;
        c[grid.idx(i2, j2)] = std::conj(m);
      }
  }

  double conjugation_defect() const {
    int N = grid.N;
    double worst = 0.0;
    for (int i = 0; i < N; ++i)
      for (int j = 0; j < N; ++j) {
        int i2 = (N - i) % N, j2 = (N - j) % N;
        worst = std::max(worst, std::abs(c[grid.idx(i, j)] - std::conj(c[grid.idx(i2, j2)])));
      }
    return worst;
  }

  double l2() const {
    double s = 0.0;
    for (const auto& v : c) s += std::norm(v);
    return grid.L * std::sqrt(s);
  }
  double hs(double s) const {
    double acc = 0.0;
    for (int i = 0; i < grid.N; ++i)
      for (int j = 0; j < grid.N; ++j)
        acc += std::pow(1.0 + grid.kappa2(i, j), s) * std::norm(c[grid.idx(i, j)]);
    return grid.L * std::sqrt(acc);
  }
  double mean() const { return c[0].real(); }
  double integral() const { return grid.mu() * c[0].real(); }
};

inline SpectralField constant_field(const TorusGrid& g, double v) {
  SpectralField f(g);
  f.c[0] = v;
  return f;
}

// L^2 inner product <a,b> = L^2 sum conj(a_k) b_k (real for real fields)
inline double dot(const SpectralField& a, const SpectralField& b) {
  a.check_grid(b);
  cplx s{0.0, 0.0};
  for (size_t i = 0; i < a.c.size(); ++i) s += std::conj(a.c[i]) * b.c[i];
  return a.grid.mu() * s.real();
}

// space <-> frequency
std::vector<double> to_grid(const SpectralField& f);
std::vector<cplx> to_grid_complex(const SpectralField& f);
SpectralField from_grid(const TorusGrid& g, const std::vector<double>& values);
// values on an mN x mN refinement of the same torus (zero-padded transform)
std::vector<double> to_grid_padded(const SpectralField& f, int m);

// pointwise product computed on the 2N grid (exact convolution for core
// fields, whose frequency sums stay below the padded Nyquist), projected
// back onto the core modes
SpectralField multiply_dealiased(const SpectralField& a, const SpectralField& b);

double sup_norm(const SpectralField& f);

// exact \int f^p dmu for p <= 4 via the padded grid (band-limited quadrature)
double integral_power(const SpectralField& f, int p);

}  // namespace anderson
