#include "anderson/field.hpp"

namespace anderson {

std::vector<cplx> to_grid_complex(const SpectralField& f) {
  std::vector<cplx> out(f.c.size());
  fft_backward(f.grid.N, f.c.data(), out.data());
  return out;
}

std::vector<double> to_grid(const SpectralField& f) {
  auto z = to_grid_complex(f);
  std::vector<double> out(z.size());
  for (size_t i = 0; i < z.size(); ++i) out[i] = z[i].real();
  return out;
}

SpectralField from_grid(const TorusGrid& g, const std::vector<double>& values) {
  if (static_cast<int>(values.size()) != g.size())
    throw std::invalid_argument("from_grid: value count != N^2");
  std::vector<cplx> in(values.begin(), values.end());
  SpectralField f(g);
  fft_forward(g.N, in.data(), f.c.data());
  f.zero_non_core();
  return f;
}

namespace {

// scatter core coefficients of an N-layout field into an mN layout
std::vector<cplx> pad_coeffs(const SpectralField& f, int m) {
  int N = f.grid.N, M = m * N;
  std::vector<cplx> big(static_cast<size_t>(M) * M, cplx{0.0, 0.0});
  int h = N / 2 - 1;
  for (int kx = -h; kx <= h; ++kx)
    for (int ky = -h; ky <= h; ++ky) {
      int i = f.grid.iof(kx), j = f.grid.iof(ky);
      int I = kx >= 0 ? kx : kx + M, J = ky >= 0 ? ky : ky + M;
      big[static_cast<size_t>(I) * M + J] = f.c[f.grid.idx(i, j)];
    }
  return big;
}

}  // namespace

std::vector<double> to_grid_padded(const SpectralField& f, int m) {
  int M = m * f.grid.N;
  auto big = pad_coeffs(f, m);
  std::vector<cplx> space(big.size());
  fft_backward(M, big.data(), space.data());
  std::vector<double> out(space.size());
  for (size_t i = 0; i < space.size(); ++i) out[i] = space[i].real();
  return out;
}

SpectralField multiply_dealiased(const SpectralField& a, const SpectralField& b) {
  a.check_grid(b);
  int N = a.grid.N, M = 2 * N;
  auto ca = pad_coeffs(a, 2);
  auto cb = pad_coeffs(b, 2);
  std::vector<cplx> sa(ca.size()), sb(cb.size());
  fft_backward(M, ca.data(), sa.data());
  fft_backward(M, cb.data(), sb.data());
  for (size_t i = 0; i < sa.size(); ++i) sa[i] *= sb[i];
  fft_forward(M, sa.data(), ca.data());
  SpectralField out(a.grid);
  int h = N / 2 - 1;
  for (int kx = -h; kx <= h; ++kx)
    for (int ky = -h; ky <= h; ++ky) {
      int I = kx >= 0 ? kx : kx + M, J = ky >= 0 ? ky : ky + M;
      out.c[a.grid.idx(a.grid.iof(kx), a.grid.iof(ky))] = ca[static_cast<size_t>(I) * M + J];
    }
  return out;
}

double sup_norm(const SpectralField& f) {
  auto v = to_grid(f);
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

double integral_power(const SpectralField& f, int p) {
  if (p < 1 || p > 4) throw std::invalid_argument("integral_power: p in [1,4]");
  auto v = to_grid_padded(f, 2);
  double s = 0.0;
  for (double x : v) s += std::pow(x, p);
  int M = 2 * f.grid.N;
  return s * f.grid.mu() / (static_cast<double>(M) * M);
}

}  // namespace anderson
