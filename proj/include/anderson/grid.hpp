#pragma once
#include <cmath>
#include <stdexcept>

namespace anderson {

// Flat 2-torus [0,L)^2 with an N x N Fourier truncation. Frequencies are
// stored in FFT layout: index i along one axis carries the signed mode
// k(i) = i for i <= N/2-1 and i-N otherwise. All physics lives on the
// conjugation-closed core |k_x|,|k_y| <= N/2-1; the unpaired Nyquist row
// k = -N/2 is kept in storage but always zero.
struct TorusGrid {
  double L = 2 * M_PI;
  int N = 16;

  int size() const { return N * N; }
  int core_dim() const { return (N - 1) * (N - 1); }  // modes with Nyquist excluded
  double mu() const { return L * L; }                 // volume of the torus
  double dx() const { return L / N; }

  int kof(int i) const { return i <= N / 2 - 1 ? i : i - N; }
  int iof(int k) const { return k >= 0 ? k : k + N; }
  int idx(int i, int j) const { return i * N + j; }

  bool in_core_axis(int i) const { return i != N / 2; }
  bool in_core(int i, int j) const { return in_core_axis(i) && in_core_axis(j); }

  // Laplacian symbol |2 pi k / L|^2 of storage index (i,j)
  double kappa2(int i, int j) const {
    double f = 2 * M_PI / L;
    double kx = kof(i), ky = kof(j);
    return f * f * (kx * kx + ky * ky);
  }
  double kappa_abs(int i, int j) const { return std::sqrt(kappa2(i, j)); }

  // largest symbol on the core, reached on the corner of the mode square
  double kappa2_max() const {
    double f = 2 * M_PI / L, m = N / 2 - 1;
    return 2 * f * f * m * m;
  }

  bool operator==(const TorusGrid& o) const { return L == o.L && N == o.N; }
};

inline TorusGrid make_grid(double L, int N) {
  if (L <= 0) throw std::invalid_argument("make_grid: L must be positive");
  if (N % 2 != 0) throw std::invalid_argument("make_grid: N must be even");
  if (N < 4) throw std::invalid_argument("make_grid: N must be at least 4");
  return TorusGrid{L, N};
}

}  // namespace anderson
