#pragma once
#include <complex>

#include "anderson/grid.hpp"

namespace anderson {

using cplx = std::complex<double>;

// Plan cache is process-global, keyed by N; creation is mutex-guarded
// (FFTW planning is not thread-safe), execution is concurrent. Plans are
// created with FFTW_ESTIMATE so repeated runs are bit-identical.

// space -> frequency, includes the 1/N^2 normalization so that out[k] is the
// coefficient of e^{i 2 pi k x / L} (equivalently (1/L^2) \int f e^{-i...})
void fft_forward(int N, const cplx* space, cplx* freq);

// frequency -> space, plain unnormalized sum f(x) = sum_k c_k e^{i 2 pi k x / L}
void fft_backward(int N, const cplx* freq, cplx* space);

}  // namespace anderson
