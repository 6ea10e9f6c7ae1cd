#include "anderson/fft.hpp"

#include <fftw3.h>

#include <map>
#include <mutex>
#include <vector>

namespace anderson {

namespace {

struct PlanPair {
  fftw_plan fwd = nullptr;
  fftw_plan bwd = nullptr;
};

std::mutex plan_mutex;
std::map<int, PlanPair>& plan_cache() {
  static std::map<int, PlanPair> cache;
  return cache;
}

// FFTW_UNALIGNED lets the new-array execute functions run on ordinary
// std::vector storage regardless of SIMD alignment.
PlanPair& plans_for(int N) {
  std::lock_guard<std::mutex> lock(plan_mutex);
  auto& cache = plan_cache();
  auto it = cache.find(N);
  if (it != cache.end()) return it->second;
  std::vector<cplx> a(static_cast<size_t>(N) * N), b(a.size());
  auto* pa = reinterpret_cast<fftw_complex*>(a.data());
  auto* pb = reinterpret_cast<fftw_complex*>(b.data());
  PlanPair p;
  p.fwd = fftw_plan_dft_2d(N, N, pa, pb, FFTW_FORWARD, FFTW_ESTIMATE | FFTW_UNALIGNED);
  p.bwd = fftw_plan_dft_2d(N, N, pa, pb, FFTW_BACKWARD, FFTW_ESTIMATE | FFTW_UNALIGNED);
  return cache.emplace(N, p).first->second;
}

}  // namespace

void fft_forward(int N, const cplx* space, cplx* freq) {
  PlanPair& p = plans_for(N);
  fftw_execute_dft(p.fwd, reinterpret_cast<fftw_complex*>(const_cast<cplx*>(space)),
                   reinterpret_cast<fftw_complex*>(freq));
  double inv = 1.0 / (static_cast<double>(N) * N);
  size_t n = static_cast<size_t>(N) * N;
  for (size_t i = 0; i < n; ++i) freq[i] *= inv;
}

void fft_backward(int N, const cplx* freq, cplx* space) {
  PlanPair& p = plans_for(N);
  fftw_execute_dft(p.bwd, reinterpret_cast<fftw_complex*>(const_cast<cplx*>(freq)),
                   reinterpret_cast<fftw_complex*>(space));
}

}  // namespace anderson
