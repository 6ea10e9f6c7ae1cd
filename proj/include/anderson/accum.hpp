#pragma once
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace anderson {

// Kahan compensated accumulator; ensemble statistics are reduced through
// this so results do not drift with summation order or sample count
struct KahanSum {
  double s = 0.0;
  double e = 0.0;

  void add(double x) {
    double y = x - e;
    double t = s + y;
    e = (t - s) - y;
    s = t;
  }
  double value() const { return s; }
};

struct SampleMoments {
  size_t n = 0;
  double mean = 0.0;
  double var = 0.0;          // unbiased
  double mean_stderr = 0.0;  // sqrt(var / n)
  double var_stderr = 0.0;   // sqrt((m4 - var^2) / n), asymptotic
};

inline SampleMoments compute_moments(const std::vector<double>& xs) {
  if (xs.size() < 2) throw std::invalid_argument("moments need at least 2 samples");
  KahanSum s;
  for (double x : xs) s.add(x);
  double n = static_cast<double>(xs.size());
  double mean = s.value() / n;
  KahanSum s2, s4;
  for (double x : xs) {
    double d = x - mean;
    s2.add(d * d);
    s4.add(d * d * d * d);
  }
  SampleMoments m;
  m.n = xs.size();
  m.mean = mean;
  m.var = s2.value() / (n - 1);
  double m4 = s4.value() / n;
  m.mean_stderr = std::sqrt(m.var / n);
  m.var_stderr = std::sqrt(std::max(m4 - m.var * m.var, 0.0) / n);
  return m;
}

}  // namespace anderson
