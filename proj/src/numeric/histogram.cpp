#include "ttalab/numeric/histogram.hpp"

#include <algorithm>
#include <cmath>

#include "ttalab/numeric/errors.hpp"

namespace ttalab {

Histogram::Histogram(std::vector<double> samples) : samples_(std::move(samples)) {
  if (samples_.empty()) throw DomainError("histogram requires at least one sample");
  for (double x : samples_)
    if (!std::isfinite(x)) throw DomainError("histogram sample is not finite");
  std::sort(samples_.begin(), samples_.end());
}

double wasserstein1(const Histogram& a, const Histogram& b) {
  if (a.size() != b.size()) return wasserstein1_cdf(a, b);
  const auto& x = a.samples();
  const auto& y = b.samples();
  double sum = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) sum += std::abs(x[i] - y[i]);
  return sum / static_cast<double>(x.size());
}

double wasserstein1_cdf(const Histogram& a, const Histogram& b) {
  const auto& x = a.samples();
  const auto& y = b.samples();
  const double wa = 1.0 / static_cast<double>(x.size());
  const double wb = 1.0 / static_cast<double>(y.size());
  // Sweep the merged support; between consecutive breakpoints both CDFs are
  // constant, so the integral is a sum of rectangles.
  std::size_t i = 0, j = 0;
  double fa = 0.0, fb = 0.0, total = 0.0;
  double prev = std::min(x.front(), y.front());
  while (i < x.size() || j < y.size()) {
    const double next = (j >= y.size() || (i < x.size() && x[i] <= y[j])) ? x[i] : y[j];
    total += std::abs(fa - fb) * (next - prev);
    while (i < x.size() && x[i] == next) {
      fa += wa;
      ++i;
    }
    while (j < y.size() && y[j] == next) {
      fb += wb;
      ++j;
    }
    prev = next;
  }
  return total;
}

double wasserstein1_normalized(const Histogram& a, const Histogram& b) {
  const double w = wasserstein1(a, b);
  const double range = a.range();
  if (range > 0.0) return w / range;
  if (w == 0.0) return 0.0;
  throw DomainError("benign reference histogram has zero range; normalized distance undefined");
}

}  // namespace ttalab
