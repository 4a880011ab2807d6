#pragma once

#include <span>
#include <vector>

namespace ttalab {

// Empirical 1-D distribution: n samples, each carrying mass 1/n.
class Histogram {
 public:
  explicit Histogram(std::vector<double> samples);

  const std::vector<double>& samples() const { return samples_; }
  std::size_t size() const { return samples_.size(); }
  double min() const { return samples_.front(); }
  double max() const { return samples_.back(); }
  double range() const { return max() - min(); }

 private:
  std::vector<double> samples_;
};

// 1-Wasserstein distance between two empirical distributions. Equal sample
// counts use the sorted pairing; otherwise the L1 distance between the CDFs.
double wasserstein1(const Histogram& a, const Histogram& b);

// The CDF-integral route, valid for any sample counts.
double wasserstein1_cdf(const Histogram& a, const Histogram& b);

// wasserstein1 divided by the range (max - min) of the reference `a`.
// A zero-range reference yields 0 when the distance is 0 and DomainError
// otherwise.
double wasserstein1_normalized(const Histogram& a, const Histogram& b);

}  // namespace ttalab
