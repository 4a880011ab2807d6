#pragma once

#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "ttalab/nn/network.hpp"

namespace ttalab {

struct LayerDrift {
  std::size_t layer_index = 0;
  double mean_drift = 0.0;
  double var_drift = 0.0;
};

// Per BN layer: normalised 1-Wasserstein distance between the channel
// histograms of the benign and attacked batch means (and variances). The
// benign histogram's range is the normaliser.
std::vector<LayerDrift> bn_drift_report(const BnSnapshot& benign, const BnSnapshot& attacked);

double max_drift(const std::vector<LayerDrift>& report);

void write_drift_csv(std::ostream& out, const std::vector<LayerDrift>& report);

// Plain-text summary naming the three layers with the largest drift.
std::string drift_summary(const std::vector<LayerDrift>& report);

// Closed-form derivative of f(x_tgt) = Σ_j w_j (x_tgt,j - μ̄_j) / σ̃_j + b with
// respect to batch entry (i, j), where μ̄ = τ μ_s + (1-τ) μ(batch),
// σ̃² = τ σ_s² + (1-τ) σ²(batch) + eps and row i is not the target. Throws
// DomainError when σ̃² is zero.
double analytic_bn_input_gradient(std::span<const double> x_tgt, const Tensor& batch,
                                  std::span<const double> w, std::size_t i, std::size_t j,
                                  double tau, std::span<const double> mu_s,
                                  std::span<const double> sigma2_s, double eps = 0.0);

struct GradcheckEntry {
  std::string name;
  int instances = 0;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed() const { return max_rel_error <= tolerance; }
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  bool passed() const;
};

// Central-difference check (h = 1e-5) of backward_input, backward_theta_a and
// analytic_bn_input_gradient (τ ∈ {0, 0.3, 0.7}) on random two-BN-layer
// networks with batch sizes 2, 4 and 8. Errors are max-abs differences over a
// gradient tensor divided by the largest finite-difference magnitude.
GradcheckReport run_gradcheck(std::uint64_t seed, int instances);

void print_gradcheck(std::ostream& out, const GradcheckReport& report);

}  // namespace ttalab
