#pragma once

#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include "ttalab/nn/network.hpp"

namespace ttalab {

enum class TtaMethod { TeBN, Tent, HardPL, SoftPL, RobustPL, ConjugatePL };

std::string to_string(TtaMethod m);
TtaMethod parse_tta_method(std::string_view name);  // ConfigError on unknown names
const std::vector<TtaMethod>& all_tta_methods();

struct TtaConfig {
  TtaMethod method = TtaMethod::TeBN;
  double eta = 1e-3;
  int steps = 1;
  double q = 0.8;
  double temperature = 1.0;
  BnMode bn_mode = BnMode::test_stats();

  // ConfigError on eta < 0, steps < 1, q outside (0, 1] or T <= 0.
  void validate() const;
};

// Batch-mean TTA objective. `teacher_logits` supplies the pseudo-labels for
// HardPL, SoftPL and RobustPL and is ignored otherwise. TeBN has no objective
// and returns 0.
double tta_loss(TtaMethod method, const Tensor& logits, const Tensor& teacher_logits, double q,
                double temperature);

// d tta_loss / d logits, treating the teacher as a constant.
template <class S>
BasicTensor<S> tta_loss_gradient(TtaMethod method, const BasicTensor<S>& logits,
                                 const Tensor& teacher_logits, double q, double temperature);

// Gradient of the TTA objective with respect to every BN gamma and beta of
// `net`, for a batch whose teacher logits are already known.
AffineParams tta_gradient(const Network& net, const Tensor& batch, const TtaConfig& config,
                          const Tensor& teacher_logits);

struct TtaUpdate {
  Network net;
  BnSnapshot snapshot;  // batch statistics seen by the pre-update network
};

// Re-estimates BN statistics on `batch` and, for the self-learning methods,
// takes `steps` plain gradient-descent steps of size eta on the BN affine
// parameters. Pseudo-labels come from the pre-update network.
TtaUpdate tta_update(Network net, const Tensor& batch, const TtaConfig& config);

// Row-wise argmax of the logits; ties go to the lowest class index.
std::vector<int> predict(const Network& net, const Tensor& batch, const BnMode& mode);
std::vector<int> predict_logits(const Tensor& logits);

// ---------------------------------------------------------------------------

template <class S>
BasicTensor<S> tta_loss_gradient(TtaMethod method, const BasicTensor<S>& logits,
                                 const Tensor& teacher_logits, double q, double temperature) {
  using std::exp;
  using std::pow;
  const std::size_t n = logits.rows(), k = logits.cols();
  const double inv_n = 1.0 / static_cast<double>(n);
  auto grad = BasicTensor<S>::matrix(n, k, S(0.0));
  if (method == TtaMethod::TeBN) return grad;

  const bool needs_teacher = method == TtaMethod::HardPL || method == TtaMethod::SoftPL ||
                             method == TtaMethod::RobustPL;
  if (needs_teacher && teacher_logits.shape() != logits.shape()) {
    throw DimensionError("teacher logits shape does not match student logits");
  }

  if (method == TtaMethod::Tent || method == TtaMethod::ConjugatePL) {
    // Entropy of softmax(h / T); TENT is the T = 1 case.
    const double t = method == TtaMethod::Tent ? 1.0 : temperature;
    BasicTensor<S> z = logits;
    if (t != 1.0)
      for (auto& v : z.values()) v = v / t;
    const auto logp = log_softmax(z);
    for (std::size_t i = 0; i < n; ++i) {
      S h(0.0);
      for (std::size_t j = 0; j < k; ++j) h -= exp(logp(i, j)) * logp(i, j);
      for (std::size_t j = 0; j < k; ++j) {
        grad(i, j) = -(inv_n / t) * exp(logp(i, j)) * (logp(i, j) + h);
      }
    }
    return grad;
  }

  const auto p = softmax(logits);
  if (method == TtaMethod::SoftPL) {
    const auto pt = softmax(teacher_logits);
    for (std::size_t i = 0; i < n; ++i) {
      double mass = 0.0;
      for (std::size_t j = 0; j < k; ++j) mass += pt(i, j);
      for (std::size_t j = 0; j < k; ++j) grad(i, j) = inv_n * (p(i, j) * mass - pt(i, j));
    }
    return grad;
  }
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t y = argmax(teacher_logits.row(i));
    if (method == TtaMethod::HardPL) {
      for (std::size_t j = 0; j < k; ++j) grad(i, j) = inv_n * (p(i, j) - (j == y ? 1.0 : 0.0));
    } else {
      // q⁻¹(1 - p_y^q): d/dh_j = -p_y^q (δ_jy - p_j)
      const S pyq = pow(p(i, y), q);
      for (std::size_t j = 0; j < k; ++j)
        grad(i, j) = -inv_n * pyq * ((j == y ? 1.0 : 0.0) - p(i, j));
    }
  }
  return grad;
}

}  // namespace ttalab
