#include "ttalab/tta/tta.hpp"

#include <cmath>

#include "ttalab/nn/kernels.hpp"

namespace ttalab {

std::string to_string(TtaMethod m) {
  switch (m) {
    case TtaMethod::TeBN: return "tebn";
    case TtaMethod::Tent: return "tent";
    case TtaMethod::HardPL: return "hard_pl";
    case TtaMethod::SoftPL: return "soft_pl";
    case TtaMethod::RobustPL: return "robust_pl";
    case TtaMethod::ConjugatePL: return "conjugate_pl";
  }
  return "unknown";
}

TtaMethod parse_tta_method(std::string_view name) {
  for (auto m : all_tta_methods())
    if (to_string(m) == name) return m;
  throw ConfigError("unknown TTA method '" + std::string(name) +
                    "' (expected tebn, tent, hard_pl, soft_pl, robust_pl, conjugate_pl)");
}

const std::vector<TtaMethod>& all_tta_methods() {
  static const std::vector<TtaMethod> methods = {TtaMethod::TeBN,   TtaMethod::Tent,
                                                 TtaMethod::HardPL, TtaMethod::SoftPL,
                                                 TtaMethod::RobustPL, TtaMethod::ConjugatePL};
  return methods;
}

namespace {

void check_shape_params(double q, double temperature) {
  if (!(q > 0.0 && q <= 1.0)) throw ConfigError("tta.q must lie in (0, 1], got " + std::to_string(q));
  if (!(temperature > 0.0)) {
    throw ConfigError("tta.temperature must be positive, got " + std::to_string(temperature));
  }
}

}  // namespace

void TtaConfig::validate() const {
  if (!(eta >= 0.0) || !std::isfinite(eta)) throw ConfigError("tta.eta must be a finite value >= 0");
  if (steps < 1) throw ConfigError("tta.steps must be at least 1");
  check_shape_params(q, temperature);
}

double tta_loss(TtaMethod method, const Tensor& logits, const Tensor& teacher_logits, double q,
                double temperature) {
  check_shape_params(q, temperature);
  if (method == TtaMethod::TeBN) return 0.0;
  const std::size_t n = logits.rows(), k = logits.cols();
  const bool needs_teacher = method == TtaMethod::HardPL || method == TtaMethod::SoftPL ||
                             method == TtaMethod::RobustPL;
  if (needs_teacher && teacher_logits.shape() != logits.shape()) {
    throw DimensionError("teacher logits shape does not match student logits");
  }
  double total = 0.0;
  if (method == TtaMethod::Tent) {
    const auto logp = log_softmax(logits);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < k; ++j) total -= std::exp(logp(i, j)) * logp(i, j);
  } else if (method == TtaMethod::ConjugatePL) {
    // Conjugate loss of cross-entropy, g = log-sum-exp:
    //   g(z) - ∇g(z)ᵀ z with z = h / T.
    Tensor z = logits;
    for (double& v : z.values()) v /= temperature;
    const auto p = softmax(z);
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < k; ++j) dot += p(i, j) * z(i, j);
      total += log_sum_exp(z.row(i)) - dot;
    }
  } else {
    const auto logp = log_softmax(logits);
    if (method == TtaMethod::SoftPL) {
      const auto logpt = log_softmax(teacher_logits);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < k; ++j) total -= std::exp(logpt(i, j)) * logp(i, j);
    } else {
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t y = argmax(teacher_logits.row(i));
        if (method == TtaMethod::HardPL) {
          total -= logp(i, y);
        } else {
          total += (1.0 - std::pow(std::exp(logp(i, y)), q)) / q;
        }
      }
    }
  }
  return total / static_cast<double>(n);
}

AffineParams tta_gradient(const Network& net, const Tensor& batch, const TtaConfig& config,
                          const Tensor& teacher_logits) {
  const auto affine = net.affine();
  const auto tr = detail::forward_trace(net, batch, config.bn_mode, affine);
  auto g = tta_loss_gradient(config.method, tr.logits(), teacher_logits, config.q,
                             config.temperature);
  return detail::backward_trace(net, tr, affine, std::move(g), {false, true, false}).affine;
}

TtaUpdate tta_update(Network net, const Tensor& batch, const TtaConfig& config) {
  config.validate();
  if (batch.rows() < 2) {
    throw BatchTooSmallError("test-time adaptation needs a batch of at least 2 samples");
  }
  auto pre = forward(net, batch, config.bn_mode);
  TtaUpdate res{std::move(net), std::move(pre.snapshot)};
  if (config.method == TtaMethod::TeBN) return res;
  const Tensor& teacher = pre.logits;
  for (int s = 0; s < config.steps; ++s) {
    const auto grad = tta_gradient(res.net, batch, config, teacher);
    auto updated = axpy(res.net.affine(), -config.eta, grad);
    for (std::size_t k = 0; k < updated.gamma.size(); ++k) {
      if (!all_finite(updated.gamma[k]) || !all_finite(updated.beta[k])) {
        throw NumericError("non-finite BN affine parameters after TTA step " + std::to_string(s));
      }
    }
    res.net.set_affine(updated);
  }
  return res;
}

std::vector<int> predict_logits(const Tensor& logits) {
  std::vector<int> labels(logits.rows());
  for (std::size_t i = 0; i < logits.rows(); ++i)
    labels[i] = static_cast<int>(argmax(logits.row(i)));
  return labels;
}

std::vector<int> predict(const Network& net, const Tensor& batch, const BnMode& mode) {
  return predict_logits(forward(net, batch, mode).logits);
}

}  // namespace ttalab
