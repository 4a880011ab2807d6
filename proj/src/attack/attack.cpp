#include "ttalab/attack/attack.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "ttalab/nn/kernels.hpp"

namespace ttalab {

namespace {

struct Roles {
  std::optional<std::size_t> target;
  std::vector<std::size_t> rest;  // rows outside target and malicious set
  std::vector<std::size_t> benign;  // rows outside the malicious set
};

Roles roles_of(const AttackSpec& spec, std::size_t n) {
  Roles r;
  std::vector<bool> mal(n, false);
  for (auto m : spec.mal_indices) mal[m] = true;
  if (const auto* t = std::get_if<Targeted>(&spec.objective)) r.target = t->tgt_index;
  if (const auto* s = std::get_if<StealthyTargeted>(&spec.objective)) r.target = s->tgt_index;
  for (std::size_t i = 0; i < n; ++i) {
    if (mal[i]) continue;
    r.benign.push_back(i);
    if (!r.target || *r.target != i) r.rest.push_back(i);
  }
  return r;
}

// Loss and d loss / d logits.
double loss_and_logit_grad(const AttackSpec& spec, const Tensor& logits,
                           std::span<const int> labels, Tensor* grad) {
  const std::size_t n = logits.rows(), k = logits.cols();
  const auto logp = log_softmax(logits);
  if (grad) *grad = Tensor::matrix(n, k, 0.0);

  // Adds weight * CE(row, label) to the loss.
  double loss = 0.0;
  auto add_ce = [&](std::size_t row, int label, double weight) {
    loss -= weight * logp(row, static_cast<std::size_t>(label));
    if (!grad) return;
    for (std::size_t j = 0; j < k; ++j) {
      (*grad)(row, j) += weight * (std::exp(logp(row, j)) - (static_cast<int>(j) == label ? 1.0 : 0.0));
    }
  };

  const Roles roles = roles_of(spec, n);
  if (const auto* t = std::get_if<Targeted>(&spec.objective)) {
    add_ce(t->tgt_index, t->tgt_label, 1.0);
  } else if (std::holds_alternative<Indiscriminate>(spec.objective)) {
    const double w = -1.0 / static_cast<double>(roles.benign.size());
    for (auto i : roles.benign) add_ce(i, labels[i], w);
  } else {
    const auto& s = std::get<StealthyTargeted>(spec.objective);
    add_ce(s.tgt_index, s.tgt_label, 1.0);
    if (s.omega != 0.0 && !roles.rest.empty()) {
      const double w = s.omega / static_cast<double>(roles.rest.size());
      for (auto i : roles.rest) add_ce(i, labels[i], w);
    }
  }
  return loss;
}

bool needs_labels(const Objective& o) {
  if (std::holds_alternative<Indiscriminate>(o)) return true;
  if (const auto* s = std::get_if<StealthyTargeted>(&o)) return s->omega != 0.0;
  return false;
}

}  // namespace

void AttackSpec::validate(std::size_t batch_rows, std::size_t n_classes, bool have_labels) const {
  if (batch_rows < 2) throw ConfigError("attack needs a batch of at least 2 rows");
  if (mal_indices.empty()) throw ConfigError("attack.mal_indices must not be empty");
  std::set<std::size_t> seen;
  for (auto m : mal_indices) {
    if (m >= batch_rows) throw ConfigError("attack.mal_indices entry out of range");
    if (!seen.insert(m).second) throw ConfigError("attack.mal_indices contains duplicates");
  }
  if (seen.size() >= batch_rows) throw ConfigError("attack leaves no benign rows");
  auto check_target = [&](std::size_t tgt, int label) {
    if (tgt >= batch_rows) throw ConfigError("attack target index out of range");
    if (seen.count(tgt)) throw ConfigError("attack target must not be a malicious row");
    if (label < 0 || static_cast<std::size_t>(label) >= n_classes) {
      throw ConfigError("attack target label out of range");
    }
  };
  if (const auto* t = std::get_if<Targeted>(&objective)) check_target(t->tgt_index, t->tgt_label);
  if (const auto* s = std::get_if<StealthyTargeted>(&objective)) {
    check_target(s->tgt_index, s->tgt_label);
    if (!(s->omega >= 0.0)) throw ConfigError("attack.omega must be nonnegative");
  }
  if (needs_labels(objective) && !have_labels) {
    throw ConfigError("attack objective requires ground-truth labels for the benign rows");
  }
  if (epsilon && !(*epsilon >= 0.0)) throw ConfigError("attack.epsilon must be nonnegative");
  if (!(alpha > 0.0)) throw ConfigError("attack.alpha must be positive");
  if (n_steps < 1) throw ConfigError("attack.steps must be at least 1");
  if (!(lower < upper)) throw ConfigError("attack pixel bounds must satisfy lower < upper");
  if (restarts < 0) throw ConfigError("attack.restarts must be nonnegative");
}

double adversarial_loss_from_logits(const AttackSpec& spec, const Tensor& logits,
                                    std::span<const int> labels) {
  if (needs_labels(spec.objective) && labels.size() != logits.rows()) {
    throw ConfigError("attack objective requires ground-truth labels for the benign rows");
  }
  return loss_and_logit_grad(spec, logits, labels, nullptr);
}

double adversarial_loss(const AttackSpec& spec, const Network& net_star, const Tensor& batch,
                        std::span<const int> labels, const BnMode& mode) {
  return adversarial_loss_from_logits(spec, forward(net_star, batch, mode).logits, labels);
}

ObjectiveValue attack_objective(const Network& net_pre, const Tensor& batch,
                                std::span<const int> labels, const TtaConfig& tta,
                                const AttackSpec& spec, bool with_gradient) {
  const BnMode& mode = tta.bn_mode;
  const auto theta = net_pre.affine();
  const bool inner = spec.bilevel && tta.method != TtaMethod::TeBN;

  if (!inner) {
    const auto tr = detail::forward_trace(net_pre, batch, mode, theta);
    ObjectiveValue out;
    Tensor g_logits;
    out.loss = loss_and_logit_grad(spec, tr.logits(), labels, with_gradient ? &g_logits : nullptr);
    if (with_gradient) {
      out.grad = detail::backward_trace(net_pre, tr, theta, std::move(g_logits),
                                        {true, false, false})
                     .input;
    }
    return out;
  }

  // Inner step θ' = θ - η ∇_θ L_TTA(X; θ); pseudo-labels are constants.
  const auto tr0 = detail::forward_trace(net_pre, batch, mode, theta);
  const Tensor teacher = tr0.logits();
  auto g_tta = tta_loss_gradient(tta.method, tr0.logits(), teacher, tta.q, tta.temperature);
  const auto dtheta =
      detail::backward_trace(net_pre, tr0, theta, std::move(g_tta), {false, true, false}).affine;
  const auto theta_star = axpy(theta, -tta.eta, dtheta);

  const auto tr1 = detail::forward_trace(net_pre, batch, mode, theta_star);
  ObjectiveValue out;
  Tensor g_logits;
  out.loss = loss_and_logit_grad(spec, tr1.logits(), labels, with_gradient ? &g_logits : nullptr);
  if (!with_gradient) return out;
  auto outer = detail::backward_trace(net_pre, tr1, theta_star, std::move(g_logits),
                                      {true, true, false});

  // dL/dX = ∂L/∂X|θ* - η ∇_X <g, ∇_θ L_TTA(X; θ)>, g = ∂L/∂θ*. The second
  // term is the tangent of ∇_X L_TTA evaluated at θ + ε·g.
  BasicAffineParams<Dual> theta_dual;
  for (std::size_t k = 0; k < theta.gamma.size(); ++k) {
    auto gk = BasicTensor<Dual>::vector(theta.gamma[k].size());
    auto bk = BasicTensor<Dual>::vector(theta.beta[k].size());
    for (std::size_t c = 0; c < gk.size(); ++c) {
      gk[c] = Dual(theta.gamma[k][c], outer.affine.gamma[k][c]);
      bk[c] = Dual(theta.beta[k][c], outer.affine.beta[k][c]);
    }
    theta_dual.gamma.push_back(std::move(gk));
    theta_dual.beta.push_back(std::move(bk));
  }
  auto x_dual = BasicTensor<Dual>::matrix(batch.rows(), batch.cols());
  for (std::size_t i = 0; i < batch.size(); ++i) x_dual[i] = Dual(batch[i]);
  const auto trd = detail::forward_trace(net_pre, x_dual, mode, theta_dual);
  auto gd = tta_loss_gradient(tta.method, trd.logits(), teacher, tta.q, tta.temperature);
  const auto mixed =
      detail::backward_trace(net_pre, trd, theta_dual, std::move(gd), {true, false, false}).input;

  out.grad = std::move(outer.input);
  for (std::size_t i = 0; i < out.grad.size(); ++i) out.grad[i] -= tta.eta * mixed[i].d;
  return out;
}

Tensor sign_gradient_step(const Tensor& delta, const Tensor& grad, double alpha,
                          std::optional<double> epsilon, const Tensor& base_rows, double lower,
                          double upper) {
  if (delta.shape() != grad.shape() || delta.shape() != base_rows.shape()) {
    throw DimensionError("sign_gradient_step shape mismatch: delta " + shape_string(delta.shape()) +
                         ", grad " + shape_string(grad.shape()) + ", base " +
                         shape_string(base_rows.shape()));
  }
  Tensor out = delta;
  for (std::size_t k = 0; k < out.size(); ++k) {
    const double g = grad[k];
    const double s = g > 0.0 ? 1.0 : (g < 0.0 ? -1.0 : 0.0);
    double d = delta[k] - alpha * s;
    if (epsilon) d = std::clamp(d, -*epsilon, *epsilon);
    d = std::clamp(d, lower - base_rows[k], upper - base_rows[k]);
    out[k] = d;
  }
  return out;
}

Tensor apply_perturbation(const Tensor& batch, std::span<const std::size_t> mal_indices,
                          const Tensor& perturbation) {
  if (perturbation.rows() != mal_indices.size() || perturbation.cols() != batch.cols()) {
    throw DimensionError("perturbation shape " + shape_string(perturbation.shape()) +
                         " does not match malicious rows");
  }
  Tensor out = batch;
  for (std::size_t k = 0; k < mal_indices.size(); ++k) {
    auto dst = out.row(mal_indices[k]);
    const auto src = batch.row(mal_indices[k]);
    const auto d = perturbation.row(k);
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = src[j] + d[j];
  }
  return out;
}

AttackResult dia_attack(const Network& net_pre, const Tensor& batch, std::span<const int> labels,
                        const TtaConfig& tta, const AttackSpec& spec, Rng& rng) {
  tta.validate();
  const bool have_labels = labels.size() == batch.rows();
  spec.validate(batch.rows(), net_pre.output_dim(), have_labels);
  const std::size_t nm = spec.mal_indices.size(), d = batch.cols();

  Tensor base = Tensor::matrix(nm, d);
  for (std::size_t k = 0; k < nm; ++k) {
    const auto src = batch.row(spec.mal_indices[k]);
    for (std::size_t j = 0; j < d; ++j) {
      if (src[j] < spec.lower || src[j] > spec.upper) {
        throw DomainError("malicious row " + std::to_string(spec.mal_indices[k]) +
                          " lies outside the pixel bounds");
      }
      base(k, j) = src[j];
    }
  }

  AttackResult res;
  res.final_loss = std::numeric_limits<double>::infinity();
  int global_step = 0;

  auto consider = [&](double loss, const Tensor& delta) {
    res.loss_trace.push_back(loss);
    if (loss < res.final_loss) {
      res.final_loss = loss;
      res.perturbation = delta;
      res.best_step = global_step;
    }
    ++global_step;
  };

  for (int run = 0; run <= spec.restarts; ++run) {
    Tensor delta = Tensor::matrix(nm, d, 0.0);
    if (run > 0) {
      for (std::size_t k = 0; k < delta.size(); ++k) {
        double lo = spec.lower - base[k], hi = spec.upper - base[k];
        if (spec.epsilon) {
          lo = std::max(lo, -*spec.epsilon);
          hi = std::min(hi, *spec.epsilon);
        }
        delta[k] = rng.uniform(lo, hi);
      }
    }
    for (int step = 0; step < spec.n_steps; ++step) {
      const Tensor x = apply_perturbation(batch, spec.mal_indices, delta);
      const auto obj = attack_objective(net_pre, x, labels, tta, spec, true);
      if (!std::isfinite(obj.loss)) {
        throw NumericError("non-finite attack loss at step " + std::to_string(step));
      }
      Tensor g_mal = Tensor::matrix(nm, d);
      for (std::size_t k = 0; k < nm; ++k) {
        const auto src = obj.grad.row(spec.mal_indices[k]);
        std::copy(src.begin(), src.end(), g_mal.row(k).begin());
      }
      if (!all_finite(g_mal)) {
        throw NumericError("non-finite attack gradient at step " + std::to_string(step));
      }
      consider(obj.loss, delta);
      delta = sign_gradient_step(delta, g_mal, spec.alpha, spec.epsilon, base, spec.lower,
                                 spec.upper);
    }
    const Tensor x = apply_perturbation(batch, spec.mal_indices, delta);
    const double last = attack_objective(net_pre, x, labels, tta, spec, false).loss;
    if (!std::isfinite(last)) {
      throw NumericError("non-finite attack loss at step " + std::to_string(spec.n_steps));
    }
    consider(last, delta);
  }
  return res;
}

}  // namespace ttalab
