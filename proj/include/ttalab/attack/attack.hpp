#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <variant>
#include <vector>

#include "ttalab/nn/network.hpp"
#include "ttalab/numeric/rng.hpp"
#include "ttalab/tta/tta.hpp"

namespace ttalab {

// Flip the benign sample `tgt_index` to `tgt_label`.
struct Targeted {
  std::size_t tgt_index = 0;
  int tgt_label = 0;
};

// Raise the cross-entropy of every benign sample.
struct Indiscriminate {};

// Targeted flip while keeping the remaining benign samples correct; `omega`
// weighs the second term.
struct StealthyTargeted {
  std::size_t tgt_index = 0;
  int tgt_label = 0;
  double omega = 0.1;
};

using Objective = std::variant<Targeted, Indiscriminate, StealthyTargeted>;

struct AttackSpec {
  Objective objective = Targeted{};
  std::vector<std::size_t> mal_indices;
  std::optional<double> epsilon;  // l-inf radius; nullopt = unbounded
  double alpha = 1.0 / 255.0;
  int n_steps = 500;
  bool bilevel = false;
  double lower = 0.0;  // pixel bounds
  double upper = 1.0;
  int restarts = 0;  // extra random-start runs after the zero start

  // ConfigError for inconsistent specs, against a batch of `batch_rows` rows
  // and `n_classes` classes. `have_labels` says whether ground truth is known.
  void validate(std::size_t batch_rows, std::size_t n_classes, bool have_labels) const;
};

struct AttackResult {
  Tensor perturbation;  // N_m × d, row k belongs to mal_indices[k]
  double final_loss = 0.0;
  int best_step = 0;
  std::vector<double> loss_trace;
};

// Attack objective evaluated on logits already produced by θ*.
double adversarial_loss_from_logits(const AttackSpec& spec, const Tensor& logits,
                                    std::span<const int> labels);

// Attack objective for a post-adaptation network on `batch`.
double adversarial_loss(const AttackSpec& spec, const Network& net_star, const Tensor& batch,
                        std::span<const int> labels, const BnMode& mode);

struct ObjectiveValue {
  double loss = 0.0;
  Tensor grad;  // d loss / d batch, full batch shape (empty when not requested)
};

// The attack objective as a function of the whole batch: statistics are
// re-estimated on `batch`; with `spec.bilevel` one inner TTA step
// θ'_A = θ_A - η ∂L_TTA/∂θ_A is taken and differentiated through exactly.
ObjectiveValue attack_objective(const Network& net_pre, const Tensor& batch,
                                std::span<const int> labels, const TtaConfig& tta,
                                const AttackSpec& spec, bool with_gradient);

// delta - alpha·sign(grad), clipped to the l-inf ball and then so that
// base_rows + delta stays inside [lower, upper]. sign(0) = 0.
Tensor sign_gradient_step(const Tensor& delta, const Tensor& grad, double alpha,
                          std::optional<double> epsilon, const Tensor& base_rows, double lower,
                          double upper);

// Copy of `batch` with `perturbation` added to the malicious rows.
Tensor apply_perturbation(const Tensor& batch, std::span<const std::size_t> mal_indices,
                          const Tensor& perturbation);

// Sign-PGD on the malicious rows. Returns the best visited iterate; the zero
// perturbation is always evaluated first.
AttackResult dia_attack(const Network& net_pre, const Tensor& batch, std::span<const int> labels,
                        const TtaConfig& tta, const AttackSpec& spec, Rng& rng);

}  // namespace ttalab
