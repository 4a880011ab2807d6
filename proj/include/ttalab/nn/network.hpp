#pragma once

#include <cstddef>
#include <variant>
#include <vector>

#include "ttalab/nn/bn_mode.hpp"
#include "ttalab/numeric/rng.hpp"
#include "ttalab/numeric/tensor.hpp"

namespace ttalab {

// out = x · weight + bias, weight stored in×out.
struct LinearLayer {
  Tensor weight;
  Tensor bias;

  std::size_t in() const { return weight.rows(); }
  std::size_t out() const { return weight.cols(); }
};

struct ReluLayer {
  std::size_t width = 0;
};

struct BatchNormLayer {
  Tensor gamma;
  Tensor beta;
  Tensor mu_s;
  Tensor sigma2_s;
  double eps = 1e-5;
  std::size_t layer_index = 0;  // ordinal among the network's BN layers

  static BatchNormLayer identity(std::size_t channels, double eps = 1e-5);
  std::size_t channels() const { return gamma.size(); }
};

using Layer = std::variant<LinearLayer, ReluLayer, BatchNormLayer>;

// BN affine parameters (the adaptable set), one tensor pair per BN layer.
// Also the container for their gradients.
template <class S>
struct BasicAffineParams {
  std::vector<BasicTensor<S>> gamma;
  std::vector<BasicTensor<S>> beta;
};
using AffineParams = BasicAffineParams<double>;

// Feed-forward stack of Linear / ReLU / BatchNorm layers. Parameters split into
// the BN affine pairs (adapted at test time), BN source statistics, and all
// linear weights and biases (frozen).
class Network {
 public:
  Network() = default;
  explicit Network(std::vector<Layer> layers);

  const std::vector<Layer>& layers() const { return layers_; }
  std::size_t input_dim() const { return input_dim_; }
  std::size_t output_dim() const { return output_dim_; }
  std::size_t bn_count() const { return bn_positions_.size(); }

  const BatchNormLayer& bn(std::size_t k) const;
  BatchNormLayer& bn(std::size_t k);
  LinearLayer& linear_at(std::size_t layer);

  AffineParams affine() const;
  void set_affine(const AffineParams& params);

  // Source statistics of every BN layer as a snapshot.
  BnSnapshot source_stats() const;
  void set_source_stats(const BnSnapshot& stats);

 private:
  std::vector<Layer> layers_;
  std::vector<std::size_t> bn_positions_;
  std::size_t input_dim_ = 0;
  std::size_t output_dim_ = 0;
};

// d → [Linear → BN → ReLU]* → Linear → K with He-initialised weights,
// unit BN scale, and identity source statistics.
Network make_mlp(std::size_t input_dim, const std::vector<std::size_t>& hidden,
                 std::size_t n_classes, Rng& rng);

struct BnForward {
  Tensor out;
  BnStats stats;  // batch statistics of z
};

// One BN layer with an explicit training-statistics weight `tau`.
BnForward bn_forward(const BatchNormLayer& layer, const Tensor& z, double tau);

// One BN layer; `bn_count` places the layer in its network for n_tr.
BnForward bn_forward(const BatchNormLayer& layer, const Tensor& z, const BnMode& mode,
                     std::size_t bn_count);

struct ForwardResult {
  Tensor logits;
  BnSnapshot snapshot;
};

ForwardResult forward(const Network& net, const Tensor& x, const BnMode& mode);

// Gradient of <upstream, logits> with respect to every input entry, including
// the cross-sample paths through the batch statistics.
Tensor backward_input(const Network& net, const Tensor& x, const BnMode& mode,
                      const Tensor& upstream);

// Gradient of <upstream, logits> with respect to every BN gamma and beta.
AffineParams backward_theta_a(const Network& net, const Tensor& x, const BnMode& mode,
                              const Tensor& upstream);

AffineParams zeros_like(const AffineParams& p);

// p + scale * dir, elementwise.
AffineParams axpy(const AffineParams& p, double scale, const AffineParams& dir);

}  // namespace ttalab
