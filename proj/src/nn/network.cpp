#include "ttalab/nn/network.hpp"

#include <cmath>
#include <sstream>

#include "ttalab/nn/kernels.hpp"

namespace ttalab {

BnMode::BnMode(Smoothed m) : mode_(m) {
  if (!(m.tau >= 0.0 && m.tau <= 1.0)) {
    throw ConfigError("smoothing factor tau must lie in [0, 1], got " + std::to_string(m.tau));
  }
}

double BnMode::tau_for_layer(std::size_t bn_index, std::size_t bn_count) const {
  if (std::holds_alternative<TrainStats>(mode_)) return 1.0;
  if (std::holds_alternative<TestStats>(mode_)) return 0.0;
  const auto& s = std::get<Smoothed>(mode_);
  if (bn_index + s.n_tr >= bn_count) return 1.0;
  return s.tau;
}

bool BnMode::reads_batch(std::size_t bn_count) const {
  for (std::size_t k = 0; k < bn_count; ++k)
    if (tau_for_layer(k, bn_count) < 1.0) return true;
  return false;
}

std::string BnMode::describe() const {
  if (std::holds_alternative<TrainStats>(mode_)) return "train-stats";
  if (std::holds_alternative<TestStats>(mode_)) return "test-stats";
  const auto& s = std::get<Smoothed>(mode_);
  std::ostringstream os;
  os << "smoothed(tau=" << s.tau << ", n_tr=" << s.n_tr << ")";
  return os.str();
}

BatchNormLayer BatchNormLayer::identity(std::size_t channels, double eps) {
  BatchNormLayer bn;
  bn.gamma = Tensor::vector(channels, 1.0);
  bn.beta = Tensor::vector(channels, 0.0);
  bn.mu_s = Tensor::vector(channels, 0.0);
  bn.sigma2_s = Tensor::vector(channels, 1.0);
  bn.eps = eps;
  return bn;
}

Network::Network(std::vector<Layer> layers) : layers_(std::move(layers)) {
  if (layers_.empty()) throw DimensionError("network needs at least one layer");
  std::size_t width = 0;
  bool have_width = false;
  auto expect = [&](std::size_t l, std::size_t in) {
    if (have_width && in != width) {
      throw DimensionError("layer " + std::to_string(l) + " expects width " + std::to_string(in) +
                           " but receives " + std::to_string(width));
    }
    if (!have_width) input_dim_ = in;
    have_width = true;
  };
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    auto& layer = layers_[l];
    if (auto* lin = std::get_if<LinearLayer>(&layer)) {
      if (lin->weight.rank() != 2 || lin->bias.size() != lin->out()) {
        throw DimensionError("linear layer " + std::to_string(l) + " has inconsistent shapes");
      }
      expect(l, lin->in());
      width = lin->out();
    } else if (auto* relu = std::get_if<ReluLayer>(&layer)) {
      expect(l, relu->width);
      width = relu->width;
    } else {
      auto& bn = std::get<BatchNormLayer>(layer);
      const std::size_t c = bn.gamma.size();
      if (bn.beta.size() != c || bn.mu_s.size() != c || bn.sigma2_s.size() != c) {
        throw DimensionError("batch-norm layer " + std::to_string(l) +
                             " parameter lengths differ");
      }
      if (!(bn.eps > 0.0)) throw DomainError("batch-norm eps must be positive");
      for (double v : bn.sigma2_s.values())
        if (!(v >= 0.0)) throw DomainError("batch-norm source variance must be nonnegative");
      expect(l, c);
      bn.layer_index = bn_positions_.size();
      bn_positions_.push_back(l);
      width = c;
    }
  }
  output_dim_ = width;
}

const BatchNormLayer& Network::bn(std::size_t k) const {
  return std::get<BatchNormLayer>(layers_.at(bn_positions_.at(k)));
}

BatchNormLayer& Network::bn(std::size_t k) {
  return std::get<BatchNormLayer>(layers_.at(bn_positions_.at(k)));
}

LinearLayer& Network::linear_at(std::size_t layer) {
  return std::get<LinearLayer>(layers_.at(layer));
}

AffineParams Network::affine() const {
  AffineParams p;
  for (std::size_t k = 0; k < bn_count(); ++k) {
    p.gamma.push_back(bn(k).gamma);
    p.beta.push_back(bn(k).beta);
  }
  return p;
}

void Network::set_affine(const AffineParams& params) {
  if (params.gamma.size() != bn_count() || params.beta.size() != bn_count()) {
    throw DimensionError("affine parameter set has wrong layer count");
  }
  for (std::size_t k = 0; k < bn_count(); ++k) {
    auto& layer = bn(k);
    if (params.gamma[k].size() != layer.channels() || params.beta[k].size() != layer.channels()) {
      throw DimensionError("affine parameters for BN layer " + std::to_string(k) +
                           " have wrong length");
    }
    layer.gamma = params.gamma[k];
    layer.beta = params.beta[k];
  }
}

BnSnapshot Network::source_stats() const {
  BnSnapshot s;
  for (std::size_t k = 0; k < bn_count(); ++k) s.push_back({bn(k).mu_s, bn(k).sigma2_s});
  return s;
}

void Network::set_source_stats(const BnSnapshot& stats) {
  if (stats.size() != bn_count()) throw DimensionError("snapshot has wrong layer count");
  for (std::size_t k = 0; k < bn_count(); ++k) {
    auto& layer = bn(k);
    if (stats[k].mean.size() != layer.channels() || stats[k].var.size() != layer.channels()) {
      throw DimensionError("snapshot entry " + std::to_string(k) + " has wrong length");
    }
    layer.mu_s = stats[k].mean;
    layer.sigma2_s = stats[k].var;
  }
}

Network make_mlp(std::size_t input_dim, const std::vector<std::size_t>& hidden,
                 std::size_t n_classes, Rng& rng) {
  std::vector<Layer> layers;
  std::size_t width = input_dim;
  auto linear = [&](std::size_t in, std::size_t out) {
    LinearLayer lin{Tensor::matrix(in, out), Tensor::vector(out, 0.0)};
    const double scale = std::sqrt(2.0 / static_cast<double>(in));
    for (double& w : lin.weight.values()) w = scale * rng.normal();
    return lin;
  };
  for (std::size_t h : hidden) {
    layers.emplace_back(linear(width, h));
    layers.emplace_back(BatchNormLayer::identity(h));
    layers.emplace_back(ReluLayer{h});
    width = h;
  }
  layers.emplace_back(linear(width, n_classes));
  return Network(std::move(layers));
}

BnForward bn_forward(const BatchNormLayer& layer, const Tensor& z, double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw ConfigError("tau must lie in [0, 1]");
  if (z.rank() != 2) throw DimensionError("bn_forward expects an n×C matrix");
  detail::BnCache<double> cache;
  BnForward res;
  res.out = detail::bn_apply(layer, z, tau, layer.gamma, layer.beta, cache);
  res.stats.mean = Tensor::vector(cache.mean_t);
  res.stats.var = Tensor::vector(cache.var_t);
  return res;
}

BnForward bn_forward(const BatchNormLayer& layer, const Tensor& z, const BnMode& mode,
                     std::size_t bn_count) {
  return bn_forward(layer, z, mode.tau_for_layer(layer.layer_index, bn_count));
}

namespace {

BnSnapshot snapshot_of(const detail::Trace<double>& tr) {
  BnSnapshot s;
  for (const auto& c : tr.bn) s.push_back({Tensor::vector(c.mean_t), Tensor::vector(c.var_t)});
  return s;
}

}  // namespace

ForwardResult forward(const Network& net, const Tensor& x, const BnMode& mode) {
  auto tr = detail::forward_trace(net, x, mode, net.affine());
  return {tr.logits(), snapshot_of(tr)};
}

Tensor backward_input(const Network& net, const Tensor& x, const BnMode& mode,
                      const Tensor& upstream) {
  const auto affine = net.affine();
  auto tr = detail::forward_trace(net, x, mode, affine);
  return detail::backward_trace(net, tr, affine, upstream, {true, false, false}).input;
}

AffineParams backward_theta_a(const Network& net, const Tensor& x, const BnMode& mode,
                              const Tensor& upstream) {
  const auto affine = net.affine();
  auto tr = detail::forward_trace(net, x, mode, affine);
  return detail::backward_trace(net, tr, affine, upstream, {false, true, false}).affine;
}

AffineParams zeros_like(const AffineParams& p) {
  AffineParams z;
  for (const auto& g : p.gamma) z.gamma.push_back(Tensor::vector(g.size(), 0.0));
  for (const auto& b : p.beta) z.beta.push_back(Tensor::vector(b.size(), 0.0));
  return z;
}

AffineParams axpy(const AffineParams& p, double scale, const AffineParams& dir) {
  AffineParams out = p;
  for (std::size_t k = 0; k < out.gamma.size(); ++k) {
    for (std::size_t c = 0; c < out.gamma[k].size(); ++c) {
      out.gamma[k][c] = p.gamma[k][c] + scale * dir.gamma[k][c];
      out.beta[k][c] = p.beta[k][c] + scale * dir.beta[k][c];
    }
  }
  return out;
}

}  // namespace ttalab
