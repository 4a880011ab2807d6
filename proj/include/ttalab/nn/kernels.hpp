#pragma once

// Scalar-generic forward and reverse passes. Instantiated with double for
// ordinary use and with Dual when a directional derivative of a gradient is
// needed (bilevel attack).

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "ttalab/nn/network.hpp"
#include "ttalab/numeric/errors.hpp"

namespace ttalab::detail {

template <class S>
struct BnCache {
  std::size_t position = 0;  // index into Network::layers()
  double tau = 0.0;
  BasicTensor<S> xhat;
  std::vector<S> mean_t, var_t;
  std::vector<S> mean_bar, inv_std;
};

template <class S>
struct Trace {
  // acts[0] is the input; acts[l + 1] is the output of layer l.
  std::vector<BasicTensor<S>> acts;
  std::vector<BnCache<S>> bn;

  const BasicTensor<S>& logits() const { return acts.back(); }
};

template <class S>
struct Grads {
  BasicTensor<S> input;
  BasicAffineParams<S> affine;
  std::vector<BasicTensor<S>> weight;  // per Linear layer, in network order
  std::vector<BasicTensor<S>> bias;
};

struct GradRequest {
  bool input = true;
  bool affine = true;
  bool weights = false;
};

template <class S>
BasicAffineParams<S> lift_affine(const AffineParams& p) {
  BasicAffineParams<S> out;
  for (const auto& g : p.gamma) {
    auto t = BasicTensor<S>::vector(g.size());
    for (std::size_t c = 0; c < g.size(); ++c) t[c] = S(g[c]);
    out.gamma.push_back(std::move(t));
  }
  for (const auto& b : p.beta) {
    auto t = BasicTensor<S>::vector(b.size());
    for (std::size_t c = 0; c < b.size(); ++c) t[c] = S(b[c]);
    out.beta.push_back(std::move(t));
  }
  return out;
}

// Channel-wise batch mean and biased variance (divisor n).
template <class S>
void batch_moments(const BasicTensor<S>& z, std::vector<S>& mean, std::vector<S>& var) {
  const std::size_t n = z.rows(), c = z.cols();
  mean.assign(c, S(0.0));
  var.assign(c, S(0.0));
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = z.row(i);
    for (std::size_t j = 0; j < c; ++j) mean[j] += r[j];
  }
  for (auto& m : mean) m = m / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = z.row(i);
    for (std::size_t j = 0; j < c; ++j) {
      const S dz = r[j] - mean[j];
      var[j] += dz * dz;
    }
  }
  for (auto& v : var) v = v / static_cast<double>(n);
}

template <class S>
BasicTensor<S> bn_apply(const BatchNormLayer& layer, const BasicTensor<S>& z, double tau,
                        const BasicTensor<S>& gamma, const BasicTensor<S>& beta,
                        BnCache<S>& cache) {
  using std::sqrt;
  const std::size_t n = z.rows(), c = z.cols();
  if (c != layer.channels()) {
    throw DimensionError("batch-norm layer " + std::to_string(layer.layer_index) + " expects " +
                         std::to_string(layer.channels()) + " channels, got " +
                         std::to_string(c));
  }
  if (tau < 1.0 && n < 2) {
    throw BatchTooSmallError("batch-norm layer " + std::to_string(layer.layer_index) +
                             " needs at least 2 samples for test-time statistics, got " +
                             std::to_string(n));
  }
  cache.tau = tau;
  batch_moments(z, cache.mean_t, cache.var_t);
  cache.mean_bar.resize(c);
  cache.inv_std.resize(c);
  for (std::size_t j = 0; j < c; ++j) {
    S m, v;
    if (tau == 1.0) {
      m = S(layer.mu_s[j]);
      v = S(layer.sigma2_s[j]);
    } else if (tau == 0.0) {
      m = cache.mean_t[j];
      v = cache.var_t[j];
    } else {
      m = tau * layer.mu_s[j] + (1.0 - tau) * cache.mean_t[j];
      v = tau * layer.sigma2_s[j] + (1.0 - tau) * cache.var_t[j];
    }
    cache.mean_bar[j] = m;
    cache.inv_std[j] = 1.0 / sqrt(v + layer.eps);
  }
  cache.xhat = BasicTensor<S>::matrix(n, c);
  auto out = BasicTensor<S>::matrix(n, c);
  for (std::size_t i = 0; i < n; ++i) {
    const auto zr = z.row(i);
    auto xr = cache.xhat.row(i);
    auto orow = out.row(i);
    for (std::size_t j = 0; j < c; ++j) {
      xr[j] = (zr[j] - cache.mean_bar[j]) * cache.inv_std[j];
      orow[j] = gamma[j] * xr[j] + beta[j];
    }
  }
  return out;
}

template <class S>
Trace<S> forward_trace(const Network& net, const BasicTensor<S>& x, const BnMode& mode,
                       const BasicAffineParams<S>& affine) {
  if (x.rank() != 2 || x.cols() != net.input_dim()) {
    throw DimensionError("network expects input width " + std::to_string(net.input_dim()) +
                         ", got shape " + shape_string(x.shape()));
  }
  Trace<S> tr;
  tr.acts.reserve(net.layers().size() + 1);
  tr.acts.push_back(x);
  const std::size_t bn_count = net.bn_count();
  for (std::size_t l = 0; l < net.layers().size(); ++l) {
    const auto& in = tr.acts.back();
    const Layer& layer = net.layers()[l];
    BasicTensor<S> out;
    if (const auto* lin = std::get_if<LinearLayer>(&layer)) {
      out = matmul(in, lin->weight);
      for (std::size_t i = 0; i < out.rows(); ++i) {
        auto r = out.row(i);
        for (std::size_t j = 0; j < r.size(); ++j) r[j] += lin->bias[j];
      }
    } else if (std::holds_alternative<ReluLayer>(layer)) {
      out = in;
      for (auto& v : out.values())
        if (!(value_of(v) > 0.0)) v = S(0.0);
    } else {
      const auto& bn = std::get<BatchNormLayer>(layer);
      BnCache<S> cache;
      cache.position = l;
      const double tau = mode.tau_for_layer(bn.layer_index, bn_count);
      out = bn_apply(bn, in, tau, affine.gamma[bn.layer_index], affine.beta[bn.layer_index],
                     cache);
      tr.bn.push_back(std::move(cache));
    }
    tr.acts.push_back(std::move(out));
  }
  return tr;
}

template <class S>
Grads<S> backward_trace(const Network& net, const Trace<S>& tr,
                        const BasicAffineParams<S>& affine, BasicTensor<S> g,
                        GradRequest want) {
  if (g.rows() != tr.logits().rows() || g.cols() != tr.logits().cols()) {
    throw DimensionError("upstream gradient shape " + shape_string(g.shape()) +
                         " does not match logits " + shape_string(tr.logits().shape()));
  }
  Grads<S> out;
  const std::size_t bn_count = net.bn_count();
  if (want.affine) {
    out.affine.gamma.resize(bn_count);
    out.affine.beta.resize(bn_count);
  }
  std::size_t n_linear = 0;
  for (const auto& layer : net.layers())
    if (std::holds_alternative<LinearLayer>(layer)) ++n_linear;
  if (want.weights) {
    out.weight.resize(n_linear);
    out.bias.resize(n_linear);
  }
  std::size_t bn_k = tr.bn.size();
  std::size_t lin_k = n_linear;
  const std::size_t n = g.rows();

  for (std::size_t l = net.layers().size(); l-- > 0;) {
    const Layer& layer = net.layers()[l];
    const auto& in = tr.acts[l];
    const bool need_below = want.input || l > 0;
    if (const auto* lin = std::get_if<LinearLayer>(&layer)) {
      --lin_k;
      if (want.weights) {
        out.weight[lin_k] = matmul(transpose(in), g);
        auto db = BasicTensor<S>::vector(lin->out(), S(0.0));
        for (std::size_t i = 0; i < n; ++i) {
          const auto r = g.row(i);
          for (std::size_t j = 0; j < r.size(); ++j) db[j] += r[j];
        }
        out.bias[lin_k] = std::move(db);
      }
      if (need_below) g = matmul(g, transpose(lin->weight));
    } else if (std::holds_alternative<ReluLayer>(layer)) {
      for (std::size_t k = 0; k < g.size(); ++k)
        if (!(value_of(in[k]) > 0.0)) g[k] = S(0.0);
    } else {
      const auto& bn = std::get<BatchNormLayer>(layer);
      const auto& c = tr.bn[--bn_k];
      const std::size_t ch = bn.channels();
      const auto& gamma = affine.gamma[bn.layer_index];
      if (want.affine) {
        auto dg = BasicTensor<S>::vector(ch, S(0.0));
        auto db = BasicTensor<S>::vector(ch, S(0.0));
        for (std::size_t i = 0; i < n; ++i) {
          const auto gr = g.row(i);
          const auto xr = c.xhat.row(i);
          for (std::size_t j = 0; j < ch; ++j) {
            dg[j] += gr[j] * xr[j];
            db[j] += gr[j];
          }
        }
        out.affine.gamma[bn.layer_index] = std::move(dg);
        out.affine.beta[bn.layer_index] = std::move(db);
      }
      if (!need_below) continue;
      // dxhat = g * gamma; direct path dz = dxhat * inv_std.
      std::vector<S> dmean(ch, S(0.0)), dvar(ch, S(0.0));
      auto dz = BasicTensor<S>::matrix(n, ch);
      for (std::size_t i = 0; i < n; ++i) {
        const auto gr = g.row(i);
        const auto xr = c.xhat.row(i);
        auto dr = dz.row(i);
        for (std::size_t j = 0; j < ch; ++j) {
          const S dxhat = gr[j] * gamma[j];
          dr[j] = dxhat * c.inv_std[j];
          dmean[j] -= dr[j];
          dvar[j] += dxhat * xr[j];
        }
      }
      if (c.tau < 1.0) {
        // Paths through the batch statistics, weighted by (1 - tau).
        const double w = 1.0 - c.tau;
        const double inv_n = 1.0 / static_cast<double>(n);
        std::vector<S> a(ch), b(ch);
        for (std::size_t j = 0; j < ch; ++j) {
          // d var_bar = sum dxhat * (z - mean_bar) * (-1/2) inv_std^3
          const S dvar_bar = dvar[j] * (-0.5) * c.inv_std[j] * c.inv_std[j];
          a[j] = w * dmean[j] * inv_n;
          b[j] = w * dvar_bar * 2.0 * inv_n;
        }
        for (std::size_t i = 0; i < n; ++i) {
          const auto zr = in.row(i);
          auto dr = dz.row(i);
          for (std::size_t j = 0; j < ch; ++j) dr[j] += a[j] + b[j] * (zr[j] - c.mean_t[j]);
        }
      }
      g = std::move(dz);
    }
  }
  if (want.input) out.input = std::move(g);
  return out;
}

}  // namespace ttalab::detail
