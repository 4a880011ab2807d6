#include "ttalab/bench/benchmark.hpp"

#include <algorithm>
#include <cmath>

#include "ttalab/nn/kernels.hpp"
#include "ttalab/tta/tta.hpp"

namespace ttalab {

Dataset Dataset::slice(std::size_t begin, std::size_t count) const {
  if (begin + count > size()) throw DimensionError("dataset slice out of range");
  Dataset out;
  out.x = Tensor::matrix(count, x.cols());
  std::copy(x.values().begin() + static_cast<std::ptrdiff_t>(begin * x.cols()),
            x.values().begin() + static_cast<std::ptrdiff_t>((begin + count) * x.cols()),
            out.x.values().begin());
  out.y.assign(y.begin() + static_cast<std::ptrdiff_t>(begin),
               y.begin() + static_cast<std::ptrdiff_t>(begin + count));
  return out;
}

ShiftSpec ShiftSpec::none(std::size_t dim) {
  return {Tensor::vector(dim, 0.0), Tensor::vector(dim, 1.0), 0.0};
}

ShiftSpec ShiftSpec::preset(std::size_t dim, std::uint64_t seed) {
  Rng rng(Rng::derive(seed, 0x5117));
  ShiftSpec s = none(dim);
  for (std::size_t j = 0; j < dim; ++j) {
    s.scale[j] = rng.uniform(0.7, 1.0);
    s.bias[j] = rng.uniform(-0.1, 0.1);
  }
  s.noise_std = 0.02;
  return s;
}

BenchmarkSpec BenchmarkSpec::defaults(std::uint64_t seed) {
  BenchmarkSpec spec;
  spec.seed = seed;
  spec.shift = ShiftSpec::preset(spec.dim, seed);
  return spec;
}

void BenchmarkSpec::validate() const {
  if (n_classes < 2) throw ConfigError("benchmark.n_classes must be at least 2");
  if (dim < 1) throw ConfigError("benchmark.dim must be at least 1");
  if (batch_size < 2) throw ConfigError("benchmark.batch_size must be at least 2");
  if (train_size < 1) throw ConfigError("benchmark.train_size must be positive");
  if (test_size < batch_size || test_size % batch_size != 0) {
    throw ConfigError("benchmark.test_size must be a positive multiple of benchmark.batch_size");
  }
  if (!(center_low <= center_high)) throw ConfigError("benchmark.center_low exceeds center_high");
  if (!(class_spread >= 0.0)) throw ConfigError("benchmark.class_spread must be nonnegative");
  if (shift.bias.size() != dim) throw ConfigError("benchmark.shift.bias must have length dim");
  if (shift.scale.size() != dim) throw ConfigError("benchmark.shift.scale must have length dim");
  if (!(shift.noise_std >= 0.0)) throw ConfigError("benchmark.shift.noise_std must be nonnegative");
}

namespace {

Dataset draw(const Tensor& centers, std::size_t n, double spread, Rng& rng) {
  const std::size_t k = centers.rows(), d = centers.cols();
  Dataset ds;
  ds.y.resize(n);
  for (std::size_t i = 0; i < n; ++i) ds.y[i] = static_cast<int>(i % k);
  rng.shuffle(ds.y);
  ds.x = Tensor::matrix(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = centers.row(static_cast<std::size_t>(ds.y[i]));
    auto r = ds.x.row(i);
    for (std::size_t j = 0; j < d; ++j) r[j] = std::clamp(c[j] + spread * rng.normal(), 0.0, 1.0);
  }
  return ds;
}

}  // namespace

Benchmark generate_benchmark(const BenchmarkSpec& spec) {
  spec.validate();
  Rng center_rng(Rng::derive(spec.seed, 0));
  Tensor centers = Tensor::matrix(spec.n_classes, spec.dim);
  for (double& c : centers.values()) c = center_rng.uniform(spec.center_low, spec.center_high);

  Benchmark b;
  Rng train_rng(Rng::derive(spec.seed, 1));
  Rng clean_rng(Rng::derive(spec.seed, 2));
  Rng shift_rng(Rng::derive(spec.seed, 3));
  b.train = draw(centers, spec.train_size, spec.class_spread, train_rng);
  b.clean_test = draw(centers, spec.test_size, spec.class_spread, clean_rng);
  b.shifted_test = draw(centers, spec.test_size, spec.class_spread, shift_rng);
  const auto& s = spec.shift;
  for (std::size_t i = 0; i < b.shifted_test.size(); ++i) {
    auto r = b.shifted_test.x.row(i);
    for (std::size_t j = 0; j < spec.dim; ++j) {
      double v = s.scale[j] * r[j] + s.bias[j];
      if (s.noise_std > 0.0) v += s.noise_std * shift_rng.normal();
      r[j] = std::clamp(v, 0.0, 1.0);
    }
  }
  return b;
}

Network train_source(const Dataset& train, std::size_t n_classes, const Architecture& arch,
                     const TrainOptions& options) {
  if (train.size() == 0) throw ConfigError("training set is empty");
  if (options.batch_size < 2) throw ConfigError("train.batch_size must be at least 2");
  Rng rng(options.seed);
  Network net = make_mlp(train.x.cols(), arch.hidden, n_classes, rng);
  const BnMode batch_stats = BnMode::test_stats();

  // Momentum buffers, parallel to the parameter layout.
  std::vector<Tensor> vel_w, vel_b;
  for (const auto& layer : net.layers()) {
    if (const auto* lin = std::get_if<LinearLayer>(&layer)) {
      vel_w.push_back(Tensor(lin->weight.shape(), 0.0));
      vel_b.push_back(Tensor(lin->bias.shape(), 0.0));
    }
  }
  AffineParams vel_a = zeros_like(net.affine());

  auto sgd = [&](Tensor& param, Tensor& vel, const Tensor& grad) {
    for (std::size_t k = 0; k < param.size(); ++k) {
      vel[k] = options.momentum * vel[k] + grad[k];
      param[k] -= options.lr * vel[k];
    }
  };

  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const std::size_t d = train.x.cols();
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start + 2 <= order.size(); start += options.batch_size) {
      const std::size_t m = std::min(options.batch_size, order.size() - start);
      Tensor xb = Tensor::matrix(m, d);
      std::vector<int> yb(m);
      for (std::size_t r = 0; r < m; ++r) {
        const auto src = train.x.row(order[start + r]);
        std::copy(src.begin(), src.end(), xb.row(r).begin());
        yb[r] = train.y[order[start + r]];
      }
      auto affine = net.affine();
      const auto tr = detail::forward_trace(net, xb, batch_stats, affine);
      const auto logp = log_softmax(tr.logits());
      Tensor g = Tensor::matrix(m, n_classes);
      double loss = 0.0;
      for (std::size_t r = 0; r < m; ++r) {
        loss -= logp(r, static_cast<std::size_t>(yb[r]));
        for (std::size_t j = 0; j < n_classes; ++j) {
          g(r, j) = (std::exp(logp(r, j)) - (static_cast<int>(j) == yb[r] ? 1.0 : 0.0)) /
                    static_cast<double>(m);
        }
      }
      if (!std::isfinite(loss)) {
        throw NumericError("source training diverged in epoch " + std::to_string(epoch));
      }
      auto grads = detail::backward_trace(net, tr, affine, std::move(g), {false, true, true});
      std::size_t lin_k = 0;
      for (std::size_t l = 0; l < net.layers().size(); ++l) {
        if (std::holds_alternative<LinearLayer>(net.layers()[l])) {
          auto& lin = net.linear_at(l);
          sgd(lin.weight, vel_w[lin_k], grads.weight[lin_k]);
          sgd(lin.bias, vel_b[lin_k], grads.bias[lin_k]);
          ++lin_k;
        }
      }
      for (std::size_t k = 0; k < affine.gamma.size(); ++k) {
        sgd(affine.gamma[k], vel_a.gamma[k], grads.affine.gamma[k]);
        sgd(affine.beta[k], vel_a.beta[k], grads.affine.beta[k]);
      }
      net.set_affine(affine);
    }
  }
  // Source statistics from one pass over the whole training set.
  net.set_source_stats(forward(net, train.x, batch_stats).snapshot);
  return net;
}

double evaluate_accuracy(const Network& net, const Dataset& data, const BnMode& mode,
                         std::size_t batch_size) {
  if (data.size() == 0) throw DomainError("cannot evaluate accuracy on an empty dataset");
  std::size_t correct = 0, seen = 0;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t m = std::min(batch_size, data.size() - start);
    const auto part = data.slice(start, m);
    const auto pred = predict(net, part.x, mode);
    for (std::size_t i = 0; i < m; ++i) correct += pred[i] == part.y[i] ? 1 : 0;
    seen += m;
  }
  return static_cast<double>(correct) / static_cast<double>(seen);
}

}  // namespace ttalab
