#include "ttalab/diagnostics/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <sstream>

#include "ttalab/numeric/histogram.hpp"

namespace ttalab {

std::vector<LayerDrift> bn_drift_report(const BnSnapshot& benign, const BnSnapshot& attacked) {
  if (benign.size() != attacked.size()) {
    throw DimensionError("drift report: snapshots hold " + std::to_string(benign.size()) + " and " +
                         std::to_string(attacked.size()) + " BN layers");
  }
  std::vector<LayerDrift> report;
  for (std::size_t l = 0; l < benign.size(); ++l) {
    const auto& b = benign[l];
    const auto& a = attacked[l];
    if (b.mean.size() != a.mean.size() || b.var.size() != a.var.size()) {
      throw DimensionError("drift report: channel count differs at BN layer " + std::to_string(l));
    }
    auto hist = [](const Tensor& t) { return Histogram({t.values().begin(), t.values().end()}); };
    const Histogram bm = hist(b.mean), am = hist(a.mean);
    const Histogram bv = hist(b.var), av = hist(a.var);
    report.push_back({l, wasserstein1_normalized(bm, am), wasserstein1_normalized(bv, av)});
  }
  return report;
}

double max_drift(const std::vector<LayerDrift>& report) {
  double m = 0.0;
  for (const auto& r : report) m = std::max({m, r.mean_drift, r.var_drift});
  return m;
}

void write_drift_csv(std::ostream& out, const std::vector<LayerDrift>& report) {
  out << "layer_index,mean_drift,var_drift\n";
  for (const auto& r : report) {
    out << r.layer_index << ',' << format_double(r.mean_drift) << ',' << format_double(r.var_drift)
        << '\n';
  }
}

std::string drift_summary(const std::vector<LayerDrift>& report) {
  std::vector<LayerDrift> order = report;
  std::stable_sort(order.begin(), order.end(), [](const LayerDrift& a, const LayerDrift& b) {
    return std::max(a.mean_drift, a.var_drift) > std::max(b.mean_drift, b.var_drift);
  });
  std::ostringstream os;
  os << "BN layers with the largest drift:\n";
  char line[128];
  for (std::size_t k = 0; k < std::min<std::size_t>(3, order.size()); ++k) {
    std::snprintf(line, sizeof line, "  %zu. layer %zu  mean %.6f  var %.6f\n", k + 1,
                  order[k].layer_index, order[k].mean_drift, order[k].var_drift);
    os << line;
  }
  return os.str();
}

double analytic_bn_input_gradient(std::span<const double> x_tgt, const Tensor& batch,
                                  std::span<const double> w, std::size_t i, std::size_t j,
                                  double tau, std::span<const double> mu_s,
                                  std::span<const double> sigma2_s, double eps) {
  const std::size_t n = batch.rows(), d = batch.cols();
  if (x_tgt.size() != d || w.size() != d || mu_s.size() != d || sigma2_s.size() != d) {
    throw DimensionError("analytic_bn_input_gradient: vector lengths must equal batch width");
  }
  if (i >= n || j >= d) throw DimensionError("analytic_bn_input_gradient: index out of range");
  if (n < 2) throw BatchTooSmallError("analytic_bn_input_gradient needs at least 2 rows");
  if (tau == 1.0) return 0.0;

  double mean = 0.0;
  for (std::size_t r = 0; r < n; ++r) mean += batch(r, j);
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (std::size_t r = 0; r < n; ++r) var += (batch(r, j) - mean) * (batch(r, j) - mean);
  var /= static_cast<double>(n);

  const double mu_bar = tau * mu_s[j] + (1.0 - tau) * mean;
  const double s2 = tau * sigma2_s[j] + (1.0 - tau) * var + eps;
  if (!(s2 > 0.0)) throw DomainError("analytic_bn_input_gradient: smoothed variance is zero");
  const double s = std::sqrt(s2);
  // d/dx_ij of w_j (x_tgt,j - mu_bar_j) / s_j, where mu_bar_j and s_j both move with x_ij.
  return -(1.0 - tau) / static_cast<double>(n) * w[j] *
         (s2 + (x_tgt[j] - mu_bar) * (batch(i, j) - mean)) / (s2 * s);
}

bool GradcheckReport::passed() const {
  return std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.passed(); });
}

namespace {

constexpr double kStep = 1e-5;
constexpr double kTolerance = 1e-5;

// Random network with two BN layers and generic affine and source parameters.
// With two rows and pure batch statistics a BN output is ±1 up to O(eps), so
// its input derivative is O(eps); eps = 1e-2 keeps that derivative well above
// the roundoff of a 1e-5 central difference.
Network random_network(Rng& rng, std::size_t d, std::size_t k) {
  const std::size_t h1 = 3 + rng.index(4), h2 = 3 + rng.index(4);
  Network net = make_mlp(d, {h1, h2}, k, rng);
  for (std::size_t b = 0; b < net.bn_count(); ++b) net.bn(b).eps = 1e-2;
  auto affine = net.affine();
  for (auto& g : affine.gamma)
    for (double& v : g.values()) v = rng.uniform(0.5, 1.5);
  for (auto& b : affine.beta)
    for (double& v : b.values()) v = rng.uniform(-0.5, 0.5);
  net.set_affine(affine);
  auto stats = net.source_stats();
  for (auto& s : stats) {
    for (double& v : s.mean.values()) v = rng.uniform(-0.5, 0.5);
    for (double& v : s.var.values()) v = rng.uniform(0.5, 2.0);
  }
  net.set_source_stats(stats);
  return net;
}

Tensor random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double lo, double hi) {
  Tensor t = Tensor::matrix(rows, cols);
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

double inner(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

// Smallest |pre-activation| entering a ReLU; a central difference straddling
// a kink would not measure the derivative.
double kink_margin(const Network& net, const Tensor& x, const BnMode& mode) {
  Tensor h = x;
  double margin = INFINITY;
  for (const auto& layer : net.layers()) {
    if (const auto* lin = std::get_if<LinearLayer>(&layer)) {
      h = matmul(h, lin->weight);
      for (std::size_t r = 0; r < h.rows(); ++r)
        for (std::size_t c = 0; c < h.cols(); ++c) h(r, c) += lin->bias[c];
    } else if (const auto* bn = std::get_if<BatchNormLayer>(&layer)) {
      h = bn_forward(*bn, h, mode, net.bn_count()).out;
    } else {
      for (double& v : h.values()) {
        margin = std::min(margin, std::abs(v));
        v = std::max(v, 0.0);
      }
    }
  }
  return margin;
}

BnMode mode_for(std::size_t instance) {
  switch (instance % 4) {
    case 0: return BnMode::test_stats();
    case 1: return BnMode::smoothed(0.3, 0);
    case 2: return BnMode::smoothed(0.6, 1);
    default: return BnMode::smoothed(0.8, 0);
  }
}

// Relative to the largest finite-difference entry. A gradient that vanishes
// identically (e.g. the closed form at n = 2, tau = 0) has no scale, so below
// 1e-8 the absolute difference is reported instead.
double rel_error(const Tensor& analytic, const Tensor& numeric) {
  const double scale = max_abs(numeric);
  const double diff = max_abs_diff(analytic, numeric);
  return scale > 1e-8 ? diff / scale : diff;
}

struct Instance {
  Network net;
  Tensor x;
  Tensor upstream;
  BnMode mode;
};

Instance draw_instance(Rng& rng, std::size_t index) {
  static constexpr std::size_t sizes[] = {2, 4, 8};
  const std::size_t n = sizes[index % 3];
  const std::size_t d = 2 + rng.index(3), k = 2 + rng.index(3);
  const BnMode mode = mode_for(index);
  for (;;) {
    Instance inst{random_network(rng, d, k), random_matrix(rng, n, d, 0.0, 1.0),
                  random_matrix(rng, n, k, -1.0, 1.0), mode};
    if (kink_margin(inst.net, inst.x, mode) > 1e-3) return inst;
  }
}

double check_input(const Instance& in) {
  const Tensor analytic = backward_input(in.net, in.x, in.mode, in.upstream);
  Tensor numeric(in.x.shape(), 0.0);
  Tensor xp = in.x;
  for (std::size_t e = 0; e < xp.size(); ++e) {
    const double orig = xp[e];
    xp[e] = orig + kStep;
    const double fp = inner(in.upstream, forward(in.net, xp, in.mode).logits);
    xp[e] = orig - kStep;
    const double fm = inner(in.upstream, forward(in.net, xp, in.mode).logits);
    xp[e] = orig;
    numeric[e] = (fp - fm) / (2.0 * kStep);
  }
  return rel_error(analytic, numeric);
}

double check_affine(const Instance& in) {
  const AffineParams analytic = backward_theta_a(in.net, in.x, in.mode, in.upstream);
  Network net = in.net;
  const AffineParams base = net.affine();
  std::vector<double> a, num;
  auto probe = [&](bool is_gamma, std::size_t layer, std::size_t c) {
    AffineParams p = base;
    auto& t = is_gamma ? p.gamma[layer] : p.beta[layer];
    const double orig = t[c];
    t[c] = orig + kStep;
    net.set_affine(p);
    const double fp = inner(in.upstream, forward(net, in.x, in.mode).logits);
    t[c] = orig - kStep;
    net.set_affine(p);
    const double fm = inner(in.upstream, forward(net, in.x, in.mode).logits);
    return (fp - fm) / (2.0 * kStep);
  };
  for (std::size_t l = 0; l < base.gamma.size(); ++l) {
    for (std::size_t c = 0; c < base.gamma[l].size(); ++c) {
      a.push_back(analytic.gamma[l][c]);
      num.push_back(probe(true, l, c));
      a.push_back(analytic.beta[l][c]);
      num.push_back(probe(false, l, c));
    }
  }
  return rel_error(Tensor({a.size()}, a), Tensor({num.size()}, num));
}

double min_column_spread(const Tensor& x) {
  double out = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < x.cols(); ++j) {
    double lo = x(0, j), hi = x(0, j);
    for (std::size_t r = 1; r < x.rows(); ++r) {
      lo = std::min(lo, x(r, j));
      hi = std::max(hi, x(r, j));
    }
    out = std::min(out, hi - lo);
  }
  return out;
}

// f(x_tgt) = Σ_j w_j (x_tgt,j - μ̄_j) / σ̃_j + b evaluated directly.
double single_layer_prediction(std::span<const double> x_tgt, const Tensor& batch,
                               std::span<const double> w, double tau,
                               std::span<const double> mu_s, std::span<const double> sigma2_s) {
  const std::size_t n = batch.rows();
  double f = 0.0;
  for (std::size_t j = 0; j < batch.cols(); ++j) {
    double mean = 0.0, var = 0.0;
    for (std::size_t r = 0; r < n; ++r) mean += batch(r, j);
    mean /= static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r) var += (batch(r, j) - mean) * (batch(r, j) - mean);
    var /= static_cast<double>(n);
    const double mu_bar = tau * mu_s[j] + (1.0 - tau) * mean;
    const double s2 = tau * sigma2_s[j] + (1.0 - tau) * var;
    f += w[j] * (x_tgt[j] - mu_bar) / std::sqrt(s2);
  }
  return f;
}

double check_closed_form(Rng& rng, std::size_t index, double tau) {
  static constexpr std::size_t sizes[] = {2, 4, 8};
  const std::size_t n = sizes[index % 3];
  const std::size_t d = 2 + rng.index(4);
  // A near-constant column makes the central difference pure roundoff
  // (about 1e-16 / var^(1/2) / kStep), so such batches are redrawn.
  Tensor batch = random_matrix(rng, n, d, 0.0, 1.0);
  while (min_column_spread(batch) < 1e-2) batch = random_matrix(rng, n, d, 0.0, 1.0);
  const Tensor w = random_matrix(rng, 1, d, -1.0, 1.0);
  const Tensor mu_s = random_matrix(rng, 1, d, 0.3, 0.7);
  const Tensor sigma2_s = random_matrix(rng, 1, d, 0.05, 0.2);
  const auto x_tgt = batch.row(0);
  const std::size_t rows = n - 1;  // every non-target row
  Tensor analytic = Tensor::matrix(rows, d), numeric = Tensor::matrix(rows, d);
  Tensor xp = batch;
  for (std::size_t i = 1; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      analytic(i - 1, j) = analytic_bn_input_gradient(x_tgt, batch, w.values(), i, j, tau,
                                                      mu_s.values(), sigma2_s.values());
      const double orig = xp(i, j);
      xp(i, j) = orig + kStep;
      const double fp =
          single_layer_prediction(x_tgt, xp, w.values(), tau, mu_s.values(), sigma2_s.values());
      xp(i, j) = orig - kStep;
      const double fm =
          single_layer_prediction(x_tgt, xp, w.values(), tau, mu_s.values(), sigma2_s.values());
      xp(i, j) = orig;
      numeric(i - 1, j) = (fp - fm) / (2.0 * kStep);
    }
  }
  return rel_error(analytic, numeric);
}

}  // namespace

GradcheckReport run_gradcheck(std::uint64_t seed, int instances) {
  if (instances < 1) throw ConfigError("gradcheck needs at least one instance");
  GradcheckReport report;
  GradcheckEntry input{"backward_input", instances, 0.0, kTolerance};
  GradcheckEntry affine{"backward_theta_a", instances, 0.0, kTolerance};
  Rng rng(Rng::derive(seed, 0));
  for (int t = 0; t < instances; ++t) {
    const auto inst = draw_instance(rng, static_cast<std::size_t>(t));
    input.max_rel_error = std::max(input.max_rel_error, check_input(inst));
    affine.max_rel_error = std::max(affine.max_rel_error, check_affine(inst));
  }
  report.entries.push_back(input);
  report.entries.push_back(affine);
  std::uint64_t stream = 1;
  for (double tau : {0.0, 0.3, 0.7}) {
    char name[64];
    std::snprintf(name, sizeof name, "analytic_bn_input_gradient tau=%.1f", tau);
    GradcheckEntry e{name, instances, 0.0, kTolerance};
    Rng r(Rng::derive(seed, stream++));
    for (int t = 0; t < instances; ++t) {
      e.max_rel_error = std::max(e.max_rel_error, check_closed_form(r, static_cast<std::size_t>(t), tau));
    }
    report.entries.push_back(e);
  }
  return report;
}

void print_gradcheck(std::ostream& out, const GradcheckReport& report) {
  char line[160];
  for (const auto& e : report.entries) {
    std::snprintf(line, sizeof line, "%-40s instances=%-4d max_rel_error=%.3e tol=%.0e %s\n",
                  e.name.c_str(), e.instances, e.max_rel_error, e.tolerance,
                  e.passed() ? "ok" : "FAILED");
    out << line;
  }
}

}  // namespace ttalab
