#include "unig/unig.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <mutex>
#include <numeric>

#include "unig/error.hpp"
#include "unig/rng.hpp"

namespace unig {
namespace {

void warn_degenerate_once() {
  static std::once_flag once;
  std::call_once(once, [] {
    std::cerr << "unig: warning: batch of one without cascading; serving "
                 "vanilla output\n";
  });
}

// out = J v with J = diag(p) - p p^T.
void softmax_jacobian_apply(std::span<const double> p, std::span<const double> v,
                            std::span<double> out) {
  const double pv = dot(p, v);
  for (std::size_t k = 0; k < p.size(); ++k) out[k] = p[k] * (v[k] - pv);
}

}  // namespace

void UniGConfig::validate() const {
  if (!(delta >= 0.0) || !std::isfinite(delta)) {
    throw InputDomainError("unig: delta must be finite and >= 0");
  }
  if (iterations < 1) throw InputDomainError("unig: iterations must be >= 1");
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) {
    throw InputDomainError("unig: alpha must be finite and >= 0");
  }
  if (!(eps_norm > 0.0)) throw InputDomainError("unig: eps_norm must be > 0");
}

Tensor init_A(std::size_t b, std::size_t d, double delta, std::uint64_t seed) {
  if (b == 0 || d == 0) throw InputDomainError("init_A: b and d must be >= 1");
  RngStream rng(derive_seed(seed, {0xA1A1}));
  Tensor A({b, d});
  for (double& a : A.data()) a = rng.normal(1.0, 0.5);
  clip_A(A, delta);
  return A;
}

void clip_A(Tensor& A, double delta) {
  // Nudge the bounds inward until |bound - 1| <= delta holds in floating
  // point, not just in exact arithmetic.
  double lo = 1.0 - delta, hi = 1.0 + delta;
  while (1.0 - lo > delta) lo = std::nextafter(lo, 1.0);
  while (hi - 1.0 > delta) hi = std::nextafter(hi, 1.0);
  for (double& a : A.data()) a = std::clamp(a, lo, hi);
}

FeatureGradients feature_gradients(const ClassifierModel& model,
                                   const Tensor& features, const Tensor& A) {
  if (features.shape() != A.shape() || features.rank() != 2 ||
      features.dim(1) != model.feature_dim()) {
    throw InputDomainError("feature_gradients: features " +
                           features.shape_string() + " and A " +
                           A.shape_string() + " must both be [b x d]");
  }
  const std::size_t b = features.rows();
  const std::size_t d = model.feature_dim();
  const std::size_t classes = model.classes();
  const auto& W = model.head().weights;
  const auto bias = model.head_bias();

  FeatureGradients fg{Tensor({b, d}),
                      {features, Tensor({b, classes}), Tensor({b, classes}),
                       Tensor({b, d})}};
  std::vector<double> z(classes), z0(classes), fhat(d);
  for (std::size_t i = 0; i < b; ++i) {
    auto f = features.row(i);
    auto a = A.row(i);
    for (std::size_t j = 0; j < d; ++j) fhat[j] = a[j] * f[j];
    for (std::size_t k = 0; k < classes; ++k) {
      const double* w = W.data() + k * d;
      double s = bias[k], s0 = bias[k];
      for (std::size_t j = 0; j < d; ++j) {
        s += w[j] * fhat[j];
        s0 += w[j] * f[j];
      }
      z[k] = s;
      z0[k] = s0;
    }
    softmax_inplace(z);
    auto p = fg.cache.probs.row(i);
    std::copy(z.begin(), z.end(), p.begin());
    auto c = fg.cache.target.row(i);
    c[argmax(z0)] = 1.0;
    auto g = fg.cache.g.row(i);
    for (std::size_t k = 0; k < classes; ++k) {
      const double r = p[k] - c[k];
      const double* w = W.data() + k * d;
      for (std::size_t j = 0; j < d; ++j) g[j] += w[j] * r;
    }
    auto gh = fg.g_hat.row(i);
    for (std::size_t j = 0; j < d; ++j) gh[j] = a[j] * g[j];
  }
  return fg;
}

double unification_loss(const Tensor& g_hat, double eps_norm) {
  if (g_hat.rows() < 2) return 0.0;
  const Tensor norm = minmax_normalize(g_hat, eps_norm).values;
  double loss = 0.0;
  for (std::size_t i = 0; i + 1 < norm.rows(); ++i) {
    auto a = norm.row(i);
    auto b = norm.row(i + 1);
    for (std::size_t j = 0; j < a.size(); ++j) {
      const double diff = a[j] - b[j];
      loss += diff * diff;
    }
  }
  return loss;
}

Tensor grad_loss_wrt_A(const ClassifierModel& model, const Tensor& A,
                       const FeatureGradients& fg, double eps_norm,
                       bool frozen_softmax) {
  const std::size_t b = A.rows();
  const std::size_t d = A.dim(1);
  const std::size_t classes = model.classes();
  Tensor grad({b, d});
  if (b < 2) return grad;

  const MinmaxResult mm = minmax_normalize(fg.g_hat, eps_norm);
  const auto& W = model.head().weights;
  std::vector<double> up(d), u(d), v(d), wv(classes), jwv(classes);

  for (std::size_t i = 0; i < b; ++i) {
    // dL/d(normalized row i): the row appears in pairs (i-1, i) and (i, i+1).
    auto gi = mm.values.row(i);
    std::fill(up.begin(), up.end(), 0.0);
    if (i + 1 < b) {
      auto next = mm.values.row(i + 1);
      for (std::size_t j = 0; j < d; ++j) up[j] += 2.0 * (gi[j] - next[j]);
    }
    if (i > 0) {
      auto prev = mm.values.row(i - 1);
      for (std::size_t j = 0; j < d; ++j) up[j] += 2.0 * (gi[j] - prev[j]);
    }

    // Back through the min-max normalization with fixed argmin/argmax.
    auto gh = fg.g_hat.row(i);
    const std::size_t lo = mm.argmin[i];
    const std::size_t hi = mm.argmax[i];
    const double denom = gh[hi] - gh[lo] + eps_norm;
    double sum_up = 0.0, sum_up_r = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      sum_up += up[j];
      sum_up_r += up[j] * (gh[j] - gh[lo]);
    }
    for (std::size_t j = 0; j < d; ++j) u[j] = up[j] / denom;
    u[lo] += -sum_up / denom + sum_up_r / (denom * denom);
    u[hi] += -sum_up_r / (denom * denom);

    // Back through g_hat = A o W^T (softmax(W (A o f) + b) - c).
    auto a = A.row(i);
    auto g = fg.cache.g.row(i);
    auto f = fg.cache.features.row(i);
    auto out = grad.row(i);
    for (std::size_t j = 0; j < d; ++j) out[j] = g[j] * u[j];
    if (frozen_softmax) continue;
    for (std::size_t j = 0; j < d; ++j) v[j] = a[j] * u[j];
    for (std::size_t k = 0; k < classes; ++k) {
      wv[k] = dot(std::span<const double>(W.data() + k * d, d), v);
    }
    softmax_jacobian_apply(fg.cache.probs.row(i), wv, jwv);
    for (std::size_t j = 0; j < d; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < classes; ++k) s += W[k * d + j] * jwv[k];
      out[j] += f[j] * s;
    }
  }
  return grad;
}

UniGOutput unig_forward_features(const ClassifierModel& model,
                                 const Tensor& features, const UniGConfig& cfg) {
  cfg.validate();
  const std::size_t b = features.rows();
  const std::size_t d = model.feature_dim();
  UniGOutput out;
  if (b < 2) {
    warn_degenerate_once();
    out.logits = model.head_logits(features);
    out.probs = softmax(out.logits);
    out.state.A = Tensor({b, d}, 1.0);
    out.state.trace.assign(static_cast<std::size_t>(cfg.iterations) + 1, 0.0);
    out.state.degenerate = true;
    return out;
  }

  Tensor A = init_A(b, d, cfg.delta, cfg.seed);
  for (int it = 0; it < cfg.iterations; ++it) {
    const FeatureGradients fg = feature_gradients(model, features, A);
    out.state.trace.push_back(unification_loss(fg.g_hat, cfg.eps_norm));
    if (cfg.alpha == 0.0) continue;
    const Tensor grad =
        grad_loss_wrt_A(model, A, fg, cfg.eps_norm, cfg.frozen_softmax);
    for (std::size_t k = 0; k < A.size(); ++k) {
      const double next = A[k] - cfg.alpha * grad[k];
      if (std::isfinite(next)) A[k] = next;
    }
    clip_A(A, cfg.delta);
  }
  const FeatureGradients final_fg = feature_gradients(model, features, A);
  out.state.trace.push_back(unification_loss(final_fg.g_hat, cfg.eps_norm));

  Tensor fhat = features;
  double drift = 0.0;
  for (std::size_t k = 0; k < fhat.size(); ++k) {
    fhat[k] = A[k] * features[k];
    drift += (fhat[k] - features[k]) * (fhat[k] - features[k]);
  }
  out.logits = model.head_logits(fhat);
  out.probs = final_fg.cache.probs;
  out.state.A = std::move(A);
  out.state.forward_drift = std::sqrt(drift);
  return out;
}

UniGOutput unig_forward(const ClassifierModel& model, const Tensor& x,
                        const UniGConfig& cfg) {
  return unig_forward_features(model, model.forward_features(x), cfg);
}

std::vector<std::size_t> reservoir_indices(std::size_t available,
                                           const UniGConfig& cfg) {
  if (cfg.cascade_k == 0) {
    throw ConfigError("cascade_single_sample: cascade_k must be >= 1");
  }
  if (available == 0) throw ConfigError("cascade_single_sample: empty reservoir");
  if (available < cfg.cascade_k) {
    throw ConfigError("cascade_single_sample: reservoir holds " +
                      std::to_string(available) + " images, need " +
                      std::to_string(cfg.cascade_k));
  }
  // Partial Fisher-Yates: the first k entries are a uniform draw without
  // replacement.
  RngStream rng(derive_seed(cfg.seed, {0xCA5C}));
  std::vector<std::size_t> idx(available);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = 0; i < cfg.cascade_k; ++i) {
    std::swap(idx[i], idx[i + rng.choice(idx.size() - i)]);
  }
  idx.resize(cfg.cascade_k);
  return idx;
}

Tensor cascade_single_sample_features(const ClassifierModel& model,
                                      const Tensor& f_single,
                                      const Tensor& reservoir_features,
                                      const UniGConfig& cfg) {
  if (f_single.rows() != 1) {
    throw InputDomainError("cascade_single_sample expects exactly one image");
  }
  const auto idx = reservoir_indices(reservoir_features.rows(), cfg);
  const Tensor batch =
      Tensor::concat_rows(f_single, reservoir_features.gather_rows(idx));
  return unig_forward_features(model, batch, cfg).probs.slice_rows(0, 1);
}

Tensor cascade_single_sample(const ClassifierModel& model, const Tensor& x_single,
                             const Dataset& reservoir, const UniGConfig& cfg) {
  Tensor x = x_single;
  if (x.rank() == 3) x = x.reshaped({1, x.dim(0), x.dim(1), x.dim(2)});
  if (x.rows() != 1) {
    throw InputDomainError("cascade_single_sample expects exactly one image");
  }
  const auto idx = reservoir_indices(reservoir.size(), cfg);
  const Tensor batch = Tensor::concat_rows(x, reservoir.images.gather_rows(idx));
  return unig_forward(model, batch, cfg).probs.slice_rows(0, 1);
}

}  // namespace unig
