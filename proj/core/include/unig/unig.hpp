#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "unig/dataset.hpp"
#include "unig/model.hpp"
#include "unig/numerics.hpp"
#include "unig/tensor.hpp"

namespace unig {

/// Hyperparameters of the gradient-unifying Hadamard module.
struct UniGConfig {
  // Element-wise clip radius: |A_ij - 1| <= delta.
  double delta = 0.5;
  // Gradient-descent iterations per forward call.
  int iterations = 1;
  // Gradient-descent learning rate.
  double alpha = 10.0;
  double eps_norm = kDefaultMinmaxEps;
  // Reservoir images appended to a lone query (single-sample mode).
  std::size_t cascade_k = 0;
  std::uint64_t seed = 0;
  // Comparison variant: treat the softmax inside g as constant w.r.t. A.
  bool frozen_softmax = false;

  void validate() const;
};

struct UniGState {
  Tensor A;  // [b x d]
  // Unification loss before each update, followed by the loss at the final A
  // (iterations + 1 entries).
  std::vector<double> trace;
  // ||A o f - f||_2 over the whole batch.
  double forward_drift = 0.0;
  // True when the batch was too small to unify and vanilla output was served.
  bool degenerate = false;
};

struct UniGOutput {
  Tensor probs;   // [b x classes]
  Tensor logits;  // [b x classes], head applied to A o f
  UniGState state;
};

// Draws A ~ N(1, 0.5^2) i.i.d. and clips to [1 - delta, 1 + delta].
Tensor init_A(std::size_t b, std::size_t d, double delta, std::uint64_t seed);
void clip_A(Tensor& A, double delta);

struct FeatureGradCache {
  Tensor features;  // f: [b x d]
  Tensor probs;     // softmax(W (A o f) + b)
  Tensor target;    // one-hot of argmax(W f + b)
  Tensor g;         // W^T (probs - target)
};

struct FeatureGradients {
  Tensor g_hat;  // A o g, the cross-entropy gradient w.r.t. f
  FeatureGradCache cache;
};

FeatureGradients feature_gradients(const ClassifierModel& model,
                                   const Tensor& features, const Tensor& A);

// Sum over consecutive rows of ||norm(g_hat_i) - norm(g_hat_{i+1})||^2 with
// per-row min-max normalization. Zero for fewer than two rows.
double unification_loss(const Tensor& g_hat, double eps_norm);

// Exact derivative of unification_loss w.r.t. A. The one-hot targets and the
// min/max positions of each row are held fixed; the softmax Jacobian is
// included unless `frozen_softmax` is set.
Tensor grad_loss_wrt_A(const ClassifierModel& model, const Tensor& A,
                       const FeatureGradients& fg, double eps_norm,
                       bool frozen_softmax = false);

// Defended forward pass on a batch of images [b x c x h x w].
UniGOutput unig_forward(const ClassifierModel& model, const Tensor& x,
                        const UniGConfig& cfg);
// Same, starting from extractor features [b x d].
UniGOutput unig_forward_features(const ClassifierModel& model,
                                 const Tensor& features, const UniGConfig& cfg);

// Reservoir rows used to pad a lone query: cfg.cascade_k distinct indices in
// [0, available) drawn from cfg.seed. Throws ConfigError if too few.
std::vector<std::size_t> reservoir_indices(std::size_t available,
                                           const UniGConfig& cfg);

// Single-sample mode: prepends `x_single` to cfg.cascade_k reservoir images
// chosen by a draw seeded from cfg.seed, runs the defense and returns the
// [1 x classes] probabilities of the lone image.
Tensor cascade_single_sample(const ClassifierModel& model, const Tensor& x_single,
                             const Dataset& reservoir, const UniGConfig& cfg);
// Same with precomputed features: f_single [1 x d], reservoir [n x d].
Tensor cascade_single_sample_features(const ClassifierModel& model,
                                      const Tensor& f_single,
                                      const Tensor& reservoir_features,
                                      const UniGConfig& cfg);

}  // namespace unig
