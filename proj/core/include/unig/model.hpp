#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "unig/dataset.hpp"
#include "unig/tensor.hpp"

namespace unig {

enum class LayerKind : std::uint8_t { kConv2d = 1, kDense = 2 };
enum class Activation : std::uint8_t { kIdentity = 0, kRelu = 1 };

struct InputShape {
  std::size_t channels = 1;
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t size() const { return channels * height * width; }
  friend bool operator==(const InputShape&, const InputShape&) = default;
};

/// One affine layer plus activation. Convolution weights are laid out
/// [out, in, kernel, kernel]; dense weights [out, in].
struct Layer {
  LayerKind kind = LayerKind::kDense;
  Activation activation = Activation::kIdentity;
  std::size_t out = 0;
  std::size_t in = 0;
  std::size_t kernel = 0;
  std::size_t stride = 1;
  std::size_t pad = 0;
  std::vector<double> weights;
  std::vector<double> bias;

  std::size_t weight_count() const {
    return kind == LayerKind::kConv2d ? out * in * kernel * kernel : out * in;
  }
  friend bool operator==(const Layer&, const Layer&) = default;
};

/// Feature extractor followed by a linear head. Immutable after construction.
class ClassifierModel {
 public:
  ClassifierModel(InputShape input, std::vector<Layer> extractor, Layer head);

  const InputShape& input_shape() const { return input_; }
  std::size_t feature_dim() const { return head_.in; }
  std::size_t classes() const { return head_.out; }
  const std::vector<Layer>& extractor() const { return extractor_; }
  const Layer& head() const { return head_; }

  // [classes x d] view of the head weights.
  Tensor head_weights() const;
  std::span<const double> head_bias() const { return head_.bias; }

  // x: [b x c x h x w] -> [b x d].
  Tensor forward_features(const Tensor& x) const;
  // features: [b x d] -> [b x classes].
  Tensor head_logits(const Tensor& features) const;
  Tensor forward_logits(const Tensor& x) const;
  Tensor forward_probs(const Tensor& x) const;

  std::size_t parameter_count() const;

  friend bool operator==(const ClassifierModel&,
                         const ClassifierModel&) = default;

 private:
  void check_input(const Tensor& x) const;

  InputShape input_;
  std::vector<Layer> extractor_;
  Layer head_;
};

struct ArchConfig {
  // Output channels of each 3x3 stride-2 ReLU convolution.
  std::vector<std::size_t> conv_channels{8, 16};
  std::size_t kernel = 3;
  std::size_t stride = 2;
  // Width of the dense ReLU feature layer; 0 means the extractor output is
  // used directly (no dense layer).
  std::size_t features = 64;
  double target_accuracy = 0.97;
};

struct TrainConfig {
  std::uint64_t seed = 1;
  std::size_t epochs = 15;
  double learning_rate = 0.05;
  double momentum = 0.9;
  std::size_t batch_size = 32;
  double holdout_fraction = 0.2;
};

struct TrainResult {
  ClassifierModel model;
  double heldout_accuracy = 0.0;
  double train_accuracy = 0.0;
};

// Fan-in scaled uniform initialization, fully determined by `seed`.
ClassifierModel init_classifier(const InputShape& input, std::size_t classes,
                                const ArchConfig& arch, std::uint64_t seed);

// Mini-batch SGD with momentum on cross-entropy against the true labels.
// Throws TrainingFailure if the held-out accuracy misses arch.target_accuracy.
TrainResult train_classifier(const Dataset& data, const ArchConfig& arch,
                             const TrainConfig& cfg);

/// Per-layer parameter gradients; index i < extractor size is extractor layer
/// i, the last entry is the head.
struct ModelGradients {
  std::vector<std::vector<double>> weights;
  std::vector<std::vector<double>> bias;
};

// Mean cross-entropy of the model on (x, labels) and its analytic gradient.
double cross_entropy_with_gradients(const ClassifierModel& model,
                                    const Tensor& x,
                                    std::span<const int> labels,
                                    ModelGradients* grads);

double accuracy(const ClassifierModel& model, const Dataset& data,
                std::size_t batch_size = 256);

// UNGW v1 model file; little-endian. Throws IoError / FormatError.
void save_model(const ClassifierModel& model, const std::filesystem::path& path);
ClassifierModel load_model(const std::filesystem::path& path);
std::vector<std::uint8_t> serialize_model(const ClassifierModel& model);
ClassifierModel deserialize_model(std::span<const std::uint8_t> bytes);

}  // namespace unig
