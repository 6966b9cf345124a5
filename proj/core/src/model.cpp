#include "unig/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "unig/error.hpp"
#include "unig/numerics.hpp"
#include "unig/rng.hpp"

namespace unig {
namespace {

struct Geometry {
  std::size_t c = 0, h = 1, w = 1;
  std::size_t size() const { return c * h * w; }
};

Geometry output_geometry(const Layer& layer, const Geometry& in) {
  if (layer.kind == LayerKind::kDense) return {layer.out, 1, 1};
  const std::size_t span_h = in.h + 2 * layer.pad;
  const std::size_t span_w = in.w + 2 * layer.pad;
  if (span_h < layer.kernel || span_w < layer.kernel) {
    throw InputDomainError("convolution kernel larger than padded input");
  }
  return {layer.out, (span_h - layer.kernel) / layer.stride + 1,
          (span_w - layer.kernel) / layer.stride + 1};
}

// Pre-activation output of one layer for a single sample.
void affine_forward(const Layer& layer, const Geometry& in,
                    std::span<const double> x, std::span<double> pre) {
  if (layer.kind == LayerKind::kDense) {
    for (std::size_t o = 0; o < layer.out; ++o) {
      const double* w = layer.weights.data() + o * layer.in;
      double s = layer.bias[o];
      for (std::size_t i = 0; i < layer.in; ++i) s += w[i] * x[i];
      pre[o] = s;
    }
    return;
  }
  const Geometry out = output_geometry(layer, in);
  const std::size_t k = layer.kernel;
  for (std::size_t o = 0; o < out.c; ++o) {
    for (std::size_t oy = 0; oy < out.h; ++oy) {
      for (std::size_t ox = 0; ox < out.w; ++ox) {
        double s = layer.bias[o];
        for (std::size_t ci = 0; ci < in.c; ++ci) {
          const double* w = layer.weights.data() + (o * in.c + ci) * k * k;
          const double* plane = x.data() + ci * in.h * in.w;
          for (std::size_t ky = 0; ky < k; ++ky) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * layer.stride + ky) -
                                      static_cast<std::ptrdiff_t>(layer.pad);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(in.h)) continue;
            for (std::size_t kx = 0; kx < k; ++kx) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * layer.stride + kx) -
                                        static_cast<std::ptrdiff_t>(layer.pad);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(in.w)) continue;
              s += w[ky * k + kx] * plane[iy * in.w + ix];
            }
          }
        }
        pre[(o * out.h + oy) * out.w + ox] = s;
      }
    }
  }
}

// Given dL/dpre, accumulates dL/dW, dL/db and writes dL/dx (if non-empty).
void affine_backward(const Layer& layer, const Geometry& in,
                     std::span<const double> x, std::span<const double> dpre,
                     std::span<double> dw, std::span<double> db,
                     std::span<double> dx) {
  std::fill(dx.begin(), dx.end(), 0.0);
  if (layer.kind == LayerKind::kDense) {
    for (std::size_t o = 0; o < layer.out; ++o) {
      const double g = dpre[o];
      db[o] += g;
      if (g == 0.0) continue;
      const double* w = layer.weights.data() + o * layer.in;
      double* gw = dw.data() + o * layer.in;
      for (std::size_t i = 0; i < layer.in; ++i) {
        gw[i] += g * x[i];
        if (!dx.empty()) dx[i] += g * w[i];
      }
    }
    return;
  }
  const Geometry out = output_geometry(layer, in);
  const std::size_t k = layer.kernel;
  for (std::size_t o = 0; o < out.c; ++o) {
    for (std::size_t oy = 0; oy < out.h; ++oy) {
      for (std::size_t ox = 0; ox < out.w; ++ox) {
        const double g = dpre[(o * out.h + oy) * out.w + ox];
        db[o] += g;
        if (g == 0.0) continue;
        for (std::size_t ci = 0; ci < in.c; ++ci) {
          const std::size_t wbase = (o * in.c + ci) * k * k;
          const std::size_t pbase = ci * in.h * in.w;
          for (std::size_t ky = 0; ky < k; ++ky) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * layer.stride + ky) -
                                      static_cast<std::ptrdiff_t>(layer.pad);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(in.h)) continue;
            for (std::size_t kx = 0; kx < k; ++kx) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * layer.stride + kx) -
                                        static_cast<std::ptrdiff_t>(layer.pad);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(in.w)) continue;
              const std::size_t p = pbase + static_cast<std::size_t>(iy) * in.w +
                                    static_cast<std::size_t>(ix);
              dw[wbase + ky * k + kx] += g * x[p];
              if (!dx.empty()) dx[p] += g * layer.weights[wbase + ky * k + kx];
            }
          }
        }
      }
    }
  }
}

void activate(Activation act, std::span<double> v) {
  if (act == Activation::kRelu) {
    for (double& e : v) e = e > 0.0 ? e : 0.0;
  }
}

// Activations of every layer for one sample: acts[0] is the input,
// acts[i + 1] the post-activation output of layer i.
struct SampleTrace {
  std::vector<std::vector<double>> acts;
  std::vector<Geometry> geoms;
};

SampleTrace trace_sample(const InputShape& input, std::span<const Layer> layers,
                         std::span<const double> x) {
  SampleTrace t;
  t.acts.emplace_back(x.begin(), x.end());
  t.geoms.push_back({input.channels, input.height, input.width});
  for (const Layer& layer : layers) {
    const Geometry out = output_geometry(layer, t.geoms.back());
    std::vector<double> pre(out.size());
    affine_forward(layer, t.geoms.back(), t.acts.back(), pre);
    activate(layer.activation, pre);
    t.acts.push_back(std::move(pre));
    t.geoms.push_back(out);
  }
  return t;
}

void validate_layer(const Layer& layer) {
  if (layer.out == 0 || layer.in == 0) {
    throw InputDomainError("layer with zero width");
  }
  if (layer.kind == LayerKind::kConv2d && (layer.kernel == 0 || layer.stride == 0)) {
    throw InputDomainError("convolution needs kernel and stride >= 1");
  }
  if (layer.weights.size() != layer.weight_count() || layer.bias.size() != layer.out) {
    throw InputDomainError("layer parameter count does not match its shape");
  }
}

double fan_in_bound(const Layer& layer) {
  const double fan_in = static_cast<double>(
      layer.kind == LayerKind::kConv2d ? layer.in * layer.kernel * layer.kernel
                                       : layer.in);
  return layer.activation == Activation::kRelu ? std::sqrt(6.0 / fan_in)
                                               : 1.0 / std::sqrt(fan_in);
}

void round_to_float(Layer& layer) {
  for (double& w : layer.weights) w = static_cast<double>(static_cast<float>(w));
  for (double& b : layer.bias) b = static_cast<double>(static_cast<float>(b));
}

}  // namespace

ClassifierModel::ClassifierModel(InputShape input, std::vector<Layer> extractor,
                                 Layer head)
    : input_(input), extractor_(std::move(extractor)), head_(std::move(head)) {
  if (input_.size() == 0) throw InputDomainError("empty model input shape");
  Geometry g{input_.channels, input_.height, input_.width};
  for (const Layer& layer : extractor_) {
    validate_layer(layer);
    const std::size_t expect_in =
        layer.kind == LayerKind::kConv2d ? g.c : g.size();
    if (layer.in != expect_in) {
      throw InputDomainError("extractor layer input width " +
                             std::to_string(layer.in) + " != " +
                             std::to_string(expect_in));
    }
    g = output_geometry(layer, g);
  }
  validate_layer(head_);
  if (head_.kind != LayerKind::kDense || head_.activation != Activation::kIdentity) {
    throw InputDomainError("head must be a linear dense layer");
  }
  if (head_.in != g.size()) {
    throw InputDomainError("head input width does not match feature dimension");
  }
}

Tensor ClassifierModel::head_weights() const {
  return Tensor({head_.out, head_.in}, head_.weights);
}

void ClassifierModel::check_input(const Tensor& x) const {
  if (x.rank() != 4 || x.dim(1) != input_.channels || x.dim(2) != input_.height ||
      x.dim(3) != input_.width) {
    throw InputDomainError("input shape " + x.shape_string() +
                           " does not match model input [b x " +
                           std::to_string(input_.channels) + "x" +
                           std::to_string(input_.height) + "x" +
                           std::to_string(input_.width) + "]");
  }
}

Tensor ClassifierModel::forward_features(const Tensor& x) const {
  check_input(x);
  const std::size_t b = x.rows();
  Tensor out({b, feature_dim()});
  std::vector<double> cur, next;
  for (std::size_t n = 0; n < b; ++n) {
    auto in = x.row(n);
    cur.assign(in.begin(), in.end());
    Geometry g{input_.channels, input_.height, input_.width};
    for (const Layer& layer : extractor_) {
      const Geometry og = output_geometry(layer, g);
      next.resize(og.size());
      affine_forward(layer, g, cur, next);
      activate(layer.activation, next);
      std::swap(cur, next);
      g = og;
    }
    std::copy(cur.begin(), cur.end(), out.row(n).begin());
  }
  return out;
}

Tensor ClassifierModel::head_logits(const Tensor& features) const {
  if (features.rank() != 2 || features.dim(1) != feature_dim()) {
    throw InputDomainError("features shape " + features.shape_string() +
                           " does not match head input " +
                           std::to_string(feature_dim()));
  }
  Tensor out({features.rows(), classes()});
  for (std::size_t n = 0; n < features.rows(); ++n) {
    affine_forward(head_, {feature_dim(), 1, 1}, features.row(n), out.row(n));
  }
  return out;
}

Tensor ClassifierModel::forward_logits(const Tensor& x) const {
  return head_logits(forward_features(x));
}

Tensor ClassifierModel::forward_probs(const Tensor& x) const {
  return softmax(forward_logits(x));
}

std::size_t ClassifierModel::parameter_count() const {
  std::size_t n = head_.weights.size() + head_.bias.size();
  for (const Layer& l : extractor_) n += l.weights.size() + l.bias.size();
  return n;
}

ClassifierModel init_classifier(const InputShape& input, std::size_t classes,
                                const ArchConfig& arch, std::uint64_t seed) {
  if (classes < 1) throw InputDomainError("classifier needs at least one class");
  RngStream rng(derive_seed(seed, {0x1A17}));
  std::vector<Layer> layers;
  Geometry g{input.channels, input.height, input.width};
  auto fill = [&rng](Layer& l) {
    const double bound = fan_in_bound(l);
    l.weights.resize(l.weight_count());
    for (double& w : l.weights) w = rng.uniform(-bound, bound);
    l.bias.assign(l.out, 0.0);
    round_to_float(l);
  };
  for (std::size_t ch : arch.conv_channels) {
    Layer l;
    l.kind = LayerKind::kConv2d;
    l.activation = Activation::kRelu;
    l.out = ch;
    l.in = g.c;
    l.kernel = arch.kernel;
    l.stride = arch.stride;
    l.pad = arch.kernel / 2;
    fill(l);
    g = output_geometry(l, g);
    layers.push_back(std::move(l));
  }
  if (arch.features > 0) {
    Layer l;
    l.kind = LayerKind::kDense;
    l.activation = Activation::kRelu;
    l.out = arch.features;
    l.in = g.size();
    fill(l);
    g = {arch.features, 1, 1};
    layers.push_back(std::move(l));
  }
  Layer head;
  head.kind = LayerKind::kDense;
  head.activation = Activation::kIdentity;
  head.out = classes;
  head.in = g.size();
  fill(head);
  return ClassifierModel(input, std::move(layers), std::move(head));
}

double cross_entropy_with_gradients(const ClassifierModel& model,
                                    const Tensor& x,
                                    std::span<const int> labels,
                                    ModelGradients* grads) {
  if (x.rows() != labels.size()) {
    throw InputDomainError("cross_entropy: batch and label counts differ");
  }
  std::vector<Layer> layers = model.extractor();
  layers.push_back(model.head());
  if (grads) {
    grads->weights.assign(layers.size(), {});
    grads->bias.assign(layers.size(), {});
    for (std::size_t i = 0; i < layers.size(); ++i) {
      grads->weights[i].assign(layers[i].weights.size(), 0.0);
      grads->bias[i].assign(layers[i].bias.size(), 0.0);
    }
  }
  const double inv_b = 1.0 / static_cast<double>(labels.size());
  double loss = 0.0;
  for (std::size_t n = 0; n < labels.size(); ++n) {
    SampleTrace t = trace_sample(model.input_shape(), layers, x.row(n));
    std::vector<double> probs = t.acts.back();
    softmax_inplace(probs);
    const auto y = static_cast<std::size_t>(labels[n]);
    if (y >= probs.size()) throw InputDomainError("label out of range");
    loss -= std::log(std::max(probs[y], 1e-300)) * inv_b;
    if (!grads) continue;
    std::vector<double> delta = probs;
    delta[y] -= 1.0;
    for (double& d : delta) d *= inv_b;
    for (std::size_t li = layers.size(); li-- > 0;) {
      const Layer& layer = layers[li];
      if (layer.activation == Activation::kRelu) {
        const auto& post = t.acts[li + 1];
        for (std::size_t j = 0; j < delta.size(); ++j) {
          if (post[j] <= 0.0) delta[j] = 0.0;
        }
      }
      std::vector<double> dx(li > 0 ? t.acts[li].size() : 0);
      affine_backward(layer, t.geoms[li], t.acts[li], delta, grads->weights[li],
                      grads->bias[li], dx);
      delta = std::move(dx);
    }
  }
  return loss;
}

double accuracy(const ClassifierModel& model, const Dataset& data,
                std::size_t batch_size) {
  if (data.size() == 0) return 0.0;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t end = std::min(data.size(), start + batch_size);
    const auto pred = argmax_rows(model.forward_logits(data.images.slice_rows(start, end)));
    for (std::size_t i = start; i < end; ++i) {
      correct += static_cast<int>(pred[i - start]) == data.labels[i];
    }
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

TrainResult train_classifier(const Dataset& data, const ArchConfig& arch,
                             const TrainConfig& cfg) {
  if (data.size() == 0) throw InputDomainError("train_classifier: empty dataset");
  if (cfg.batch_size == 0) throw InputDomainError("train_classifier: batch_size 0");
  data.validate();
  const InputShape input{data.channels(), data.height(), data.width()};

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  RngStream split_rng(derive_seed(cfg.seed, {0x5E17}));
  split_rng.shuffle(std::span<std::size_t>(order));
  auto n_hold = static_cast<std::size_t>(
      std::floor(cfg.holdout_fraction * static_cast<double>(data.size())));
  if (n_hold >= data.size()) n_hold = data.size() - 1;
  std::vector<std::size_t> train_idx(order.begin(), order.end() - n_hold);
  std::vector<std::size_t> hold_idx(order.end() - n_hold, order.end());
  const Dataset heldout = data.subset(hold_idx);
  const Dataset train = data.subset(train_idx);

  ClassifierModel model = init_classifier(input, data.classes, arch, cfg.seed);
  std::vector<Layer> layers = model.extractor();
  layers.push_back(model.head());
  std::vector<std::vector<double>> vel_w(layers.size()), vel_b(layers.size());
  for (std::size_t i = 0; i < layers.size(); ++i) {
    vel_w[i].assign(layers[i].weights.size(), 0.0);
    vel_b[i].assign(layers[i].bias.size(), 0.0);
  }

  RngStream epoch_rng(derive_seed(cfg.seed, {0xE90C}));
  std::vector<std::size_t> perm(train.size());
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    epoch_rng.shuffle(std::span<std::size_t>(perm));
    for (std::size_t start = 0; start < perm.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(perm.size(), start + cfg.batch_size);
      std::span<const std::size_t> idx(perm.data() + start, end - start);
      const Tensor xb = train.images.gather_rows(idx);
      std::vector<int> yb;
      for (std::size_t i : idx) yb.push_back(train.labels[i]);
      ModelGradients g;
      cross_entropy_with_gradients(model, xb, yb, &g);
      for (std::size_t li = 0; li < layers.size(); ++li) {
        for (std::size_t j = 0; j < layers[li].weights.size(); ++j) {
          vel_w[li][j] = cfg.momentum * vel_w[li][j] - cfg.learning_rate * g.weights[li][j];
          layers[li].weights[j] += vel_w[li][j];
        }
        for (std::size_t j = 0; j < layers[li].bias.size(); ++j) {
          vel_b[li][j] = cfg.momentum * vel_b[li][j] - cfg.learning_rate * g.bias[li][j];
          layers[li].bias[j] += vel_b[li][j];
        }
      }
      Layer head = layers.back();
      model = ClassifierModel(input, {layers.begin(), layers.end() - 1}, std::move(head));
    }
  }

  // Stored weights are exactly representable as 32-bit floats so the model
  // file round-trips bit-exactly.
  for (Layer& l : layers) round_to_float(l);
  Layer head = layers.back();
  model = ClassifierModel(input, {layers.begin(), layers.end() - 1}, std::move(head));

  TrainResult result{model, accuracy(model, heldout), accuracy(model, train)};
  if (result.heldout_accuracy < arch.target_accuracy) {
    throw TrainingFailure(result.heldout_accuracy, arch.target_accuracy);
  }
  return result;
}

}  // namespace unig
