#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <vector>

#include "oracle.hpp"
#include "unig/error.hpp"
#include "unig/harness.hpp"
#include "unig/model.hpp"
#include "unig/rng.hpp"

using namespace unig;

namespace {

ClassifierModel small_model(std::uint64_t seed) {
  ArchConfig arch;
  arch.conv_channels = {3, 4};
  arch.features = 6;
  return init_classifier({1, 8, 8}, 3, arch, seed);
}

Tensor random_images(std::size_t n, std::size_t side, std::uint64_t seed) {
  RngStream rng(seed);
  Tensor x(Shape{n, 1, side, side});
  for (auto& v : x.data()) v = rng.uniform();
  return x;
}

// Naive forward through every layer for one image.
oracle::Vec naive_logits(const ClassifierModel& m, const oracle::Vec& img) {
  oracle::Vec a = img;
  std::size_t c = m.input_shape().channels, h = m.input_shape().height,
              w = m.input_shape().width;
  for (const Layer& l : m.extractor()) {
    const bool relu = l.activation == Activation::kRelu;
    if (l.kind == LayerKind::kConv2d) {
      std::size_t oh = 0, ow = 0;
      a = oracle::conv2d(a, c, h, w, l.weights, l.bias, l.out, l.kernel, l.stride,
                         l.pad, relu, &oh, &ow);
      c = l.out;
      h = oh;
      w = ow;
    } else {
      a = oracle::dense(a, l.weights, l.bias, l.out, relu);
    }
  }
  return oracle::dense(a, m.head().weights, m.head().bias, m.head().out, false);
}

}  // namespace

TEST(Model, ForwardMatchesNaiveLoops) {
  const ClassifierModel m = small_model(4);
  const Tensor x = random_images(5, 8, 12);
  const Tensor logits = m.forward_logits(x);
  for (std::size_t i = 0; i < 5; ++i) {
    const auto row = x.row(i);
    const oracle::Vec ref = naive_logits(m, oracle::Vec(row.begin(), row.end()));
    for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(logits.at(i, k), ref[k], 1e-12);
  }
}

TEST(Model, FeaturesThenHeadEqualsLogits) {
  const ClassifierModel m = small_model(5);
  const Tensor x = random_images(3, 8, 1);
  EXPECT_EQ(m.head_logits(m.forward_features(x)), m.forward_logits(x));
  EXPECT_EQ(m.head_weights().shape(), (Shape{3, m.feature_dim()}));
}

TEST(Model, RejectsWrongInputShape) {
  const ClassifierModel m = small_model(1);
  EXPECT_THROW(m.forward_logits(random_images(2, 7, 0)), InputDomainError);
}

TEST(Model, InitIsSeedDetermined) {
  EXPECT_EQ(small_model(3), small_model(3));
  EXPECT_NE(small_model(3), small_model(4));
}

TEST(Model, CrossEntropyGradientMatchesFiniteDifferences) {
  const ClassifierModel m = small_model(7);
  const Tensor x = random_images(4, 8, 2);
  const std::vector<int> y{0, 1, 2, 1};
  ModelGradients g;
  cross_entropy_with_gradients(m, x, y, &g);

  const std::size_t n_layers = m.extractor().size() + 1;
  RngStream rng(99);
  int checked = 0;
  for (std::size_t li = 0; li < n_layers; ++li) {
    for (int t = 0; t < 6; ++t) {
      auto layers = m.extractor();
      Layer head = m.head();
      Layer& target = li + 1 == n_layers ? head : layers[li];
      const std::size_t j = rng.choice(target.weights.size());
      const double h = 1e-6;
      const double orig = target.weights[j];
      target.weights[j] = orig + h;
      const double lp = cross_entropy_with_gradients(
          ClassifierModel(m.input_shape(), layers, head), x, y, nullptr);
      target.weights[j] = orig - h;
      const double lm = cross_entropy_with_gradients(
          ClassifierModel(m.input_shape(), layers, head), x, y, nullptr);
      const double fd = (lp - lm) / (2 * h);
      EXPECT_NEAR(g.weights[li][j], fd, 1e-6 + 1e-4 * std::abs(fd))
          << "layer " << li << " weight " << j;
      ++checked;
    }
  }
  EXPECT_EQ(checked, static_cast<int>(n_layers) * 6);
}

TEST(Model, SerializeRoundTrip) {
  const ClassifierModel m = small_model(8);
  EXPECT_EQ(deserialize_model(serialize_model(m)), m);
  const auto path = std::filesystem::temp_directory_path() / "unig_model_test.ungw";
  save_model(m, path);
  EXPECT_EQ(load_model(path), m);
  std::filesystem::remove(path);
}

TEST(Model, CorruptFilesAreFormatErrors) {
  auto bytes = serialize_model(small_model(8));
  auto bad_magic = bytes;
  bad_magic[0] ^= 0xFF;
  try {
    deserialize_model(bad_magic);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 0u);
  }
  auto truncated = bytes;
  truncated.resize(bytes.size() - 5);
  EXPECT_THROW(deserialize_model(truncated), FormatError);
  auto trailing = bytes;
  trailing.push_back(0);
  EXPECT_THROW(deserialize_model(trailing), FormatError);
  EXPECT_THROW(load_model("/nonexistent/dir/model.ungw"), IoError);
}

TEST(Model, TrainingReachesTargetOnSyntheticData) {
  const Dataset data = gen_synthetic_dataset(4, 800, 16, 3);
  ArchConfig arch;
  arch.target_accuracy = 0.95;
  TrainConfig cfg;
  cfg.epochs = 6;
  const TrainResult r = train_classifier(data, arch, cfg);
  EXPECT_GE(r.heldout_accuracy, 0.95);
  // deterministic given the seed
  EXPECT_EQ(train_classifier(data, arch, cfg).model, r.model);
}

TEST(Model, UnreachableTargetThrowsWithAchievedAccuracy) {
  const Dataset data = gen_synthetic_dataset(4, 200, 16, 3);
  ArchConfig arch;
  arch.target_accuracy = 1.01;
  TrainConfig cfg;
  cfg.epochs = 1;
  try {
    train_classifier(data, arch, cfg);
    FAIL();
  } catch (const TrainingFailure& e) {
    EXPECT_GE(e.achieved_accuracy(), 0.0);
    EXPECT_LE(e.achieved_accuracy(), 1.0);
  }
}
