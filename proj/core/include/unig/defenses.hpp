#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>

#include "unig/dataset.hpp"
#include "unig/model.hpp"
#include "unig/rng.hpp"
#include "unig/tensor.hpp"
#include "unig/unig.hpp"

namespace unig {

enum class DefenseKind { kVanilla, kRnd, kUniG };

std::string to_string(DefenseKind kind);
DefenseKind parse_defense_kind(const std::string& text);

struct DefenseSpec {
  DefenseKind kind = DefenseKind::kVanilla;
  // Standard deviation of the input noise of the random-noise defense.
  double rnd_sigma = 0.02;
  UniGConfig unig;

  // Compact "key=value;..." rendering of the parameters that matter for kind.
  std::string params_string() const;
};

struct QueryResult {
  Tensor probs;  // [b x classes]
  // Set when this call pushed the count past the budget; the answer is still
  // returned.
  bool over_budget = false;
  std::uint64_t count = 0;
};

/// Black-box scoring interface seen by attacks. Every call is charged one
/// query per submitted image, over-budget calls included.
class QueryOracle {
 public:
  explicit QueryOracle(std::optional<std::uint64_t> budget = std::nullopt)
      : budget_(budget) {}
  virtual ~QueryOracle() = default;

  QueryResult query(const Tensor& x);

  std::uint64_t query_count() const { return count_; }
  std::uint64_t call_count() const { return calls_; }
  std::optional<std::uint64_t> budget() const { return budget_; }
  bool exhausted() const { return budget_ && count_ >= *budget_; }

  virtual std::size_t classes() const = 0;

 protected:
  // Probabilities for a [b x c x h x w] batch; called once per query().
  virtual Tensor answer(const Tensor& x) = 0;

 private:
  std::optional<std::uint64_t> budget_;
  std::uint64_t count_ = 0;
  std::uint64_t calls_ = 0;
};

class VanillaOracle : public QueryOracle {
 public:
  VanillaOracle(const ClassifierModel& model,
                std::optional<std::uint64_t> budget = std::nullopt)
      : QueryOracle(budget), model_(model) {}
  std::size_t classes() const override { return model_.classes(); }

 protected:
  Tensor answer(const Tensor& x) override { return model_.forward_probs(x); }

 private:
  const ClassifierModel& model_;
};

// Adds fresh N(0, sigma^2) noise to every input element, re-clamped to [0, 1].
class RndOracle : public QueryOracle {
 public:
  RndOracle(const ClassifierModel& model, double sigma, std::uint64_t seed,
            std::optional<std::uint64_t> budget = std::nullopt)
      : QueryOracle(budget), model_(model), sigma_(sigma), rng_(seed) {}
  std::size_t classes() const override { return model_.classes(); }

 protected:
  Tensor answer(const Tensor& x) override;

 private:
  const ClassifierModel& model_;
  double sigma_;
  RngStream rng_;
};

// Re-optimizes a fresh Hadamard module for every call. With cascade_k > 0
// and a reservoir, each image is answered on its own, padded with reservoir
// images.
class UniGOracle : public QueryOracle {
 public:
  UniGOracle(const ClassifierModel& model, const UniGConfig& cfg,
             std::uint64_t seed, const Dataset* reservoir = nullptr,
             std::optional<std::uint64_t> budget = std::nullopt);
  std::size_t classes() const override { return model_.classes(); }

  // State of the most recent batched call (empty in cascade mode).
  const UniGState& last_state() const { return last_state_; }

 protected:
  Tensor answer(const Tensor& x) override;

 private:
  const ClassifierModel& model_;
  UniGConfig cfg_;
  std::uint64_t seed_;
  Tensor reservoir_features_;
  UniGState last_state_;
};

std::unique_ptr<QueryOracle> make_oracle(
    const ClassifierModel& model, const DefenseSpec& spec, std::uint64_t seed,
    const Dataset* reservoir = nullptr,
    std::optional<std::uint64_t> budget = std::nullopt);

// Defended logits for a batch with one stochastic draw; for UniG these are
// the head applied to A o f of a batched pass.
Tensor defended_logits(const ClassifierModel& model, const DefenseSpec& spec,
                       const Tensor& x, std::uint64_t seed,
                       const Dataset* reservoir = nullptr);

// Mean over images of ||defended logits - vanilla logits||_2, processed in
// batches of `batch_size`.
double logit_diff(const ClassifierModel& model, const DefenseSpec& spec,
                  const Dataset& data, std::uint64_t seed,
                  std::size_t batch_size = 128,
                  const Dataset* reservoir = nullptr);

}  // namespace unig
