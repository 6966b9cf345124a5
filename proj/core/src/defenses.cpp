#include "unig/defenses.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "unig/error.hpp"
#include "unig/numerics.hpp"

namespace unig {
namespace {

Tensor add_input_noise(const Tensor& x, double sigma, RngStream& rng) {
  Tensor noisy = x;
  if (sigma == 0.0) return noisy;
  for (double& v : noisy.data()) v = std::clamp(v + sigma * rng.normal(), 0.0, 1.0);
  return noisy;
}

// Logits of each row answered alone, padded with reservoir features.
Tensor cascade_logits(const ClassifierModel& model, const Tensor& features,
                      const Tensor& reservoir_features, const UniGConfig& cfg,
                      std::uint64_t seed) {
  Tensor out({features.rows(), model.classes()});
  for (std::size_t i = 0; i < features.rows(); ++i) {
    UniGConfig one = cfg;
    one.seed = derive_seed(seed, {i});
    const auto idx = reservoir_indices(reservoir_features.rows(), one);
    const Tensor batch = Tensor::concat_rows(features.slice_rows(i, i + 1),
                                             reservoir_features.gather_rows(idx));
    const UniGOutput res = unig_forward_features(model, batch, one);
    std::copy_n(res.logits.row(0).begin(), model.classes(), out.row(i).begin());
  }
  return out;
}

}  // namespace

std::string to_string(DefenseKind kind) {
  switch (kind) {
    case DefenseKind::kVanilla: return "vanilla";
    case DefenseKind::kRnd: return "rnd";
    case DefenseKind::kUniG: return "unig";
  }
  return "?";
}

DefenseKind parse_defense_kind(const std::string& text) {
  if (text == "vanilla") return DefenseKind::kVanilla;
  if (text == "rnd") return DefenseKind::kRnd;
  if (text == "unig") return DefenseKind::kUniG;
  throw ConfigError("unknown defense '" + text + "' (vanilla|rnd|unig)");
}

std::string DefenseSpec::params_string() const {
  std::ostringstream os;
  switch (kind) {
    case DefenseKind::kVanilla: break;
    case DefenseKind::kRnd: os << "sigma=" << rnd_sigma; break;
    case DefenseKind::kUniG:
      os << "delta=" << unig.delta << ";p=" << unig.iterations
         << ";alpha=" << unig.alpha;
      if (unig.cascade_k > 0) os << ";cascade_k=" << unig.cascade_k;
      if (unig.frozen_softmax) os << ";frozen_softmax=1";
      break;
  }
  return os.str();
}

QueryResult QueryOracle::query(const Tensor& x) {
  ++calls_;
  count_ += x.rows();
  QueryResult r;
  r.probs = answer(x);
  r.count = count_;
  r.over_budget = budget_.has_value() && count_ > *budget_;
  return r;
}

Tensor RndOracle::answer(const Tensor& x) {
  return model_.forward_probs(add_input_noise(x, sigma_, rng_));
}

UniGOracle::UniGOracle(const ClassifierModel& model, const UniGConfig& cfg,
                       std::uint64_t seed, const Dataset* reservoir,
                       std::optional<std::uint64_t> budget)
    : QueryOracle(budget), model_(model), cfg_(cfg), seed_(seed) {
  cfg_.validate();
  if (cfg_.cascade_k > 0) {
    if (reservoir == nullptr || reservoir->size() == 0) {
      throw ConfigError("unig cascade mode needs a nonempty reservoir");
    }
    if (reservoir->size() < cfg_.cascade_k) {
      throw ConfigError("unig cascade reservoir smaller than cascade_k");
    }
    reservoir_features_ = model_.forward_features(reservoir->images);
  }
}

Tensor UniGOracle::answer(const Tensor& x) {
  const Tensor features = model_.forward_features(x);
  const std::uint64_t call_seed = derive_seed(seed_, {call_count()});
  if (cfg_.cascade_k > 0) {
    return softmax(
        cascade_logits(model_, features, reservoir_features_, cfg_, call_seed));
  }
  UniGConfig cfg = cfg_;
  cfg.seed = call_seed;
  UniGOutput out = unig_forward_features(model_, features, cfg);
  last_state_ = std::move(out.state);
  return std::move(out.probs);
}

std::unique_ptr<QueryOracle> make_oracle(const ClassifierModel& model,
                                         const DefenseSpec& spec,
                                         std::uint64_t seed,
                                         const Dataset* reservoir,
                                         std::optional<std::uint64_t> budget) {
  switch (spec.kind) {
    case DefenseKind::kVanilla:
      return std::make_unique<VanillaOracle>(model, budget);
    case DefenseKind::kRnd:
      return std::make_unique<RndOracle>(model, spec.rnd_sigma, seed, budget);
    case DefenseKind::kUniG:
      return std::make_unique<UniGOracle>(model, spec.unig, seed, reservoir,
                                          budget);
  }
  throw ConfigError("unknown defense kind");
}

Tensor defended_logits(const ClassifierModel& model, const DefenseSpec& spec,
                       const Tensor& x, std::uint64_t seed,
                       const Dataset* reservoir) {
  switch (spec.kind) {
    case DefenseKind::kVanilla:
      return model.forward_logits(x);
    case DefenseKind::kRnd: {
      RngStream rng(seed);
      return model.forward_logits(add_input_noise(x, spec.rnd_sigma, rng));
    }
    case DefenseKind::kUniG: {
      const Tensor features = model.forward_features(x);
      if (spec.unig.cascade_k > 0) {
        if (reservoir == nullptr) {
          throw ConfigError("unig cascade mode needs a reservoir");
        }
        return cascade_logits(model, features,
                              model.forward_features(reservoir->images),
                              spec.unig, seed);
      }
      UniGConfig cfg = spec.unig;
      cfg.seed = seed;
      return unig_forward_features(model, features, cfg).logits;
    }
  }
  throw ConfigError("unknown defense kind");
}

double logit_diff(const ClassifierModel& model, const DefenseSpec& spec,
                  const Dataset& data, std::uint64_t seed,
                  std::size_t batch_size, const Dataset* reservoir) {
  if (data.size() == 0) throw InputDomainError("logit_diff: empty dataset");
  if (batch_size == 0) batch_size = data.size();
  double total = 0.0;
  for (std::size_t start = 0, chunk = 0; start < data.size();
       start += batch_size, ++chunk) {
    const std::size_t end = std::min(data.size(), start + batch_size);
    const Tensor x = data.images.slice_rows(start, end);
    const Tensor base = model.forward_logits(x);
    const Tensor def =
        defended_logits(model, spec, x, derive_seed(seed, {chunk}), reservoir);
    for (std::size_t i = 0; i < x.rows(); ++i) {
      total += distance(def.row(i), base.row(i), Norm::kL2);
    }
  }
  return total / static_cast<double>(data.size());
}

}  // namespace unig
