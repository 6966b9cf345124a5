// Per-image search strategies of the five score-based attacks.

#include <algorithm>
#include <cmath>
#include <numeric>

#include "unig/attacks.hpp"
#include "unig/error.hpp"

namespace unig {
namespace {

using Image = std::vector<double>;

class StrategyBase : public ImageAttack {
 public:
  StrategyBase(const AttackConfig& cfg, std::span<const double> x,
               const ImageGeometry& geom, std::uint64_t seed)
      : cfg_(cfg), x_(x.begin(), x.end()), geom_(geom), rng_(seed), cur_(x_) {}

  const std::vector<double>& current() const override { return cur_; }

 protected:
  void project(Image& v) const {
    project_ball_inplace(v, x_, cfg_.norm, cfg_.epsilon);
  }

  const AttackConfig& cfg_;
  const Image x_;
  const ImageGeometry geom_;
  RngStream rng_;
  Image cur_;
  Image cand_;
  double cur_margin_ = 0.0;
};

// Random search over localized squares whose pixels sit on the ball's
// vertices (Linf) or carry an equal L2 share (L2).
class SquareStrategy : public StrategyBase {
 public:
  using StrategyBase::StrategyBase;

  void start(double) override {}

  const std::vector<double>& propose() override {
    if (!initialized_) {
      propose_stripes();
    } else {
      propose_square();
    }
    return cand_;
  }

  void observe(double margin) override {
    ++iteration_;
    if (!initialized_) {
      initialized_ = true;
      cur_ = cand_;
      cur_margin_ = margin;
      return;
    }
    if (margin < cur_margin_) {
      cur_ = cand_;
      cur_margin_ = margin;
    }
  }

 private:
  double pixel_magnitude(std::size_t side) const {
    if (cfg_.norm == Norm::kLinf) return cfg_.epsilon;
    return cfg_.epsilon / static_cast<double>(side);
  }

  void propose_stripes() {
    cand_ = x_;
    const double mag = cfg_.norm == Norm::kLinf
                           ? cfg_.epsilon
                           : cfg_.epsilon / std::sqrt(static_cast<double>(geom_.size()));
    for (std::size_t c = 0; c < geom_.channels; ++c) {
      for (std::size_t col = 0; col < geom_.width; ++col) {
        const double s = rng_.sign() * mag;
        for (std::size_t row = 0; row < geom_.height; ++row) {
          cand_[(c * geom_.height + row) * geom_.width + col] += s;
        }
      }
    }
    project(cand_);
  }

  double fraction() const {
    const double t = static_cast<double>(iteration_) /
                     static_cast<double>(std::max<std::size_t>(cfg_.budget, 1));
    double p = cfg_.square.p_init;
    for (double cut : {0.05, 0.2, 0.5, 0.8}) {
      if (t > cut) p *= 0.5;
    }
    return p;
  }

  void propose_square() {
    const std::size_t area = geom_.height * geom_.width;
    auto side = static_cast<std::size_t>(
        std::lround(std::sqrt(fraction() * static_cast<double>(area))));
    side = std::clamp<std::size_t>(side, 1, std::min(geom_.height, geom_.width));
    const double mag = pixel_magnitude(side);
    const std::size_t r0 = rng_.choice(geom_.height - side + 1);
    const std::size_t c0 = rng_.choice(geom_.width - side + 1);
    // Resample the per-channel signs until the window actually changes.
    for (int attempt = 0; attempt < 10; ++attempt) {
      cand_ = cur_;
      bool changed = false;
      for (std::size_t c = 0; c < geom_.channels; ++c) {
        const double s = rng_.sign() * mag;
        for (std::size_t r = r0; r < r0 + side; ++r) {
          for (std::size_t q = c0; q < c0 + side; ++q) {
            const std::size_t k = (c * geom_.height + r) * geom_.width + q;
            const double v = std::clamp(x_[k] + s, 0.0, 1.0);
            if (std::abs(v - cur_[k]) > 1e-7) changed = true;
            cand_[k] = v;
          }
        }
      }
      if (changed) break;
    }
    project(cand_);
  }

  bool initialized_ = false;
  std::size_t iteration_ = 1;  // the clean query
};

// Coordinate-wise search over a random permutation of the pixel basis.
class SimbaStrategy : public StrategyBase {
 public:
  SimbaStrategy(const AttackConfig& cfg, std::span<const double> x,
                const ImageGeometry& geom, std::uint64_t seed)
      : StrategyBase(cfg, x, geom, seed),
        step_(cfg.simba.step > 0 ? cfg.simba.step : cfg.epsilon / 4.0),
        order_(x.size()) {
    std::iota(order_.begin(), order_.end(), 0);
    rng_.shuffle(std::span<std::size_t>(order_));
  }

  void start(double clean_margin) override { cur_margin_ = clean_margin; }

  const std::vector<double>& propose() override {
    std::size_t scanned = 0;
    while (scanned <= 2 * order_.size()) {
      if (pos_ == order_.size()) {
        pos_ = 0;
        rng_.shuffle(std::span<std::size_t>(order_));
      }
      const double dir = minus_phase_ ? -1.0 : 1.0;
      cand_ = cur_;
      cand_[order_[pos_]] += dir * step_;
      project(cand_);
      if (cand_ != cur_) return cand_;
      advance_after_reject();
      ++scanned;
    }
    exhausted_ = true;
    cand_ = cur_;
    return cand_;
  }

  void observe(double margin) override {
    if (margin < cur_margin_) {
      cur_ = cand_;
      cur_margin_ = margin;
      minus_phase_ = false;
      ++pos_;
      return;
    }
    advance_after_reject();
  }

  bool exhausted() const override { return exhausted_; }

 private:
  void advance_after_reject() {
    if (!minus_phase_) {
      minus_phase_ = true;
    } else {
      minus_phase_ = false;
      ++pos_;
    }
  }

  double step_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
  bool minus_phase_ = false;
  bool exhausted_ = false;
};

// Sign-flip search over a binary partition of the coordinates, breadth first,
// restarting at the root after the finest level.
class SignHunterStrategy : public StrategyBase {
 public:
  SignHunterStrategy(const AttackConfig& cfg, std::span<const double> x,
                     const ImageGeometry& geom, std::uint64_t seed)
      : StrategyBase(cfg, x, geom, seed), signs_(x.size(), 1.0) {}

  void start(double) override {}

  const std::vector<double>& propose() override {
    trial_ = signs_;
    if (initialized_) {
      const auto [lo, hi] = chunk();
      for (std::size_t k = lo; k < hi; ++k) trial_[k] = -trial_[k];
    }
    cand_ = x_;
    const double mag = cfg_.norm == Norm::kLinf
                           ? cfg_.epsilon
                           : cfg_.epsilon / std::sqrt(static_cast<double>(x_.size()));
    for (std::size_t k = 0; k < cand_.size(); ++k) cand_[k] += mag * trial_[k];
    project(cand_);
    return cand_;
  }

  void observe(double margin) override {
    if (!initialized_) {
      initialized_ = true;
      cur_ = cand_;
      cur_margin_ = margin;
      return;
    }
    if (margin < cur_margin_) {
      signs_ = trial_;
      cur_ = cand_;
      cur_margin_ = margin;
    }
    const std::size_t len = chunk_len(depth_);
    ++index_;
    if (index_ * len >= signs_.size()) {
      index_ = 0;
      depth_ = len == 1 ? 0 : depth_ + 1;
    }
  }

  const std::vector<double>& signs() const { return signs_; }

 private:
  std::size_t chunk_len(std::size_t depth) const {
    const std::size_t parts = std::size_t{1} << std::min<std::size_t>(depth, 62);
    return std::max<std::size_t>(1, (signs_.size() + parts - 1) / parts);
  }

  std::pair<std::size_t, std::size_t> chunk() const {
    const std::size_t len = chunk_len(depth_);
    const std::size_t lo = index_ * len;
    return {lo, std::min(signs_.size(), lo + len)};
  }

  std::vector<double> signs_;
  std::vector<double> trial_;
  std::size_t depth_ = 0;
  std::size_t index_ = 0;
  bool initialized_ = false;
};

void apply_step(Image& cur, const Image& grad, double step, Norm norm) {
  if (norm == Norm::kLinf) {
    for (std::size_t k = 0; k < cur.size(); ++k) cur[k] -= step * sign_of(grad[k]);
    return;
  }
  const double n = l2_norm(grad);
  if (n == 0.0) return;
  for (std::size_t k = 0; k < cur.size(); ++k) cur[k] -= step * grad[k] / n;
}

// Antithetic Gaussian finite differences, then a signed (Linf) or normalized
// (L2) descent step.
class NesStrategy : public StrategyBase {
 public:
  NesStrategy(const AttackConfig& cfg, std::span<const double> x,
              const ImageGeometry& geom, std::uint64_t seed)
      : StrategyBase(cfg, x, geom, seed),
        dirs_(cfg.nes.samples, Image(x.size())),
        plus_(cfg.nes.samples),
        minus_(cfg.nes.samples) {}

  void start(double) override {}

  const std::vector<double>& propose() override {
    if (probe_ == 0) {
      for (Image& u : dirs_) {
        for (double& v : u) v = rng_.normal();
      }
    }
    const Image& u = dirs_[probe_ / 2];
    const double s = (probe_ % 2 == 0 ? 1.0 : -1.0) * cfg_.nes.sigma;
    cand_ = cur_;
    for (std::size_t k = 0; k < cand_.size(); ++k) cand_[k] += s * u[k];
    project(cand_);
    return cand_;
  }

  void observe(double margin) override {
    (probe_ % 2 == 0 ? plus_ : minus_)[probe_ / 2] = margin;
    if (++probe_ < 2 * dirs_.size()) return;
    probe_ = 0;
    Image grad(cur_.size(), 0.0);
    const double scale =
        1.0 / (2.0 * static_cast<double>(dirs_.size()) * cfg_.nes.sigma);
    for (std::size_t j = 0; j < dirs_.size(); ++j) {
      const double w = (plus_[j] - minus_[j]) * scale;
      for (std::size_t k = 0; k < grad.size(); ++k) grad[k] += w * dirs_[j][k];
    }
    apply_step(cur_, grad, cfg_.nes.step, cfg_.norm);
    project(cur_);
  }

 private:
  std::vector<Image> dirs_;
  std::vector<double> plus_, minus_;
  std::size_t probe_ = 0;
};

// Gradient-estimation with a low-resolution data prior that is updated from
// two probes per round and upsampled to drive the image step.
class BanditsStrategy : public StrategyBase {
 public:
  BanditsStrategy(const AttackConfig& cfg, std::span<const double> x,
                  const ImageGeometry& geom, std::uint64_t seed)
      : StrategyBase(cfg, x, geom, seed) {
    tile_ = cfg.bandits.tile > 0
                ? cfg.bandits.tile
                : std::max<std::size_t>(1, std::min(geom.height, geom.width) / 4);
    ph_ = (geom.height + tile_ - 1) / tile_;
    pw_ = (geom.width + tile_ - 1) / tile_;
    prior_.assign(geom.channels * ph_ * pw_, 0.0);
    noise_.assign(prior_.size(), 0.0);
  }

  void start(double) override {}

  const std::vector<double>& propose() override {
    if (!second_) {
      for (double& v : noise_) v = rng_.normal();
    }
    const double s = second_ ? -cfg_.bandits.exploration : cfg_.bandits.exploration;
    Image q(prior_.size());
    for (std::size_t k = 0; k < q.size(); ++k) q[k] = prior_[k] + s * noise_[k];
    Image up = upsample(q);
    const double n = l2_norm(up);
    cand_ = cur_;
    if (n > 0.0) {
      for (std::size_t k = 0; k < cand_.size(); ++k) {
        cand_[k] += cfg_.bandits.fd_eta * up[k] / n;
      }
    }
    project(cand_);
    return cand_;
  }

  void observe(double margin) override {
    if (!second_) {
      first_margin_ = margin;
      second_ = true;
      return;
    }
    second_ = false;
    const double deriv = (first_margin_ - margin) /
                         (cfg_.bandits.fd_eta * cfg_.bandits.exploration);
    for (std::size_t k = 0; k < prior_.size(); ++k) {
      prior_[k] += cfg_.bandits.prior_lr * deriv * noise_[k];
    }
    apply_step(cur_, upsample(prior_), cfg_.bandits.step, cfg_.norm);
    project(cur_);
  }

  const std::vector<double>& prior() const { return prior_; }

 private:
  Image upsample(const Image& low) const {
    Image out(geom_.size());
    for (std::size_t c = 0; c < geom_.channels; ++c) {
      for (std::size_t r = 0; r < geom_.height; ++r) {
        for (std::size_t q = 0; q < geom_.width; ++q) {
          out[(c * geom_.height + r) * geom_.width + q] =
              low[(c * ph_ + r / tile_) * pw_ + q / tile_];
        }
      }
    }
    return out;
  }

  std::size_t tile_ = 1, ph_ = 1, pw_ = 1;
  Image prior_;
  Image noise_;
  bool second_ = false;
  double first_margin_ = 0.0;
};

}  // namespace

std::unique_ptr<ImageAttack> make_image_attack(const AttackConfig& cfg,
                                               std::span<const double> x,
                                               const ImageGeometry& geom,
                                               std::uint64_t seed) {
  if (geom.size() != x.size()) {
    throw InputDomainError("make_image_attack: geometry does not match image");
  }
  switch (cfg.kind) {
    case AttackKind::kSquare:
      return std::make_unique<SquareStrategy>(cfg, x, geom, seed);
    case AttackKind::kSimBA:
      return std::make_unique<SimbaStrategy>(cfg, x, geom, seed);
    case AttackKind::kSignHunter:
      return std::make_unique<SignHunterStrategy>(cfg, x, geom, seed);
    case AttackKind::kNes:
      return std::make_unique<NesStrategy>(cfg, x, geom, seed);
    case AttackKind::kBandits:
      return std::make_unique<BanditsStrategy>(cfg, x, geom, seed);
  }
  throw InputDomainError("unknown attack kind");
}

std::vector<double> nes_gradient_estimate(
    const std::function<double(std::span<const double>)>& loss,
    std::span<const double> x, std::size_t samples, double sigma,
    RngStream& rng) {
  std::vector<double> grad(x.size(), 0.0), u(x.size()), probe(x.size());
  for (std::size_t j = 0; j < samples; ++j) {
    for (double& v : u) v = rng.normal();
    for (std::size_t k = 0; k < x.size(); ++k) probe[k] = x[k] + sigma * u[k];
    const double lp = loss(probe);
    for (std::size_t k = 0; k < x.size(); ++k) probe[k] = x[k] - sigma * u[k];
    const double lm = loss(probe);
    const double w = (lp - lm) / (2.0 * static_cast<double>(samples) * sigma);
    for (std::size_t k = 0; k < x.size(); ++k) grad[k] += w * u[k];
  }
  return grad;
}

}  // namespace unig
