#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "unig/defenses.hpp"
#include "unig/numerics.hpp"
#include "unig/rng.hpp"
#include "unig/tensor.hpp"

namespace unig {

enum class AttackKind { kSquare, kSimBA, kSignHunter, kNes, kBandits };

std::string to_string(AttackKind kind);
AttackKind parse_attack_kind(const std::string& text);

// Query counts at which margin traces are sampled.
inline const std::vector<std::size_t> kDefaultCheckpoints{1,   10,  50,   100,
                                                          250, 500, 1000, 2500};

struct SquareParams {
  // Initial fraction of pixels covered by a square; halved at 5%, 20%, 50%
  // and 80% of the budget.
  double p_init = 0.05;
};

struct SimbaParams {
  // Per-coordinate step; 0 means epsilon / 4.
  double step = 0.0;
};

struct NesParams {
  std::size_t samples = 10;  // antithetic pairs per estimate
  double sigma = 0.01;       // smoothing radius
  double step = 0.01;        // image update step
};

struct BanditsParams {
  double prior_lr = 0.1;
  double exploration = 0.1;
  // Prior tile edge in pixels; 0 means image side / 4.
  std::size_t tile = 0;
  double fd_eta = 0.1;  // finite-difference probe radius
  double step = 0.01;   // image update step
};

struct AttackConfig {
  AttackKind kind = AttackKind::kSquare;
  Norm norm = Norm::kLinf;
  double epsilon = 0.15;
  std::size_t budget = 2500;  // queries per image, the clean query included
  bool targeted = false;
  std::vector<int> target_labels;  // one per image when targeted
  SquareParams square;
  SimbaParams simba;
  NesParams nes;
  BanditsParams bandits;
  std::uint64_t seed = 0;
  // Successful images keep resubmitting their adversarial example so the
  // batch composition seen by the defense stays constant.
  bool freeze = true;
  std::vector<std::size_t> checkpoints = kDefaultCheckpoints;

  void validate() const;
};

struct ImageResult {
  Tensor x_adv;  // [c x h x w], the lowest-margin point queried
  // Lowest margin observed; +inf if the image was never queried.
  double best_margin = 0.0;
  std::size_t queries = 0;
  // Query index (1-based) of the first successful query, 0 if none.
  std::size_t success_query = 0;
  bool success = false;
  // (checkpoint, best margin after that many queries) for checkpoints within
  // the budget.
  std::vector<std::pair<std::size_t, double>> trace;
};

struct AttackRun {
  std::vector<ImageResult> images;
  std::uint64_t oracle_queries = 0;
  std::uint64_t oracle_calls = 0;
};

// Untargeted: probs[y] - max_{j != y} probs[j]. Targeted (labels are the
// targets): max_{j != t} probs[j] - probs[t]. Success when <= 0.
std::vector<double> margin_loss(const Tensor& probs, std::span<const int> labels,
                                bool targeted = false);
double margin_loss_row(std::span<const double> probs, int label, bool targeted);

struct ImageGeometry {
  std::size_t channels = 1, height = 0, width = 0;
  std::size_t size() const { return channels * height * width; }
};

/// Ask/tell search state for a single image. The driver queries the clean
/// image first and reports its margin through start(); afterwards every
/// propose() is answered by exactly one observe().
class ImageAttack {
 public:
  virtual ~ImageAttack() = default;
  virtual void start(double clean_margin) = 0;
  virtual const std::vector<double>& propose() = 0;
  virtual void observe(double margin) = 0;
  // The search iterate (for gradient-estimation attacks, not itself queried).
  virtual const std::vector<double>& current() const = 0;
  virtual bool exhausted() const { return false; }
};

std::unique_ptr<ImageAttack> make_image_attack(const AttackConfig& cfg,
                                               std::span<const double> x,
                                               const ImageGeometry& geom,
                                               std::uint64_t seed);

// Lockstep driver: each step submits one full-batch oracle call.
AttackRun run_attack(QueryOracle& oracle, const Tensor& x,
                     std::span<const int> labels, const AttackConfig& cfg);

AttackRun square_attack(QueryOracle& oracle, const Tensor& x,
                        std::span<const int> labels, const AttackConfig& cfg);
AttackRun simba_attack(QueryOracle& oracle, const Tensor& x,
                       std::span<const int> labels, const AttackConfig& cfg);
AttackRun signhunter_attack(QueryOracle& oracle, const Tensor& x,
                            std::span<const int> labels, const AttackConfig& cfg);
AttackRun nes_attack(QueryOracle& oracle, const Tensor& x,
                     std::span<const int> labels, const AttackConfig& cfg);
AttackRun bandits_attack(QueryOracle& oracle, const Tensor& x,
                         std::span<const int> labels, const AttackConfig& cfg);

// Antithetic NES estimate of the gradient of `loss` at x with `samples`
// pairs of radius `sigma`.
std::vector<double> nes_gradient_estimate(
    const std::function<double(std::span<const double>)>& loss,
    std::span<const double> x, std::size_t samples, double sigma,
    RngStream& rng);

}  // namespace unig
