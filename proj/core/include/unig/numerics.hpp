#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "unig/tensor.hpp"

namespace unig {

enum class Norm { kLinf, kL2 };

std::string_view to_string(Norm norm);
Norm parse_norm(std::string_view text);

inline constexpr double kDefaultMinmaxEps = 1e-12;

// Row-wise softmax of a [batch x classes] matrix, max-subtracted.
Tensor softmax(const Tensor& logits);
void softmax_inplace(std::span<double> row);

// [batch x classes] one-hot rows. Throws InputDomainError on a label outside
// [0, classes).
Tensor one_hot(std::span<const int> labels, std::size_t classes);

struct MinmaxResult {
  Tensor values;
  std::vector<std::size_t> argmin;  // first occurrence per row
  std::vector<std::size_t> argmax;  // first occurrence per row
};

// Per row: (g - min) / (max - min + eps). A constant row maps to zeros.
MinmaxResult minmax_normalize(const Tensor& g, double eps = kDefaultMinmaxEps);

// Projects each row of `x_adv` onto the `norm` ball of `radius` around the
// matching row of `x_orig`, then clamps to the [0, 1] box.
Tensor project_ball(const Tensor& x_adv, const Tensor& x_orig, Norm norm,
                    double radius);
void project_ball_inplace(std::span<double> x_adv,
                          std::span<const double> x_orig, Norm norm,
                          double radius);

// Mean cosine similarity over all unordered pairs of nonzero rows. Zero rows
// are skipped. Throws UndefinedMetricError with fewer than two nonzero rows.
double pairwise_cosine(const Tensor& mat);

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> v);
double linf_norm(std::span<const double> v);
// ||a - b|| under `norm`.
double distance(std::span<const double> a, std::span<const double> b,
                Norm norm);
double cosine(std::span<const double> a, std::span<const double> b);
std::size_t argmax(std::span<const double> v);
// Row-wise argmax of a matrix.
std::vector<std::size_t> argmax_rows(const Tensor& m);

// sign(0) is 0.
inline double sign_of(double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); }

}  // namespace unig
