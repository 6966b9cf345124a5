#include "unig/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "unig/error.hpp"

namespace unig {

std::string_view to_string(Norm norm) {
  return norm == Norm::kLinf ? "linf" : "l2";
}

Norm parse_norm(std::string_view text) {
  if (text == "linf" || text == "Linf" || text == "inf") return Norm::kLinf;
  if (text == "l2" || text == "L2") return Norm::kL2;
  throw InputDomainError("unknown norm '" + std::string(text) + "'");
}

void softmax_inplace(std::span<double> row) {
  if (row.empty()) return;
  const double m = *std::max_element(row.begin(), row.end());
  double sum = 0.0;
  for (double& v : row) {
    v = std::exp(v - m);
    sum += v;
  }
  for (double& v : row) v /= sum;
}

Tensor softmax(const Tensor& logits) {
  Tensor out = logits;
  for (std::size_t r = 0; r < out.rows(); ++r) softmax_inplace(out.row(r));
  return out;
}

Tensor one_hot(std::span<const int> labels, std::size_t classes) {
  Tensor out({labels.size(), classes});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw InputDomainError("label " + std::to_string(labels[i]) +
                             " outside [0, " + std::to_string(classes) + ")");
    }
    out.at(i, static_cast<std::size_t>(labels[i])) = 1.0;
  }
  return out;
}

MinmaxResult minmax_normalize(const Tensor& g, double eps) {
  if (g.rank() != 2 || g.dim(1) == 0) {
    throw InputDomainError("minmax_normalize expects a [batch x d] matrix");
  }
  if (!(eps > 0)) throw InputDomainError("minmax_normalize: eps must be > 0");
  MinmaxResult res{Tensor(g.shape()), {}, {}};
  res.argmin.resize(g.rows());
  res.argmax.resize(g.rows());
  for (std::size_t r = 0; r < g.rows(); ++r) {
    auto in = g.row(r);
    const std::size_t lo = static_cast<std::size_t>(
        std::min_element(in.begin(), in.end()) - in.begin());
    const std::size_t hi = static_cast<std::size_t>(
        std::max_element(in.begin(), in.end()) - in.begin());
    res.argmin[r] = lo;
    res.argmax[r] = hi;
    const double denom = in[hi] - in[lo] + eps;
    auto out = res.values.row(r);
    for (std::size_t j = 0; j < in.size(); ++j) out[j] = (in[j] - in[lo]) / denom;
  }
  return res;
}

void project_ball_inplace(std::span<double> x_adv,
                          std::span<const double> x_orig, Norm norm,
                          double radius) {
  if (norm == Norm::kLinf) {
    for (std::size_t i = 0; i < x_adv.size(); ++i) {
      const double d = std::clamp(x_adv[i] - x_orig[i], -radius, radius);
      x_adv[i] = std::clamp(x_orig[i] + d, 0.0, 1.0);
    }
    return;
  }
  const double n = distance(x_adv, x_orig, Norm::kL2);
  const double scale = n > radius ? radius / n : 1.0;
  for (std::size_t i = 0; i < x_adv.size(); ++i) {
    x_adv[i] = std::clamp(x_orig[i] + (x_adv[i] - x_orig[i]) * scale, 0.0, 1.0);
  }
}

Tensor project_ball(const Tensor& x_adv, const Tensor& x_orig, Norm norm,
                    double radius) {
  if (x_adv.shape() != x_orig.shape()) {
    throw InputDomainError("project_ball: shape mismatch " +
                           x_adv.shape_string() + " vs " +
                           x_orig.shape_string());
  }
  if (!(radius > 0)) throw InputDomainError("project_ball: radius must be > 0");
  Tensor out = x_adv;
  if (out.rank() <= 1) {
    project_ball_inplace(out.data(), x_orig.data(), norm, radius);
    return out;
  }
  for (std::size_t r = 0; r < out.rows(); ++r) {
    project_ball_inplace(out.row(r), x_orig.row(r), norm, radius);
  }
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double l2_norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

double linf_norm(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

double distance(std::span<const double> a, std::span<const double> b,
                Norm norm) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc = norm == Norm::kLinf ? std::max(acc, std::abs(d)) : acc + d * d;
  }
  return norm == Norm::kLinf ? acc : std::sqrt(acc);
}

double cosine(std::span<const double> a, std::span<const double> b) {
  const double na = l2_norm(a);
  const double nb = l2_norm(b);
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

double pairwise_cosine(const Tensor& mat) {
  if (mat.rank() < 2) {
    throw InputDomainError("pairwise_cosine expects a matrix");
  }
  std::vector<std::size_t> nonzero;
  for (std::size_t r = 0; r < mat.rows(); ++r) {
    if (l2_norm(mat.row(r)) > 0.0) nonzero.push_back(r);
  }
  if (nonzero.size() < 2) {
    throw UndefinedMetricError("pairwise_cosine needs at least two nonzero rows");
  }
  double sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < nonzero.size(); ++i) {
    for (std::size_t j = i + 1; j < nonzero.size(); ++j) {
      sum += cosine(mat.row(nonzero[i]), mat.row(nonzero[j]));
      ++pairs;
    }
  }
  return sum / static_cast<double>(pairs);
}

std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) -
                                  v.begin());
}

std::vector<std::size_t> argmax_rows(const Tensor& m) {
  std::vector<std::size_t> out(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) out[r] = argmax(m.row(r));
  return out;
}

}  // namespace unig
