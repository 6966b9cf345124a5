#include "unig/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "unig/error.hpp"

namespace unig {

std::size_t shape_product(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_product(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_product(shape_) != data_.size()) {
    throw InputDomainError("tensor shape " + shape_string() + " does not match " +
                           std::to_string(data_.size()) + " elements");
  }
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols,
                      std::initializer_list<double> values) {
  return Tensor({rows, cols}, std::vector<double>(values));
}

std::size_t Tensor::row_size() const {
  if (shape_.empty() || shape_[0] == 0) return 0;
  return data_.size() / shape_[0];
}

std::span<double> Tensor::row(std::size_t r) {
  const std::size_t n = row_size();
  return std::span<double>(data_).subspan(r * n, n);
}

std::span<const double> Tensor::row(std::size_t r) const {
  const std::size_t n = row_size();
  return std::span<const double>(data_).subspan(r * n, n);
}

Tensor Tensor::slice_rows(std::size_t begin, std::size_t end) const {
  if (begin > end || end > rows()) {
    throw InputDomainError("row slice out of range");
  }
  Shape s = shape_;
  s[0] = end - begin;
  const std::size_t n = row_size();
  return Tensor(std::move(s),
                std::vector<double>(data_.begin() + begin * n,
                                    data_.begin() + end * n));
}

Tensor Tensor::gather_rows(std::span<const std::size_t> indices) const {
  Shape s = shape_;
  s[0] = indices.size();
  Tensor out(std::move(s));
  const std::size_t n = row_size();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= rows()) throw InputDomainError("row index out of range");
    std::copy_n(data_.begin() + indices[i] * n, n, out.data_.begin() + i * n);
  }
  return out;
}

Tensor Tensor::reshaped(Shape shape) const {
  return Tensor(std::move(shape), data_);
}

Tensor Tensor::concat_rows(const Tensor& a, const Tensor& b) {
  if (a.empty()) return b;
  if (b.empty()) return a;
  if (!std::equal(a.shape_.begin() + 1, a.shape_.end(), b.shape_.begin() + 1,
                  b.shape_.end())) {
    throw InputDomainError("concat_rows: trailing shapes differ (" +
                           a.shape_string() + " vs " + b.shape_string() + ")");
  }
  Shape s = a.shape_;
  s[0] += b.shape_[0];
  std::vector<double> d = a.data_;
  d.insert(d.end(), b.data_.begin(), b.data_.end());
  return Tensor(std::move(s), std::move(d));
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](double v) { return std::isfinite(v); });
}

std::string Tensor::shape_string() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (i) os << 'x';
    os << shape_[i];
  }
  os << ']';
  return os.str();
}

}  // namespace unig
