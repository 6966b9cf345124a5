#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "unig/tensor.hpp"

namespace unig {

/// Labelled images, [n x channels x height x width] with values in [0, 1].
struct Dataset {
  Tensor images;
  std::vector<int> labels;
  std::size_t classes = 0;
  std::string name;

  std::size_t size() const { return labels.size(); }
  std::size_t channels() const { return images.dim(1); }
  std::size_t height() const { return images.dim(2); }
  std::size_t width() const { return images.dim(3); }

  Dataset subset(std::span<const std::size_t> indices) const;
  Dataset head(std::size_t n) const;

  // Throws InputDomainError if labels or pixel values are out of range.
  void validate() const;
};

}  // namespace unig
