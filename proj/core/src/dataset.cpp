#include "unig/dataset.hpp"

#include <numeric>

#include "unig/error.hpp"

namespace unig {

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.images = images.gather_rows(indices);
  out.labels.reserve(indices.size());
  for (std::size_t i : indices) out.labels.push_back(labels.at(i));
  out.classes = classes;
  out.name = name;
  return out;
}

Dataset Dataset::head(std::size_t n) const {
  std::vector<std::size_t> idx(std::min(n, size()));
  std::iota(idx.begin(), idx.end(), 0);
  return subset(idx);
}

void Dataset::validate() const {
  if (images.rank() != 4) {
    throw InputDomainError("dataset images must be [n x c x h x w], got " +
                           images.shape_string());
  }
  if (images.rows() != labels.size()) {
    throw InputDomainError("dataset has " + std::to_string(images.rows()) +
                           " images but " + std::to_string(labels.size()) +
                           " labels");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw InputDomainError("dataset label " + std::to_string(y) +
                             " outside [0, " + std::to_string(classes) + ")");
    }
  }
  for (double v : images.data()) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw InputDomainError("dataset pixel outside [0, 1]");
    }
  }
}

}  // namespace unig
