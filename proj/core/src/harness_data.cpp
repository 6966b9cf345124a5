// Dataset sources: the synthetic shape generator and the IDX reader/writer.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>

#include "unig/error.hpp"
#include "unig/harness.hpp"
#include "unig/rng.hpp"

namespace unig {
namespace {

constexpr std::size_t kPatternCount = 10;

// Whether pixel (r, c) belongs to the foreground of pattern `kind`. `j` holds
// per-image jitter in [0, 1).
bool foreground(std::size_t kind, double r, double c, double side,
                const double j[4]) {
  const double cx = side / 2.0 - 0.5 + (j[0] - 0.5) * 0.25 * side;
  const double cy = side / 2.0 - 0.5 + (j[1] - 0.5) * 0.25 * side;
  const int period = 4 + static_cast<int>(j[2] * 3.0);  // 4..6
  const int phase = static_cast<int>(j[3] * period);
  auto band = [&](double v) {
    return (static_cast<int>(v) + phase) % period < period / 2;
  };
  switch (kind) {
    case 0: return band(r);
    case 1: return band(c);
    case 2: {
      const int cell = period - 1;
      return ((static_cast<int>(r) + phase) / cell +
              (static_cast<int>(c) + phase) / cell) % 2 == 0;
    }
    case 3: {
      const double rad = side * (0.22 + 0.12 * j[2]);
      return std::hypot(r - cy, c - cx) <= rad;
    }
    case 4: {
      const double inset = 1.0 + std::floor(j[2] * 3.0);
      const double lo = inset, hi = side - 1.0 - inset;
      const bool inside = r >= lo && r <= hi && c >= lo && c <= hi;
      const bool core = r >= lo + 2 && r <= hi - 2 && c >= lo + 2 && c <= hi - 2;
      return inside && !core;
    }
    case 5: return band(r + c);
    case 6: {
      const double half = 1.0 + j[2];
      return std::abs(r - cy) <= half || std::abs(c - cx) <= half;
    }
    case 7: {
      const double rad = side * (0.28 + 0.1 * j[2]);
      const double d = std::hypot(r - cy, c - cx);
      return d <= rad && d >= rad - 2.0;
    }
    case 8: {
      // Upward triangle with apex near the top.
      const double top = 2.0 + j[2] * 2.0, bottom = side - 2.0 - j[3] * 2.0;
      if (r < top || r > bottom) return false;
      const double halfw = (r - top) / (bottom - top) * side * 0.4;
      return std::abs(c - cx) <= halfw;
    }
    default: {
      const int step = 4 + static_cast<int>(j[2] * 2.0);
      const int ri = static_cast<int>(r) + phase, ci = static_cast<int>(c) + phase;
      return ri % step < 2 && ci % step < 2;
    }
  }
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& bytes, std::size_t at,
                        const std::string& what) {
  if (at + 4 > bytes.size()) {
    throw FormatError("truncated IDX file while reading " + what, bytes.size());
  }
  return (std::uint32_t{bytes[at]} << 24) | (std::uint32_t{bytes[at + 1]} << 16) |
         (std::uint32_t{bytes[at + 2]} << 8) | std::uint32_t{bytes[at + 3]};
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void append_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) {
    out.push_back(static_cast<std::uint8_t>(v >> shift));
  }
}

void write_file(const std::filesystem::path& path,
                const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

}  // namespace

Dataset gen_synthetic_dataset(std::size_t classes, std::size_t n,
                              std::size_t image_side, std::uint64_t seed) {
  if (classes < 2 || classes > kPatternCount) {
    throw InputDomainError("synthetic classes must lie in [2, 10]");
  }
  if (image_side < 8 || image_side > 32) {
    throw InputDomainError("synthetic image side must lie in [8, 32]");
  }
  Dataset data;
  data.classes = classes;
  data.name = "synthetic-" + std::to_string(classes) + "c-" +
              std::to_string(image_side) + "px";
  data.images = Tensor({n, 1, image_side, image_side});
  data.labels.resize(n);
  const double side = static_cast<double>(image_side);
  for (std::size_t i = 0; i < n; ++i) {
    RngStream rng(derive_seed(seed, {i}));
    const auto label = static_cast<int>(i % classes);
    data.labels[i] = label;
    const double bg = rng.uniform(0.1, 0.35);
    const double fg = rng.uniform(0.65, 0.9);
    const double jitter[4] = {rng.uniform(), rng.uniform(), rng.uniform(),
                              rng.uniform()};
    auto img = data.images.row(i);
    for (std::size_t r = 0; r < image_side; ++r) {
      for (std::size_t c = 0; c < image_side; ++c) {
        const bool on = foreground(static_cast<std::size_t>(label),
                                   static_cast<double>(r),
                                   static_cast<double>(c), side, jitter);
        const double v = (on ? fg : bg) + 0.05 * rng.normal();
        img[r * image_side + c] = std::clamp(v, 0.0, 1.0);
      }
    }
  }
  return data;
}

Dataset load_idx_dataset(const std::filesystem::path& images_path,
                         const std::filesystem::path& labels_path) {
  const auto img = read_file(images_path);
  const auto lab = read_file(labels_path);
  if (read_be32(img, 0, "image magic") != 0x00000803) {
    throw FormatError("bad magic in IDX image file", 0);
  }
  if (read_be32(lab, 0, "label magic") != 0x00000801) {
    throw FormatError("bad magic in IDX label file", 0);
  }
  const std::size_t n = read_be32(img, 4, "image count");
  const std::size_t h = read_be32(img, 8, "image rows");
  const std::size_t w = read_be32(img, 12, "image columns");
  const std::size_t n_labels = read_be32(lab, 4, "label count");
  if (n != n_labels) {
    throw FormatError("IDX label count " + std::to_string(n_labels) +
                          " does not match image count " + std::to_string(n),
                      4);
  }
  if (h == 0 || w == 0) throw FormatError("IDX image with a zero dimension", 8);
  const std::size_t pixels = n * h * w;
  if (img.size() < 16 + pixels) {
    throw FormatError("truncated IDX image data", img.size());
  }
  if (img.size() > 16 + pixels) {
    throw FormatError("trailing bytes in IDX image file", 16 + pixels);
  }
  if (lab.size() != 8 + n) {
    throw FormatError(lab.size() < 8 + n ? "truncated IDX label data"
                                         : "trailing bytes in IDX label file",
                      std::min(lab.size(), 8 + n));
  }
  Dataset data;
  data.name = images_path.stem().string();
  data.images = Tensor({n, 1, h, w});
  for (std::size_t k = 0; k < pixels; ++k) {
    data.images[k] = static_cast<double>(img[16 + k]) / 255.0;
  }
  data.labels.resize(n);
  int max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    data.labels[i] = lab[8 + i];
    max_label = std::max(max_label, data.labels[i]);
  }
  data.classes = n == 0 ? 0 : static_cast<std::size_t>(max_label) + 1;
  return data;
}

void write_idx_dataset(const Dataset& data,
                       const std::filesystem::path& images_path,
                       const std::filesystem::path& labels_path) {
  data.validate();
  if (data.channels() != 1) {
    throw InputDomainError("IDX output supports single-channel images only");
  }
  std::vector<std::uint8_t> img;
  append_be32(img, 0x00000803);
  append_be32(img, static_cast<std::uint32_t>(data.size()));
  append_be32(img, static_cast<std::uint32_t>(data.height()));
  append_be32(img, static_cast<std::uint32_t>(data.width()));
  for (double v : data.images.data()) {
    img.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0)));
  }
  std::vector<std::uint8_t> lab;
  append_be32(lab, 0x00000801);
  append_be32(lab, static_cast<std::uint32_t>(data.size()));
  for (int y : data.labels) {
    if (y > 255) throw InputDomainError("IDX labels must fit in one byte");
    lab.push_back(static_cast<std::uint8_t>(y));
  }
  write_file(images_path, img);
  write_file(labels_path, lab);
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& data, std::size_t test,
                                          std::uint64_t seed) {
  if (test > data.size()) {
    throw InputDomainError("split_dataset: test size exceeds dataset");
  }
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), 0);
  RngStream rng(derive_seed(seed, {0x5B17}));
  rng.shuffle(std::span<std::size_t>(idx));
  const std::size_t cut = data.size() - test;
  std::vector<std::size_t> a(idx.begin(), idx.begin() + static_cast<long>(cut));
  std::vector<std::size_t> b(idx.begin() + static_cast<long>(cut), idx.end());
  return {data.subset(a), data.subset(b)};
}

}  // namespace unig
