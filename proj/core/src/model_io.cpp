#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "unig/error.hpp"
#include "unig/model.hpp"

namespace unig {
namespace {

constexpr std::array<std::uint8_t, 4> kMagic{'U', 'N', 'G', 'W'};
constexpr std::uint16_t kVersion = 1;

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint64_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(double v) { u32(std::bit_cast<std::uint32_t>(static_cast<float>(v))); }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint8_t u8(const char* what) {
    need(1, what);
    return bytes_[pos_++];
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    std::uint16_t v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  double f32(const char* what) { return static_cast<double>(std::bit_cast<float>(u32(what))); }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw FormatError(std::string("truncated model file while reading ") + what, pos_);
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

void write_layer(Writer& w, const Layer& l) {
  w.u8(static_cast<std::uint8_t>(l.kind));
  w.u8(static_cast<std::uint8_t>(l.activation));
  if (l.kind == LayerKind::kConv2d) {
    w.u8(6);
    for (std::size_t d : {l.out, l.in, l.kernel, l.kernel, l.stride, l.pad}) w.u32(d);
  } else {
    w.u8(2);
    w.u32(l.out);
    w.u32(l.in);
  }
  for (double v : l.weights) w.f32(v);
  for (double v : l.bias) w.f32(v);
}

Layer read_layer(Reader& r) {
  const std::size_t start = r.pos();
  Layer l;
  const std::uint8_t kind = r.u8("layer kind");
  if (kind != static_cast<std::uint8_t>(LayerKind::kConv2d) &&
      kind != static_cast<std::uint8_t>(LayerKind::kDense)) {
    throw FormatError("unknown layer kind " + std::to_string(kind), start);
  }
  l.kind = static_cast<LayerKind>(kind);
  const std::uint8_t act = r.u8("activation");
  if (act > static_cast<std::uint8_t>(Activation::kRelu)) {
    throw FormatError("unknown activation " + std::to_string(act), start + 1);
  }
  l.activation = static_cast<Activation>(act);
  const std::size_t dims_at = r.pos();
  const std::uint8_t ndims = r.u8("dimension count");
  const std::uint8_t expect = l.kind == LayerKind::kConv2d ? 6 : 2;
  if (ndims != expect) {
    throw FormatError("layer has " + std::to_string(ndims) + " dims, expected " +
                          std::to_string(expect),
                      dims_at);
  }
  std::vector<std::uint32_t> dims;
  for (int i = 0; i < ndims; ++i) dims.push_back(r.u32("layer dims"));
  l.out = dims[0];
  l.in = dims[1];
  if (l.kind == LayerKind::kConv2d) {
    if (dims[2] != dims[3]) throw FormatError("non-square kernel", dims_at);
    l.kernel = dims[2];
    l.stride = dims[4];
    l.pad = dims[5];
  }
  const std::size_t n = l.weight_count();
  if (n > r.remaining() / 4) {
    throw FormatError("truncated model file while reading weights", r.pos());
  }
  l.weights.resize(n);
  for (double& v : l.weights) v = r.f32("weights");
  l.bias.resize(l.out);
  for (double& v : l.bias) v = r.f32("bias");
  return l;
}

}  // namespace

std::vector<std::uint8_t> serialize_model(const ClassifierModel& model) {
  Writer w;
  for (std::uint8_t b : kMagic) w.u8(b);
  w.u16(kVersion);
  const InputShape& in = model.input_shape();
  w.u32(in.channels);
  w.u32(in.height);
  w.u32(in.width);
  w.u32(model.extractor().size() + 1);
  for (const Layer& l : model.extractor()) write_layer(w, l);
  write_layer(w, model.head());
  return w.take();
}

ClassifierModel deserialize_model(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  for (std::uint8_t b : kMagic) {
    if (r.remaining() == 0) throw FormatError("truncated model file while reading magic", r.pos());
    if (r.u8("magic") != b) throw FormatError("bad magic", 0);
  }
  const std::uint16_t version = r.u16("version");
  if (version != kVersion) {
    throw FormatError("unsupported version " + std::to_string(version), 4);
  }
  InputShape in;
  in.channels = r.u32("input channels");
  in.height = r.u32("input height");
  in.width = r.u32("input width");
  const std::size_t count_at = r.pos();
  const std::uint32_t count = r.u32("layer count");
  if (count == 0) throw FormatError("model has no layers", count_at);
  std::vector<Layer> layers;
  for (std::uint32_t i = 0; i < count; ++i) layers.push_back(read_layer(r));
  if (r.remaining() != 0) {
    throw FormatError("trailing bytes after last layer", r.pos());
  }
  Layer head = std::move(layers.back());
  layers.pop_back();
  try {
    return ClassifierModel(in, std::move(layers), std::move(head));
  } catch (const InputDomainError& e) {
    throw FormatError(std::string("inconsistent layer shapes: ") + e.what(), count_at);
  }
}

void save_model(const ClassifierModel& model, const std::filesystem::path& path) {
  const auto bytes = serialize_model(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

ClassifierModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open model file '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return deserialize_model(bytes);
}

}  // namespace unig
