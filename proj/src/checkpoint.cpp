#include "topkast/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace topkast {

namespace {

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  template <typename Scalar>
  void scalar(Scalar v) {
    if constexpr (sizeof(Scalar) == 4) {
      u32(std::bit_cast<std::uint32_t>(v));
    } else {
      u64(std::bit_cast<std::uint64_t>(v));
    }
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_.insert(out_.end(), s.begin(), s.end());
  }
  void indices(const IndexSet& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    for (std::uint32_t i : s) u32(i);
  }
  void bytes(const std::vector<std::uint8_t>& b) {
    u64(b.size());
    out_.insert(out_.end(), b.begin(), b.end());
  }
  void bitmaps(const std::vector<std::vector<std::uint8_t>>& maps) {
    u32(static_cast<std::uint32_t>(maps.size()));
    for (const auto& m : maps) bytes(m);
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& in) : in_(in) {}

  const std::uint8_t* take(std::size_t n) {
    if (in_.size() - pos_ < n) throw TruncationError("checkpoint truncated at byte " + std::to_string(pos_));
    const std::uint8_t* p = in_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::uint8_t u8() { return *take(1); }
  std::uint32_t u32() {
    const std::uint8_t* p = take(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{p[i]} << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    const std::uint8_t* p = take(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{p[i]} << (8 * i);
    return v;
  }
  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
  double f64() { return std::bit_cast<double>(u64()); }
  template <typename Scalar>
  Scalar scalar() {
    if constexpr (sizeof(Scalar) == 4) {
      return std::bit_cast<Scalar>(u32());
    } else {
      return std::bit_cast<Scalar>(u64());
    }
  }
  /// Element count that must fit in the remaining bytes.
  std::size_t count(std::size_t element_bytes) {
    const std::uint64_t n = u32();
    if (n * element_bytes > in_.size() - pos_) throw TruncationError("checkpoint truncated inside an array");
    return static_cast<std::size_t>(n);
  }
  std::string str() {
    const std::size_t n = count(1);
    const std::uint8_t* p = take(n);
    return std::string(reinterpret_cast<const char*>(p), n);
  }
  IndexSet indices() {
    const std::size_t n = count(4);
    IndexSet s(n);
    for (auto& i : s) i = u32();
    return s;
  }
  std::vector<std::uint8_t> bytes() {
    const std::uint64_t n = u64();
    if (n > in_.size() - pos_) throw TruncationError("checkpoint truncated inside a bitmap");
    const std::uint8_t* p = take(static_cast<std::size_t>(n));
    return {p, p + n};
  }
  std::vector<std::vector<std::uint8_t>> bitmaps() {
    const std::size_t n = count(8);
    std::vector<std::vector<std::uint8_t>> maps(n);
    for (auto& m : maps) m = bytes();
    return maps;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  const std::vector<std::uint8_t>& in_;
  std::size_t pos_ = 0;
};

constexpr std::uint32_t kEndMarker = 0x544B4153;  // "SAKT" little-endian

}  // namespace

template <typename Scalar>
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint<Scalar>& c) {
  Writer w;
  for (char ch : kCheckpointMagic) w.u8(static_cast<std::uint8_t>(ch));
  w.u32(kCheckpointVersion);
  w.u8(static_cast<std::uint8_t>(sizeof(Scalar)));
  w.i64(c.step);
  w.u64(c.seed);

  w.u32(static_cast<std::uint32_t>(c.store.size()));
  for (const auto& layer : c.store) {
    w.str(layer.name);
    w.u8(layer.is_weight ? 1 : 0);
    w.u32(static_cast<std::uint32_t>(layer.value.rank()));
    for (Index d : layer.value.shape()) w.i64(d);
    w.template scalar<Scalar>(layer.init_std);
    for (Scalar v : layer.value.flat()) w.template scalar<Scalar>(v);
  }

  w.i64(c.masks.step_built);
  w.u32(static_cast<std::uint32_t>(c.masks.layers.size()));
  for (const LayerMask& m : c.masks.layers) {
    w.indices(m.a);
    w.indices(m.b);
  }

  w.u32(static_cast<std::uint32_t>(c.momentum.size()));
  for (const auto& v : c.momentum) {
    w.u64(static_cast<std::uint64_t>(v.size()));
    for (Index i = 0; i < v.size(); ++i) w.template scalar<Scalar>(v[i]);
  }

  w.u64(c.batch_epoch);
  w.i64(c.batch_cursor);

  w.i64(c.churn_reference.step);
  w.bitmaps(c.churn_reference.layers);
  w.f64(c.churn_min);
  w.f64(c.churn_mean);
  w.f64(c.churn_max);
  w.bitmaps(c.reservoir.reservoir());
  w.bitmaps(c.reservoir.history());
  w.f64(c.window_loss_sum);
  w.i64(c.window_count);
  w.i64(c.nonfinite_streak);
  w.u32(kEndMarker);
  return w.take();
}

template <typename Scalar>
Checkpoint<Scalar> decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  const std::uint8_t* magic = r.take(4);
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0) throw FormatError("not a checkpoint (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw VersionError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                       std::to_string(kCheckpointVersion) + ")");
  }
  const std::uint8_t width = r.u8();
  if (width != sizeof(Scalar)) {
    throw FormatError("checkpoint stores " + std::to_string(8 * width) + "-bit scalars, expected " +
                      std::to_string(8 * sizeof(Scalar)));
  }
  Checkpoint<Scalar> c;
  c.step = r.i64();
  c.seed = r.u64();

  const std::size_t layers = r.count(1);
  std::vector<ParamLayer<Scalar>> params;
  for (std::size_t l = 0; l < layers; ++l) {
    ParamLayer<Scalar> p;
    p.name = r.str();
    p.is_weight = r.u8() != 0;
    const std::size_t rank = r.count(8);
    std::vector<Index> shape(rank);
    for (Index& d : shape) {
      d = r.i64();
      if (d <= 0) throw FormatError("checkpoint layer '" + p.name + "' has a non-positive dimension");
    }
    p.init_std = r.template scalar<Scalar>();
    const Index n = shape_product(shape);
    if (static_cast<std::uint64_t>(n) * sizeof(Scalar) > bytes.size()) throw TruncationError("checkpoint truncated in layer data");
    Vector<Scalar> values(n);
    for (Index i = 0; i < n; ++i) values[i] = r.template scalar<Scalar>();
    p.value = Tensor<Scalar>(std::move(shape), std::move(values));
    params.push_back(std::move(p));
  }
  c.store = DenseParamStore<Scalar>(std::move(params));

  c.masks.step_built = r.i64();
  const std::size_t masks = r.count(8);
  for (std::size_t l = 0; l < masks; ++l) {
    LayerMask m;
    m.a = r.indices();
    m.b = r.indices();
    c.masks.layers.push_back(std::move(m));
  }

  const std::size_t momenta = r.count(8);
  for (std::size_t l = 0; l < momenta; ++l) {
    const std::uint64_t n = r.u64();
    if (n * sizeof(Scalar) > bytes.size()) throw TruncationError("checkpoint truncated in momentum data");
    Vector<Scalar> v(static_cast<Index>(n));
    for (Index i = 0; i < v.size(); ++i) v[i] = r.template scalar<Scalar>();
    c.momentum.push_back(std::move(v));
  }

  c.batch_epoch = r.u64();
  c.batch_cursor = r.i64();

  c.churn_reference.step = r.i64();
  c.churn_reference.layers = r.bitmaps();
  c.churn_min = r.f64();
  c.churn_mean = r.f64();
  c.churn_max = r.f64();
  auto reservoir = r.bitmaps();
  auto history = r.bitmaps();
  c.reservoir = ReservoirTracker::restore(std::move(reservoir), std::move(history));
  c.window_loss_sum = r.f64();
  c.window_count = r.i64();
  c.nonfinite_streak = r.i64();
  if (r.u32() != kEndMarker) throw FormatError("checkpoint end marker missing");
  if (!r.done()) throw FormatError("trailing bytes after checkpoint");
  return c;
}

template <typename Scalar>
void save_checkpoint(const std::string& path, const Checkpoint<Scalar>& ckpt) {
  const std::vector<std::uint8_t> bytes = encode_checkpoint(ckpt);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw IoError("write failed for checkpoint " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path + ": " + ec.message());
}

namespace {

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

template <typename Scalar>
Checkpoint<Scalar> load_checkpoint(const std::string& path) {
  return decode_checkpoint<Scalar>(read_file(path));
}

int checkpoint_scalar_bytes(const std::string& path) {
  const std::vector<std::uint8_t> bytes = read_file(path);
  Reader r(bytes);
  if (std::memcmp(r.take(4), kCheckpointMagic, 4) != 0) throw FormatError("not a checkpoint (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) throw VersionError("checkpoint version " + std::to_string(version) + " is not supported");
  return r.u8();
}

template std::vector<std::uint8_t> encode_checkpoint<float>(const Checkpoint<float>&);
template std::vector<std::uint8_t> encode_checkpoint<double>(const Checkpoint<double>&);
template Checkpoint<float> decode_checkpoint<float>(const std::vector<std::uint8_t>&);
template Checkpoint<double> decode_checkpoint<double>(const std::vector<std::uint8_t>&);
template void save_checkpoint<float>(const std::string&, const Checkpoint<float>&);
template void save_checkpoint<double>(const std::string&, const Checkpoint<double>&);
template Checkpoint<float> load_checkpoint<float>(const std::string&);
template Checkpoint<double> load_checkpoint<double>(const std::string&);

}  // namespace topkast
