#pragma once

// RDLT checkpoint files.
//
// Layout (all integers and reals little-endian):
//   "RDLT"  u32 version  u64 seed  u32 len + config text (UTF-8 JSON)
//   u32 n_layers, then per layer: u64 record_len + record
//   linear record: u32 kind=0, u32 activation, matrix U, matrix S, matrix V, vector bias
//   conv record:   u32 kind=1, u32 activation, u32 width, u32 height,
//                  matrix U_out, matrix U_in, tensor core, vector bias
//   matrix = u32 rows, u32 cols, rows·cols f64 (row-major)
//   tensor = 4 × u32 dims, product f64 (last index fastest)
//   vector = u32 len, len f64

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "rdlt/layers.hpp"
#include "rdlt/linalg.hpp"

namespace rdlt {

inline constexpr char kCheckpointMagic[4] = {'R', 'D', 'L', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  enum class Kind { io, magic_mismatch, version_mismatch, corrupt_record };
  CheckpointError(Kind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

struct Checkpoint {
  Network network;
  std::string config_text;
  std::uint64_t seed = 0;
};

namespace detail {

class ByteWriter {
 public:
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
  void bytes(const std::string& s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
  void raw(const std::vector<unsigned char>& b) { buf_.insert(buf_.end(), b.begin(), b.end()); }
  void matrix(const DenseMatrix& m) {
    u32(checked32(m.rows()));
    u32(checked32(m.cols()));
    for (double v : m.values()) f64(v);
  }
  void tensor(const DenseTensor4& t) {
    for (std::size_t d : t.dims()) u32(checked32(d));
    for (double v : t.values()) f64(v);
  }
  void vector(const std::vector<double>& v) {
    u32(checked32(v.size()));
    for (double x : v) f64(x);
  }
  const std::vector<unsigned char>& data() const { return buf_; }

  static std::uint32_t checked32(std::size_t n) {
    if (n > 0xFFFFFFFFu) throw std::length_error("checkpoint: dimension exceeds u32");
    return static_cast<std::uint32_t>(n);
  }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  std::vector<unsigned char> buf_;
};

class ByteReader {
 public:
  ByteReader(const unsigned char* p, std::size_t n, std::string ctx) : p_(p), n_(n), ctx_(std::move(ctx)) {}

  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  double f64() { return std::bit_cast<double>(get(8)); }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(p_ + at_), n);
    at_ += n;
    return s;
  }
  DenseMatrix matrix() {
    const std::size_t r = u32(), c = u32();
    need_reals(r * c);
    std::vector<double> v(r * c);
    for (double& x : v) x = f64();
    return DenseMatrix(r, c, std::move(v));
  }
  DenseTensor4 tensor() {
    DenseTensor4::Dims d{};
    for (auto& x : d) x = u32();
    const std::size_t n = d[0] * d[1] * d[2] * d[3];
    need_reals(n);
    std::vector<double> v(n);
    for (double& x : v) x = f64();
    return DenseTensor4(d, std::move(v));
  }
  std::vector<double> vector() {
    const std::size_t n = u32();
    need_reals(n);
    std::vector<double> v(n);
    for (double& x : v) x = f64();
    return v;
  }
  std::size_t remaining() const { return n_ - at_; }
  const unsigned char* cursor() const { return p_ + at_; }
  void skip(std::size_t n) {
    need(n);
    at_ += n;
  }

 private:
  void need(std::size_t n) const {
    if (n > n_ - at_)
      throw CheckpointError(CheckpointError::Kind::corrupt_record, ctx_ + ": truncated (need " + std::to_string(n) +
                                                                       " bytes, have " + std::to_string(n_ - at_) + ")");
  }
  void need_reals(std::size_t n) const {
    if (n > (n_ - at_) / 8) need(n_ - at_ + 1);
  }
  std::uint64_t get(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= std::uint64_t{p_[at_ + static_cast<std::size_t>(i)]} << (8 * i);
    at_ += static_cast<std::size_t>(n);
    return v;
  }
  const unsigned char* p_;
  std::size_t n_;
  std::size_t at_ = 0;
  std::string ctx_;
};

inline std::vector<unsigned char> encode_layer(const Layer& layer) {
  ByteWriter w;
  if (const auto* lin = std::get_if<FactorizedLinear>(&layer)) {
    w.u32(0);
    w.u32(static_cast<std::uint32_t>(lin->activation));
    w.matrix(lin->U);
    w.matrix(lin->S);
    w.matrix(lin->V);
    w.vector(lin->bias);
  } else {
    const auto& conv = std::get<LowRankConv2D>(layer);
    w.u32(1);
    w.u32(static_cast<std::uint32_t>(conv.activation));
    w.u32(ByteWriter::checked32(conv.width));
    w.u32(ByteWriter::checked32(conv.height));
    w.matrix(conv.U_out);
    w.matrix(conv.U_in);
    w.tensor(conv.core);
    w.vector(conv.bias);
  }
  return w.data();
}

inline Activation decode_activation(std::uint32_t a, const std::string& ctx) {
  if (a > static_cast<std::uint32_t>(Activation::softmax))
    throw CheckpointError(CheckpointError::Kind::corrupt_record, ctx + ": unknown activation code " + std::to_string(a));
  return static_cast<Activation>(a);
}

inline Layer decode_layer(ByteReader& r, const std::string& ctx) {
  const std::uint32_t kind = r.u32();
  const Activation act = decode_activation(r.u32(), ctx);
  Layer out;
  if (kind == 0) {
    FactorizedLinear l;
    l.activation = act;
    l.U = r.matrix();
    l.S = r.matrix();
    l.V = r.matrix();
    l.bias = r.vector();
    out = std::move(l);
  } else if (kind == 1) {
    LowRankConv2D c;
    c.activation = act;
    c.width = r.u32();
    c.height = r.u32();
    c.U_out = r.matrix();
    c.U_in = r.matrix();
    c.core = r.tensor();
    c.bias = r.vector();
    out = std::move(c);
  } else {
    throw CheckpointError(CheckpointError::Kind::corrupt_record, ctx + ": unknown layer kind " + std::to_string(kind));
  }
  if (r.remaining() != 0)
    throw CheckpointError(CheckpointError::Kind::corrupt_record, ctx + ": " + std::to_string(r.remaining()) +
                                                                     " trailing bytes");
  try {
    std::visit([](const auto& x) { x.validate(); }, out);
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(CheckpointError::Kind::corrupt_record, ctx + ": " + e.what());
  }
  return out;
}

}  // namespace detail

inline std::vector<unsigned char> encode_checkpoint(const Checkpoint& ck) {
  detail::ByteWriter w;
  w.bytes(std::string(kCheckpointMagic, 4));
  w.u32(kCheckpointVersion);
  w.u64(ck.seed);
  w.u32(detail::ByteWriter::checked32(ck.config_text.size()));
  w.bytes(ck.config_text);
  w.u32(detail::ByteWriter::checked32(ck.network.layers.size()));
  for (const auto& layer : ck.network.layers) {
    const auto rec = detail::encode_layer(layer);
    w.u64(rec.size());
    w.raw(rec);
  }
  return w.data();
}

/// Parses a whole image; throws before returning anything on any defect.
inline Checkpoint decode_checkpoint(const std::vector<unsigned char>& bytes, const std::string& ctx = "checkpoint") {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0)
    throw CheckpointError(CheckpointError::Kind::magic_mismatch, ctx + ": missing RDLT magic");
  detail::ByteReader r(bytes.data() + 4, bytes.size() - 4, ctx);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw CheckpointError(CheckpointError::Kind::version_mismatch, ctx + ": version " + std::to_string(version) +
                                                                       ", expected " +
                                                                       std::to_string(kCheckpointVersion));
  Checkpoint ck;
  ck.seed = r.u64();
  ck.config_text = r.bytes(r.u32());
  const std::uint32_t n = r.u32();
  for (std::uint32_t l = 0; l < n; ++l) {
    const std::string lctx = ctx + " layer " + std::to_string(l);
    const std::uint64_t len = r.u64();
    if (len > r.remaining())
      throw CheckpointError(CheckpointError::Kind::corrupt_record, lctx + ": record length " + std::to_string(len) +
                                                                       " exceeds file");
    detail::ByteReader rec(r.cursor(), static_cast<std::size_t>(len), lctx);
    ck.network.layers.push_back(detail::decode_layer(rec, lctx));
    r.skip(static_cast<std::size_t>(len));
  }
  if (r.remaining() != 0)
    throw CheckpointError(CheckpointError::Kind::corrupt_record, ctx + ": trailing bytes after last record");
  try {
    if (!ck.network.layers.empty()) ck.network.validate();
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(CheckpointError::Kind::corrupt_record, ctx + ": " + e.what());
  }
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  const auto bytes = encode_checkpoint(ck);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError(CheckpointError::Kind::io, "cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) throw CheckpointError(CheckpointError::Kind::io, "write failed for '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(CheckpointError::Kind::io, "cannot open '" + path + "'");
  const std::vector<unsigned char> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return decode_checkpoint(bytes, path);
}

}  // namespace rdlt
