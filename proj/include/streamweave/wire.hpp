#pragma once

// Binary window payload codec. All integers and floats are little-endian.
//
//   "SWV1" | window_id u64 | stream count u32 | infeasible u8
//   per stream: stream_id u32 | real count u32 | f64 * count | model flag u8
//               [kind u8 | coeff count u8 | f64 * coeff count | predictor_id u32 | n_imputed u32]

#include <algorithm>
#include <array>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "streamweave/allocator.hpp"
#include "streamweave/error.hpp"
#include "streamweave/models.hpp"

namespace streamweave::wire {

inline constexpr std::array<std::uint8_t, 4> kMagic{'S', 'W', 'V', '1'};
inline constexpr std::size_t kHeaderBytes = 4 + 8 + 4 + 1;
/// stream_id + real count + model flag
inline constexpr std::size_t kStreamOverheadBytes = 4 + 4 + 1;
inline constexpr std::size_t kSampleBytes = 8;

struct ModelBlock {
  models::ModelKind kind = models::ModelKind::MeanOnly;
  std::vector<double> coefficients;
  std::uint32_t predictor_id = 0;
  std::uint32_t n_imputed = 0;

  friend bool operator==(const ModelBlock&, const ModelBlock&) = default;
};

struct StreamEntry {
  std::uint32_t stream_id = 0;
  std::vector<double> real_values;
  std::optional<ModelBlock> model;

  friend bool operator==(const StreamEntry&, const StreamEntry&) = default;
};

struct WindowPayload {
  std::uint64_t window_id = 0;
  std::vector<StreamEntry> streams;
  bool infeasible = false;

  [[nodiscard]] const StreamEntry* find(std::uint32_t stream_id) const {
    for (const auto& s : streams) {
      if (s.stream_id == stream_id) return &s;
    }
    return nullptr;
  }

  friend bool operator==(const WindowPayload&, const WindowPayload&) = default;
};

namespace detail {

class Writer {
 public:
  explicit Writer(std::vector<std::uint8_t>& out) : out_(out) {}

  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int b = 0; b < 4; ++b) out_.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
  }
  void u64(std::uint64_t v) {
    for (int b = 0; b < 8; ++b) out_.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

 private:
  std::vector<std::uint8_t>& out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  std::uint8_t u8() {
    need(1);
    return in_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(in_[pos_++]) << (8 * b);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int b = 0; b < 8; ++b) v |= static_cast<std::uint64_t>(in_[pos_++]) << (8 * b);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }

  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) {
      throw Error(Errc::Truncated, "payload truncated at byte " + std::to_string(pos_) + ", need " +
                                       std::to_string(n) + " more");
    }
  }
  [[nodiscard]] std::size_t remaining() const { return in_.size() - pos_; }
  [[nodiscard]] std::size_t position() const { return pos_; }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

inline bool valid_kind(std::uint8_t k) { return k == 0 || k == 1 || k == 3; }

}  // namespace detail

[[nodiscard]] inline std::size_t stream_bytes(const StreamEntry& s) {
  std::size_t n = kStreamOverheadBytes + kSampleBytes * s.real_values.size();
  if (s.model) n += models::kModelHeaderBytes + kSampleBytes * s.model->coefficients.size();
  return n;
}

[[nodiscard]] inline std::size_t encoded_size(const WindowPayload& p) {
  std::size_t n = kHeaderBytes;
  for (const auto& s : p.streams) n += stream_bytes(s);
  return n;
}

[[nodiscard]] inline std::vector<std::uint8_t> encode(const WindowPayload& p) {
  std::vector<std::uint8_t> out;
  out.reserve(encoded_size(p));
  detail::Writer w(out);
  for (auto b : kMagic) w.u8(b);
  w.u64(p.window_id);
  w.u32(static_cast<std::uint32_t>(p.streams.size()));
  w.u8(p.infeasible ? 1 : 0);
  for (const auto& s : p.streams) {
    w.u32(s.stream_id);
    w.u32(static_cast<std::uint32_t>(s.real_values.size()));
    for (double v : s.real_values) w.f64(v);
    w.u8(s.model ? 1 : 0);
    if (s.model) {
      w.u8(static_cast<std::uint8_t>(s.model->kind));
      w.u8(static_cast<std::uint8_t>(s.model->coefficients.size()));
      for (double c : s.model->coefficients) w.f64(c);
      w.u32(s.model->predictor_id);
      w.u32(s.model->n_imputed);
    }
  }
  return out;
}

[[nodiscard]] inline WindowPayload decode(std::span<const std::uint8_t> bytes) {
  detail::Reader r(bytes);
  if (bytes.size() < kMagic.size() ||
      !std::equal(kMagic.begin(), kMagic.end(), bytes.begin())) {
    if (bytes.size() < kMagic.size() && std::equal(bytes.begin(), bytes.end(), kMagic.begin())) {
      throw Error(Errc::Truncated, "payload shorter than magic");
    }
    throw Error(Errc::BadMagic, "payload does not start with SWV1");
  }
  for (std::size_t i = 0; i < kMagic.size(); ++i) (void)r.u8();
  WindowPayload p;
  p.window_id = r.u64();
  const std::uint32_t count = r.u32();
  const std::uint8_t infeasible = r.u8();
  if (infeasible > 1) throw Error(Errc::MalformedPayload, "infeasible flag must be 0 or 1");
  p.infeasible = infeasible == 1;
  // Each stream needs at least its fixed overhead; reject absurd counts before allocating.
  r.need(static_cast<std::size_t>(count) * kStreamOverheadBytes);
  p.streams.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    StreamEntry s;
    s.stream_id = r.u32();
    const std::uint32_t n = r.u32();
    r.need(static_cast<std::size_t>(n) * kSampleBytes);
    s.real_values.resize(n);
    for (auto& v : s.real_values) v = r.f64();
    const std::uint8_t flag = r.u8();
    if (flag > 1) throw Error(Errc::MalformedPayload, "model flag must be 0 or 1");
    if (flag == 1) {
      ModelBlock m;
      const std::uint8_t kind = r.u8();
      if (!detail::valid_kind(kind)) throw Error(Errc::MalformedPayload, "unknown model kind " + std::to_string(kind));
      m.kind = static_cast<models::ModelKind>(kind);
      const std::uint8_t nc = r.u8();
      if (nc != models::coefficient_count(m.kind)) {
        throw Error(Errc::MalformedPayload, "coefficient count does not match model kind");
      }
      m.coefficients.resize(nc);
      for (auto& c : m.coefficients) c = r.f64();
      m.predictor_id = r.u32();
      m.n_imputed = r.u32();
      if (m.n_imputed == 0) {
        throw Error(Errc::ModelFlagInconsistent, "model block with n_imputed = 0 for stream " +
                                                     std::to_string(s.stream_id));
      }
      s.model = std::move(m);
    }
    p.streams.push_back(std::move(s));
  }
  if (r.remaining() != 0) {
    throw Error(Errc::TrailingGarbage, std::to_string(r.remaining()) + " bytes after the last stream");
  }
  return p;
}

/// Default bytes cost model: 8 bytes per real sample, the model block size
/// per imputing stream. Per-stream fixed overhead is accounted separately.
[[nodiscard]] inline alloc::CostModel bytes_cost_model(std::size_t k, models::ModelKind kind) {
  alloc::CostModel c;
  c.per_sample_cost.assign(k, static_cast<double>(kSampleBytes));
  c.model_cost.assign(k, static_cast<double>(models::model_byte_size(kind)));
  return c;
}

/// Encoded bytes excluding the 17-byte header.
[[nodiscard]] inline double measure_cost(const WindowPayload& p) {
  double c = 0.0;
  for (const auto& s : p.streams) c += static_cast<double>(stream_bytes(s));
  return c;
}

/// Heterogeneous cost; stream_id indexes the cost vectors.
[[nodiscard]] inline double measure_cost(const WindowPayload& p, const alloc::CostModel& cost) {
  double c = 0.0;
  for (const auto& s : p.streams) {
    if (s.stream_id >= cost.per_sample_cost.size()) {
      throw Error(Errc::UnknownStream, "no cost entry for stream " + std::to_string(s.stream_id));
    }
    c += cost.cost(s.stream_id, static_cast<double>(s.real_values.size()),
                   s.model ? static_cast<double>(s.model->n_imputed) : 0.0);
  }
  return c;
}

/// [u32 length][bytes]
[[nodiscard]] inline std::vector<std::uint8_t> frame(std::span<const std::uint8_t> bytes) {
  std::vector<std::uint8_t> out;
  out.reserve(bytes.size() + 4);
  detail::Writer w(out);
  w.u32(static_cast<std::uint32_t>(bytes.size()));
  out.insert(out.end(), bytes.begin(), bytes.end());
  return out;
}

}  // namespace streamweave::wire
