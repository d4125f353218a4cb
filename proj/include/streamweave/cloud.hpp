#pragma once

// Cloud side: rebuild windows from payloads, persist them in an append-only
// log and answer per-device, per-window aggregate queries.

#include <boost/crc.hpp>

#include <cstddef>
#include <cstdio>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "streamweave/error.hpp"
#include "streamweave/log.hpp"
#include "streamweave/models.hpp"
#include "streamweave/stats.hpp"
#include "streamweave/wire.hpp"

namespace streamweave::cloud {

enum class Origin : std::uint8_t { Real = 0, Imputed = 1 };

struct Value {
  double value = 0.0;
  Origin origin = Origin::Real;

  friend bool operator==(const Value&, const Value&) = default;
};

struct StreamValues {
  std::uint32_t stream_id = 0;
  std::vector<Value> values;

  [[nodiscard]] std::size_t imputed_count() const {
    std::size_t n = 0;
    for (const auto& v : values) n += v.origin == Origin::Imputed ? 1 : 0;
    return n;
  }

  friend bool operator==(const StreamValues&, const StreamValues&) = default;
};

struct ReconstructedWindow {
  std::uint64_t window_id = 0;
  std::vector<StreamValues> streams;

  [[nodiscard]] const StreamValues* find(std::uint32_t stream_id) const {
    for (const auto& s : streams) {
      if (s.stream_id == stream_id) return &s;
    }
    return nullptr;
  }

  friend bool operator==(const ReconstructedWindow&, const ReconstructedWindow&) = default;
};

enum class Aggregate { Avg, Var, Min, Max };

inline constexpr Aggregate kAllAggregates[] = {Aggregate::Avg, Aggregate::Var, Aggregate::Min, Aggregate::Max};

constexpr std::string_view to_string(Aggregate a) noexcept {
  switch (a) {
    case Aggregate::Avg: return "AVG";
    case Aggregate::Var: return "VAR";
    case Aggregate::Min: return "MIN";
    case Aggregate::Max: return "MAX";
  }
  return "?";
}

struct QueryResult {
  std::uint32_t device_id = 0;
  std::uint64_t window_id = 0;
  Aggregate aggregate = Aggregate::Avg;
  double value = 0.0;
  std::size_t sample_count = 0;
  std::size_t imputed_count = 0;
};

inline constexpr std::string_view kQueryCsvHeader = "device_id,window_id,aggregate,value,sample_count,imputed_count";

[[nodiscard]] inline std::string csv_row(const QueryResult& r) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", r.value);
  return std::to_string(r.device_id) + "," + std::to_string(r.window_id) + "," + std::string(to_string(r.aggregate)) +
         "," + buf + "," + std::to_string(r.sample_count) + "," + std::to_string(r.imputed_count);
}

/// Appends model predictions over the first n_imputed predictor reals.
[[nodiscard]] inline ReconstructedWindow impute(const wire::WindowPayload& payload) {
  ReconstructedWindow w;
  w.window_id = payload.window_id;
  for (const auto& s : payload.streams) {
    StreamValues out;
    out.stream_id = s.stream_id;
    out.values.reserve(s.real_values.size() + (s.model ? s.model->n_imputed : 0));
    for (double v : s.real_values) out.values.push_back({v, Origin::Real});
    if (s.model) {
      const auto& m = *s.model;
      if (m.predictor_id == s.stream_id) {
        throw Error(Errc::MalformedPayload, "stream " + std::to_string(s.stream_id) + " predicts itself");
      }
      const auto* p = payload.find(m.predictor_id);
      if (p == nullptr) {
        throw Error(Errc::MalformedPayload, "predictor " + std::to_string(m.predictor_id) + " of stream " +
                                                std::to_string(s.stream_id) + " missing from payload");
      }
      if (p->real_values.size() < m.n_imputed) {
        throw Error(Errc::MalformedPayload, "stream " + std::to_string(s.stream_id) + " imputes " +
                                                std::to_string(m.n_imputed) + " values from " +
                                                std::to_string(p->real_values.size()) + " predictor reals");
      }
      const models::CompactModel model{m.kind, m.coefficients, m.predictor_id, 0.0, 0.0};
      for (std::uint32_t j = 0; j < m.n_imputed; ++j) {
        out.values.push_back({models::evaluate(model, p->real_values[j]), Origin::Imputed});
      }
    }
    w.streams.push_back(std::move(out));
  }
  return w;
}

[[nodiscard]] inline QueryResult aggregate(const StreamValues& s, std::uint64_t window_id, Aggregate agg) {
  QueryResult r;
  r.device_id = s.stream_id;
  r.window_id = window_id;
  r.aggregate = agg;
  r.sample_count = s.values.size();
  r.imputed_count = s.imputed_count();
  const std::size_t need = agg == Aggregate::Var ? 2 : 1;
  if (r.sample_count < need) {
    throw Error(Errc::InsufficientSamples, std::string(to_string(agg)) + " needs at least " + std::to_string(need) +
                                               " values for device " + std::to_string(s.stream_id));
  }
  std::vector<double> v;
  v.reserve(s.values.size());
  for (const auto& x : s.values) v.push_back(x.value);
  const auto st = stats::compute_stats(v);
  switch (agg) {
    case Aggregate::Avg: r.value = st.mean; break;
    case Aggregate::Var: r.value = st.variance; break;
    case Aggregate::Min: r.value = st.min; break;
    case Aggregate::Max: r.value = st.max; break;
  }
  return r;
}

/// Two-group variance estimate that weights each group's own sum of squares:
/// ((n_r - 1) s_r^2 + (n_s - 1) s_s^2) / (n_r + n_s - 1). Groups of size one
/// contribute nothing.
[[nodiscard]] inline double pooled_variance(std::span<const double> real, std::span<const double> imputed) {
  const std::size_t n = real.size() + imputed.size();
  if (n < 2) throw Error(Errc::InsufficientSamples, "pooled variance needs at least 2 values");
  auto ss = [](std::span<const double> g) {
    return g.size() < 2 ? 0.0 : static_cast<double>(g.size() - 1) * stats::compute_stats(g).variance;
  };
  return (ss(real) + ss(imputed)) / static_cast<double>(n - 1);
}

// ---------------------------------------------------------------------------
// Log records: [u32 length][record][u32 CRC32 of record], little-endian.
// record = window_id u64 | stream count u32 | per stream: id u32 | count u32 | (f64 value | u8 origin)*

[[nodiscard]] inline std::vector<std::uint8_t> encode_record(const ReconstructedWindow& w) {
  std::vector<std::uint8_t> out;
  wire::detail::Writer wr(out);
  wr.u64(w.window_id);
  wr.u32(static_cast<std::uint32_t>(w.streams.size()));
  for (const auto& s : w.streams) {
    wr.u32(s.stream_id);
    wr.u32(static_cast<std::uint32_t>(s.values.size()));
    for (const auto& v : s.values) {
      wr.f64(v.value);
      wr.u8(static_cast<std::uint8_t>(v.origin));
    }
  }
  return out;
}

[[nodiscard]] inline ReconstructedWindow decode_record(std::span<const std::uint8_t> bytes) {
  wire::detail::Reader r(bytes);
  ReconstructedWindow w;
  w.window_id = r.u64();
  const std::uint32_t n = r.u32();
  r.need(static_cast<std::size_t>(n) * 8);
  for (std::uint32_t i = 0; i < n; ++i) {
    StreamValues s;
    s.stream_id = r.u32();
    const std::uint32_t c = r.u32();
    r.need(static_cast<std::size_t>(c) * 9);
    s.values.resize(c);
    for (auto& v : s.values) {
      v.value = r.f64();
      const std::uint8_t o = r.u8();
      if (o > 1) throw Error(Errc::CorruptLog, "bad origin tag");
      v.origin = static_cast<Origin>(o);
    }
    w.streams.push_back(std::move(s));
  }
  if (r.remaining() != 0) throw Error(Errc::CorruptLog, "record has trailing bytes");
  return w;
}

[[nodiscard]] inline std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  boost::crc_32_type crc;
  crc.process_bytes(bytes.data(), bytes.size());
  return crc.checksum();
}

/// Append-only window store. One writer, many concurrent readers.
class Store {
 public:
  /// In-memory only.
  Store() = default;

  /// Opens (creating if needed) a log file and replays its records. A torn
  /// final record is dropped; a checksum mismatch elsewhere is CorruptLog.
  explicit Store(std::filesystem::path log_path) : path_(std::move(log_path)) {
    std::error_code ec;
    if (std::filesystem::exists(path_, ec)) replay();
    log_.open(path_, std::ios::binary | std::ios::app);
    if (!log_) throw Error(Errc::IoError, "cannot open log " + path_.string());
  }

  void store(const ReconstructedWindow& w) {
    std::unique_lock lock(mu_);
    for (const auto& s : w.streams) {
      if (index_.count({s.stream_id, w.window_id})) {
        throw Error(Errc::DuplicateWindow, "window " + std::to_string(w.window_id) + " already stored for device " +
                                               std::to_string(s.stream_id));
      }
    }
    if (log_.is_open()) {
      const auto rec = encode_record(w);
      std::vector<std::uint8_t> framed;
      wire::detail::Writer wr(framed);
      wr.u32(static_cast<std::uint32_t>(rec.size()));
      framed.insert(framed.end(), rec.begin(), rec.end());
      wr.u32(crc32(rec));
      log_.write(reinterpret_cast<const char*>(framed.data()), static_cast<std::streamsize>(framed.size()));
      log_.flush();
      if (!log_) throw Error(Errc::IoError, "write to " + path_.string() + " failed");
    }
    insert(w);
  }

  [[nodiscard]] QueryResult query(std::uint32_t device_id, std::uint64_t window_id, Aggregate agg) const {
    std::shared_lock lock(mu_);
    const auto it = index_.find({device_id, window_id});
    if (it == index_.end()) {
      throw Error(Errc::NotFound, "no data for device " + std::to_string(device_id) + " window " +
                                      std::to_string(window_id));
    }
    return aggregate(it->second, window_id, agg);
  }

  [[nodiscard]] std::optional<StreamValues> values(std::uint32_t device_id, std::uint64_t window_id) const {
    std::shared_lock lock(mu_);
    const auto it = index_.find({device_id, window_id});
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  /// All stored (device, window) keys in ascending order.
  [[nodiscard]] std::vector<std::pair<std::uint32_t, std::uint64_t>> keys() const {
    std::shared_lock lock(mu_);
    std::vector<std::pair<std::uint32_t, std::uint64_t>> out;
    out.reserve(index_.size());
    for (const auto& [k, v] : index_) out.push_back(k);
    return out;
  }

  [[nodiscard]] std::size_t size() const {
    std::shared_lock lock(mu_);
    return index_.size();
  }

 private:
  void insert(const ReconstructedWindow& w) {
    for (const auto& s : w.streams) index_.emplace(std::pair{s.stream_id, w.window_id}, s);
  }

  void replay() {
    std::ifstream in(path_, std::ios::binary);
    if (!in) throw Error(Errc::IoError, "cannot read log " + path_.string());
    const std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const std::span<const std::uint8_t> all(data);
    std::size_t pos = 0;
    std::size_t valid_end = 0;
    while (data.size() - pos >= 4) {
      wire::detail::Reader head(all.subspan(pos, 4));
      const std::uint32_t len = head.u32();
      if (data.size() - pos - 4 < static_cast<std::size_t>(len) + 4) break;  // torn tail
      const auto rec = all.subspan(pos + 4, len);
      wire::detail::Reader tail(all.subspan(pos + 4 + len, 4));
      if (tail.u32() != crc32(rec)) {
        throw Error(Errc::CorruptLog, "checksum mismatch at offset " + std::to_string(pos) + " in " + path_.string());
      }
      ReconstructedWindow w;
      try {
        w = decode_record(rec);
      } catch (const Error& e) {
        throw Error(Errc::CorruptLog, std::string("undecodable record: ") + e.what());
      }
      for (const auto& s : w.streams) {
        if (index_.count({s.stream_id, w.window_id})) {
          throw Error(Errc::CorruptLog, "log repeats window " + std::to_string(w.window_id));
        }
      }
      insert(w);
      pos += 4 + len + 4;
      valid_end = pos;
    }
    if (valid_end != data.size()) {
      log::warn("dropping " + std::to_string(data.size() - valid_end) + " torn bytes at the end of " + path_.string());
      in.close();
      std::filesystem::resize_file(path_, valid_end);
    }
  }

  std::filesystem::path path_;
  std::ofstream log_;
  mutable std::shared_mutex mu_;
  std::map<std::pair<std::uint32_t, std::uint64_t>, StreamValues> index_;
};

}  // namespace streamweave::cloud
