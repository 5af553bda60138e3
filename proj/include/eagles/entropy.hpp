#pragma once

// Lossless coding of N x l integer latent tables.
//
// Each latent dimension gets its own static frequency table (two passes:
// count, then code), and all symbols are range coded row-major into a single
// payload. Layout of an encoded block (all varints are unsigned LEB128,
// signed values are zigzag mapped first):
//
//   u8      mode            0 = range coded, 1 = raw int16 little-endian
//   mode 0: for each dimension j < l:
//             varint  present   number of distinct symbols
//             repeat present times:
//               varint  gap     zigzag(first symbol) for the first entry,
//                               symbol - previous symbol - 1 afterwards
//               varint  freq    normalized frequency (> 0)
//           range coded payload (to the end of the block)
//   mode 1: N*l int16 values, row-major
//
// Frequencies of one dimension sum to min(N, 65536). An empty table (N*l == 0)
// encodes to zero bytes. The encoder picks whichever mode is smaller, so a
// block never exceeds 2 bytes per value plus one mode byte.

#include <algorithm>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <zlib.h>

#include "eagles/error.hpp"

namespace eagles {

inline std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  return std::uint32_t(::crc32(0L, bytes.data(), uInt(bytes.size())));
}

namespace varint {

inline void put(std::vector<std::uint8_t>& out, std::uint64_t v) {
  while (v >= 0x80) {
    out.push_back(std::uint8_t(v | 0x80));
    v >>= 7;
  }
  out.push_back(std::uint8_t(v));
}

inline std::uint64_t zigzag(std::int64_t v) { return (std::uint64_t(v) << 1) ^ std::uint64_t(v >> 63); }
inline std::int64_t unzigzag(std::uint64_t v) { return std::int64_t(v >> 1) ^ -std::int64_t(v & 1); }

/// Reads one varint at `pos`, advancing it. Throws on truncation or overflow.
inline std::uint64_t get(std::span<const std::uint8_t> in, size_t& pos) {
  std::uint64_t v = 0;
  for (int shift = 0; shift < 64; shift += 7) {
    if (pos >= in.size()) throw FormatError(ErrorKind::kTruncated, "latent tables", "varint runs past end");
    const std::uint8_t b = in[pos++];
    v |= std::uint64_t(b & 0x7F) << shift;
    if (!(b & 0x80)) return v;
  }
  throw FormatError(ErrorKind::kChecksum, "latent tables", "varint too long");
}

}  // namespace varint

/// Carry-propagating byte-oriented range coder (32-bit range, 2^24 floor).
class RangeEncoder {
 public:
  void encode(std::uint32_t cum, std::uint32_t freq, std::uint32_t total) {
    const std::uint32_t r = range_ / total;
    low_ += std::uint64_t(r) * cum;
    range_ = r * freq;
    while (range_ < kTop) {
      range_ <<= 8;
      shift_low();
    }
  }

  std::vector<std::uint8_t> finish() {
    for (int i = 0; i < 5; ++i) shift_low();
    return std::move(out_);
  }

 private:
  static constexpr std::uint32_t kTop = 1u << 24;

  void shift_low() {
    if (std::uint32_t(low_) < 0xFF000000u || (low_ >> 32) != 0) {
      const std::uint8_t carry = std::uint8_t(low_ >> 32);
      std::uint8_t temp = cache_;
      do {
        out_.push_back(std::uint8_t(temp + carry));
        temp = 0xFF;
      } while (--cache_size_ != 0);
      cache_ = std::uint8_t(std::uint32_t(low_) >> 24);
    }
    ++cache_size_;
    low_ = std::uint64_t(std::uint32_t(low_) << 8);
  }

  std::uint64_t low_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
  std::uint8_t cache_ = 0;
  std::uint64_t cache_size_ = 1;
  std::vector<std::uint8_t> out_;
};

class RangeDecoder {
 public:
  explicit RangeDecoder(std::span<const std::uint8_t> in) : in_(in) {
    for (int i = 0; i < 5; ++i) code_ = (code_ << 8) | next();
  }

  std::uint32_t threshold(std::uint32_t total) {
    range_ /= total;
    return std::min(code_ / range_, total - 1);
  }

  void consume(std::uint32_t cum, std::uint32_t freq) {
    code_ -= cum * range_;
    range_ *= freq;
    while (range_ < kTop) {
      code_ = (code_ << 8) | next();
      range_ <<= 8;
    }
  }

 private:
  static constexpr std::uint32_t kTop = 1u << 24;
  std::uint32_t next() { return pos_ < in_.size() ? in_[pos_++] : 0u; }

  std::span<const std::uint8_t> in_;
  size_t pos_ = 0;
  std::uint32_t code_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
};

inline constexpr std::uint32_t kMaxFrequencyTotal = 1u << 16;
inline constexpr std::int64_t kCodableMin = -32768;
inline constexpr std::int64_t kCodableMax = 32767;

/// Static model of one latent dimension.
struct FrequencyTable {
  std::vector<std::int32_t> symbols;  // ascending
  std::vector<std::uint32_t> freqs;
  std::vector<std::uint32_t> cum;     // exclusive prefix sums
  std::uint32_t total = 0;

  void finalize() {
    cum.resize(freqs.size());
    total = 0;
    for (size_t i = 0; i < freqs.size(); ++i) {
      cum[i] = total;
      total += freqs[i];
    }
  }

  size_t find(std::int32_t symbol) const {
    return size_t(std::lower_bound(symbols.begin(), symbols.end(), symbol) - symbols.begin());
  }

  size_t find_by_cum(std::uint32_t target) const {
    return size_t(std::upper_bound(cum.begin(), cum.end(), target) - cum.begin()) - 1;
  }
};

/// Normalizes counts to sum min(n, 65536), keeping every present symbol > 0.
inline FrequencyTable build_frequency_table(const std::map<std::int32_t, std::uint64_t>& counts, std::uint64_t n) {
  FrequencyTable t;
  for (const auto& [s, c] : counts) {
    t.symbols.push_back(s);
    t.freqs.push_back(std::uint32_t(c));
  }
  if (n > kMaxFrequencyTotal) {
    std::int64_t sum = 0;
    for (size_t i = 0; i < t.freqs.size(); ++i) {
      const std::uint64_t c = counts.at(t.symbols[i]);
      t.freqs[i] = std::max<std::uint32_t>(1, std::uint32_t(c * kMaxFrequencyTotal / n));
      sum += t.freqs[i];
    }
    std::int64_t diff = std::int64_t(kMaxFrequencyTotal) - sum;
    std::vector<size_t> order(t.freqs.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return t.freqs[a] > t.freqs[b]; });
    if (diff > 0) t.freqs[order[0]] += std::uint32_t(diff);
    while (diff < 0) {
      bool changed = false;
      for (size_t i : order) {
        if (diff == 0) break;
        if (t.freqs[i] > 1) {
          --t.freqs[i];
          ++diff;
          changed = true;
        }
      }
      if (!changed) break;
    }
  }
  t.finalize();
  return t;
}

enum class LatentCodingMode : std::uint8_t { kRange = 0, kRaw16 = 1 };

struct EncodedLatents {
  std::vector<std::uint8_t> bytes;
  size_t table_bytes = 0;  // header + tables part of `bytes` (0 for raw mode)
  LatentCodingMode mode = LatentCodingMode::kRange;
};

/// Codes an N x l row-major table of values in [-32768, 32767].
inline EncodedLatents encode_latent_block(std::span<const std::int32_t> values, size_t n, size_t l) {
  require(values.size() == n * l, ErrorKind::kInvalidInput, "latent table size mismatch");
  for (std::int32_t v : values)
    require(v >= kCodableMin && v <= kCodableMax, ErrorKind::kInvalidInput,
            "latent value outside the 16-bit coding range");
  EncodedLatents out;
  if (values.empty()) return out;

  std::vector<FrequencyTable> tables(l);
  std::vector<std::uint8_t> head{std::uint8_t(LatentCodingMode::kRange)};
  for (size_t j = 0; j < l; ++j) {
    std::map<std::int32_t, std::uint64_t> counts;
    for (size_t i = 0; i < n; ++i) ++counts[values[i * l + j]];
    tables[j] = build_frequency_table(counts, n);
    varint::put(head, tables[j].symbols.size());
    for (size_t s = 0; s < tables[j].symbols.size(); ++s) {
      if (s == 0)
        varint::put(head, varint::zigzag(tables[j].symbols[0]));
      else
        varint::put(head, std::uint64_t(tables[j].symbols[s] - tables[j].symbols[s - 1] - 1));
      varint::put(head, tables[j].freqs[s]);
    }
  }
  RangeEncoder enc;
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < l; ++j) {
      const auto& t = tables[j];
      const size_t s = t.find(values[i * l + j]);
      enc.encode(t.cum[s], t.freqs[s], t.total);
    }
  const auto payload = enc.finish();

  const size_t raw_size = 1 + 2 * values.size();
  if (head.size() + payload.size() <= raw_size) {
    out.table_bytes = head.size();
    out.bytes = std::move(head);
    out.bytes.insert(out.bytes.end(), payload.begin(), payload.end());
    out.mode = LatentCodingMode::kRange;
    return out;
  }
  out.mode = LatentCodingMode::kRaw16;
  out.bytes.reserve(raw_size);
  out.bytes.push_back(std::uint8_t(LatentCodingMode::kRaw16));
  for (std::int32_t v : values) {
    const auto u = std::uint16_t(std::int16_t(v));
    out.bytes.push_back(std::uint8_t(u & 0xFF));
    out.bytes.push_back(std::uint8_t(u >> 8));
  }
  return out;
}

/// Inverse of `encode_latent_block`. Malformed input raises a FormatError.
inline std::vector<std::int32_t> decode_latent_block(std::span<const std::uint8_t> bytes, size_t n, size_t l) {
  std::vector<std::int32_t> out(n * l);
  if (out.empty()) {
    if (!bytes.empty()) throw FormatError(ErrorKind::kChecksum, "latent stream", "unexpected bytes for empty table");
    return out;
  }
  if (bytes.empty()) throw FormatError(ErrorKind::kTruncated, "latent stream", "missing coding mode");
  const auto mode = bytes[0];
  if (mode == std::uint8_t(LatentCodingMode::kRaw16)) {
    if (bytes.size() != 1 + 2 * out.size())
      throw FormatError(ErrorKind::kTruncated, "latent stream", "raw block length mismatch");
    for (size_t i = 0; i < out.size(); ++i)
      out[i] = std::int16_t(std::uint16_t(bytes[1 + 2 * i] | (bytes[2 + 2 * i] << 8)));
    return out;
  }
  if (mode != std::uint8_t(LatentCodingMode::kRange))
    throw FormatError(ErrorKind::kChecksum, "latent stream", "unknown coding mode");

  size_t pos = 1;
  const std::uint64_t expected_total = std::min<std::uint64_t>(n, kMaxFrequencyTotal);
  std::vector<FrequencyTable> tables(l);
  for (size_t j = 0; j < l; ++j) {
    const std::uint64_t present = varint::get(bytes, pos);
    if (present == 0 || present > 65536)
      throw FormatError(ErrorKind::kChecksum, "latent tables", "invalid symbol count");
    std::int64_t sym = 0;
    std::uint64_t sum = 0;
    for (std::uint64_t s = 0; s < present; ++s) {
      const std::uint64_t gap = varint::get(bytes, pos);
      sym = s == 0 ? varint::unzigzag(gap) : sym + std::int64_t(gap) + 1;
      const std::uint64_t f = varint::get(bytes, pos);
      if (sym < kCodableMin || sym > kCodableMax || f == 0 || f > kMaxFrequencyTotal)
        throw FormatError(ErrorKind::kChecksum, "latent tables", "invalid symbol entry");
      sum += f;
      tables[j].symbols.push_back(std::int32_t(sym));
      tables[j].freqs.push_back(std::uint32_t(f));
    }
    if (sum != expected_total) throw FormatError(ErrorKind::kChecksum, "latent tables", "frequency total mismatch");
    tables[j].finalize();
  }
  RangeDecoder dec(bytes.subspan(pos));
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < l; ++j) {
      const auto& t = tables[j];
      const size_t s = t.find_by_cum(dec.threshold(t.total));
      dec.consume(t.cum[s], t.freqs[s]);
      out[i * l + j] = t.symbols[s];
    }
  return out;
}

/// Self-contained stream: u64 block length, block, CRC32 of the block.
inline std::vector<std::uint8_t> entropy_encode(std::span<const std::int32_t> latents, size_t n, size_t l) {
  const auto block = encode_latent_block(latents, n, l);
  std::vector<std::uint8_t> out;
  const std::uint64_t len = block.bytes.size();
  for (int i = 0; i < 8; ++i) out.push_back(std::uint8_t(len >> (8 * i)));
  out.insert(out.end(), block.bytes.begin(), block.bytes.end());
  const std::uint32_t crc = crc32_of(block.bytes);
  for (int i = 0; i < 4; ++i) out.push_back(std::uint8_t(crc >> (8 * i)));
  return out;
}

inline std::vector<std::int32_t> entropy_decode(std::span<const std::uint8_t> stream, size_t n, size_t l) {
  if (stream.size() < 12) throw FormatError(ErrorKind::kTruncated, "latent stream", "stream shorter than framing");
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= std::uint64_t(stream[i]) << (8 * i);
  if (len != stream.size() - 12) throw FormatError(ErrorKind::kTruncated, "latent stream", "length field mismatch");
  const auto block = stream.subspan(8, len);
  std::uint32_t crc = 0;
  for (int i = 0; i < 4; ++i) crc |= std::uint32_t(stream[8 + len + i]) << (8 * i);
  if (crc != crc32_of(block)) throw FormatError(ErrorKind::kChecksum, "latent stream", "CRC mismatch");
  return decode_latent_block(block, n, l);
}

}  // namespace eagles
