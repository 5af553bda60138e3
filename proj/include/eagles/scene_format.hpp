#pragma once

// Compressed scene container (".egls"). Normative layout, little-endian:
//
//   header
//     char[4]  magic "EGLS"
//     u32      version (1)
//     u64      gaussian count N
//     u8       SH degree (3)
//     u8       attribute count A (3)
//     A x { u8 attribute id, u8 mode (0 raw, 1 quantized), u16 k, u16 l, u16 reserved = 0 }
//     u32      CRC32 of the header bytes above
//   raw section
//     f32[N*3] positions, f32[N*3] log scales, f32[N*3] band-0 color
//     u32      CRC32 of the section
//   one section per attribute, in descriptor order
//     mode 0:  f32[N*k] values
//     mode 1:  f32[k*l] decoder weight (row-major), f32[k] decoder bias,
//              u64 table length, table bytes,
//              u64 stream length, stream bytes
//     u32      CRC32 of the section
//   footer
//     u32      CRC32 of every preceding byte
//
// For quantized attributes the table and stream bytes concatenate to the
// block produced by encode_latent_block() over the N x l frozen latents.

#include <bit>
#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "eagles/cloud.hpp"
#include "eagles/entropy.hpp"
#include "eagles/error.hpp"

namespace eagles {

inline constexpr char kSceneMagic[4] = {'E', 'G', 'L', 'S'};
inline constexpr std::uint32_t kSceneVersion = 1;
inline constexpr double kRawBytesPerGaussian = 236.0;  // 59 float32 attributes

struct AttributeStorage {
  AttributeId attribute = AttributeId::kOpacity;
  bool quantized = false;
  std::uint64_t decoder_bytes = 0;
  std::uint64_t table_bytes = 0;
  std::uint64_t stream_bytes = 0;
  std::uint64_t raw_bytes = 0;      // unquantized values
  std::uint64_t framing_bytes = 0;  // length fields and CRC
  double bits_per_latent = 0.0;     // empirical entropy of the frozen latents
  LatentCodingMode coding = LatentCodingMode::kRange;
};

/// Byte accounting of one container. The named sections sum to `total`.
struct StorageReport {
  std::uint64_t gaussian_count = 0;
  std::uint64_t header_bytes = 0;
  std::uint64_t raw_bytes = 0;  // positions, log scales, band-0 color
  std::uint64_t decoder_bytes = 0;
  std::uint64_t table_bytes = 0;
  std::uint64_t latent_stream_bytes = 0;
  std::uint64_t raw_attribute_bytes = 0;
  std::uint64_t framing_bytes = 0;  // section CRCs and length fields
  std::uint64_t footer_bytes = 0;
  std::uint64_t total = 0;
  std::vector<AttributeStorage> attributes;

  /// float32 size the quantized attributes would take after decoding.
  std::uint64_t decoded_quantized_float_bytes = 0;
  /// float32 size of the full attribute vector (236 bytes per Gaussian).
  std::uint64_t raw_float_baseline_bytes = 0;

  std::uint64_t total_without_decoders() const { return total - decoder_bytes; }
  double latent_compression_ratio() const {
    const auto coded = table_bytes + latent_stream_bytes;
    return coded ? double(decoded_quantized_float_bytes) / double(coded) : 0.0;
  }
  double total_compression_ratio() const { return total ? double(raw_float_baseline_bytes) / double(total) : 0.0; }
  std::uint64_t section_sum() const {
    return header_bytes + raw_bytes + decoder_bytes + table_bytes + latent_stream_bytes + raw_attribute_bytes +
           framing_bytes + footer_bytes;
  }
};

namespace detail {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f32(float v) { put(std::bit_cast<std::uint32_t>(v), 4); }
  void raw(std::span<const std::uint8_t> b) { bytes_.insert(bytes_.end(), b.begin(), b.end()); }
  size_t size() const { return bytes_.size(); }
  /// CRC32 of bytes [from, size()).
  void crc_since(size_t from) {
    u32(crc32_of(std::span<const std::uint8_t>(bytes_).subspan(from)));
  }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) bytes_.push_back(std::uint8_t(v >> (8 * i)));
  }
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> bytes, std::string section) : bytes_(bytes), section_(std::move(section)) {}

  void set_section(std::string s) { section_ = std::move(s); }
  size_t pos() const { return pos_; }
  size_t remaining() const { return bytes_.size() - pos_; }

  void need(std::uint64_t n) const {
    if (n > remaining()) throw FormatError(ErrorKind::kTruncated, section_, "file ends inside the section");
  }
  std::uint64_t get(int n) {
    need(std::uint64_t(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= std::uint64_t(bytes_[pos_ + i]) << (8 * i);
    pos_ += size_t(n);
    return v;
  }
  std::uint8_t u8() { return std::uint8_t(get(1)); }
  std::uint16_t u16() { return std::uint16_t(get(2)); }
  std::uint32_t u32() { return std::uint32_t(get(4)); }
  std::uint64_t u64() { return get(8); }
  float f32() { return std::bit_cast<float>(std::uint32_t(get(4))); }
  std::span<const std::uint8_t> take(std::uint64_t n) {
    need(n);
    auto s = bytes_.subspan(pos_, size_t(n));
    pos_ += size_t(n);
    return s;
  }
  /// Reads a u32 CRC and checks it against bytes [from, pos()).
  void verify_crc(size_t from) {
    const std::uint32_t expected = crc32_of(bytes_.subspan(from, pos_ - from));
    if (u32() != expected) throw FormatError(ErrorKind::kChecksum, section_, "CRC mismatch");
  }
  const std::string& section() const { return section_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::string section_;
  size_t pos_ = 0;
};

}  // namespace detail

/// Serializes a cloud; quantized latents are frozen (rounded) on the way.
template <typename T>
std::vector<std::uint8_t> serialize_scene(const GaussianCloud<T>& cloud) {
  cloud.validate();
  const size_t n = cloud.size();
  detail::ByteWriter w;
  for (char c : kSceneMagic) w.u8(std::uint8_t(c));
  w.u32(kSceneVersion);
  w.u64(n);
  w.u8(std::uint8_t(kShDegree));
  w.u8(std::uint8_t(kLatentAttributes.size()));
  for (AttributeId id : kLatentAttributes) {
    const auto& a = cloud.attribute(id);
    const auto spec = attribute_spec(id);
    w.u8(std::uint8_t(id));
    w.u8(a.quantized ? 1 : 0);
    w.u16(std::uint16_t(spec.attribute_dim));
    w.u16(std::uint16_t(a.quantized ? spec.latent_dim : 0));
    w.u16(0);
  }
  w.crc_since(0);

  size_t start = w.size();
  for (const auto* arr : {&cloud.positions, &cloud.log_scales, &cloud.sh_base})
    for (T v : *arr) w.f32(float(v));
  w.crc_since(start);

  for (AttributeId id : kLatentAttributes) {
    const auto& a = cloud.attribute(id);
    start = w.size();
    if (!a.quantized) {
      for (T v : a.values) w.f32(float(v));
    } else {
      for (T v : a.decoder.weight) w.f32(float(v));
      for (T v : a.decoder.bias) w.f32(float(v));
      const auto frozen = a.frozen();
      const auto block = encode_latent_block(frozen, n, size_t(a.width()));
      const size_t table_len = block.mode == LatentCodingMode::kRange ? block.table_bytes : (block.bytes.empty() ? 0 : 1);
      w.u64(table_len);
      w.raw(std::span<const std::uint8_t>(block.bytes).first(table_len));
      w.u64(block.bytes.size() - table_len);
      w.raw(std::span<const std::uint8_t>(block.bytes).subspan(table_len));
    }
    w.crc_since(start);
  }
  w.crc_since(0);
  return std::move(w.bytes());
}

struct ParsedScene {
  GaussianCloud<float> cloud;
  StorageReport report;
  std::uint32_t version = 0;
  std::uint8_t sh_degree = 0;
  std::vector<std::vector<std::int32_t>> frozen_latents;  // per attribute; empty when raw
};

/// Parses and verifies a container. Failures raise FormatError with the
/// offending section: kBadMagic, kBadVersion, kChecksum or kTruncated.
inline ParsedScene parse_scene(std::span<const std::uint8_t> bytes) {
  ParsedScene out;
  auto& rep = out.report;
  detail::ByteReader r(bytes, "header");
  r.need(4);
  const auto magic = r.take(4);
  for (int i = 0; i < 4; ++i)
    if (magic[i] != std::uint8_t(kSceneMagic[i])) throw FormatError(ErrorKind::kBadMagic, "header", "not an EGLS file");
  out.version = r.u32();
  if (out.version != kSceneVersion)
    throw FormatError(ErrorKind::kBadVersion, "header", "unsupported format version " + std::to_string(out.version));
  const std::uint64_t n = r.u64();
  out.sh_degree = r.u8();
  const std::uint8_t attr_count = r.u8();
  struct Descriptor {
    std::uint8_t id, mode;
    std::uint16_t k, l;
  };
  std::vector<Descriptor> desc;
  for (int i = 0; i < attr_count; ++i) {
    Descriptor d{r.u8(), r.u8(), r.u16(), r.u16()};
    r.u16();
    desc.push_back(d);
  }
  r.verify_crc(0);
  if (out.sh_degree != kShDegree) throw FormatError(ErrorKind::kChecksum, "header", "unsupported SH degree");
  if (attr_count != kLatentAttributes.size()) throw FormatError(ErrorKind::kChecksum, "header", "unexpected attribute count");
  for (size_t i = 0; i < desc.size(); ++i) {
    const auto spec = attribute_spec(kLatentAttributes[i]);
    const bool ok = desc[i].id == std::uint8_t(kLatentAttributes[i]) && desc[i].mode <= 1 &&
                    desc[i].k == spec.attribute_dim && desc[i].l == (desc[i].mode ? spec.latent_dim : 0);
    if (!ok) throw FormatError(ErrorKind::kChecksum, "header", "attribute descriptor mismatch");
  }
  rep.gaussian_count = n;
  rep.header_bytes = r.pos();

  r.set_section("raw");
  size_t start = r.pos();
  if (n > r.remaining() / 36) throw FormatError(ErrorKind::kTruncated, "raw", "file ends inside the section");
  auto& c = out.cloud;
  for (auto* arr : {&c.positions, &c.log_scales, &c.sh_base}) {
    arr->resize(size_t(n) * 3);
    for (auto& v : *arr) v = r.f32();
  }
  r.verify_crc(start);
  rep.raw_bytes = r.pos() - start - 4;
  rep.framing_bytes += 4;

  for (size_t i = 0; i < desc.size(); ++i) {
    const AttributeId id = kLatentAttributes[i];
    const auto spec = attribute_spec(id);
    r.set_section(std::string(spec.name));
    start = r.pos();
    auto& a = c.attribute(id);
    a.attribute = id;
    a.quantized = desc[i].mode == 1;
    AttributeStorage st;
    st.attribute = id;
    st.quantized = a.quantized;
    std::vector<std::int32_t> frozen;
    if (!a.quantized) {
      if (n * spec.attribute_dim > r.remaining() / 4) r.need(r.remaining() + 1);
      a.values.resize(size_t(n) * spec.attribute_dim);
      for (auto& v : a.values) v = r.f32();
      st.raw_bytes = a.values.size() * 4;
    } else {
      const size_t k = spec.attribute_dim, l = spec.latent_dim;
      a.decoder.attribute = id;
      a.decoder.rows = int(k);
      a.decoder.cols = int(l);
      a.decoder.weight.resize(k * l);
      a.decoder.bias.resize(k);
      for (auto& v : a.decoder.weight) v = r.f32();
      for (auto& v : a.decoder.bias) v = r.f32();
      const std::uint64_t table_len = r.u64();
      const auto tables = r.take(table_len);
      const std::uint64_t stream_len = r.u64();
      const auto stream = r.take(stream_len);
      r.verify_crc(start);
      std::vector<std::uint8_t> block(tables.begin(), tables.end());
      block.insert(block.end(), stream.begin(), stream.end());
      frozen = decode_latent_block(block, size_t(n), l);
      a.values.assign(frozen.begin(), frozen.end());
      st.decoder_bytes = (k * l + k) * 4;
      st.table_bytes = table_len;
      st.stream_bytes = stream_len;
      st.framing_bytes = 16;
      st.coding = block.empty() ? LatentCodingMode::kRange : LatentCodingMode(block[0]);
      st.bits_per_latent = empirical_entropy_bits(frozen);
      rep.decoded_quantized_float_bytes += n * k * 4;
    }
    if (!a.quantized) r.verify_crc(start);
    st.framing_bytes += 4;
    out.frozen_latents.push_back(std::move(frozen));
    rep.decoder_bytes += st.decoder_bytes;
    rep.table_bytes += st.table_bytes;
    rep.latent_stream_bytes += st.stream_bytes;
    rep.raw_attribute_bytes += st.raw_bytes;
    rep.framing_bytes += st.framing_bytes;
    rep.attributes.push_back(st);
  }
  r.set_section("footer");
  r.verify_crc(0);
  rep.footer_bytes = 4;
  if (r.remaining() != 0) throw FormatError(ErrorKind::kChecksum, "footer", "trailing bytes after footer");
  rep.total = r.pos();
  rep.raw_float_baseline_bytes = std::uint64_t(double(n) * kRawBytesPerGaussian);
  return out;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(bool(in), ErrorKind::kIo, "cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Writes the container; returns the number of bytes written.
template <typename T>
size_t save_compressed(const GaussianCloud<T>& cloud, const std::string& path) {
  const auto bytes = serialize_scene(cloud);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(bool(out), ErrorKind::kIo, "cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  require(bool(out), ErrorKind::kIo, "write to '" + path + "' failed");
  return bytes.size();
}

inline GaussianCloud<float> load_compressed(const std::string& path) {
  return parse_scene(read_file_bytes(path)).cloud;
}

template <typename T>
StorageReport storage_report(const GaussianCloud<T>& cloud) {
  return parse_scene(serialize_scene(cloud)).report;
}

}  // namespace eagles
