#pragma once

// CSGC checkpoint blob, little-endian:
//   "CSGC" | u16 version | u32 count |
//   count × ( u16 name_len | name (UTF-8) | u8 rank | rank × u32 dim | f32 payload )

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "coseg/binary_io.hpp"
#include "coseg/tensor.hpp"

namespace coseg::inline COSEG_PRECISION_NS {

inline constexpr char kCheckpointMagic[] = "CSGC";
inline constexpr std::uint16_t kCheckpointVersion = 1;

struct CheckpointRecord {
  std::string name;
  Tensor tensor;
};

inline std::vector<std::uint8_t> encode_checkpoint(const std::vector<CheckpointRecord>& records) {
  ByteWriter w;
  w.bytes({kCheckpointMagic, 4});
  w.u16(kCheckpointVersion);
  w.u32(std::uint32_t(records.size()));
  for (const auto& rec : records) {
    if (rec.name.size() > std::numeric_limits<std::uint16_t>::max())
      throw FormatError(FormatError::Kind::schema, "checkpoint: name too long: " + rec.name);
    if (rec.tensor.rank() > std::numeric_limits<std::uint8_t>::max())
      throw FormatError(FormatError::Kind::schema, "checkpoint: rank too large for " + rec.name);
    w.u16(std::uint16_t(rec.name.size()));
    w.bytes(rec.name);
    w.u8(std::uint8_t(rec.tensor.rank()));
    for (auto d : rec.tensor.shape()) w.u32(std::uint32_t(d));
    for (real v : rec.tensor.data()) w.f32(float(v));
  }
  return w.take();
}

inline std::vector<CheckpointRecord> decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes, "checkpoint");
  if (r.bytes(4) != std::string_view(kCheckpointMagic, 4))
    throw FormatError(FormatError::Kind::bad_magic, "checkpoint: bad magic");
  if (auto v = r.u16(); v != kCheckpointVersion)
    throw FormatError(FormatError::Kind::bad_version,
                      "checkpoint: unsupported version " + std::to_string(v));
  const std::uint32_t count = r.u32();
  std::vector<CheckpointRecord> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointRecord rec;
    rec.name = r.bytes(r.u16());
    const std::uint8_t rank = r.u8();
    Shape shape(rank);
    for (auto& d : shape) d = r.u32();
    const std::size_t n = shape_size(shape);
    r.need(n * 4);
    std::vector<real> data(n);
    for (auto& v : data) v = r.f32();
    rec.tensor = Tensor(std::move(shape), std::move(data));
    out.push_back(std::move(rec));
  }
  if (!r.at_end())
    throw FormatError(FormatError::Kind::schema, "checkpoint: trailing bytes after last record");
  return out;
}

inline void save_checkpoint(const std::string& path, const std::vector<CheckpointRecord>& records) {
  write_file_bytes(path, encode_checkpoint(records));
}

inline std::vector<CheckpointRecord> load_checkpoint(const std::string& path) {
  return decode_checkpoint(read_file_bytes(path));
}

inline const Tensor& find_record(const std::vector<CheckpointRecord>& records,
                                 const std::string& name) {
  for (const auto& rec : records)
    if (rec.name == name) return rec.tensor;
  throw FormatError(FormatError::Kind::schema, "checkpoint: missing record " + name);
}

}  // namespace coseg
