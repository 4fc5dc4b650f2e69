#pragma once

// Single-file tensor checkpoints: an 8-byte little-endian header length H,
// H bytes of JSON header, then a packed little-endian data section.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "lata/dtype.hpp"
#include "lata/error.hpp"

namespace lata {

inline constexpr std::uint64_t max_header_bytes = 100ull * 1000ull * 1000ull;
inline constexpr const char* metadata_key = "__metadata__";

using Shape = std::vector<std::uint64_t>;

inline std::uint64_t element_count(std::span<const std::uint64_t> shape) {
  std::uint64_t n = 1;
  for (std::uint64_t d : shape) {
    if (d != 0 && n > UINT64_MAX / d) {
      throw Error(ErrorCode::invariant, "shape element count overflows 64 bits");
    }
    n *= d;
  }
  return n;
}

struct TensorSpec {
  std::string name;
  Dtype dtype = Dtype::F32;
  Shape shape;
  std::uint64_t begin = 0;
  std::uint64_t end = 0;

  std::uint64_t byte_size() const { return end - begin; }
  bool operator==(const TensorSpec&) const = default;
};

struct Tensor {
  Dtype dtype = Dtype::F32;
  Shape shape;
  std::vector<std::byte> data;

  std::uint64_t numel() const { return element_count(shape); }
  std::uint64_t expected_bytes() const { return numel() * element_size(dtype); }
  bool operator==(const Tensor&) const = default;
};

inline Tensor make_tensor(Dtype dtype, Shape shape, std::span<const float> values) {
  Tensor t{dtype, std::move(shape), {}};
  if (values.size() != t.numel()) {
    throw Error(ErrorCode::invariant, "value count does not match shape");
  }
  t.data.resize(t.expected_bytes());
  encode_from_f32(dtype, values, t.data);
  return t;
}

inline std::vector<float> to_f32(const Tensor& t) {
  std::vector<float> out(t.numel());
  decode_to_f32(t.dtype, t.data, out);
  return out;
}

// Tensors are kept in an ordered map so iteration is ascending by name.
struct Checkpoint {
  std::map<std::string, Tensor> tensors;
  std::map<std::string, std::string> metadata;

  void add(const std::string& name, Tensor t) {
    if (name.empty() || name == metadata_key) {
      throw Error(ErrorCode::invariant, "invalid tensor name '" + name + "'");
    }
    if (t.data.size() != t.expected_bytes()) {
      throw Error(ErrorCode::invariant, "tensor '" + name + "' byte length does not match its shape");
    }
    tensors.insert_or_assign(name, std::move(t));
  }

  const Tensor& at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) {
      throw Error(ErrorCode::schema_mismatch, "no tensor named '" + name + "'");
    }
    return it->second;
  }

  bool operator==(const Checkpoint&) const = default;
};

// Canonical layout: ascending names, packed contiguously with no padding.
inline std::vector<TensorSpec> canonical_layout(const Checkpoint& ckpt) {
  std::vector<TensorSpec> specs;
  specs.reserve(ckpt.tensors.size());
  std::uint64_t offset = 0;
  for (const auto& [name, t] : ckpt.tensors) {
    const std::uint64_t bytes = t.expected_bytes();
    specs.push_back({name, t.dtype, t.shape, offset, offset + bytes});
    offset += bytes;
  }
  return specs;
}

inline void check_invariants(const Checkpoint& ckpt) {
  for (const auto& [name, t] : ckpt.tensors) {
    if (name.empty() || name == metadata_key) {
      throw Error(ErrorCode::invariant, "invalid tensor name '" + name + "'");
    }
    if (t.data.size() != t.expected_bytes()) {
      throw Error(ErrorCode::invariant, "tensor '" + name + "' holds " + std::to_string(t.data.size()) +
                                            " bytes, shape requires " + std::to_string(t.expected_bytes()));
    }
  }
}

inline std::string encode_header(const Checkpoint& ckpt) {
  nlohmann::ordered_json header = nlohmann::ordered_json::object();
  if (!ckpt.metadata.empty()) {
    nlohmann::ordered_json meta = nlohmann::ordered_json::object();
    for (const auto& [k, v] : ckpt.metadata) meta[k] = v;
    header[metadata_key] = std::move(meta);
  }
  for (const TensorSpec& spec : canonical_layout(ckpt)) {
    nlohmann::ordered_json entry = nlohmann::ordered_json::object();
    entry["dtype"] = std::string(dtype_name(spec.dtype));
    entry["shape"] = spec.shape;
    entry["data_offsets"] = {spec.begin, spec.end};
    header[spec.name] = std::move(entry);
  }
  try {
    return header.dump();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::invariant, std::string("header is not valid UTF-8: ") + e.what());
  }
}

inline std::vector<std::byte> serialize(const Checkpoint& ckpt) {
  check_invariants(ckpt);
  const std::string header = encode_header(ckpt);
  std::uint64_t data_bytes = 0;
  for (const auto& [name, t] : ckpt.tensors) data_bytes += t.data.size();

  std::vector<std::byte> out(8 + header.size() + data_bytes);
  const std::uint64_t h = header.size();
  for (int i = 0; i < 8; ++i) out[i] = static_cast<std::byte>((h >> (8 * i)) & 0xffu);
  std::memcpy(out.data() + 8, header.data(), header.size());
  std::size_t pos = 8 + header.size();
  for (const auto& [name, t] : ckpt.tensors) {
    if (!t.data.empty()) std::memcpy(out.data() + pos, t.data.data(), t.data.size());
    pos += t.data.size();
  }
  return out;
}

struct CheckpointHeader {
  std::uint64_t header_bytes = 0;
  std::vector<TensorSpec> tensors;  // ascending by name
  std::map<std::string, std::string> metadata;
};

namespace detail {

inline std::uint64_t read_u64(const nlohmann::json& v, const std::string& what) {
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
    throw Error(ErrorCode::malformed_header, what + " must be a non-negative integer");
  }
  return v.get<std::uint64_t>();
}

}  // namespace detail

// Parses and validates the header against a file of total length file_bytes.
inline CheckpointHeader parse_header(std::span<const std::byte> bytes, std::uint64_t file_bytes) {
  if (bytes.size() < 8) {
    throw Error(ErrorCode::truncated, "file holds " + std::to_string(bytes.size()) +
                                          " bytes, header length prefix needs 8 (at byte 0)");
  }
  std::uint64_t h = 0;
  for (int i = 0; i < 8; ++i) h |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  if (h > max_header_bytes) {
    throw Error(ErrorCode::malformed_header,
                "declared header length " + std::to_string(h) + " exceeds the 100 MB cap (at byte 0)");
  }
  if (8 + h > bytes.size()) {
    throw Error(ErrorCode::truncated, "header declares " + std::to_string(h) + " bytes but file ends at byte " +
                                          std::to_string(bytes.size()));
  }

  nlohmann::json doc;
  try {
    const char* text = reinterpret_cast<const char*>(bytes.data() + 8);
    doc = nlohmann::json::parse(text, text + h);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::malformed_header,
                "header JSON parse failed at byte " + std::to_string(8 + e.byte) + ": " + e.what());
  }
  if (!doc.is_object()) throw Error(ErrorCode::malformed_header, "header is not a JSON object (at byte 8)");

  const std::uint64_t data_bytes = file_bytes - 8 - h;
  const std::uint64_t data_start = 8 + h;
  CheckpointHeader out;
  out.header_bytes = h;
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    const std::string& name = it.key();
    const nlohmann::json& entry = it.value();
    if (name == metadata_key) {
      if (!entry.is_object()) throw Error(ErrorCode::malformed_header, "__metadata__ must be an object");
      for (auto m = entry.begin(); m != entry.end(); ++m) {
        if (!m.value().is_string()) {
          throw Error(ErrorCode::malformed_header, "__metadata__ value for '" + m.key() + "' is not a string");
        }
        out.metadata[m.key()] = m.value().get<std::string>();
      }
      continue;
    }
    if (name.empty()) throw Error(ErrorCode::malformed_header, "empty tensor name");
    if (!entry.is_object()) throw Error(ErrorCode::malformed_header, "tensor '" + name + "': entry is not an object");
    for (auto f = entry.begin(); f != entry.end(); ++f) {
      if (f.key() != "dtype" && f.key() != "shape" && f.key() != "data_offsets") {
        throw Error(ErrorCode::malformed_header, "tensor '" + name + "': unknown field '" + f.key() + "'");
      }
    }
    if (!entry.contains("dtype") || !entry.contains("shape") || !entry.contains("data_offsets")) {
      throw Error(ErrorCode::malformed_header, "tensor '" + name + "': missing dtype, shape or data_offsets");
    }
    TensorSpec spec;
    spec.name = name;
    if (!entry["dtype"].is_string()) throw Error(ErrorCode::malformed_header, "tensor '" + name + "': dtype is not a string");
    const auto tag = entry["dtype"].get<std::string>();
    const auto dt = parse_dtype(tag);
    if (!dt) throw Error(ErrorCode::unknown_dtype, "tensor '" + name + "': unknown dtype '" + tag + "'");
    spec.dtype = *dt;
    if (!entry["shape"].is_array()) throw Error(ErrorCode::malformed_header, "tensor '" + name + "': shape is not an array");
    for (const auto& d : entry["shape"]) spec.shape.push_back(detail::read_u64(d, "tensor '" + name + "' shape entry"));
    const auto& offs = entry["data_offsets"];
    if (!offs.is_array() || offs.size() != 2) {
      throw Error(ErrorCode::malformed_header, "tensor '" + name + "': data_offsets must be [begin, end]");
    }
    spec.begin = detail::read_u64(offs[0], "tensor '" + name + "' data_offsets");
    spec.end = detail::read_u64(offs[1], "tensor '" + name + "' data_offsets");
    if (spec.end < spec.begin) {
      throw Error(ErrorCode::offset_range, "tensor '" + name + "': data_offsets end " + std::to_string(spec.end) +
                                               " precedes begin " + std::to_string(spec.begin));
    }
    std::uint64_t expected = 0;
    try {
      expected = element_count(spec.shape);
    } catch (const Error&) {
      throw Error(ErrorCode::malformed_header, "tensor '" + name + "': shape element count overflows");
    }
    if (expected > UINT64_MAX / element_size(spec.dtype) ||
        spec.byte_size() != expected * element_size(spec.dtype)) {
      throw Error(ErrorCode::offset_range, "tensor '" + name + "': data_offsets span " +
                                               std::to_string(spec.byte_size()) + " bytes, shape requires " +
                                               std::to_string(expected * element_size(spec.dtype)));
    }
    if (spec.end > data_bytes) {
      throw Error(ErrorCode::truncated, "tensor '" + name + "': data ends at byte " +
                                            std::to_string(data_start + spec.end) + " but file length is " +
                                            std::to_string(file_bytes));
    }
    out.tensors.push_back(std::move(spec));
  }

  std::vector<const TensorSpec*> by_offset;
  for (const auto& s : out.tensors) {
    if (s.byte_size() > 0) by_offset.push_back(&s);
  }
  std::sort(by_offset.begin(), by_offset.end(), [](const TensorSpec* a, const TensorSpec* b) {
    return a->begin != b->begin ? a->begin < b->begin : a->name < b->name;
  });
  for (std::size_t i = 1; i < by_offset.size(); ++i) {
    if (by_offset[i]->begin < by_offset[i - 1]->end) {
      throw Error(ErrorCode::offset_overlap, "tensor '" + by_offset[i]->name + "' at byte " +
                                                 std::to_string(data_start + by_offset[i]->begin) +
                                                 " overlaps tensor '" + by_offset[i - 1]->name + "'");
    }
  }
  std::sort(out.tensors.begin(), out.tensors.end(),
            [](const TensorSpec& a, const TensorSpec& b) { return a.name < b.name; });
  return out;
}

inline Checkpoint parse_checkpoint(std::span<const std::byte> bytes) {
  const CheckpointHeader header = parse_header(bytes, bytes.size());
  Checkpoint ckpt;
  ckpt.metadata = header.metadata;
  const std::size_t data_start = 8 + header.header_bytes;
  for (const TensorSpec& spec : header.tensors) {
    Tensor t{spec.dtype, spec.shape, {}};
    t.data.assign(bytes.begin() + data_start + spec.begin, bytes.begin() + data_start + spec.end);
    ckpt.tensors.emplace(spec.name, std::move(t));
  }
  return ckpt;
}

inline std::vector<std::byte> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw Error(ErrorCode::io, "cannot open '" + path.string() + "'");
  const auto size = static_cast<std::size_t>(in.tellg());
  std::vector<std::byte> bytes(size);
  in.seekg(0);
  if (size > 0 && !in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size))) {
    throw Error(ErrorCode::io, "failed reading '" + path.string() + "'");
  }
  return bytes;
}

inline void write_file_bytes(const std::filesystem::path& path, std::span<const std::byte> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::io, "cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) throw Error(ErrorCode::io, "failed writing '" + path.string() + "'");
}

inline Checkpoint read_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  try {
    return parse_checkpoint(bytes);
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.detail());
  }
}

inline CheckpointHeader read_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw Error(ErrorCode::io, "cannot open '" + path.string() + "'");
  const auto file_bytes = static_cast<std::uint64_t>(in.tellg());
  in.seekg(0);
  std::vector<std::byte> prefix(std::min<std::uint64_t>(file_bytes, 8));
  in.read(reinterpret_cast<char*>(prefix.data()), static_cast<std::streamsize>(prefix.size()));
  std::uint64_t h = 0;
  for (std::size_t i = 0; i < prefix.size(); ++i) h |= static_cast<std::uint64_t>(prefix[i]) << (8 * i);
  const std::uint64_t want = prefix.size() < 8 ? prefix.size() : std::min(file_bytes, 8 + std::min(h, max_header_bytes));
  std::vector<std::byte> head(want);
  in.seekg(0);
  in.read(reinterpret_cast<char*>(head.data()), static_cast<std::streamsize>(head.size()));
  return parse_header(head, file_bytes);
}

inline void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_file_bytes(path, serialize(ckpt));
}

enum class MismatchReason { missing_in_a, missing_in_b, shape, dtype };

inline std::string_view mismatch_reason_name(MismatchReason r) {
  switch (r) {
    case MismatchReason::missing_in_a: return "missing-in-A";
    case MismatchReason::missing_in_b: return "missing-in-B";
    case MismatchReason::shape: return "shape";
    case MismatchReason::dtype: return "dtype";
  }
  return "?";
}

struct Mismatch {
  std::string name;
  MismatchReason reason;
  bool operator==(const Mismatch&) const = default;
};

struct CompatReport {
  bool compatible = true;
  std::vector<Mismatch> mismatches;

  std::string describe() const {
    std::string s;
    for (const auto& m : mismatches) {
      if (!s.empty()) s += ", ";
      s += m.name + " (" + std::string(mismatch_reason_name(m.reason)) + ")";
    }
    return s;
  }
};

inline CompatReport validate_compat(const Checkpoint& a, const Checkpoint& b) {
  CompatReport report;
  auto ia = a.tensors.begin();
  auto ib = b.tensors.begin();
  while (ia != a.tensors.end() || ib != b.tensors.end()) {
    if (ib == b.tensors.end() || (ia != a.tensors.end() && ia->first < ib->first)) {
      report.mismatches.push_back({ia->first, MismatchReason::missing_in_b});
      ++ia;
    } else if (ia == a.tensors.end() || ib->first < ia->first) {
      report.mismatches.push_back({ib->first, MismatchReason::missing_in_a});
      ++ib;
    } else {
      if (ia->second.shape != ib->second.shape) {
        report.mismatches.push_back({ia->first, MismatchReason::shape});
      }
      if (ia->second.dtype != ib->second.dtype) {
        report.mismatches.push_back({ia->first, MismatchReason::dtype});
      }
      ++ia;
      ++ib;
    }
  }
  report.compatible = report.mismatches.empty();
  return report;
}

}  // namespace lata
