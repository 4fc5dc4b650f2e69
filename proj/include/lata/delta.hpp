#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "lata/checkpoint.hpp"
#include "lata/rng.hpp"

namespace lata {

// Name and shape of one tensor; what deltas and partitions are keyed on.
struct SchemaEntry {
  std::string name;
  Shape shape;
  bool operator==(const SchemaEntry&) const = default;
};

using Schema = std::vector<SchemaEntry>;

inline Schema schema_of(const Checkpoint& ckpt) {
  Schema s;
  s.reserve(ckpt.tensors.size());
  for (const auto& [name, t] : ckpt.tensors) s.push_back({name, t.shape});
  return s;
}

inline Schema schema_of(std::span<const TensorSpec> specs) {
  Schema s;
  s.reserve(specs.size());
  for (const auto& spec : specs) s.push_back({spec.name, spec.shape});
  std::sort(s.begin(), s.end(), [](const SchemaEntry& a, const SchemaEntry& b) { return a.name < b.name; });
  return s;
}

enum class Provenance { task, instruction, complex, pure, derived };

inline std::string_view provenance_name(Provenance p) {
  switch (p) {
    case Provenance::task: return "task";
    case Provenance::instruction: return "instruction";
    case Provenance::complex: return "complex";
    case Provenance::pure: return "pure";
    case Provenance::derived: return "derived";
  }
  return "derived";
}

inline Provenance parse_provenance(std::string_view s) {
  if (s == "task") return Provenance::task;
  if (s == "instruction") return Provenance::instruction;
  if (s == "complex") return Provenance::complex;
  if (s == "pure") return Provenance::pure;
  return Provenance::derived;
}

inline constexpr const char* family_key = "family";

// Model-family tag: explicit "family" metadata, else a fingerprint of the schema.
inline std::string family_of(const Checkpoint& ckpt) {
  if (auto it = ckpt.metadata.find(family_key); it != ckpt.metadata.end()) return it->second;
  std::uint64_t h = fnv1a64("schema");
  for (const auto& [name, t] : ckpt.tensors) {
    h = splitmix64(h ^ fnv1a64(name));
    for (auto d : t.shape) h = splitmix64(h ^ d);
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out = "schema:";
  for (int i = 15; i >= 0; --i) out.push_back(hex[(h >> (4 * i)) & 0xf]);
  return out;
}

struct DeltaTensor {
  Shape shape;
  std::vector<float> values;
  bool operator==(const DeltaTensor&) const = default;
};

// Checkpoint-shaped difference vector, always held in F32.
struct DeltaVector {
  std::map<std::string, DeltaTensor> tensors;
  Provenance provenance = Provenance::derived;
  std::string family;

  Schema schema() const {
    Schema s;
    s.reserve(tensors.size());
    for (const auto& [name, t] : tensors) s.push_back({name, t.shape});
    return s;
  }

  std::uint64_t numel() const {
    std::uint64_t n = 0;
    for (const auto& [name, t] : tensors) n += t.values.size();
    return n;
  }

  const DeltaTensor& at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw Error(ErrorCode::schema_mismatch, "delta has no tensor '" + name + "'");
    return it->second;
  }
};

// Same schema, all values zero.
inline DeltaVector zeros_like(const DeltaVector& d) {
  DeltaVector out;
  out.provenance = d.provenance;
  out.family = d.family;
  for (const auto& [name, t] : d.tensors) out.tensors.emplace(name, DeltaTensor{t.shape, std::vector<float>(t.values.size(), 0.0f)});
  return out;
}

inline std::string describe_schema_diff(const Schema& a, const Schema& b) {
  std::map<std::string, const Shape*> mb;
  for (const auto& e : b) mb[e.name] = &e.shape;
  for (const auto& e : a) {
    auto it = mb.find(e.name);
    if (it == mb.end()) return "'" + e.name + "' missing from second operand";
    if (*it->second != e.shape) return "'" + e.name + "' shape differs";
    mb.erase(it);
  }
  if (!mb.empty()) return "'" + mb.begin()->first + "' missing from first operand";
  return "schemas identical";
}

inline void require_same_schema(const Schema& a, const Schema& b, std::string_view context) {
  if (a != b) {
    throw Error(ErrorCode::schema_mismatch, std::string(context) + ": " + describe_schema_diff(a, b));
  }
}

// Deltas persist as F32 checkpoints tagged with provenance and family metadata.
inline Checkpoint delta_to_checkpoint(const DeltaVector& d) {
  Checkpoint ckpt;
  ckpt.metadata["lata.provenance"] = std::string(provenance_name(d.provenance));
  if (!d.family.empty()) ckpt.metadata[family_key] = d.family;
  for (const auto& [name, t] : d.tensors) ckpt.add(name, make_tensor(Dtype::F32, t.shape, t.values));
  return ckpt;
}

inline DeltaVector delta_from_checkpoint(const Checkpoint& ckpt) {
  DeltaVector d;
  if (auto it = ckpt.metadata.find("lata.provenance"); it != ckpt.metadata.end()) d.provenance = parse_provenance(it->second);
  d.family = family_of(ckpt);
  for (const auto& [name, t] : ckpt.tensors) d.tensors.emplace(name, DeltaTensor{t.shape, to_f32(t)});
  return d;
}

inline void write_delta(const DeltaVector& d, const std::filesystem::path& path) {
  write_checkpoint(delta_to_checkpoint(d), path);
}

inline DeltaVector read_delta(const std::filesystem::path& path) {
  return delta_from_checkpoint(read_checkpoint(path));
}

}  // namespace lata
