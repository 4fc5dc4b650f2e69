#pragma once

#include <charconv>
#include <cstdint>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include "lata/delta.hpp"

namespace lata {

// First integer after a path segment named "layers" or "h".
inline constexpr const char* default_layer_pattern = R"((?:^|\.)(?:layers|h)\.(\d+)(?:\.|$))";

class LayerPattern {
 public:
  LayerPattern() : LayerPattern(default_layer_pattern) {}

  explicit LayerPattern(std::string pattern) : text_(std::move(pattern)) {
    try {
      re_ = std::regex(text_, std::regex::ECMAScript);
    } catch (const std::regex_error& e) {
      throw Error(ErrorCode::config, "layer pattern '" + text_ + "' does not compile: " + e.what());
    }
    if (re_.mark_count() < 1) {
      throw Error(ErrorCode::config, "layer pattern '" + text_ + "' has no capture group");
    }
  }

  const std::string& text() const { return text_; }

  // Layer index captured from a tensor name, if any.
  std::optional<std::size_t> match(const std::string& name) const {
    std::smatch m;
    if (!std::regex_search(name, m, re_) || !m[1].matched) return std::nullopt;
    const std::string cap = m[1].str();
    std::size_t value = 0;
    const auto [ptr, ec] = std::from_chars(cap.data(), cap.data() + cap.size(), value);
    if (ec != std::errc{} || ptr != cap.data() + cap.size()) return std::nullopt;
    return value;
  }

 private:
  std::string text_;
  std::regex re_;
};

struct LayerPartition {
  std::vector<std::vector<std::string>> layers;  // index 0..L-1, names ascending
  std::vector<std::string> residual;             // ascending
  Schema schema;                                 // source schema, ascending by name

  std::size_t layer_count() const { return layers.size(); }
  bool operator==(const LayerPartition&) const = default;
};

inline LayerPartition partition(const Schema& schema, const LayerPattern& pattern = LayerPattern{}) {
  if (schema.empty()) throw Error(ErrorCode::partition, "cannot partition an empty schema");
  LayerPartition part;
  part.schema = schema;
  std::sort(part.schema.begin(), part.schema.end(),
            [](const SchemaEntry& a, const SchemaEntry& b) { return a.name < b.name; });

  std::map<std::size_t, std::vector<std::string>> by_index;
  for (const auto& entry : part.schema) {
    if (auto idx = pattern.match(entry.name)) {
      by_index[*idx].push_back(entry.name);
    } else {
      part.residual.push_back(entry.name);
    }
  }
  std::size_t expected = 0;
  for (auto& [idx, names] : by_index) {
    if (idx != expected) {
      throw Error(ErrorCode::partition, "non-contiguous layer indices: layer " + std::to_string(expected) +
                                            " missing (next present index is " + std::to_string(idx) + ")");
    }
    part.layers.push_back(std::move(names));
    ++expected;
  }
  return part;
}

inline LayerPartition partition(const Checkpoint& ckpt, const LayerPattern& pattern = LayerPattern{}) {
  return partition(schema_of(ckpt), pattern);
}

// Layer i of a delta as one vector: its tensors in ascending-name order, each row-major.
inline std::vector<float> layer_flatten(const DeltaVector& delta, const LayerPartition& part, std::size_t i) {
  if (i >= part.layer_count()) {
    throw Error(ErrorCode::layer_range,
                "layer " + std::to_string(i) + " out of range [0, " + std::to_string(part.layer_count()) + ")");
  }
  require_same_schema(delta.schema(), part.schema, "layer_flatten");
  std::vector<float> out;
  std::size_t total = 0;
  for (const auto& name : part.layers[i]) total += delta.at(name).values.size();
  out.reserve(total);
  for (const auto& name : part.layers[i]) {
    const auto& v = delta.at(name).values;
    out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

}  // namespace lata
