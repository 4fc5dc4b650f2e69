#pragma once

// Delta extraction, weighted combination and per-layer cosine similarity.
// Elementwise arithmetic is F32; reductions accumulate in double.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "lata/checkpoint.hpp"
#include "lata/delta.hpp"
#include "lata/parallel.hpp"
#include "lata/partition.hpp"

namespace lata {

inline DeltaVector diff(const Checkpoint& minuend, const Checkpoint& subtrahend,
                        Provenance provenance = Provenance::derived, const ExecPolicy& policy = {}) {
  const CompatReport report = validate_compat(minuend, subtrahend);
  if (!report.compatible) throw Error(ErrorCode::schema_mismatch, "diff: " + report.describe());
  const std::string family = family_of(minuend);
  if (family != family_of(subtrahend)) {
    throw Error(ErrorCode::family_mismatch,
                "diff: operands belong to families '" + family + "' and '" + family_of(subtrahend) + "'");
  }

  DeltaVector out;
  out.provenance = provenance;
  out.family = family;
  std::vector<std::pair<const std::string*, DeltaTensor*>> slots;
  for (const auto& [name, t] : minuend.tensors) {
    auto [it, _] = out.tensors.emplace(name, DeltaTensor{t.shape, {}});
    slots.emplace_back(&it->first, &it->second);
  }
  parallel_for(slots.size(), policy, [&](std::size_t i) {
    const Tensor& a = minuend.tensors.at(*slots[i].first);
    const Tensor& b = subtrahend.tensors.at(*slots[i].first);
    std::vector<float> va = to_f32(a);
    const std::vector<float> vb = to_f32(b);
    for (std::size_t k = 0; k < va.size(); ++k) va[k] = va[k] - vb[k];
    slots[i].second->values = std::move(va);
  });
  return out;
}

// task = finetuned - pretrained, instruction = pretrained - base, complex = finetuned - base.
inline DeltaVector task_vector(const Checkpoint& finetuned, const Checkpoint& pretrained, const ExecPolicy& policy = {}) {
  return diff(finetuned, pretrained, Provenance::task, policy);
}

inline DeltaVector instruction_vector(const Checkpoint& pretrained, const Checkpoint& base, const ExecPolicy& policy = {}) {
  return diff(pretrained, base, Provenance::instruction, policy);
}

inline DeltaVector complex_vector(const Checkpoint& finetuned, const Checkpoint& base, const ExecPolicy& policy = {}) {
  return diff(finetuned, base, Provenance::complex, policy);
}

struct CombineTerm {
  float lambda = 1.0f;
  const DeltaVector* delta = nullptr;
};

// target + sum(lambda_i * delta_i), accumulated per element in F32 in term
// order, then rounded back to each tensor's dtype.
inline Checkpoint combine(const Checkpoint& target, std::span<const CombineTerm> terms, const ExecPolicy& policy = {}) {
  if (terms.empty()) return target;
  const Schema schema = schema_of(target);
  for (std::size_t t = 0; t < terms.size(); ++t) {
    if (!std::isfinite(terms[t].lambda)) {
      throw Error(ErrorCode::non_finite, "combine: coefficient of term " + std::to_string(t) + " is not finite");
    }
    require_same_schema(schema, terms[t].delta->schema(), "combine term " + std::to_string(t));
  }

  Checkpoint out;
  out.metadata = target.metadata;
  std::vector<std::pair<const std::string*, Tensor*>> slots;
  for (const auto& [name, t] : target.tensors) {
    auto [it, _] = out.tensors.emplace(name, Tensor{t.dtype, t.shape, {}});
    slots.emplace_back(&it->first, &it->second);
  }
  parallel_for(slots.size(), policy, [&](std::size_t i) {
    const std::string& name = *slots[i].first;
    const Tensor& src = target.tensors.at(name);
    std::vector<float> acc = to_f32(src);
    for (const CombineTerm& term : terms) {
      const std::vector<float>& d = term.delta->tensors.at(name).values;
      const float lambda = term.lambda;
      for (std::size_t k = 0; k < acc.size(); ++k) acc[k] = acc[k] + lambda * d[k];
    }
    for (std::size_t k = 0; k < acc.size(); ++k) {
      if (!std::isfinite(acc[k])) {
        throw Error(ErrorCode::non_finite,
                    "combine: non-finite result in tensor '" + name + "' at element " + std::to_string(k));
      }
    }
    Tensor& dst = *slots[i].second;
    dst.data.resize(src.data.size());
    encode_from_f32(dst.dtype, acc, dst.data);
  });
  return out;
}

inline Checkpoint combine(const Checkpoint& target, std::initializer_list<CombineTerm> terms, const ExecPolicy& policy = {}) {
  return combine(target, std::span<const CombineTerm>(terms.begin(), terms.size()), policy);
}

// Subtractive counterpart of combine: model - lambda * delta.
inline Checkpoint forget(const Checkpoint& model, float lambda, const DeltaVector& delta, const ExecPolicy& policy = {}) {
  const CombineTerm term{-lambda, &delta};
  return combine(model, std::span<const CombineTerm>(&term, 1), policy);
}

struct LayerSimilarity {
  std::size_t layer = 0;
  float cosine = 0.0f;
  bool degenerate = false;          // a zero-norm layer; cosine is reported as 0
  std::size_t instruction_rank = 0;  // 1 = most instruction-like (highest cosine)
  std::size_t task_rank = 0;         // 1 = most task-specific, = L + 1 - instruction_rank
  bool operator==(const LayerSimilarity&) const = default;
};

struct SimilarityProfile {
  std::vector<LayerSimilarity> layers;
  LayerPartition partition;
  std::string family;

  std::size_t layer_count() const { return layers.size(); }
};

// Ranks by descending cosine; ties go to the lower layer index first, and
// degenerate layers take the largest ranks.
inline SimilarityProfile rank_layers(SimilarityProfile profile) {
  const std::size_t n = profile.layers.size();
  if (n == 0) throw Error(ErrorCode::no_layers, "rank_layers: profile has no layers");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& la = profile.layers[a];
    const auto& lb = profile.layers[b];
    if (la.degenerate != lb.degenerate) return !la.degenerate;
    if (!la.degenerate && la.cosine != lb.cosine) return la.cosine > lb.cosine;
    return la.layer < lb.layer;
  });
  for (std::size_t r = 0; r < n; ++r) {
    auto& entry = profile.layers[order[r]];
    entry.instruction_rank = r + 1;
    entry.task_rank = n - r;
  }
  return profile;
}

struct CosineParts {
  double dot = 0.0;
  double norm_a = 0.0;
  double norm_b = 0.0;
};

inline CosineParts cosine_parts(std::span<const float> a, std::span<const float> b) {
  CosineParts p;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double x = a[k];
    const double y = b[k];
    p.dot += x * y;
    p.norm_a += x * x;
    p.norm_b += y * y;
  }
  return p;
}

inline float finish_cosine(const CosineParts& p, bool& degenerate) {
  degenerate = p.norm_a == 0.0 || p.norm_b == 0.0;
  if (degenerate) return 0.0f;
  const double c = p.dot / (std::sqrt(p.norm_a) * std::sqrt(p.norm_b));
  return static_cast<float>(std::clamp(c, -1.0, 1.0));
}

// Cosine between complex and instruction vectors for every layer of the partition.
inline SimilarityProfile similarity_profile(const DeltaVector& comp, const DeltaVector& instr, const LayerPartition& part,
                                            const ExecPolicy& policy = {}) {
  if (part.layer_count() == 0) {
    throw Error(ErrorCode::no_layers, "similarity_profile: partition has no layers (L = 0)");
  }
  require_same_schema(comp.schema(), part.schema, "similarity_profile (first delta)");
  require_same_schema(instr.schema(), part.schema, "similarity_profile (second delta)");
  if (comp.family != instr.family) {
    throw Error(ErrorCode::family_mismatch,
                "similarity_profile: deltas from families '" + comp.family + "' and '" + instr.family + "'");
  }

  SimilarityProfile profile;
  profile.partition = part;
  profile.family = comp.family;
  profile.layers.resize(part.layer_count());
  parallel_for(part.layer_count(), policy, [&](std::size_t i) {
    CosineParts total;
    for (const auto& name : part.layers[i]) {
      const CosineParts p = cosine_parts(comp.at(name).values, instr.at(name).values);
      total.dot += p.dot;
      total.norm_a += p.norm_a;
      total.norm_b += p.norm_b;
    }
    if (!std::isfinite(total.dot) || !std::isfinite(total.norm_a) || !std::isfinite(total.norm_b)) {
      throw Error(ErrorCode::non_finite, "similarity_profile: non-finite values in layer " + std::to_string(i));
    }
    LayerSimilarity& ls = profile.layers[i];
    ls.layer = i;
    ls.cosine = finish_cosine(total, ls.degenerate);
  });
  return rank_layers(std::move(profile));
}

}  // namespace lata
