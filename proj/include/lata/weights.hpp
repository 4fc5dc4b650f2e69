#pragma once

// Layer weighting schemes that turn a task vector into a pure vector.

#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include "lata/vector_space.hpp"

namespace lata {

enum class SchemeKind { linear, log, threshold };
enum class DegeneratePolicy { keep, drop };

inline std::string_view scheme_name(SchemeKind k) {
  switch (k) {
    case SchemeKind::linear: return "linear";
    case SchemeKind::log: return "log";
    case SchemeKind::threshold: return "threshold";
  }
  return "?";
}

struct WeightScheme {
  SchemeKind kind = SchemeKind::linear;
  float sigma = 0.95f;  // threshold scheme only
  float residual_weight = 1.0f;
  DegeneratePolicy degenerate = DegeneratePolicy::keep;
  bool operator==(const WeightScheme&) const = default;
};

// w_i = r_i / L. The most instruction-like layer (rank 1) gets 1/L, the least gets 1.
inline std::vector<float> weights_linear(const SimilarityProfile& profile) {
  const std::size_t n = profile.layer_count();
  std::vector<float> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = static_cast<float>(static_cast<double>(profile.layers[i].instruction_rank) / static_cast<double>(n));
  }
  return w;
}

// w_i = log_L(r_i): rank 1 -> 0, rank L -> 1.
inline std::vector<float> weights_log(const SimilarityProfile& profile) {
  const std::size_t n = profile.layer_count();
  if (n < 2) throw Error(ErrorCode::scheme, "log scheme undefined for single layer");
  const double log_n = std::log(static_cast<double>(n));
  std::vector<float> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t r = profile.layers[i].instruction_rank;
    w[i] = r == 1 ? 0.0f : r == n ? 1.0f : static_cast<float>(std::log(static_cast<double>(r)) / log_n);
  }
  return w;
}

// Layers at or above sigma are dropped; degenerate layers count as lowest similarity.
inline std::vector<float> weights_threshold(const SimilarityProfile& profile, float sigma) {
  std::vector<float> w(profile.layer_count());
  for (std::size_t i = 0; i < w.size(); ++i) {
    const auto& l = profile.layers[i];
    w[i] = (!l.degenerate && l.cosine >= sigma) ? 0.0f : 1.0f;
  }
  return w;
}

inline std::vector<float> scheme_weights(const SimilarityProfile& profile, const WeightScheme& scheme) {
  std::vector<float> w;
  switch (scheme.kind) {
    case SchemeKind::linear: w = weights_linear(profile); break;
    case SchemeKind::log: w = weights_log(profile); break;
    case SchemeKind::threshold: w = weights_threshold(profile, scheme.sigma); break;
  }
  if (scheme.degenerate == DegeneratePolicy::drop) {
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (profile.layers[i].degenerate) w[i] = 0.0f;
    }
  }
  return w;
}

struct PureVector {
  DeltaVector delta;
  std::vector<float> weights;
  WeightScheme scheme;
};

// Scales every tensor of layer i by weights[i] and residual tensors by residual_weight.
inline PureVector apply_layer_weights(const DeltaVector& tau, const LayerPartition& part, std::span<const float> weights,
                                      float residual_weight, const ExecPolicy& policy = {}) {
  require_same_schema(tau.schema(), part.schema, "layer weighting");
  if (weights.size() != part.layer_count()) {
    throw Error(ErrorCode::partition, "weight count " + std::to_string(weights.size()) + " does not match " +
                                          std::to_string(part.layer_count()) + " layers");
  }
  PureVector pv;
  pv.delta = tau;
  pv.delta.provenance = Provenance::pure;
  pv.weights.assign(weights.begin(), weights.end());
  pv.scheme.residual_weight = residual_weight;

  struct Job {
    DeltaTensor* tensor;
    float weight;
  };
  std::vector<Job> jobs;
  for (std::size_t i = 0; i < part.layer_count(); ++i) {
    for (const auto& name : part.layers[i]) jobs.push_back({&pv.delta.tensors.at(name), weights[i]});
  }
  for (const auto& name : part.residual) jobs.push_back({&pv.delta.tensors.at(name), residual_weight});
  parallel_for(jobs.size(), policy, [&](std::size_t j) {
    const float w = jobs[j].weight;
    for (float& v : jobs[j].tensor->values) v = w * v;
  });
  return pv;
}

inline PureVector build_pure_vector(const DeltaVector& tau, const SimilarityProfile& profile, const WeightScheme& scheme,
                                    const LayerPartition& part, const ExecPolicy& policy = {}) {
  require_same_schema(tau.schema(), part.schema, "build_pure_vector");
  if (!(profile.partition == part)) {
    throw Error(ErrorCode::partition, "build_pure_vector: similarity profile was computed on a different partition");
  }
  if (tau.family != profile.family) {
    throw Error(ErrorCode::family_mismatch, "build_pure_vector: task vector family '" + tau.family +
                                                "' differs from profile family '" + profile.family + "'");
  }
  if (scheme.kind == SchemeKind::threshold && !std::isfinite(scheme.sigma)) {
    throw Error(ErrorCode::scheme, "threshold sigma must be finite");
  }
  PureVector pv = apply_layer_weights(tau, part, scheme_weights(profile, scheme), scheme.residual_weight, policy);
  pv.scheme = scheme;
  return pv;
}

}  // namespace lata
