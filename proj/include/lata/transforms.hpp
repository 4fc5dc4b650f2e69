#pragma once

// Baseline delta transforms: magnitude trimming and sign election (TIES),
// random drop with rescale (DARE).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "lata/delta.hpp"
#include "lata/parallel.hpp"
#include "lata/rng.hpp"

namespace lata {

enum class TrimScope { tensor, global };

// ceil(k * n), with products within rounding noise of an integer snapped to it
// so that e.g. k = 0.3 keeps exactly 3 of 10.
inline std::uint64_t keep_count(double k, std::uint64_t n) {
  const double x = k * static_cast<double>(n);
  const double r = std::round(x);
  if (std::fabs(x - r) <= 1e-9 * std::max(1.0, x)) return static_cast<std::uint64_t>(r);
  return static_cast<std::uint64_t>(std::ceil(x));
}

inline void check_keep_fraction(double k) {
  if (!(k > 0.0 && k <= 1.0)) throw Error(ErrorCode::config, "TIES keep fraction k must satisfy 0 < k <= 1");
}

namespace detail {

// Orders by descending magnitude; equal magnitudes keep the lower index first.
struct MagnitudeOrder {
  const float* values;
  bool operator()(std::uint32_t a, std::uint32_t b) const {
    const float ma = std::fabs(values[a]);
    const float mb = std::fabs(values[b]);
    return ma != mb ? ma > mb : a < b;
  }
};

inline void require_finite(const std::vector<float>& v, const std::string& name, const char* op) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) {
      throw Error(ErrorCode::non_finite, std::string(op) + ": tensor '" + name + "' element " + std::to_string(i) +
                                             " is not finite");
    }
  }
}

inline void trim_tensor(std::vector<float>& values, double k) {
  const std::uint64_t n = values.size();
  const std::uint64_t keep = keep_count(k, n);
  if (keep >= n) return;
  std::vector<std::uint32_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0u);
  std::nth_element(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(keep), idx.end(), MagnitudeOrder{values.data()});
  for (std::uint64_t j = keep; j < n; ++j) values[idx[j]] = 0.0f;
}

}  // namespace detail

// Keeps the ceil(k*n) largest-magnitude elements and zeroes the rest, per tensor
// or across the whole delta. Ties at the cutoff keep lower flat indices
// (tensor names ascending for the global scope).
inline DeltaVector ties_trim(const DeltaVector& delta, double k, TrimScope scope = TrimScope::tensor,
                             const ExecPolicy& policy = {}) {
  check_keep_fraction(k);
  DeltaVector out = delta;
  std::vector<std::pair<const std::string*, DeltaTensor*>> slots;
  for (auto& [name, t] : out.tensors) {
    detail::require_finite(t.values, name, "ties_trim");
    if (t.values.size() > UINT32_MAX) throw Error(ErrorCode::invariant, "ties_trim: tensor '" + name + "' too large");
    slots.emplace_back(&name, &t);
  }
  if (k == 1.0) return out;

  if (scope == TrimScope::tensor) {
    parallel_for(slots.size(), policy, [&](std::size_t i) { detail::trim_tensor(slots[i].second->values, k); });
    return out;
  }

  struct Entry {
    float magnitude;
    std::uint32_t tensor;
    std::uint64_t index;
  };
  std::vector<Entry> all;
  all.reserve(out.numel());
  for (std::uint32_t t = 0; t < slots.size(); ++t) {
    const auto& v = slots[t].second->values;
    for (std::uint64_t i = 0; i < v.size(); ++i) all.push_back({std::fabs(v[i]), t, i});
  }
  const std::uint64_t keep = keep_count(k, all.size());
  if (keep >= all.size()) return out;
  std::nth_element(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(keep), all.end(),
                   [](const Entry& a, const Entry& b) {
                     if (a.magnitude != b.magnitude) return a.magnitude > b.magnitude;
                     if (a.tensor != b.tensor) return a.tensor < b.tensor;
                     return a.index < b.index;
                   });
  for (std::size_t j = keep; j < all.size(); ++j) slots[all[j].tensor].second->values[all[j].index] = 0.0f;
  return out;
}

// Per element: elect the sign of the sum, then average only the entries
// carrying that sign. A zero sum yields zero.
inline DeltaVector ties_sign_merge(std::span<const DeltaVector* const> deltas, const ExecPolicy& policy = {}) {
  if (deltas.size() < 2) throw Error(ErrorCode::invariant, "ties_sign_merge needs at least two deltas");
  const Schema schema = deltas[0]->schema();
  for (std::size_t d = 1; d < deltas.size(); ++d) {
    require_same_schema(schema, deltas[d]->schema(), "ties_sign_merge operand " + std::to_string(d));
  }
  DeltaVector out = zeros_like(*deltas[0]);
  out.provenance = Provenance::derived;
  std::vector<std::pair<const std::string*, DeltaTensor*>> slots;
  for (auto& [name, t] : out.tensors) slots.emplace_back(&name, &t);

  parallel_for(slots.size(), policy, [&](std::size_t s) {
    const std::string& name = *slots[s].first;
    std::vector<const float*> src;
    for (const DeltaVector* d : deltas) src.push_back(d->tensors.at(name).values.data());
    auto& dst = slots[s].second->values;
    for (std::size_t i = 0; i < dst.size(); ++i) {
      double sum = 0.0;
      for (const float* p : src) sum += p[i];
      if (sum == 0.0) continue;
      double agree = 0.0;
      std::size_t count = 0;
      for (const float* p : src) {
        if ((sum > 0.0 && p[i] > 0.0f) || (sum < 0.0 && p[i] < 0.0f)) {
          agree += p[i];
          ++count;
        }
      }
      dst[i] = static_cast<float>(agree / static_cast<double>(count));
    }
  });
  return out;
}

inline DeltaVector ties_sign_merge(std::initializer_list<const DeltaVector*> deltas, const ExecPolicy& policy = {}) {
  return ties_sign_merge(std::span<const DeltaVector* const>(deltas.begin(), deltas.size()), policy);
}

inline void check_drop_rate(double p) {
  if (!(p >= 0.0 && p < 1.0)) throw Error(ErrorCode::config, "DARE drop rate p must satisfy 0 <= p < 1");
}

// Zeroes each element with probability p and rescales survivors by 1/(1-p).
// The draw for an element depends only on (seed, tensor name, flat index).
inline DeltaVector dare_drop(const DeltaVector& delta, double p, std::uint64_t seed, const ExecPolicy& policy = {}) {
  check_drop_rate(p);
  DeltaVector out = delta;
  if (p == 0.0) return out;
  const float scale = static_cast<float>(1.0 / (1.0 - p));
  std::vector<std::pair<const std::string*, DeltaTensor*>> slots;
  for (auto& [name, t] : out.tensors) slots.emplace_back(&name, &t);
  parallel_for(slots.size(), policy, [&](std::size_t s) {
    const CounterRng rng(seed, *slots[s].first);
    auto& v = slots[s].second->values;
    for (std::size_t i = 0; i < v.size(); ++i) {
      v[i] = rng.uniform(i) < p ? 0.0f : v[i] * scale;
    }
  });
  return out;
}

inline std::uint64_t count_nonzero(const DeltaVector& d) {
  std::uint64_t n = 0;
  for (const auto& [name, t] : d.tensors) {
    for (float v : t.values) n += v != 0.0f;
  }
  return n;
}

}  // namespace lata
