#pragma once

// Recipe execution: derive each term's task vector, run its transform chain,
// then add (learn) or subtract (forget) the results from the target.

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "lata/digest.hpp"
#include "lata/format.hpp"
#include "lata/recipe.hpp"
#include "lata/transforms.hpp"
#include "lata/vector_space.hpp"
#include "lata/weights.hpp"

namespace lata {

class CheckpointResolver {
 public:
  virtual ~CheckpointResolver() = default;
  virtual const Checkpoint& load(const std::string& ref) = 0;
  virtual std::string digest(const std::string& ref) = 0;
};

// Resolves refs as file paths (relative ones against root) and caches loads.
class FileResolver : public CheckpointResolver {
 public:
  explicit FileResolver(std::filesystem::path root = {}) : root_(std::move(root)) {}

  std::filesystem::path path_of(const std::string& ref) const {
    std::filesystem::path p(ref);
    return p.is_absolute() || root_.empty() ? p : root_ / p;
  }

  const Checkpoint& load(const std::string& ref) override {
    auto& entry = cache_[ref];
    if (!entry.checkpoint) {
      const auto path = path_of(ref);
      if (!std::filesystem::exists(path)) throw Error(ErrorCode::unresolved_ref, "cannot resolve '" + ref + "'");
      const auto bytes = read_file_bytes(path);
      entry.digest = sha256_hex(bytes);
      try {
        entry.checkpoint = std::make_unique<Checkpoint>(parse_checkpoint(bytes));
      } catch (const Error& e) {
        cache_.erase(ref);
        throw Error(e.code(), path.string() + ": " + e.detail());
      }
    }
    return *entry.checkpoint;
  }

  std::string digest(const std::string& ref) override {
    load(ref);
    return cache_.at(ref).digest;
  }

 private:
  struct Entry {
    std::unique_ptr<Checkpoint> checkpoint;
    std::string digest;
  };
  std::filesystem::path root_;
  std::map<std::string, Entry> cache_;
};

// In-process resolver; the digest is taken over the canonical serialization.
class MemoryResolver : public CheckpointResolver {
 public:
  void put(const std::string& ref, Checkpoint ckpt) { store_[ref] = std::move(ckpt); }

  const Checkpoint& load(const std::string& ref) override {
    auto it = store_.find(ref);
    if (it == store_.end()) throw Error(ErrorCode::unresolved_ref, "cannot resolve '" + ref + "'");
    return it->second;
  }

  std::string digest(const std::string& ref) override { return sha256_hex(serialize(load(ref))); }

 private:
  std::map<std::string, Checkpoint> store_;
};

struct TransformReport {
  std::string op;
  nlohmann::ordered_json params;
  std::uint64_t elements_zeroed = 0;
  std::optional<SimilarityProfile> profile;  // lata steps
  std::vector<float> weights;                 // lata steps
};

struct TermReport {
  std::string source;
  float lambda = 0.0f;
  std::vector<TransformReport> transforms;
};

struct MergeOutcome {
  Checkpoint output;
  std::vector<TermReport> terms;
  bool simultaneous = true;
  bool sign_election = false;
};

namespace detail {

struct LataContext {
  std::optional<DeltaVector> instruction;
  std::optional<LayerPartition> partition;
};

inline DeltaVector run_lata(const LataOp& op, const DeltaVector& current, const DeltaVector& tau,
                            const RecipeTerm& term, const MergeRecipe& recipe, CheckpointResolver& resolver,
                            LataContext& ctx, TransformReport& report, const ExecPolicy& policy) {
  if (recipe.base.empty() || recipe.pretrained.empty()) {
    throw Error(ErrorCode::config, "lata requires both base and pretrained checkpoints in the recipe");
  }
  const Checkpoint& base = resolver.load(recipe.base);
  if (!ctx.instruction) ctx.instruction = instruction_vector(resolver.load(recipe.pretrained), base, policy);
  if (!ctx.partition) ctx.partition = partition(ctx.instruction->schema(), LayerPattern(recipe.layer_pattern));

  DeltaVector comp;
  if (!term.finetuned.empty()) {
    comp = complex_vector(resolver.load(term.finetuned), base, policy);
  } else {
    // finetuned - base = (finetuned - pretrained) + (pretrained - base)
    require_same_schema(tau.schema(), ctx.instruction->schema(), "lata complex vector");
    comp = tau;
    comp.provenance = Provenance::complex;
    for (auto& [name, t] : comp.tensors) {
      const auto& instr = ctx.instruction->tensors.at(name).values;
      for (std::size_t k = 0; k < t.values.size(); ++k) t.values[k] = t.values[k] + instr[k];
    }
  }
  const SimilarityProfile profile = similarity_profile(comp, *ctx.instruction, *ctx.partition, policy);
  PureVector pv = build_pure_vector(current, profile, op.scheme, *ctx.partition, policy);
  report.profile = profile;
  report.weights = pv.weights;
  return std::move(pv.delta);
}

inline std::uint64_t nonzero_drop(const DeltaVector& before, const DeltaVector& after) {
  const std::uint64_t a = count_nonzero(before);
  const std::uint64_t b = count_nonzero(after);
  return a > b ? a - b : 0;
}

inline bool has_ties(const RecipeTerm& t) {
  for (const auto& op : t.chain) {
    if (std::holds_alternative<TiesOp>(op)) return true;
  }
  return false;
}

}  // namespace detail

inline MergeOutcome execute_recipe(const MergeRecipe& recipe, CheckpointResolver& resolver,
                                   const ExecPolicy& policy = {}) {
  if (recipe.target.empty()) throw Error(ErrorCode::config, "recipe has no target checkpoint");
  const Checkpoint& target = resolver.load(recipe.target);
  const Schema target_schema = schema_of(target);

  MergeOutcome outcome;
  outcome.simultaneous = recipe.resolved_simultaneous();
  detail::LataContext lata_ctx;
  std::vector<DeltaVector> deltas;
  deltas.reserve(recipe.terms.size());

  for (std::size_t ti = 0; ti < recipe.terms.size(); ++ti) {
    const RecipeTerm& term = recipe.terms[ti];
    if (!std::isfinite(term.lambda)) throw Error(ErrorCode::config, "term " + std::to_string(ti) + ": lambda is not finite");
    TermReport tr;
    tr.source = term.finetuned.empty() ? term.delta : term.finetuned;
    tr.lambda = term.lambda;

    DeltaVector tau;
    if (!term.finetuned.empty()) {
      if (recipe.pretrained.empty()) {
        throw Error(ErrorCode::config, "term " + std::to_string(ti) + ": a finetuned source needs a pretrained checkpoint");
      }
      tau = task_vector(resolver.load(term.finetuned), resolver.load(recipe.pretrained), policy);
    } else {
      tau = delta_from_checkpoint(resolver.load(term.delta));
    }
    require_same_schema(target_schema, tau.schema(), "term " + std::to_string(ti) + " vs target");

    DeltaVector current = tau;
    for (std::size_t si = 0; si < term.chain.size(); ++si) {
      const TransformOp& op = term.chain[si];
      TransformReport rep;
      const nlohmann::ordered_json op_json = transform_to_json(op);
      rep.op = op_json["op"].get<std::string>();
      rep.params = op_json["params"];
      DeltaVector next;
      if (const auto* l = std::get_if<LataOp>(&op)) {
        next = detail::run_lata(*l, current, tau, term, recipe, resolver, lata_ctx, rep, policy);
      } else if (const auto* t = std::get_if<TiesOp>(&op)) {
        next = ties_trim(current, t->k, t->scope, policy);
      } else if (const auto* d = std::get_if<DareOp>(&op)) {
        const std::uint64_t seed = d->seed.value_or(derived_dare_seed(recipe.seed, ti, si));
        rep.params["seed"] = seed;
        next = dare_drop(current, d->p, seed, policy);
      }
      rep.elements_zeroed = detail::nonzero_drop(current, next);
      current = std::move(next);
      tr.transforms.push_back(std::move(rep));
    }
    deltas.push_back(std::move(current));
    outcome.terms.push_back(std::move(tr));
  }

  const float sign = recipe.mode == MergeMode::learn ? 1.0f : -1.0f;
  if (!outcome.simultaneous) {
    Checkpoint model = target;
    for (std::size_t ti = 0; ti < deltas.size(); ++ti) {
      model = combine(model, {CombineTerm{sign * recipe.terms[ti].lambda, &deltas[ti]}}, policy);
    }
    outcome.output = std::move(model);
    return outcome;
  }

  // One combine. Two or more TIES-transformed terms are first scaled by their
  // coefficients and merged by sign election into a single unit-weight term.
  std::vector<std::size_t> ties_terms;
  for (std::size_t ti = 0; ti < recipe.terms.size(); ++ti) {
    if (detail::has_ties(recipe.terms[ti])) ties_terms.push_back(ti);
  }
  std::vector<CombineTerm> terms;
  std::optional<DeltaVector> elected;
  if (ties_terms.size() >= 2) {
    outcome.sign_election = true;
    std::vector<DeltaVector> scaled;
    for (std::size_t ti : ties_terms) {
      DeltaVector s = deltas[ti];
      const float lambda = recipe.terms[ti].lambda;
      for (auto& [name, t] : s.tensors) {
        for (float& v : t.values) v = lambda * v;
      }
      scaled.push_back(std::move(s));
    }
    std::vector<const DeltaVector*> ptrs;
    for (const auto& s : scaled) ptrs.push_back(&s);
    elected = ties_sign_merge(ptrs, policy);
  }
  for (std::size_t ti = 0; ti < deltas.size(); ++ti) {
    if (elected && detail::has_ties(recipe.terms[ti])) {
      if (ti == ties_terms.front()) terms.push_back({sign, &*elected});
      continue;
    }
    terms.push_back({sign * recipe.terms[ti].lambda, &deltas[ti]});
  }
  outcome.output = combine(target, terms, policy);
  return outcome;
}

inline nlohmann::ordered_json profile_to_json(const SimilarityProfile& profile, std::span<const float> weights) {
  nlohmann::ordered_json layers = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < profile.layer_count(); ++i) {
    const auto& l = profile.layers[i];
    nlohmann::ordered_json j;
    j["layer"] = l.layer;
    j["cosine"] = json_float(l.cosine);
    j["degenerate"] = l.degenerate;
    j["instruction_rank"] = l.instruction_rank;
    j["task_rank"] = l.task_rank;
    if (i < weights.size()) j["weight"] = json_float(weights[i]);
    layers.push_back(std::move(j));
  }
  return layers;
}

// Provenance record written beside an output checkpoint.
inline nlohmann::ordered_json build_manifest(const MergeRecipe& recipe, const MergeOutcome& outcome,
                                             CheckpointResolver& resolver, const std::string& command,
                                             const std::string& output_file, const std::string& output_digest) {
  nlohmann::ordered_json m;
  m["format"] = "lata-manifest/1";
  m["command"] = command;
  m["recipe"] = recipe_to_json(recipe);
  m["seed"] = recipe.seed;
  m["simultaneous"] = outcome.simultaneous;
  m["sign_election"] = outcome.sign_election;

  nlohmann::ordered_json inputs = nlohmann::ordered_json::array();
  auto add_input = [&](const std::string& role, const std::string& ref) {
    if (ref.empty()) return;
    inputs.push_back({{"role", role}, {"ref", ref}, {"sha256", resolver.digest(ref)}});
  };
  add_input("target", recipe.target);
  add_input("pretrained", recipe.pretrained);
  add_input("base", recipe.base);
  for (std::size_t i = 0; i < recipe.terms.size(); ++i) {
    const auto& t = recipe.terms[i];
    add_input(t.finetuned.empty() ? "delta[" + std::to_string(i) + "]" : "finetuned[" + std::to_string(i) + "]",
              t.finetuned.empty() ? t.delta : t.finetuned);
  }
  m["inputs"] = std::move(inputs);

  nlohmann::ordered_json terms = nlohmann::ordered_json::array();
  for (const auto& tr : outcome.terms) {
    nlohmann::ordered_json tj;
    tj["source"] = tr.source;
    tj["lambda"] = json_float(tr.lambda);
    tj["transforms"] = nlohmann::ordered_json::array();
    for (const auto& rep : tr.transforms) {
      nlohmann::ordered_json rj;
      rj["op"] = rep.op;
      rj["params"] = rep.params;
      rj["elements_zeroed"] = rep.elements_zeroed;
      if (rep.profile) rj["layers"] = profile_to_json(*rep.profile, rep.weights);
      tj["transforms"].push_back(std::move(rj));
    }
    terms.push_back(std::move(tj));
  }
  m["terms"] = std::move(terms);
  m["output"] = {{"file", output_file}, {"sha256", output_digest}};
  return m;
}

inline std::filesystem::path manifest_path_for(const std::filesystem::path& output) {
  return std::filesystem::path(output.string() + ".manifest.json");
}

// Writes the output checkpoint and its manifest; returns the manifest.
inline nlohmann::ordered_json write_outcome(const MergeRecipe& recipe, const MergeOutcome& outcome,
                                            CheckpointResolver& resolver, const std::string& command,
                                            const std::filesystem::path& output_path) {
  const auto bytes = serialize(outcome.output);
  write_file_bytes(output_path, bytes);
  const auto manifest =
      build_manifest(recipe, outcome, resolver, command, output_path.filename().string(), sha256_hex(bytes));
  const std::string text = manifest.dump(2) + "\n";
  write_file_bytes(manifest_path_for(output_path),
                   std::span(reinterpret_cast<const std::byte*>(text.data()), text.size()));
  return manifest;
}

}  // namespace lata
