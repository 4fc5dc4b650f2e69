#pragma once

// Declarative merge/forget recipes and their JSON configuration form.

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "lata/format.hpp"
#include "lata/partition.hpp"
#include "lata/transforms.hpp"
#include "lata/weights.hpp"

namespace lata {

struct LataOp {
  WeightScheme scheme;
  bool operator==(const LataOp&) const = default;
};

struct TiesOp {
  double k = 0.7;
  TrimScope scope = TrimScope::tensor;
  bool operator==(const TiesOp&) const = default;
};

struct DareOp {
  double p = 0.3;
  std::optional<std::uint64_t> seed;  // derived from the recipe seed when absent
  bool operator==(const DareOp&) const = default;
};

using TransformOp = std::variant<LataOp, TiesOp, DareOp>;

struct RecipeTerm {
  std::string finetuned;  // exactly one of finetuned / delta is set
  std::string delta;
  float lambda = 1.0f;
  std::vector<TransformOp> chain;  // applied left to right
};

enum class MergeMode { learn, forget };

inline std::string_view mode_name(MergeMode m) { return m == MergeMode::learn ? "learn" : "forget"; }

struct MergeRecipe {
  std::string target;
  std::string pretrained;
  std::string base;
  std::vector<RecipeTerm> terms;
  MergeMode mode = MergeMode::learn;
  std::string layer_pattern = default_layer_pattern;
  WeightScheme scheme;  // defaults for lata steps that omit params
  TrimScope ties_scope = TrimScope::tensor;
  std::optional<bool> simultaneous;
  std::uint64_t seed = 0;
  std::string output;

  // Plain sums run in one combine; differing chains run sequentially.
  bool resolved_simultaneous() const {
    if (simultaneous) return *simultaneous;
    for (std::size_t i = 1; i < terms.size(); ++i) {
      if (terms[i].chain != terms[0].chain) return false;
    }
    return true;
  }
};

// Seed used by a dare step that does not carry its own.
inline std::uint64_t derived_dare_seed(std::uint64_t recipe_seed, std::size_t term, std::size_t step) {
  return splitmix64(splitmix64(recipe_seed ^ 0x6461726573656564ull) + term * 0x100000001b3ull + step);
}

namespace detail {

inline void check_keys(const nlohmann::json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!obj.is_object()) throw Error(ErrorCode::config, where + " must be a JSON object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || it.key() == a;
    if (!ok) throw Error(ErrorCode::config, where + ": unknown key '" + it.key() + "'");
  }
}

inline std::string get_string(const nlohmann::json& obj, const char* key, const std::string& where) {
  const auto& v = obj.at(key);
  if (!v.is_string()) throw Error(ErrorCode::config, where + "." + key + " must be a string");
  return v.get<std::string>();
}

inline double get_number(const nlohmann::json& obj, const char* key, const std::string& where) {
  const auto& v = obj.at(key);
  if (!v.is_number()) throw Error(ErrorCode::config, where + "." + key + " must be a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) throw Error(ErrorCode::config, where + "." + key + " must be finite");
  return d;
}

inline std::uint64_t get_u64(const nlohmann::json& obj, const char* key, const std::string& where) {
  const auto& v = obj.at(key);
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
    throw Error(ErrorCode::config, where + "." + key + " must be a non-negative integer");
  }
  return v.get<std::uint64_t>();
}

inline TrimScope parse_scope(const std::string& s, const std::string& where) {
  if (s == "tensor") return TrimScope::tensor;
  if (s == "global") return TrimScope::global;
  throw Error(ErrorCode::config, where + ": scope must be \"tensor\" or \"global\"");
}

}  // namespace detail

// Overlays the fields present in obj onto base.
inline WeightScheme parse_scheme(const nlohmann::json& obj, WeightScheme base, const std::string& where) {
  detail::check_keys(obj, {"scheme", "sigma", "residual_weight", "degenerate"}, where);
  if (obj.contains("scheme")) {
    const std::string s = detail::get_string(obj, "scheme", where);
    if (s == "linear") base.kind = SchemeKind::linear;
    else if (s == "log") base.kind = SchemeKind::log;
    else if (s == "threshold") base.kind = SchemeKind::threshold;
    else throw Error(ErrorCode::config, where + ".scheme must be \"linear\", \"log\" or \"threshold\"");
  }
  if (obj.contains("sigma")) base.sigma = static_cast<float>(detail::get_number(obj, "sigma", where));
  if (obj.contains("residual_weight")) {
    base.residual_weight = static_cast<float>(detail::get_number(obj, "residual_weight", where));
  }
  if (obj.contains("degenerate")) {
    const std::string s = detail::get_string(obj, "degenerate", where);
    if (s == "keep") base.degenerate = DegeneratePolicy::keep;
    else if (s == "drop") base.degenerate = DegeneratePolicy::drop;
    else throw Error(ErrorCode::config, where + ".degenerate must be \"keep\" or \"drop\"");
  }
  if (base.kind == SchemeKind::threshold && !(base.sigma >= 0.0f && base.sigma <= 1.0f)) {
    throw Error(ErrorCode::config, where + ".sigma must lie in [0, 1]");
  }
  return base;
}

inline nlohmann::ordered_json scheme_to_json(const WeightScheme& s) {
  nlohmann::ordered_json j;
  j["scheme"] = std::string(scheme_name(s.kind));
  j["sigma"] = json_float(s.sigma);
  j["residual_weight"] = json_float(s.residual_weight);
  j["degenerate"] = s.degenerate == DegeneratePolicy::keep ? "keep" : "drop";
  return j;
}

inline MergeRecipe parse_recipe(const nlohmann::json& doc) {
  using detail::check_keys;
  check_keys(doc, {"base", "pretrained", "target", "terms", "mode", "layer_pattern", "lata", "ties_scope",
                   "simultaneous", "seed", "output"},
             "config");
  MergeRecipe r;
  if (doc.contains("base")) r.base = detail::get_string(doc, "base", "config");
  if (doc.contains("pretrained")) r.pretrained = detail::get_string(doc, "pretrained", "config");
  if (doc.contains("target")) r.target = detail::get_string(doc, "target", "config");
  if (doc.contains("output")) r.output = detail::get_string(doc, "output", "config");
  if (doc.contains("layer_pattern")) {
    r.layer_pattern = detail::get_string(doc, "layer_pattern", "config");
    LayerPattern check(r.layer_pattern);
  }
  if (doc.contains("mode")) {
    const std::string m = detail::get_string(doc, "mode", "config");
    if (m == "learn") r.mode = MergeMode::learn;
    else if (m == "forget") r.mode = MergeMode::forget;
    else throw Error(ErrorCode::config, "config.mode must be \"learn\" or \"forget\"");
  }
  if (doc.contains("lata")) r.scheme = parse_scheme(doc.at("lata"), r.scheme, "config.lata");
  if (doc.contains("ties_scope")) r.ties_scope = detail::parse_scope(detail::get_string(doc, "ties_scope", "config"), "config.ties_scope");
  if (doc.contains("simultaneous")) {
    if (!doc.at("simultaneous").is_boolean()) throw Error(ErrorCode::config, "config.simultaneous must be a boolean");
    r.simultaneous = doc.at("simultaneous").get<bool>();
  }
  if (doc.contains("seed")) r.seed = detail::get_u64(doc, "seed", "config");

  if (doc.contains("terms")) {
    const auto& terms = doc.at("terms");
    if (!terms.is_array()) throw Error(ErrorCode::config, "config.terms must be an array");
    for (std::size_t i = 0; i < terms.size(); ++i) {
      const std::string where = "config.terms[" + std::to_string(i) + "]";
      const auto& t = terms[i];
      check_keys(t, {"finetuned", "delta", "lambda", "chain"}, where);
      RecipeTerm term;
      if (t.contains("finetuned")) term.finetuned = detail::get_string(t, "finetuned", where);
      if (t.contains("delta")) term.delta = detail::get_string(t, "delta", where);
      if (term.finetuned.empty() == term.delta.empty()) {
        throw Error(ErrorCode::config, where + " needs exactly one of \"finetuned\" or \"delta\"");
      }
      if (!t.contains("lambda")) throw Error(ErrorCode::config, where + ".lambda is required");
      term.lambda = static_cast<float>(detail::get_number(t, "lambda", where));
      if (t.contains("chain")) {
        const auto& chain = t.at("chain");
        if (!chain.is_array()) throw Error(ErrorCode::config, where + ".chain must be an array");
        for (std::size_t s = 0; s < chain.size(); ++s) {
          const std::string sw = where + ".chain[" + std::to_string(s) + "]";
          check_keys(chain[s], {"op", "params"}, sw);
          if (!chain[s].contains("op")) throw Error(ErrorCode::config, sw + ".op is required");
          const std::string op = detail::get_string(chain[s], "op", sw);
          const nlohmann::json params = chain[s].contains("params") ? chain[s].at("params") : nlohmann::json::object();
          const std::string pw = sw + ".params";
          if (op == "lata") {
            term.chain.push_back(LataOp{parse_scheme(params, r.scheme, pw)});
          } else if (op == "ties") {
            check_keys(params, {"k", "scope"}, pw);
            TiesOp ties;
            ties.scope = r.ties_scope;
            if (params.contains("k")) ties.k = detail::get_number(params, "k", pw);
            if (params.contains("scope")) ties.scope = detail::parse_scope(detail::get_string(params, "scope", pw), pw);
            if (!(ties.k > 0.0 && ties.k <= 1.0)) throw Error(ErrorCode::config, pw + ".k must satisfy 0 < k <= 1");
            term.chain.push_back(ties);
          } else if (op == "dare") {
            check_keys(params, {"p", "seed"}, pw);
            DareOp dare;
            if (params.contains("p")) dare.p = detail::get_number(params, "p", pw);
            if (params.contains("seed")) dare.seed = detail::get_u64(params, "seed", pw);
            if (!(dare.p >= 0.0 && dare.p < 1.0)) throw Error(ErrorCode::config, pw + ".p must satisfy 0 <= p < 1");
            term.chain.push_back(dare);
          } else {
            throw Error(ErrorCode::config, sw + ".op must be \"lata\", \"ties\" or \"dare\"");
          }
        }
      }
      r.terms.push_back(std::move(term));
    }
  }
  return r;
}

inline nlohmann::ordered_json transform_to_json(const TransformOp& op) {
  nlohmann::ordered_json j;
  if (const auto* l = std::get_if<LataOp>(&op)) {
    j["op"] = "lata";
    j["params"] = scheme_to_json(l->scheme);
  } else if (const auto* t = std::get_if<TiesOp>(&op)) {
    j["op"] = "ties";
    j["params"] = {{"k", t->k}, {"scope", t->scope == TrimScope::tensor ? "tensor" : "global"}};
  } else if (const auto* d = std::get_if<DareOp>(&op)) {
    j["op"] = "dare";
    j["params"] = {{"p", d->p}};
    if (d->seed) j["params"]["seed"] = *d->seed;
  }
  return j;
}

// Fully-resolved form of a recipe (defaults filled); the output path is omitted.
inline nlohmann::ordered_json recipe_to_json(const MergeRecipe& r) {
  nlohmann::ordered_json j;
  j["target"] = r.target;
  j["pretrained"] = r.pretrained;
  j["base"] = r.base;
  j["mode"] = std::string(mode_name(r.mode));
  j["layer_pattern"] = r.layer_pattern;
  j["lata"] = scheme_to_json(r.scheme);
  j["ties_scope"] = r.ties_scope == TrimScope::tensor ? "tensor" : "global";
  j["simultaneous"] = r.resolved_simultaneous();
  j["seed"] = r.seed;
  j["terms"] = nlohmann::ordered_json::array();
  for (const auto& t : r.terms) {
    nlohmann::ordered_json tj;
    if (!t.finetuned.empty()) tj["finetuned"] = t.finetuned;
    if (!t.delta.empty()) tj["delta"] = t.delta;
    tj["lambda"] = json_float(t.lambda);
    tj["chain"] = nlohmann::ordered_json::array();
    for (const auto& op : t.chain) tj["chain"].push_back(transform_to_json(op));
    j["terms"].push_back(std::move(tj));
  }
  return j;
}

}  // namespace lata
