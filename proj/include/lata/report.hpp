#pragma once

// Per-layer similarity reports (CSV plus a JSON twin) for plotting rank-by-layer charts.

#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lata/engine.hpp"
#include "lata/format.hpp"

namespace lata {

inline constexpr const char* similarity_csv_header =
    "layer,cosine,instruction_rank,task_rank,weight_linear,weight_log,weight_threshold";

struct AnalysisRow {
  std::size_t layer = 0;
  float cosine = 0.0f;
  bool degenerate = false;
  std::size_t instruction_rank = 0;
  std::size_t task_rank = 0;
  float weight_linear = 0.0f;
  std::optional<float> weight_log;  // undefined for a single layer
  float weight_threshold = 0.0f;
};

struct AnalysisReport {
  std::string source;
  WeightScheme scheme;
  std::vector<AnalysisRow> rows;
};

inline AnalysisReport analyze_profile(const SimilarityProfile& profile, const WeightScheme& params,
                                      std::string source = {}) {
  auto with_kind = [&](SchemeKind k) {
    WeightScheme s = params;
    s.kind = k;
    return s;
  };
  const auto linear = scheme_weights(profile, with_kind(SchemeKind::linear));
  const auto threshold = scheme_weights(profile, with_kind(SchemeKind::threshold));
  std::optional<std::vector<float>> log;
  if (profile.layer_count() >= 2) log = scheme_weights(profile, with_kind(SchemeKind::log));

  AnalysisReport report;
  report.source = std::move(source);
  report.scheme = params;
  for (std::size_t i = 0; i < profile.layer_count(); ++i) {
    const auto& l = profile.layers[i];
    AnalysisRow row{l.layer, l.cosine, l.degenerate, l.instruction_rank, l.task_rank, linear[i], std::nullopt,
                    threshold[i]};
    if (log) row.weight_log = (*log)[i];
    report.rows.push_back(row);
  }
  return report;
}

// One report per recipe term: cosine of (finetuned - base) against (pretrained - base).
inline std::vector<AnalysisReport> run_analysis(const MergeRecipe& recipe, CheckpointResolver& resolver,
                                                const ExecPolicy& policy = {}) {
  if (recipe.base.empty() || recipe.pretrained.empty()) {
    throw Error(ErrorCode::config, "analyze requires base and pretrained checkpoints");
  }
  if (recipe.terms.empty()) throw Error(ErrorCode::config, "analyze requires at least one term");
  const Checkpoint& base = resolver.load(recipe.base);
  const Checkpoint& pre = resolver.load(recipe.pretrained);
  const DeltaVector instr = instruction_vector(pre, base, policy);
  const LayerPartition part = partition(instr.schema(), LayerPattern(recipe.layer_pattern));

  std::vector<AnalysisReport> reports;
  for (std::size_t i = 0; i < recipe.terms.size(); ++i) {
    const auto& term = recipe.terms[i];
    DeltaVector comp;
    if (!term.finetuned.empty()) {
      comp = complex_vector(resolver.load(term.finetuned), base, policy);
    } else {
      comp = delta_from_checkpoint(resolver.load(term.delta));
      require_same_schema(comp.schema(), instr.schema(), "analyze term " + std::to_string(i));
      for (auto& [name, t] : comp.tensors) {
        const auto& iv = instr.tensors.at(name).values;
        for (std::size_t k = 0; k < t.values.size(); ++k) t.values[k] = t.values[k] + iv[k];
      }
      comp.provenance = Provenance::complex;
    }
    const SimilarityProfile profile = similarity_profile(comp, instr, part, policy);
    reports.push_back(analyze_profile(profile, recipe.scheme, term.finetuned.empty() ? term.delta : term.finetuned));
  }
  return reports;
}

inline std::string similarity_csv(const AnalysisReport& report) {
  std::ostringstream out;
  out << similarity_csv_header << '\n';
  for (const auto& r : report.rows) {
    out << r.layer << ',' << format_float(r.cosine) << ',' << r.instruction_rank << ',' << r.task_rank << ','
        << format_float(r.weight_linear) << ',' << (r.weight_log ? format_float(*r.weight_log) : std::string()) << ','
        << format_float(r.weight_threshold) << '\n';
  }
  return out.str();
}

inline nlohmann::ordered_json similarity_json(const AnalysisReport& report) {
  nlohmann::ordered_json j;
  j["source"] = report.source;
  j["scheme_params"] = scheme_to_json(report.scheme);
  j["columns"] = nlohmann::ordered_json::array(
      {"layer", "cosine", "instruction_rank", "task_rank", "weight_linear", "weight_log", "weight_threshold"});
  nlohmann::ordered_json degenerate = nlohmann::ordered_json::array();
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const auto& r : report.rows) {
    if (r.degenerate) degenerate.push_back(r.layer);
    nlohmann::ordered_json row;
    row["layer"] = r.layer;
    row["cosine"] = json_float(r.cosine);
    row["instruction_rank"] = r.instruction_rank;
    row["task_rank"] = r.task_rank;
    row["weight_linear"] = json_float(r.weight_linear);
    row["weight_log"] = r.weight_log ? nlohmann::ordered_json(json_float(*r.weight_log)) : nlohmann::ordered_json();
    row["weight_threshold"] = json_float(r.weight_threshold);
    rows.push_back(std::move(row));
  }
  j["degenerate_layers"] = std::move(degenerate);
  j["rows"] = std::move(rows);
  return j;
}

}  // namespace lata
