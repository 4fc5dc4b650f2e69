// lata: command-line front end for layer-aware task arithmetic merges.
//
//   lata analyze --config recipe.json [--output stem]
//   lata merge   --config recipe.json [--output out.safetensors] [--seed N] [--threads N]
//   lata forget  --config recipe.json [--output out.safetensors] [--seed N] [--threads N]
//   lata fixture --config fixture.json [--output dir]
//   lata inspect model.safetensors
//
// Errors are reported on stderr as {"error": {"code": ..., "message": ...}}.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "lata/lata.hpp"

namespace fs = std::filesystem;

namespace {

struct Options {
  std::string config;
  std::string output;
  std::optional<std::uint64_t> seed;
  unsigned threads = 0;
  std::string inspect_path;
};

int report_error(const std::string& code, const std::string& message, int exit_code = 1) {
  nlohmann::ordered_json j;
  j["error"] = {{"code", code}, {"message", message}};
  std::cerr << j.dump() << std::endl;
  return exit_code;
}

nlohmann::json load_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw lata::Error(lata::ErrorCode::io, "cannot open config '" + path.string() + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw lata::Error(lata::ErrorCode::config, path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  lata::write_file_bytes(path, std::span(reinterpret_cast<const std::byte*>(text.data()), text.size()));
}

// --output wins; otherwise the config value, relative to the config file. LATA_OUTPUT_DIR
// relocates the result into another directory.
fs::path resolve_output(const Options& opt, const std::string& from_config, const fs::path& config_dir) {
  fs::path out;
  if (!opt.output.empty()) {
    out = opt.output;
  } else if (!from_config.empty()) {
    out = fs::path(from_config).is_absolute() ? fs::path(from_config) : config_dir / from_config;
  } else {
    throw lata::Error(lata::ErrorCode::config, "no output path: set \"output\" in the config or pass --output");
  }
  if (const char* dir = std::getenv("LATA_OUTPUT_DIR"); dir && *dir) out = fs::path(dir) / out.filename();
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  return out;
}

lata::MergeRecipe load_recipe(const Options& opt, std::optional<lata::MergeMode> command_mode = std::nullopt) {
  const nlohmann::json doc = load_json(opt.config);
  lata::MergeRecipe recipe = lata::parse_recipe(doc);
  if (opt.seed) recipe.seed = *opt.seed;
  if (command_mode) {
    if (!doc.contains("mode")) {
      recipe.mode = *command_mode;
    } else if (recipe.mode != *command_mode) {
      throw lata::Error(lata::ErrorCode::config, "config mode \"" + std::string(lata::mode_name(recipe.mode)) +
                                                     "\" conflicts with the subcommand");
    }
  }
  return recipe;
}

int cmd_merge(const Options& opt, lata::MergeMode mode) {
  const lata::MergeRecipe recipe = load_recipe(opt, mode);
  const std::string command = mode == lata::MergeMode::learn ? "merge" : "forget";
  const fs::path config_dir = fs::path(opt.config).parent_path();
  const fs::path output = resolve_output(opt, recipe.output, config_dir);
  lata::FileResolver resolver(config_dir);
  const lata::ExecPolicy policy{opt.threads};
  const lata::MergeOutcome outcome = lata::execute_recipe(recipe, resolver, policy);
  lata::write_outcome(recipe, outcome, resolver, command, output);
  std::cout << output.string() << '\n';
  return 0;
}

int cmd_analyze(const Options& opt) {
  const lata::MergeRecipe recipe = load_recipe(opt);
  const fs::path config_dir = fs::path(opt.config).parent_path();
  const fs::path stem = resolve_output(opt, recipe.output, config_dir);
  lata::FileResolver resolver(config_dir);
  const auto reports = lata::run_analysis(recipe, resolver, lata::ExecPolicy{opt.threads});
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const std::string suffix = reports.size() == 1 ? std::string() : "." + std::to_string(i);
    const fs::path csv = stem.string() + suffix + ".csv";
    const fs::path json = stem.string() + suffix + ".json";
    write_text(csv, lata::similarity_csv(reports[i]));
    write_text(json, lata::similarity_json(reports[i]).dump(2) + "\n");
    std::cout << csv.string() << '\n' << json.string() << '\n';
  }
  return 0;
}

int cmd_fixture(const Options& opt) {
  const nlohmann::json doc = load_json(opt.config);
  lata::FixtureSpec spec = lata::parse_fixture_spec(doc);
  if (opt.seed) spec.seed = *opt.seed;
  const fs::path config_dir = fs::path(opt.config).parent_path();
  const std::string dir_from_config = doc.contains("output_dir") ? doc.at("output_dir").get<std::string>() : "";
  fs::path dir;
  if (!opt.output.empty()) {
    dir = opt.output;
  } else if (!dir_from_config.empty()) {
    dir = fs::path(dir_from_config).is_absolute() ? fs::path(dir_from_config) : config_dir / dir_from_config;
  } else {
    throw lata::Error(lata::ErrorCode::config, "no output directory: set \"output_dir\" or pass --output");
  }
  if (const char* env = std::getenv("LATA_OUTPUT_DIR"); env && *env) dir = env;
  lata::write_fixture(lata::make_fixture(spec), dir);
  for (const char* name : lata::fixture_file_names) std::cout << (dir / name).string() << '\n';
  return 0;
}

int cmd_inspect(const Options& opt) {
  const lata::CheckpointHeader header = lata::read_header(opt.inspect_path);
  nlohmann::ordered_json j;
  j["file"] = opt.inspect_path;
  j["header_bytes"] = header.header_bytes;
  j["metadata"] = header.metadata;
  j["tensors"] = nlohmann::ordered_json::array();
  std::uint64_t params = 0;
  for (const auto& spec : header.tensors) {
    j["tensors"].push_back({{"name", spec.name},
                            {"dtype", std::string(lata::dtype_name(spec.dtype))},
                            {"shape", spec.shape},
                            {"data_offsets", {spec.begin, spec.end}}});
    params += lata::element_count(spec.shape);
  }
  j["tensor_count"] = header.tensors.size();
  j["parameter_count"] = params;
  const std::string text = j.dump(2) + "\n";
  if (opt.output.empty()) {
    std::cout << text;
  } else {
    write_text(opt.output, text);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Layer-aware task arithmetic: analyze, merge and forget checkpoint deltas"};
  app.require_subcommand(1);
  Options opt;

  auto add_common = [&](CLI::App* sub, bool needs_seed) {
    sub->add_option("--config", opt.config, "JSON config file")->required()->check(CLI::ExistingFile);
    sub->add_option("--output", opt.output, "Output path (overrides the config)");
    if (needs_seed) sub->add_option("--seed", opt.seed, "Random seed (overrides the config)");
    sub->add_option("--threads", opt.threads, "Worker threads, 0 = auto; never changes results");
  };
  CLI::App* analyze = app.add_subcommand("analyze", "Export per-layer similarity, ranks and scheme weights");
  add_common(analyze, false);
  CLI::App* merge = app.add_subcommand("merge", "Add (pure) task vectors to a target model");
  add_common(merge, true);
  CLI::App* forget = app.add_subcommand("forget", "Subtract (pure) task vectors from a model");
  add_common(forget, true);
  CLI::App* fixture = app.add_subcommand("fixture", "Generate synthetic base/pretrained/finetuned/target checkpoints");
  add_common(fixture, true);
  CLI::App* inspect = app.add_subcommand("inspect", "Dump a checkpoint's header as JSON");
  inspect->add_option("file", opt.inspect_path, "Checkpoint file")->required()->check(CLI::ExistingFile);
  inspect->add_option("--output", opt.output, "Write the JSON here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error("usage", e.what(), 2);
  }

  try {
    if (*analyze) return cmd_analyze(opt);
    if (*merge) return cmd_merge(opt, lata::MergeMode::learn);
    if (*forget) return cmd_merge(opt, lata::MergeMode::forget);
    if (*fixture) return cmd_fixture(opt);
    if (*inspect) return cmd_inspect(opt);
  } catch (const lata::Error& e) {
    return report_error(std::string(lata::error_code_name(e.code())), e.detail());
  } catch (const std::exception& e) {
    return report_error("internal", e.what());
  }
  return 0;
}
