#pragma once

// Synthetic base / pretrained / finetuned / target checkpoints with planted
// structure: the instruction delta lives on layer set A, the task delta on B,
// and fine-tuning further reinforces the instruction direction on A.

#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "lata/checkpoint.hpp"
#include "lata/delta.hpp"
#include "lata/recipe.hpp"
#include "lata/rng.hpp"

namespace lata {

struct FixtureTensor {
  std::string name;
  Shape shape;
};

struct FixtureMagnitudes {
  double base = 0.5;
  double instruction = 0.05;              // instruction delta on A
  double instruction_background = 5e-4;   // instruction delta outside A
  double task = 0.05;                     // task delta on B
  double reinforcement = 0.1;             // finetuned adds this multiple of the instruction delta on A
  double target_noise = 0.0;              // target = pretrained + noise
};

struct FixtureSpec {
  std::size_t layers = 4;
  std::string layer_prefix = "model.layers.";
  std::vector<FixtureTensor> layer_tensors{{"attn.weight", {8, 8}}, {"mlp.weight", {16, 8}}};
  std::vector<FixtureTensor> residual{{"model.embed.weight", {32, 8}}, {"lm_head.weight", {32, 8}}};
  Dtype dtype = Dtype::F32;
  std::vector<std::size_t> instruction_layers{0, 1};
  std::vector<std::size_t> task_layers{2, 3};
  bool disjoint = true;
  FixtureMagnitudes magnitudes;
  std::uint64_t seed = 0;
  std::optional<std::uint64_t> task_seed;
  std::string family = "fixture";
};

struct FixtureSet {
  Checkpoint base;
  Checkpoint pretrained;
  Checkpoint finetuned;
  Checkpoint target;
  DeltaVector planted_instruction;  // F32 ground truth before storage rounding
  DeltaVector planted_task;
};

inline std::string fixture_layer_name(const FixtureSpec& spec, std::size_t layer, const std::string& tensor) {
  return spec.layer_prefix + std::to_string(layer) + "." + tensor;
}

inline void validate_fixture(const FixtureSpec& spec) {
  if (spec.layers == 0) throw Error(ErrorCode::fixture, "fixture needs at least one layer");
  if (spec.layer_tensors.empty()) throw Error(ErrorCode::fixture, "fixture needs at least one tensor per layer");
  for (std::size_t a : spec.instruction_layers) {
    if (a >= spec.layers) throw Error(ErrorCode::fixture, "instruction layer " + std::to_string(a) + " out of range");
  }
  for (std::size_t b : spec.task_layers) {
    if (b >= spec.layers) throw Error(ErrorCode::fixture, "task layer " + std::to_string(b) + " out of range");
  }
  if (spec.disjoint) {
    const std::set<std::size_t> a(spec.instruction_layers.begin(), spec.instruction_layers.end());
    for (std::size_t b : spec.task_layers) {
      if (a.count(b)) throw Error(ErrorCode::fixture, "layer " + std::to_string(b) + " is in both A and B");
    }
  }
  const auto& m = spec.magnitudes;
  for (double v : {m.base, m.instruction, m.instruction_background, m.task, m.reinforcement, m.target_noise}) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw Error(ErrorCode::fixture, "fixture magnitudes must be finite and >= 0");
  }
}

inline FixtureSet make_fixture(const FixtureSpec& spec) {
  validate_fixture(spec);
  const std::set<std::size_t> in_a(spec.instruction_layers.begin(), spec.instruction_layers.end());
  const std::set<std::size_t> in_b(spec.task_layers.begin(), spec.task_layers.end());
  const auto& mag = spec.magnitudes;
  const std::uint64_t task_seed = spec.task_seed.value_or(spec.seed);

  FixtureSet fx;
  for (Checkpoint* c : {&fx.base, &fx.pretrained, &fx.finetuned, &fx.target}) c->metadata[family_key] = spec.family;
  fx.planted_instruction.provenance = Provenance::instruction;
  fx.planted_task.provenance = Provenance::task;
  fx.planted_instruction.family = fx.planted_task.family = spec.family;

  auto noise = [](std::uint64_t seed, const std::string& stream, double scale, std::size_t n) {
    std::vector<float> v(n, 0.0f);
    if (scale == 0.0) return v;
    const CounterRng rng(seed, stream);
    for (std::size_t i = 0; i < n; ++i) v[i] = static_cast<float>(scale * rng.normal(i));
    return v;
  };
  // a + b, leaving a untouched where b is identically zero
  auto add = [](const std::vector<float>& a, const std::vector<float>& b, double scale_b) {
    std::vector<float> out = a;
    if (scale_b == 0.0) return out;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] + b[i];
    return out;
  };

  auto emit = [&](const std::string& name, const Shape& shape, std::optional<std::size_t> layer) {
    const std::size_t n = element_count(shape);
    const bool a = layer && in_a.count(*layer);
    const bool b = layer && in_b.count(*layer);
    const double instr_scale = !layer ? 0.0 : a ? mag.instruction : mag.instruction_background;
    const double task_scale = b ? mag.task : 0.0;
    const double reinf_scale = a ? mag.reinforcement * mag.instruction : 0.0;

    const auto base = noise(spec.seed, "base/" + name, mag.base, n);
    const auto instr = noise(spec.seed, "instruction/" + name, instr_scale, n);
    const auto task = noise(task_seed, "task/" + name, task_scale, n);
    std::vector<float> reinf(n, 0.0f);
    if (reinf_scale != 0.0) {
      for (std::size_t i = 0; i < n; ++i) reinf[i] = static_cast<float>(mag.reinforcement * instr[i]);
    }
    const auto pre = add(base, instr, instr_scale);
    const auto ft = add(add(pre, task, task_scale), reinf, reinf_scale);
    const auto target = add(pre, noise(spec.seed, "target/" + name, mag.target_noise, n), mag.target_noise);

    fx.base.add(name, make_tensor(spec.dtype, shape, base));
    fx.pretrained.add(name, make_tensor(spec.dtype, shape, pre));
    fx.finetuned.add(name, make_tensor(spec.dtype, shape, ft));
    fx.target.add(name, make_tensor(spec.dtype, shape, target));
    fx.planted_instruction.tensors[name] = DeltaTensor{shape, instr};
    fx.planted_task.tensors[name] = DeltaTensor{shape, task};
  };

  for (std::size_t l = 0; l < spec.layers; ++l) {
    for (const auto& t : spec.layer_tensors) emit(fixture_layer_name(spec, l, t.name), t.shape, l);
  }
  for (const auto& t : spec.residual) {
    if (fx.base.tensors.count(t.name)) throw Error(ErrorCode::fixture, "duplicate tensor name '" + t.name + "'");
    emit(t.name, t.shape, std::nullopt);
  }
  return fx;
}

inline FixtureSpec parse_fixture_spec(const nlohmann::json& doc) {
  using detail::check_keys;
  check_keys(doc, {"layers", "layer_prefix", "layer_tensors", "residual", "dtype", "instruction_layers", "task_layers",
                   "disjoint", "magnitudes", "seed", "task_seed", "family", "output_dir"},
             "fixture");
  FixtureSpec spec;
  auto tensors = [&](const char* key) {
    std::vector<FixtureTensor> out;
    const auto& arr = doc.at(key);
    if (!arr.is_array()) throw Error(ErrorCode::config, std::string("fixture.") + key + " must be an array");
    for (const auto& t : arr) {
      check_keys(t, {"name", "shape"}, std::string("fixture.") + key + "[]");
      FixtureTensor ft;
      ft.name = detail::get_string(t, "name", key);
      if (!t.contains("shape") || !t.at("shape").is_array()) throw Error(ErrorCode::config, "fixture tensor shape must be an array");
      for (const auto& d : t.at("shape")) {
        if (!d.is_number_unsigned()) throw Error(ErrorCode::config, "fixture tensor shape entries must be non-negative integers");
        ft.shape.push_back(d.get<std::uint64_t>());
      }
      out.push_back(std::move(ft));
    }
    return out;
  };
  auto indices = [&](const char* key) {
    std::vector<std::size_t> out;
    const auto& arr = doc.at(key);
    if (!arr.is_array()) throw Error(ErrorCode::config, std::string("fixture.") + key + " must be an array");
    for (const auto& v : arr) {
      if (!v.is_number_unsigned()) throw Error(ErrorCode::config, std::string("fixture.") + key + " entries must be non-negative integers");
      out.push_back(v.get<std::size_t>());
    }
    return out;
  };
  if (doc.contains("layers")) spec.layers = detail::get_u64(doc, "layers", "fixture");
  if (doc.contains("layer_prefix")) spec.layer_prefix = detail::get_string(doc, "layer_prefix", "fixture");
  if (doc.contains("layer_tensors")) spec.layer_tensors = tensors("layer_tensors");
  if (doc.contains("residual")) spec.residual = tensors("residual");
  if (doc.contains("dtype")) {
    const auto tag = detail::get_string(doc, "dtype", "fixture");
    const auto dt = parse_dtype(tag);
    if (!dt) throw Error(ErrorCode::config, "fixture.dtype '" + tag + "' is not F32, F16 or BF16");
    spec.dtype = *dt;
  }
  if (doc.contains("instruction_layers")) spec.instruction_layers = indices("instruction_layers");
  if (doc.contains("task_layers")) spec.task_layers = indices("task_layers");
  if (doc.contains("disjoint")) {
    if (!doc.at("disjoint").is_boolean()) throw Error(ErrorCode::config, "fixture.disjoint must be a boolean");
    spec.disjoint = doc.at("disjoint").get<bool>();
  }
  if (doc.contains("magnitudes")) {
    const auto& m = doc.at("magnitudes");
    check_keys(m, {"base", "instruction", "instruction_background", "task", "reinforcement", "target_noise"},
               "fixture.magnitudes");
    auto& out = spec.magnitudes;
    if (m.contains("base")) out.base = detail::get_number(m, "base", "fixture.magnitudes");
    if (m.contains("instruction")) out.instruction = detail::get_number(m, "instruction", "fixture.magnitudes");
    if (m.contains("instruction_background")) {
      out.instruction_background = detail::get_number(m, "instruction_background", "fixture.magnitudes");
    }
    if (m.contains("task")) out.task = detail::get_number(m, "task", "fixture.magnitudes");
    if (m.contains("reinforcement")) out.reinforcement = detail::get_number(m, "reinforcement", "fixture.magnitudes");
    if (m.contains("target_noise")) out.target_noise = detail::get_number(m, "target_noise", "fixture.magnitudes");
  }
  if (doc.contains("seed")) spec.seed = detail::get_u64(doc, "seed", "fixture");
  if (doc.contains("task_seed")) spec.task_seed = detail::get_u64(doc, "task_seed", "fixture");
  if (doc.contains("family")) spec.family = detail::get_string(doc, "family", "fixture");
  return spec;
}

inline constexpr const char* fixture_file_names[4] = {"base.safetensors", "pretrained.safetensors",
                                                       "finetuned.safetensors", "target.safetensors"};

inline void write_fixture(const FixtureSet& fx, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_checkpoint(fx.base, dir / fixture_file_names[0]);
  write_checkpoint(fx.pretrained, dir / fixture_file_names[1]);
  write_checkpoint(fx.finetuned, dir / fixture_file_names[2]);
  write_checkpoint(fx.target, dir / fixture_file_names[3]);
}

}  // namespace lata
