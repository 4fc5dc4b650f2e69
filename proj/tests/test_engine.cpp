#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "test_util.hpp"

using namespace lata;
using lata::testing::TempDir;

namespace {

MemoryResolver resolver_for(const FixtureSet& fx) {
  MemoryResolver r;
  r.put("base", fx.base);
  r.put("pre", fx.pretrained);
  r.put("ft", fx.finetuned);
  r.put("target", fx.target);
  return r;
}

MergeRecipe recipe_for(std::vector<RecipeTerm> terms, MergeMode mode = MergeMode::learn) {
  MergeRecipe r;
  r.base = "base";
  r.pretrained = "pre";
  r.target = "target";
  r.terms = std::move(terms);
  r.mode = mode;
  return r;
}

RecipeTerm term(std::string ft, float lambda, std::vector<TransformOp> chain = {}) {
  RecipeTerm t;
  t.finetuned = std::move(ft);
  t.lambda = lambda;
  t.chain = std::move(chain);
  return t;
}

LataOp lata_op(SchemeKind kind, float sigma = 0.95f) {
  LataOp op;
  op.scheme.kind = kind;
  op.scheme.sigma = sigma;
  return op;
}

std::vector<double> f64(const Tensor& t) {
  const auto f = to_f32(t);
  return {f.begin(), f.end()};
}

void expect_close(const Checkpoint& got, const std::map<std::string, std::vector<double>>& want, double tol) {
  for (const auto& [name, w] : want) {
    ASSERT_TRUE(lata::testing::rel_close(to_f32(got.at(name)), std::span<const double>(w), tol)) << name;
  }
}

// Independent LATA linear oracle: double cosines, descending sort, w = rank / L.
std::map<std::string, std::vector<double>> lata_linear_oracle(const FixtureSet& fx, const FixtureSpec& spec) {
  std::vector<double> cos(spec.layers);
  std::map<std::string, std::size_t> layer_of;
  for (std::size_t l = 0; l < spec.layers; ++l) {
    double dot = 0, na = 0, nb = 0;
    for (const auto& t : spec.layer_tensors) {
      const std::string name = fixture_layer_name(spec, l, t.name);
      layer_of[name] = l;
      const auto b = to_f32(fx.base.at(name)), p = to_f32(fx.pretrained.at(name)), f = to_f32(fx.finetuned.at(name));
      for (std::size_t i = 0; i < b.size(); ++i) {
        const double c = static_cast<double>(f[i]) - b[i], in = static_cast<double>(p[i]) - b[i];
        dot += c * in;
        na += c * c;
        nb += in * in;
      }
    }
    cos[l] = static_cast<float>(dot / std::sqrt(na * nb));  // sims are ranked as F32
  }
  std::vector<std::size_t> order(spec.layers);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return cos[a] > cos[b]; });
  std::vector<double> w(spec.layers);
  for (std::size_t r = 0; r < order.size(); ++r) w[order[r]] = static_cast<double>(r + 1) / spec.layers;

  std::map<std::string, std::vector<double>> tau;
  for (const auto& [name, t] : fx.finetuned.tensors) {
    const auto f = to_f32(t), p = to_f32(fx.pretrained.at(name));
    const double weight = layer_of.count(name) ? w[layer_of[name]] : 1.0;
    std::vector<double> v(f.size());
    for (std::size_t i = 0; i < f.size(); ++i) v[i] = weight * (static_cast<double>(f[i]) - p[i]);
    tau[name] = v;
  }
  return tau;
}

}  // namespace

TEST(Engine, ZeroTermsReturnTarget) {
  const FixtureSet fx = make_fixture(FixtureSpec{});
  MemoryResolver res = resolver_for(fx);
  EXPECT_EQ(execute_recipe(recipe_for({}), res).output, fx.target);
}

TEST(Engine, SingleTermOnPretrainedRecoversFinetuned) {
  FixtureSpec spec;
  const FixtureSet fx = make_fixture(spec);
  MemoryResolver res = resolver_for(fx);
  MergeRecipe r = recipe_for({term("ft", 1.0f)});
  r.target = "pre";
  const Checkpoint out = execute_recipe(r, res).output;
  for (const auto& [name, t] : fx.finetuned.tensors) {
    const auto want = to_f32(t), got = to_f32(out.at(name));
    for (std::size_t i = 0; i < want.size(); ++i) ASSERT_LE(lata::testing::ulp_distance(got[i], want[i]), 1) << name;
  }
}

TEST(Engine, TwoTermLinearMatchesScalarOracle) {
  FixtureSpec sa, sb;
  sb.task_seed = 99;
  sb.task_layers = {3};
  const FixtureSet a = make_fixture(sa), b = make_fixture(sb);
  MemoryResolver res = resolver_for(a);
  res.put("ft_b", b.finetuned);
  const MergeRecipe r = recipe_for({term("ft", 1.5f, {lata_op(SchemeKind::linear)}),
                                    term("ft_b", 0.5f, {lata_op(SchemeKind::linear)})});
  const MergeOutcome out = execute_recipe(r, res);
  EXPECT_TRUE(out.simultaneous);
  const auto ta = lata_linear_oracle(a, sa), tb = lata_linear_oracle(b, sb);
  std::map<std::string, std::vector<double>> want;
  for (const auto& [name, t] : a.target.tensors) {
    auto v = f64(t);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += 1.5 * ta.at(name)[i] + 0.5 * tb.at(name)[i];
    want[name] = v;
  }
  expect_close(out.output, want, 1e-6);
  ASSERT_EQ(out.terms[0].transforms.size(), 1u);
  EXPECT_EQ(out.terms[0].transforms[0].weights, (std::vector<float>{0.25f, 0.5f, 0.75f, 1.0f}));
}

TEST(Engine, ForgetUndoesLearnForEveryScheme) {
  const FixtureSet fx = make_fixture(FixtureSpec{});
  for (SchemeKind kind : {SchemeKind::linear, SchemeKind::log, SchemeKind::threshold}) {
    for (float lambda : {0.5f, 0.8f, 1.0f, 1.5f}) {
      MemoryResolver res = resolver_for(fx);
      const Checkpoint learned = execute_recipe(recipe_for({term("ft", lambda, {lata_op(kind)})}), res).output;
      res.put("learned", learned);
      MergeRecipe f = recipe_for({term("ft", lambda, {lata_op(kind)})}, MergeMode::forget);
      f.target = "learned";
      const Checkpoint back = execute_recipe(f, res).output;
      for (const auto& [name, t] : fx.target.tensors) {
        ASSERT_TRUE(lata::testing::rel_close(to_f32(back.at(name)), to_f32(t), 1e-6)) << name;
      }
    }
  }
}

TEST(Engine, PlantedThresholdRecovery) {
  FixtureSpec spec;
  spec.magnitudes.target_noise = 0.01;
  const FixtureSet fx = make_fixture(spec);
  MemoryResolver res = resolver_for(fx);
  const float lambda = 1.0f;
  const MergeOutcome out = execute_recipe(recipe_for({term("ft", lambda, {lata_op(SchemeKind::threshold)})}), res);
  EXPECT_EQ(out.terms[0].transforms[0].weights, (std::vector<float>{0, 0, 1, 1}));
  std::map<std::string, std::vector<double>> want;
  for (const auto& [name, t] : fx.target.tensors) {
    auto v = f64(t);
    const auto& task = fx.planted_task.at(name).values;
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += lambda * static_cast<double>(task[i]);
    want[name] = v;
  }
  expect_close(out.output, want, 1e-6);
}

TEST(Engine, DeterministicAcrossRunsAndThreads) {
  const FixtureSet fx = make_fixture(FixtureSpec{});
  const MergeRecipe r = recipe_for({term("ft", 0.8f, {lata_op(SchemeKind::log), DareOp{0.1, std::nullopt}, TiesOp{0.9}})});
  MemoryResolver r1 = resolver_for(fx), r2 = resolver_for(fx);
  const MergeOutcome a = execute_recipe(r, r1, {1});
  const MergeOutcome b = execute_recipe(r, r2, {8});
  EXPECT_EQ(serialize(a.output), serialize(b.output));
  EXPECT_EQ(build_manifest(r, a, r1, "merge", "out", "x").dump(), build_manifest(r, b, r2, "merge", "out", "x").dump());
  MergeRecipe other = r;
  other.seed = 1;
  MemoryResolver r3 = resolver_for(fx);
  EXPECT_NE(serialize(execute_recipe(other, r3).output), serialize(a.output));
}

TEST(Engine, IdentityChainEqualsPlainTaskArithmetic) {
  FixtureSpec spec;
  spec.layers = 1;
  spec.instruction_layers = {};
  spec.task_layers = {0};
  const FixtureSet fx = make_fixture(spec);
  MemoryResolver res = resolver_for(fx);
  // a single layer gets linear weight 1/1
  const Checkpoint chained =
      execute_recipe(recipe_for({term("ft", 0.7f, {lata_op(SchemeKind::linear), TiesOp{1.0}, DareOp{0.0, 5}})}), res).output;
  const Checkpoint plain = execute_recipe(recipe_for({term("ft", 0.7f)}), res).output;
  EXPECT_EQ(serialize(chained), serialize(plain));
}

TEST(Engine, SequentialAndSimultaneousAgreeForPlainSums) {
  FixtureSpec sb;
  sb.task_seed = 5;
  const FixtureSet a = make_fixture(FixtureSpec{}), b = make_fixture(sb);
  MemoryResolver res = resolver_for(a);
  res.put("ft_b", b.finetuned);
  MergeRecipe r = recipe_for({term("ft", 0.5f), term("ft_b", 0.5f)});
  const MergeOutcome sim = execute_recipe(r, res);
  EXPECT_TRUE(sim.simultaneous);
  r.simultaneous = false;
  const MergeOutcome seq = execute_recipe(r, res);
  EXPECT_FALSE(seq.simultaneous);
  for (const auto& [name, t] : sim.output.tensors) {
    ASSERT_TRUE(lata::testing::rel_close(to_f32(seq.output.at(name)), to_f32(t), 1e-6));
  }
}

TEST(Engine, MultiTermTiesElectsSigns) {
  Checkpoint target, pre, fa, fb;
  target.add("w", make_tensor(Dtype::F32, {4}, std::vector<float>{0, 0, 0, 0}));
  pre = target;
  fa.add("w", make_tensor(Dtype::F32, {4}, std::vector<float>{2, -1, 4, 0.5f}));
  fb.add("w", make_tensor(Dtype::F32, {4}, std::vector<float>{-3, -2, 2, 0.25f}));
  MemoryResolver res;
  res.put("target", target);
  res.put("pre", pre);
  res.put("a", fa);
  res.put("b", fb);
  MergeRecipe r;
  r.target = "target";
  r.pretrained = "pre";
  r.terms = {term("a", 1.0f, {TiesOp{1.0}}), term("b", 0.5f, {TiesOp{1.0}})};
  const MergeOutcome out = execute_recipe(r, res);
  EXPECT_TRUE(out.sign_election);
  // scaled: a = (2,-1,4,.5), b = (-1.5,-1,1,.125)
  EXPECT_EQ(to_f32(out.output.at("w")), (std::vector<float>{2.0f, -1.0f, 2.5f, 0.3125f}));
  r.simultaneous = false;
  const MergeOutcome seq = execute_recipe(r, res);
  EXPECT_FALSE(seq.sign_election);
  EXPECT_EQ(to_f32(seq.output.at("w")), (std::vector<float>{0.5f, -2.0f, 5.0f, 0.625f}));
}

TEST(Engine, DeltaSourceMatchesFinetunedSource) {
  const FixtureSet fx = make_fixture(FixtureSpec{});
  MemoryResolver res = resolver_for(fx);
  res.put("tau", delta_to_checkpoint(task_vector(fx.finetuned, fx.pretrained)));
  RecipeTerm dt;
  dt.delta = "tau";
  dt.lambda = 1.0f;
  dt.chain = {lata_op(SchemeKind::linear)};
  const MergeOutcome via_delta = execute_recipe(recipe_for({dt}), res);
  const MergeOutcome via_ft = execute_recipe(recipe_for({term("ft", 1.0f, {lata_op(SchemeKind::linear)})}), res);
  EXPECT_EQ(via_delta.terms[0].transforms[0].weights, via_ft.terms[0].transforms[0].weights);
  for (const auto& [name, t] : via_ft.output.tensors) {
    ASSERT_TRUE(lata::testing::rel_close(to_f32(via_delta.output.at(name)), to_f32(t), 1e-6));
  }
}

TEST(Engine, Errors) {
  const FixtureSet fx = make_fixture(FixtureSpec{});
  MemoryResolver res = resolver_for(fx);
  MergeRecipe r = recipe_for({term("ft", 1.0f, {lata_op(SchemeKind::linear)})});
  r.base.clear();
  try {
    execute_recipe(r, res);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::config);
  }
  try {
    execute_recipe(recipe_for({term("nope", 1.0f)}), res);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::unresolved_ref);
  }
  Checkpoint small;
  small.add("x", make_tensor(Dtype::F32, {1}, std::vector<float>{1}));
  small.metadata[family_key] = "fixture";
  res.put("small", small);
  MergeRecipe mismatch = recipe_for({term("ft", 1.0f)});
  mismatch.target = "small";
  EXPECT_THROW(execute_recipe(mismatch, res), Error);
  FixtureSpec one;
  one.layers = 1;
  one.instruction_layers = {0};
  one.task_layers = {};
  MemoryResolver res1 = resolver_for(make_fixture(one));
  try {
    execute_recipe(recipe_for({term("ft", 1.0f, {lata_op(SchemeKind::log)})}), res1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::scheme);
  }
}

TEST(Engine, ManifestRecordsProvenance) {
  TempDir dir;
  const FixtureSet fx = make_fixture(FixtureSpec{});
  write_fixture(fx, dir.path());
  FileResolver res(dir.path());
  MergeRecipe r;
  r.base = "base.safetensors";
  r.pretrained = "pretrained.safetensors";
  r.target = "target.safetensors";
  r.seed = 11;
  r.terms = {term("finetuned.safetensors", 1.0f, {lata_op(SchemeKind::threshold), DareOp{0.3, std::nullopt}})};
  const MergeOutcome out = execute_recipe(r, res);
  const auto m = write_outcome(r, out, res, "merge", dir / "merged.safetensors");
  const auto on_disk = nlohmann::json::parse(std::string(
      reinterpret_cast<const char*>(read_file_bytes(dir / "merged.safetensors.manifest.json").data()),
      read_file_bytes(dir / "merged.safetensors.manifest.json").size()));
  EXPECT_EQ(on_disk.dump(), nlohmann::json::parse(m.dump()).dump());
  EXPECT_EQ(m["format"], "lata-manifest/1");
  EXPECT_EQ(m["seed"], 11u);
  ASSERT_EQ(m["inputs"].size(), 4u);
  EXPECT_EQ(m["inputs"][0]["sha256"], sha256_hex(read_file_bytes(dir / "target.safetensors")));
  EXPECT_EQ(m["output"]["sha256"], sha256_hex(read_file_bytes(dir / "merged.safetensors")));
  EXPECT_EQ(m["output"]["file"], "merged.safetensors");
  const auto& steps = m["terms"][0]["transforms"];
  ASSERT_EQ(steps.size(), 2u);
  EXPECT_EQ(steps[0]["op"], "lata");
  ASSERT_EQ(steps[0]["layers"].size(), 4u);
  EXPECT_EQ(steps[0]["layers"][0]["weight"], 0.0);
  // threshold dropped A: 2 layers of 64 + 128 elements
  EXPECT_EQ(steps[0]["elements_zeroed"], 384u);
  EXPECT_EQ(steps[1]["params"]["seed"], derived_dare_seed(11, 0, 1));
  EXPECT_GT(steps[1]["elements_zeroed"].get<std::uint64_t>(), 0u);
  EXPECT_EQ(read_checkpoint(dir / "merged.safetensors"), out.output);
}

TEST(Digest, KnownVector) {
  const std::string abc = "abc";
  EXPECT_EQ(sha256_hex(std::span(reinterpret_cast<const std::byte*>(abc.data()), abc.size())),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}
