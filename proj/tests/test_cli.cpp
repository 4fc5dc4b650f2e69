#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "test_util.hpp"

using namespace lata;
using lata::testing::TempDir;
using nlohmann::json;

namespace {

struct CliRun {
  int status = -1;
  std::string out;
  std::string err;
};

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

CliRun lata_cli(const TempDir& dir, const std::string& args, const std::string& env = "") {
  const auto out = dir / "stdout.txt";
  const auto err = dir / "stderr.txt";
  const std::string cmd = env + (env.empty() ? "" : " ") + "'" + std::string(LATA_CLI_PATH) + "' " + args + " >'" +
                          out.string() + "' 2>'" + err.string() + "'";
  const int raw = std::system(cmd.c_str());
  CliRun r;
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

void write_json(const std::filesystem::path& p, const json& j) {
  std::ofstream(p) << j.dump(2);
}

json error_of(const CliRun& r) {
  const auto j = json::parse(r.err);
  EXPECT_TRUE(j.contains("error"));
  return j.at("error");
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    write_json(dir / "fixture.json", json{{"layers", 4}, {"seed", 3}, {"output_dir", "fx"}});
    const CliRun r = lata_cli(dir, "fixture --config '" + (dir / "fixture.json").string() + "'");
    ASSERT_EQ(r.status, 0) << r.err;
  }

  json recipe(json terms) const {
    return json{{"base", "fx/base.safetensors"},
                {"pretrained", "fx/pretrained.safetensors"},
                {"target", "fx/target.safetensors"},
                {"terms", std::move(terms)},
                {"output", "out/merged.safetensors"}};
  }

  std::string cfg(const json& j, const std::string& name = "recipe.json") const {
    write_json(dir / name, j);
    return "--config '" + (dir / name).string() + "'";
  }

  TempDir dir;
};

}  // namespace

TEST_F(Cli, FixtureWritesFourCheckpoints) {
  for (const char* name : fixture_file_names) EXPECT_TRUE(std::filesystem::exists(dir / "fx" / name)) << name;
  EXPECT_EQ(read_checkpoint(dir / "fx" / "base.safetensors").metadata.at("family"), "fixture");
  // --seed overrides the config
  const CliRun r = lata_cli(dir, "fixture " + cfg(json::parse(R"({"layers": 4})"), "f2.json") + " --seed 3 --output '" +
                                  (dir / "fx2").string() + "'");
  ASSERT_EQ(r.status, 0) << r.err;
  EXPECT_EQ(slurp(dir / "fx2" / "base.safetensors"), slurp(dir / "fx" / "base.safetensors"));
}

TEST_F(Cli, MergeWritesOutputAndManifest) {
  const json terms = json::array({{{"finetuned", "fx/finetuned.safetensors"},
                                   {"lambda", 1.0},
                                   {"chain", json::array({{{"op", "lata"}, {"params", {{"scheme", "threshold"}}}}})}}});
  const CliRun r = lata_cli(dir, "merge " + cfg(recipe(terms)));
  ASSERT_EQ(r.status, 0) << r.err;
  const auto out = dir / "out" / "merged.safetensors";
  ASSERT_TRUE(std::filesystem::exists(out));
  const json m = json::parse(slurp(dir / "out" / "merged.safetensors.manifest.json"));
  EXPECT_EQ(m["command"], "merge");
  EXPECT_EQ(m["output"]["sha256"], sha256_hex(read_file_bytes(out)));
  EXPECT_EQ(m["terms"][0]["transforms"][0]["layers"].size(), 4u);
  EXPECT_EQ(m["recipe"]["mode"], "learn");
}

TEST_F(Cli, EmptyTermsCopyTheTarget) {
  const CliRun r = lata_cli(dir, "merge " + cfg(recipe(json::array())));
  ASSERT_EQ(r.status, 0) << r.err;
  EXPECT_EQ(slurp(dir / "out" / "merged.safetensors"), slurp(dir / "fx" / "target.safetensors"));
}

TEST_F(Cli, ForgetTakesItsModeFromTheSubcommand) {
  const json terms = json::array({{{"finetuned", "fx/finetuned.safetensors"}, {"lambda", 0.8}}});
  CliRun r = lata_cli(dir, "forget " + cfg(recipe(terms)));
  ASSERT_EQ(r.status, 0) << r.err;
  EXPECT_EQ(json::parse(slurp(dir / "out" / "merged.safetensors.manifest.json"))["recipe"]["mode"], "forget");
  json conflicting = recipe(terms);
  conflicting["mode"] = "learn";
  r = lata_cli(dir, "forget " + cfg(conflicting));
  EXPECT_EQ(r.status, 1);
  EXPECT_EQ(error_of(r)["code"], "config");
}

TEST_F(Cli, ThreadsAndSeedBehaviour) {
  const json terms = json::array({{{"finetuned", "fx/finetuned.safetensors"},
                                   {"lambda", 0.5},
                                   {"chain", json::array({{{"op", "dare"}}, {{"op", "ties"}}})}}});
  const std::string c = cfg(recipe(terms));
  ASSERT_EQ(lata_cli(dir, "merge " + c + " --threads 1 --output '" + (dir / "a.safetensors").string() + "'").status, 0);
  ASSERT_EQ(lata_cli(dir, "merge " + c + " --threads 8 --output '" + (dir / "b.safetensors").string() + "'").status, 0);
  ASSERT_EQ(lata_cli(dir, "merge " + c + " --seed 9 --output '" + (dir / "c.safetensors").string() + "'").status, 0);
  EXPECT_EQ(slurp(dir / "a.safetensors"), slurp(dir / "b.safetensors"));
  // the manifest names the output by basename, so compare after swapping it
  auto ma = json::parse(slurp(dir / "a.safetensors.manifest.json"));
  auto mb = json::parse(slurp(dir / "b.safetensors.manifest.json"));
  mb["output"]["file"] = ma["output"]["file"];
  EXPECT_EQ(ma, mb);
  EXPECT_NE(slurp(dir / "a.safetensors"), slurp(dir / "c.safetensors"));
  EXPECT_EQ(json::parse(slurp(dir / "c.safetensors.manifest.json"))["seed"], 9);
}

TEST_F(Cli, OutputDirectoryOverride) {
  TempDir elsewhere;
  const CliRun r = lata_cli(dir, "merge " + cfg(recipe(json::array())), "LATA_OUTPUT_DIR='" + elsewhere.path().string() + "'");
  ASSERT_EQ(r.status, 0) << r.err;
  EXPECT_TRUE(std::filesystem::exists(elsewhere / "merged.safetensors"));
  EXPECT_FALSE(std::filesystem::exists(dir / "out" / "merged.safetensors"));
}

TEST_F(Cli, AnalyzeWritesCsvAndJson) {
  json r = recipe(json::array({{{"finetuned", "fx/finetuned.safetensors"}, {"lambda", 1.0}}}));
  r["output"] = "report/sim";
  const CliRun run = lata_cli(dir, "analyze " + cfg(r));
  ASSERT_EQ(run.status, 0) << run.err;
  const std::string csv = slurp(dir / "report" / "sim.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), similarity_csv_header);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
  const json j = json::parse(slurp(dir / "report" / "sim.json"));
  EXPECT_EQ(j["rows"].size(), 4u);
  EXPECT_GT(j["rows"][0]["cosine"].get<double>(), 0.99);
}

TEST_F(Cli, InspectDumpsTheHeader) {
  const CliRun r = lata_cli(dir, "inspect '" + (dir / "fx" / "base.safetensors").string() + "'");
  ASSERT_EQ(r.status, 0) << r.err;
  const json j = json::parse(r.out);
  EXPECT_EQ(j["tensor_count"], 10);
  EXPECT_EQ(j["parameter_count"], 4 * (64 + 128) + 2 * 256);
  EXPECT_EQ(j["metadata"]["family"], "fixture");
}

TEST_F(Cli, ErrorsAreJsonOnStderr) {
  json bad = recipe(json::array());
  bad["colour"] = "blue";
  CliRun r = lata_cli(dir, "merge " + cfg(bad));
  EXPECT_EQ(r.status, 1);
  EXPECT_EQ(error_of(r)["code"], "config");
  EXPECT_NE(error_of(r)["message"].get<std::string>().find("colour"), std::string::npos);

  json missing = recipe(json::array({{{"finetuned", "fx/nope.safetensors"}, {"lambda", 1.0}}}));
  r = lata_cli(dir, "merge " + cfg(missing));
  EXPECT_EQ(r.status, 1);
  EXPECT_EQ(error_of(r)["code"], "unresolved-ref");

  std::ofstream(dir / "broken.safetensors") << "garbage";
  r = lata_cli(dir, "inspect '" + (dir / "broken.safetensors").string() + "'");
  EXPECT_EQ(r.status, 1);
  EXPECT_EQ(error_of(r)["code"], "truncated");

  std::ofstream(dir / "notjson.json") << "{";
  r = lata_cli(dir, "merge --config '" + (dir / "notjson.json").string() + "'");
  EXPECT_EQ(r.status, 1);
  EXPECT_EQ(error_of(r)["code"], "config");

  r = lata_cli(dir, "merge --config /definitely/not/here.json");
  EXPECT_EQ(r.status, 2);
  EXPECT_EQ(error_of(r)["code"], "usage");
  r = lata_cli(dir, "");
  EXPECT_EQ(r.status, 2);
}
