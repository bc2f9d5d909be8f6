#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "stner/error.hpp"
#include "stner/pipeline.hpp"

using namespace stner;
namespace fs = std::filesystem;

namespace {

PipelineConfig tiny(const fs::path& out) {
  PipelineConfig c;
  c.seed = 3;
  c.paths.out = out.string();
  c.synth.num_pairs = 60;
  c.synth.num_source = 40;
  c.synth.num_target = 50;
  c.synth.num_target_dev = 20;
  c.synth.num_target_test = 30;
  c.data.regime = Regime::kLowResource;
  c.data.low_resource_n = 32;
  c.model.embedding_dim = 8;
  c.train.epochs = 2;
  c.train.batch_size = 8;
  c.train.optimizer = {OptimizerKind::kAdamW, 5e-3, 0.01};
  c.candidates = 2;
  c.tagger.epochs = 2;
  c.tagger.optimizer.learning_rate = 5e-3;
  return c;
}

fs::path fresh_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("stner_test_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::map<std::string, std::string> output_digests(const CommandResult& r) {
  std::map<std::string, std::string> out;
  for (const auto& p : r.outputs) out[p.string()] = file_sha256(p);
  return out;
}

ErrorCategory category_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.category();
  }
  return ErrorCategory::kInternal;
}

int run_cli(const std::string& args) {
  const int status = std::system((std::string(STNER_CLI) + " " + args + " >/dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("sha-256 known answers") {
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("config json round trip") {
  PipelineConfig c = tiny("x");
  c.train.stage2_start = 1;
  c.evaluate.methods = {"S", "P+T"};
  auto j = nlohmann::json::parse(to_json(c).dump());
  PipelineConfig back = pipeline_config_from_json(j);
  CHECK(to_json(back).dump() == to_json(c).dump());
  CHECK(back.train.stage2_start == 1u);
  CHECK(back.data.regime == Regime::kLowResource);
}

TEST_CASE("config rejects unknown keys and bad values") {
  CHECK(category_of([] { pipeline_config_from_json({{"bogus", 1}}); }) == ErrorCategory::kUsage);
  CHECK(category_of([] { pipeline_config_from_json({{"train", {{"epoks", 1}}}}); }) == ErrorCategory::kUsage);
  CHECK(category_of([] { pipeline_config_from_json({{"schema_version", 99}}); }) == ErrorCategory::kUsage);
  CHECK(category_of([] { pipeline_config_from_json({{"data", {{"regime", "most"}}}}); }) == ErrorCategory::kUsage);
  CHECK(category_of([] { pipeline_config_from_json({{"seed", "x"}}); }) == ErrorCategory::kUsage);
  PipelineConfig c;
  c.sampler.top_p = 1.5;
  CHECK(category_of([&] { c.validate(); }) == ErrorCategory::kUsage);
  c = {};
  c.ner.selector = "Q";
  CHECK(category_of([&] { c.validate(); }) == ErrorCategory::kUsage);
  PipelineConfig onto = pipeline_config_from_json({{"data", {{"types", "ontonotes"}}}});
  CHECK(onto.data.types.size() == 18);
}

TEST_CASE("selector slugs") {
  CHECK(selector_slug("S->T") == "source_then_target");
  CHECK(selector_slug("P+T") == "pseudo_target");
  CHECK(known_selectors().size() == 6);
  CHECK_THROWS(selector_slug("X"));
}

TEST_CASE("commands report missing prerequisites") {
  PipelineConfig c = tiny(fresh_dir("missing"));
  std::ostringstream log;
  CHECK(category_of([&] { cmd_prepare(c, log); }) == ErrorCategory::kMissingPrerequisite);
  CHECK(category_of([&] { cmd_train_transfer(c, log); }) == ErrorCategory::kMissingPrerequisite);
  CHECK(category_of([&] { cmd_generate(c, log); }) == ErrorCategory::kMissingPrerequisite);
  CHECK(category_of([&] { cmd_train_ner(c, "S", log); }) == ErrorCategory::kMissingPrerequisite);
  CHECK(category_of([&] { cmd_evaluate(c, log); }) == ErrorCategory::kMissingPrerequisite);
  cmd_synth(c, log);
  cmd_prepare(c, log);
  CHECK(category_of([&] { cmd_pseudo_label(c, log); }) == ErrorCategory::kMissingPrerequisite);
  CHECK(category_of([&] { cmd_train_ner(c, "P+T", log); }) == ErrorCategory::kMissingPrerequisite);
}

TEST_CASE("infeasible regimes are reported") {
  PipelineConfig c = tiny(fresh_dir("infeasible"));
  std::ostringstream log;
  cmd_synth(c, log);
  c.data.low_resource_n = 10000;
  CHECK(category_of([&] { cmd_prepare(c, log); }) == ErrorCategory::kInfeasible);
  c.data.regime = Regime::kFewShot;
  c.data.few_shot_k = 1000;
  CHECK(category_of([&] { cmd_prepare(c, log); }) == ErrorCategory::kInfeasible);
}

TEST_CASE("full pipeline runs and every command reproduces its outputs") {
  const fs::path dir = fresh_dir("pipeline");
  PipelineConfig c = tiny(dir);
  std::ostringstream log;
  std::vector<std::pair<std::string, std::function<CommandResult()>>> steps = {
      {"synth", [&] { return cmd_synth(c, log); }},
      {"prepare", [&] { return cmd_prepare(c, log); }},
      {"train-ner S", [&] { return cmd_train_ner(c, "S", log); }},
      {"pseudo-label", [&] { return cmd_pseudo_label(c, log); }},
      {"train-transfer", [&] { return cmd_train_transfer(c, log); }},
      {"generate", [&] { return cmd_generate(c, log); }},
      {"train-ner P+T", [&] { return cmd_train_ner(c, "P+T", log); }},
      {"baseline-ada", [&] { return cmd_baseline_ada(c, log); }},
      {"train-ner A+T", [&] { return cmd_train_ner(c, "A+T", log); }},
      {"train-ner T", [&] { return cmd_train_ner(c, "T", log); }},
      {"train-ner S+T", [&] { return cmd_train_ner(c, "S+T", log); }},
      {"train-ner S->T", [&] { return cmd_train_ner(c, "S->T", log); }},
      {"evaluate", [&] { return cmd_evaluate(c, log); }},
  };
  std::vector<std::map<std::string, std::string>> first;
  std::vector<std::string> manifests;
  for (auto& [name, run] : steps) {
    CommandResult r = run();
    CHECK_MESSAGE(!r.outputs.empty(), name);
    first.push_back(output_digests(r));
    manifests.push_back(slurp(r.manifest));
  }
  for (std::size_t i = 0; i < steps.size(); ++i) {
    CommandResult r = steps[i].second();
    CHECK_MESSAGE(output_digests(r) == first[i], steps[i].first);
    CHECK_MESSAGE(slurp(r.manifest) == manifests[i], steps[i].first);
  }

  const RunLayout layout{dir};
  CHECK(fs::exists(layout.prepared() / "source.linearized.txt"));
  CHECK(fs::exists(layout.transfer() / "timing.json"));
  CHECK(fs::exists(layout.eval() / "predictions" / "pseudo_target.conll"));
  auto manifest = nlohmann::json::parse(slurp(layout.manifests() / "generate.json"));
  CHECK(manifest["outputs"].contains("generate/pseudo.conll"));
  CHECK(manifest["inputs"].contains("transfer/transfer.ckpt"));
  auto prep = nlohmann::json::parse(slurp(layout.manifests() / "prepare.json"));
  CHECK(prep["stats"]["target_after_regime"] == 32);

  std::ifstream results(layout.eval() / "results.jsonl");
  std::size_t rows = 0;
  for (std::string line; std::getline(results, line);) {
    auto j = nlohmann::json::parse(line);
    CHECK(j["micro_f1"].get<double>() >= 0.0);
    CHECK(j["micro_f1"].get<double>() <= 1.0);
    ++rows;
  }
  CHECK(rows == 6);

  SUBCASE("a different seed changes the outputs") {
    PipelineConfig other = c;
    other.seed = 4;
    other.paths.out = fresh_dir("pipeline_seed").string();
    std::ostringstream l2;
    CHECK(output_digests(cmd_synth(other, l2)) != std::map<std::string, std::string>{});
    CHECK(file_sha256(fs::path(other.paths.out) / "data" / "source.conll") !=
          file_sha256(layout.data() / "source.conll"));
  }

  SUBCASE("an empty pseudo corpus makes P+T identical to T") {
    std::ofstream(layout.generate() / "pseudo.conll", std::ios::trunc).close();
    cmd_train_ner(c, "P+T", log);
    CHECK(slurp(layout.ner("pseudo_target") / "tagger.ckpt") == slurp(layout.ner("target") / "tagger.ckpt"));
  }

  SUBCASE("evaluate averages over other runs") {
    PipelineConfig e = c;
    e.evaluate.methods = {"S", "P+T"};
    e.evaluate.runs = {dir.string()};
    CommandResult r = cmd_evaluate(e, log);
    CHECK(fs::exists(layout.eval() / "summary.md"));
    CHECK(r.stats["summary"].size() == 2);
  }
}

TEST_CASE("cli maps failures to exit codes") {
  const fs::path dir = fresh_dir("cli");
  CHECK(run_cli("--help") == 0);
  CHECK(run_cli("") == 2);
  CHECK(run_cli("frobnicate") == 2);
  CHECK(run_cli("prepare --out " + dir.string()) == 6);
  CHECK(run_cli("prepare --config /nonexistent.json") == 3);
  std::ofstream(dir.string() + ".json") << "{\"unknown\": 1}";
  CHECK(run_cli("synth --config " + dir.string() + ".json") == 2);
  std::ofstream(dir.string() + ".json", std::ios::trunc) << "{not json";
  CHECK(run_cli("synth --config " + dir.string() + ".json") == 2);
  CHECK(run_cli("train-ner --selector Q --out " + dir.string()) == 2);
  fs::remove(dir.string() + ".json");
}
