#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "stner/corpus.hpp"
#include "stner/linearize.hpp"
#include "stner/model.hpp"
#include "stner/select.hpp"
#include "stner/synth.hpp"
#include "stner/tagger.hpp"
#include "stner/train.hpp"

namespace stner {

inline constexpr int kPipelineSchemaVersion = 1;

enum class Regime { kFullSet, kFewShot, kLowResource };

struct PipelineConfig {
  std::uint64_t seed = 0;

  struct Paths {
    // Empty paths default to the files written by `synth` under <out>/data.
    std::string parallel, source, target, target_dev, target_test;
    std::string out = "run";
  } paths;

  struct Data {
    std::vector<std::string> types = {"LOC", "ORG", "PERSON"};
    std::size_t max_len = 64;
    Regime regime = Regime::kFullSet;
    std::size_t few_shot_k = 10;
    std::size_t low_resource_n = 1024;
  } data;

  struct Synth {
    std::size_t num_pairs = 2000;
    std::size_t num_source = 1000;
    std::size_t num_target = 1000;  // target train pool; dev and test are drawn in addition
    std::size_t num_target_dev = 200;
    std::size_t num_target_test = 400;
    double drop_probability = 0.1;
    double lowercase_entity_probability = 0.5;
    bool pairs_with_gold_tags = false;
  } synth;

  ModelConfig model;
  TrainConfig train;
  LossWeights loss_weights;
  PrefixConfig prefixes;

  SamplerConfig sampler;
  std::size_t candidates = 10;
  std::size_t generate_max_len = 65;

  struct Scoring {
    SelectionWeights weights;
    StyleClassifier::Config style;
    double bigram_k = 0.1;
    double fluency_c = 0.1;
  } selection;

  TaggerConfig tagger;

  struct PseudoLabel {
    double threshold = 0.9;
    std::string tagger = "S";  // selector whose checkpoint labels the pairs
  } pseudo_label;

  struct Ner {
    std::string selector = "P+T";
  } ner;

  struct Evaluate {
    std::vector<std::string> methods;  // empty: every trained tagger
    std::vector<std::string> runs;     // other run directories to average over
  } evaluate;

  static PipelineConfig defaults() { return {}; }
  void validate() const;
};

nlohmann::ordered_json to_json(const PipelineConfig& config);
PipelineConfig pipeline_config_from_json(const nlohmann::json& j);
PipelineConfig load_pipeline_config(const std::string& path);

std::string sha256_hex(const std::string& bytes);
std::string file_sha256(const std::filesystem::path& path);

// Canonical on-disk layout of a run directory.
struct RunLayout {
  std::filesystem::path root;

  std::filesystem::path data() const { return root / "data"; }
  std::filesystem::path prepared() const { return root / "prepared"; }
  std::filesystem::path ner(const std::string& slug) const { return root / "ner" / slug; }
  std::filesystem::path transfer() const { return root / "transfer"; }
  std::filesystem::path generate() const { return root / "generate"; }
  std::filesystem::path eval() const { return root / "eval"; }
  std::filesystem::path ada() const { return root / "ada"; }
  std::filesystem::path manifests() const { return root / "manifests"; }
};

// "S", "T", "S+T", "S->T", "P+T", "A+T" and their directory names.
std::string selector_slug(const std::string& selector);
const std::vector<std::string>& known_selectors();

struct CommandResult {
  nlohmann::ordered_json stats;
  std::vector<std::filesystem::path> inputs;
  std::vector<std::filesystem::path> outputs;
  std::filesystem::path manifest;
};

// Each command reads its prerequisites from the run layout, writes its outputs
// and a manifest, and logs a short human-readable summary to `log`.
CommandResult cmd_synth(const PipelineConfig& config, std::ostream& log);
CommandResult cmd_prepare(const PipelineConfig& config, std::ostream& log);
CommandResult cmd_pseudo_label(const PipelineConfig& config, std::ostream& log);
CommandResult cmd_train_transfer(const PipelineConfig& config, std::ostream& log);
CommandResult cmd_generate(const PipelineConfig& config, std::ostream& log);
CommandResult cmd_train_ner(const PipelineConfig& config, const std::string& selector, std::ostream& log);
CommandResult cmd_evaluate(const PipelineConfig& config, std::ostream& log);
CommandResult cmd_baseline_ada(const PipelineConfig& config, std::ostream& log);

}  // namespace stner
