#include <functional>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "stner/error.hpp"
#include "stner/pipeline.hpp"

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "JSON configuration file");
  cmd->add_option("--seed", c.seed, "Master seed (overrides the config)");
  cmd->add_option("--out", c.out, "Run directory (overrides paths.out)");
}

stner::PipelineConfig resolve(const Common& c) {
  stner::PipelineConfig cfg = c.config.empty() ? stner::PipelineConfig::defaults() : stner::load_pipeline_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  if (!c.out.empty()) cfg.paths.out = c.out;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Style-transfer data augmentation for cross-domain NER"};
  app.require_subcommand(1);
  Common common;

  std::function<void()> run;
  auto sub = [&](const std::string& name, const std::string& help) {
    CLI::App* cmd = app.add_subcommand(name, help);
    add_common(cmd, common);
    return cmd;
  };

  auto* synth = sub("synth", "Write a synthetic parallel/source/target corpus under <out>/data");
  synth->callback([&] { run = [&] { stner::cmd_synth(resolve(common), std::cout); }; });

  auto* prepare = sub("prepare", "Filter by linearized length, apply the data regime, linearize");
  std::string regime;
  std::optional<std::size_t> few_k, low_n;
  prepare->add_option("--regime", regime, "full_set, few_shot or low_resource");
  prepare->add_option("--k", few_k, "Few-shot K");
  prepare->add_option("--n", low_n, "Low-resource sentence count");
  prepare->callback([&] {
    run = [&] {
      auto cfg = resolve(common);
      if (!regime.empty()) {
        auto j = nlohmann::json::parse(stner::to_json(cfg).dump());
        j["data"]["regime"] = regime;
        cfg = stner::pipeline_config_from_json(j);
      }
      if (few_k) cfg.data.few_shot_k = *few_k;
      if (low_n) cfg.data.low_resource_n = *low_n;
      stner::cmd_prepare(cfg, std::cout);
    };
  });

  auto* pseudo = sub("pseudo-label", "Tag the parallel pairs with a trained tagger and keep confident ones");
  std::optional<double> threshold;
  std::string label_tagger;
  pseudo->add_option("--threshold", threshold, "Confidence threshold");
  pseudo->add_option("--tagger", label_tagger, "Selector of the labelling tagger");
  pseudo->callback([&] {
    run = [&] {
      auto cfg = resolve(common);
      if (threshold) cfg.pseudo_label.threshold = *threshold;
      if (!label_tagger.empty()) cfg.pseudo_label.tagger = label_tagger;
      stner::cmd_pseudo_label(cfg, std::cout);
    };
  });

  auto* transfer = sub("train-transfer", "Train the style-transfer generator and discriminator");
  std::optional<std::size_t> epochs;
  transfer->add_option("--epochs", epochs, "Training epochs");
  transfer->callback([&] {
    run = [&] {
      auto cfg = resolve(common);
      if (epochs) cfg.train.epochs = *epochs;
      stner::cmd_train_transfer(cfg, std::cout);
    };
  });

  auto* generate = sub("generate", "Sample, score and select paraphrases of the source corpus");
  std::optional<std::size_t> candidates;
  generate->add_option("--k", candidates, "Candidates per sentence");
  generate->callback([&] {
    run = [&] {
      auto cfg = resolve(common);
      if (candidates) cfg.candidates = *candidates;
      stner::cmd_generate(cfg, std::cout);
    };
  });

  auto* ner = sub("train-ner", "Train a NER tagger on a selected training set");
  std::string selector;
  ner->add_option("--selector", selector, "S, T, S+T, S->T, P+T or A+T");
  ner->callback([&] {
    run = [&] {
      auto cfg = resolve(common);
      stner::cmd_train_ner(cfg, selector.empty() ? cfg.ner.selector : selector, std::cout);
    };
  });

  auto* evaluate = sub("evaluate", "Score trained taggers on the target test set");
  std::vector<std::string> methods, runs;
  evaluate->add_option("--methods", methods, "Selectors to evaluate (default: all trained)");
  evaluate->add_option("--runs", runs, "Other run directories to average with");
  evaluate->callback([&] {
    run = [&] {
      auto cfg = resolve(common);
      if (!methods.empty()) cfg.evaluate.methods = methods;
      if (!runs.empty()) cfg.evaluate.runs = runs;
      stner::cmd_evaluate(cfg, std::cout);
    };
  });

  auto* ada = sub("baseline-ada", "Entity-replacement augmentation baseline");
  ada->callback([&] { run = [&] { stner::cmd_baseline_ada(resolve(common), std::cout); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(stner::ErrorCategory::kUsage);
  }

  try {
    run();
  } catch (const stner::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.category());
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return static_cast<int>(stner::ErrorCategory::kInternal);
  }
  return 0;
}
