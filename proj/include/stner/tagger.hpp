#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "stner/autodiff.hpp"
#include "stner/corpus.hpp"
#include "stner/train.hpp"

namespace stner {

// {O} followed by B-T, I-T for each registered type.
class TagSet {
 public:
  explicit TagSet(const TypeRegistry& registry);
  std::size_t size() const { return tags_.size(); }
  int index(const BioTag& tag) const;
  const BioTag& tag(std::size_t i) const { return tags_.at(i); }

 private:
  std::vector<BioTag> tags_;
  std::unordered_map<std::string, int> index_;
};

struct TaggerConfig {
  std::size_t embedding_dim = 32;
  std::size_t hidden_dim = 64;
  int window = 2;  // tokens on each side
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  OptimizerConfig optimizer{OptimizerKind::kAdamW, 5e-5, 0.01};
  std::size_t min_count = 2;  // rarer training tokens share the <UNK> row
  double init_scale = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
};

// Window tagger: embeddings of a (2w+1)-token window, one tanh hidden layer,
// and a softmax over the tag set.
struct TaggerParams {
  ad::Tensor embedding;  // |V| x d
  ad::Tensor hidden_w;   // h x (2w+1)d
  ad::Tensor hidden_b;   // h x 1
  ad::Tensor out_w;      // |tags| x h
  ad::Tensor out_b;      // |tags| x 1

  std::vector<ad::Tensor*> tensors();
  std::vector<const ad::Tensor*> tensors() const;
  void zero_grad();
  bool all_finite() const;
};

class TaggerModel {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;

  TaggerModel() = default;
  // Zero parameters over the given vocabulary (which must start with the
  // <PAD>, <UNK> entries).
  TaggerModel(TaggerConfig config, TypeRegistry registry, std::vector<std::string> vocab);

  static TaggerModel random(TaggerConfig config, TypeRegistry registry, std::vector<std::string> vocab);

  const TaggerConfig& config() const { return config_; }
  TaggerConfig& config() { return config_; }
  const TypeRegistry& registry() const { return registry_; }
  const std::vector<std::string>& vocab() const { return vocab_; }
  const TagSet& tags() const { return tags_; }
  TaggerParams& params() { return params_; }
  const TaggerParams& params() const { return params_; }

  int token_id(std::string_view token) const;
  std::vector<int> encode(const std::vector<std::string>& tokens) const;

 private:
  TaggerConfig config_;
  TypeRegistry registry_;
  std::vector<std::string> vocab_;
  std::unordered_map<std::string, int> index_;
  TagSet tags_{registry_};
  TaggerParams params_;
};

// <PAD>, <UNK>, then tokens seen at least min_count times, first-seen order.
std::vector<std::string> build_tagger_vocab(std::span<const NerCorpus* const> corpora,
                                            std::size_t min_count);

// Mean token cross-entropy of one sentence; adds weight * gradient.
double tagger_loss(TaggerModel& model, const TaggedSentence& sentence, double weight = 1.0);

// An I-T without a B-T / I-T predecessor becomes B-T.
std::vector<BioTag> repair_bio(std::vector<BioTag> tags);

struct Prediction {
  std::vector<BioTag> tags;
  std::vector<double> confidences;  // max softmax probability per token
};

Prediction predict(const TaggerModel& model, const std::vector<std::string>& tokens);
NerCorpus predict_corpus(const TaggerModel& model, const NerCorpus& corpus);

struct EntitySpan {
  std::size_t start = 0;
  std::size_t end = 0;  // inclusive
  std::string type;

  bool operator==(const EntitySpan&) const = default;
  auto operator<=>(const EntitySpan&) const = default;
};

std::vector<EntitySpan> extract_spans(const TaggedSentence& sentence);

struct EvalResult {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  double precision = 0.0;
  double recall = 0.0;
  double micro_f1 = 0.0;
};

EvalResult make_eval_result(std::size_t tp, std::size_t fp, std::size_t fn);
EvalResult micro_f1(const NerCorpus& gold, const NerCorpus& pred);

struct TaggerEpoch {
  std::size_t epoch = 0;
  double loss = 0.0;
  double dev_f1 = 0.0;
};

struct TaggerPhase {
  std::string name;
  std::vector<TaggerEpoch> epochs;
  std::size_t best_epoch = 0;
};

struct TaggerTrainResult {
  TaggerModel model;
  std::vector<TaggerPhase> phases;
};

// Trains from the current parameters of `model`, keeping the epoch with the
// best dev F1 (earliest on ties); without a dev set the last epoch is kept.
TaggerPhase fit_tagger(TaggerModel& model, const NerCorpus& train, const NerCorpus* dev,
                       std::string phase_name, std::size_t phase_index = 0);

// Vocabulary from `train`, random init, one fitting phase.
TaggerTrainResult train_tagger(const NerCorpus& train, const NerCorpus* dev, const TaggerConfig& config);

struct PseudoLabelStats {
  std::size_t pairs = 0;
  std::size_t labeled = 0;
  double fraction() const { return pairs ? static_cast<double>(labeled) / static_cast<double>(pairs) : 0.0; }
};

// A pair is labeled iff on both sides every gating token has confidence
// strictly above the threshold. Gating tokens are the predicted entity tokens,
// or every token when a side has no predicted entity.
std::vector<ParallelPair> pseudo_label(const TaggerModel& model, const std::vector<ParallelPair>& pairs,
                                       double threshold = 0.9, PseudoLabelStats* stats = nullptr);

void save_tagger(const TaggerModel& model, const std::string& path);
TaggerModel load_tagger(const std::string& path);

}  // namespace stner
