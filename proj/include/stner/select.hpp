#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "stner/corpus.hpp"
#include "stner/linearize.hpp"
#include "stner/model.hpp"
#include "stner/train.hpp"

namespace stner {

// Unicode scalar values of a UTF-8 string; malformed bytes decode to U+FFFD.
std::u32string decode_utf8(std::string_view text);

// Levenshtein distance over unicode scalar values.
std::size_t edit_distance_chars(std::string_view a, std::string_view b);

// Surface text of a linearized sentence: tokens joined by single spaces with
// prefix and markers removed.
std::string surface_text(const LinearizedSentence& lin);

// edit_distance / max(|a|, |b|) in characters; 0 when both are empty.
double diversity_score(std::string_view original, std::string_view candidate);
double diversity_score(const LinearizedSentence& original, const LinearizedSentence& candidate);

double adequacy_score(const LinearizedSentence& original, const LinearizedSentence& candidate,
                      const std::unordered_set<std::string>& stop_words);
const std::unordered_set<std::string>& default_stop_words();

// Logistic classifier over the mean of learned token embeddings; the output is
// the probability that a sentence is target-style.
class StyleClassifier {
 public:
  struct Config {
    std::size_t dim = 16;
    std::size_t epochs = 5;
    std::size_t batch_size = 16;
    double learning_rate = 0.05;
    double init_scale = 0.1;
    std::uint64_t seed = 0;
  };

  StyleClassifier() = default;
  // Zero weights over a vocabulary; scores 0.5 everywhere.
  StyleClassifier(std::vector<std::string> vocab, std::size_t dim);

  static StyleClassifier train(const std::vector<std::vector<std::string>>& source,
                               const std::vector<std::vector<std::string>>& target, const Config& config);

  bool trained() const { return trained_; }
  double probability_target(const std::vector<std::string>& tokens) const;
  double accuracy(const std::vector<std::vector<std::string>>& source,
                  const std::vector<std::vector<std::string>>& target) const;

 private:
  int id(const std::string& token) const;

  std::vector<std::string> vocab_;
  std::unordered_map<std::string, int> index_;
  ad::Tensor embedding_, w_, b_;
  bool trained_ = false;
};

// Bigram language model with add-k smoothing over sentence boundaries.
class BigramLM {
 public:
  BigramLM() = default;
  static BigramLM fit(const std::vector<std::vector<std::string>>& sentences, double k = 0.1);

  // Per-token cross-entropy (natural log), including the end-of-sentence
  // event; +inf when some event has zero probability.
  double cross_entropy(const std::vector<std::string>& tokens) const;
  double probability(const std::string& previous, const std::string& next) const;

 private:
  int id(const std::string& token) const;

  double k_ = 0.1;
  std::unordered_map<std::string, int> index_;  // includes <s>, </s>, <unk>
  std::unordered_map<std::uint64_t, double> bigram_;
  std::vector<double> context_;
};

// exp(-H) / (exp(-H) + c)
double fluency_from_entropy(double cross_entropy, double c = 0.1);

class Scorer {
 public:
  virtual ~Scorer() = default;
  virtual std::string name() const = 0;
  virtual double score(const LinearizedSentence& original, const LinearizedSentence& candidate) const = 0;
};

class ConsistencyScorer : public Scorer {
 public:
  explicit ConsistencyScorer(std::shared_ptr<const StyleClassifier> classifier);
  std::string name() const override { return "consistency"; }
  double score(const LinearizedSentence& original, const LinearizedSentence& candidate) const override;

 private:
  std::shared_ptr<const StyleClassifier> classifier_;
};

class AdequacyScorer : public Scorer {
 public:
  explicit AdequacyScorer(std::unordered_set<std::string> stop_words = default_stop_words());
  std::string name() const override { return "adequacy"; }
  double score(const LinearizedSentence& original, const LinearizedSentence& candidate) const override;

 private:
  std::unordered_set<std::string> stop_words_;
};

class FluencyScorer : public Scorer {
 public:
  FluencyScorer(std::shared_ptr<const BigramLM> lm, double c = 0.1);
  std::string name() const override { return "fluency"; }
  double score(const LinearizedSentence& original, const LinearizedSentence& candidate) const override;

 private:
  std::shared_ptr<const BigramLM> lm_;
  double c_;
};

class DiversityScorer : public Scorer {
 public:
  std::string name() const override { return "diversity"; }
  double score(const LinearizedSentence& original, const LinearizedSentence& candidate) const override;
};

// Consistency, adequacy, fluency, diversity, in that order.
struct ScorerSet {
  std::shared_ptr<const Scorer> consistency, adequacy, fluency, diversity;

  std::array<const Scorer*, 4> all() const {
    return {consistency.get(), adequacy.get(), fluency.get(), diversity.get()};
  }
};

struct SelectionWeights {
  double consistency = 1.0;
  double adequacy = 1.0;
  double fluency = 0.1;
  double diversity = 0.5;

  void validate() const;
  std::array<double, 4> as_array() const { return {consistency, adequacy, fluency, diversity}; }
};

struct Candidate {
  std::size_t origin_index = 0;
  std::size_t candidate_index = 0;
  LinearizedSentence text;
  std::array<double, 4> scores{};  // consistency, adequacy, fluency, diversity
  double total = 0.0;
};

double weighted_total(const std::array<double, 4>& scores, const SelectionWeights& weights);

void score_candidate(Candidate& candidate, const LinearizedSentence& original, const ScorerSet& scorers,
                     const SelectionWeights& weights);

// Position of the highest total, recomputed from the scores; ties go to the
// lowest candidate_index.
std::size_t select_best_index(std::span<const Candidate> candidates, const SelectionWeights& weights);
const Candidate& select_best(std::span<const Candidate> candidates, const SelectionWeights& weights);

struct CandidateRecord {
  std::size_t origin_index = 0;
  std::size_t candidate_index = 0;
  std::string rendered_text;
  std::array<double, 4> scores{};
  double total = 0.0;
  bool selected = false;
};

struct AugmentResult {
  NerCorpus pseudo;
  std::vector<CandidateRecord> dump;
};

struct AugmentOptions {
  std::size_t k = 10;
  SamplerConfig sampler;
  std::size_t max_len = 65;
  std::uint64_t seed = 0;
};

// For each source sentence: prefix, sample k constrained paraphrases, score,
// keep the best, and delinearize it. Output sentence i comes from source i.
AugmentResult augment_corpus(const TransferModel& model, const NerCorpus& source, const ScorerSet& scorers,
                             const SelectionWeights& weights, const AugmentOptions& options);

void write_candidate_dump(const std::vector<CandidateRecord>& dump, const std::string& path);

}  // namespace stner
