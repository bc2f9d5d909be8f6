#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stner/autodiff.hpp"
#include "stner/corpus.hpp"
#include "stner/linearize.hpp"
#include "stner/model.hpp"
#include "stner/vocab.hpp"

namespace stner {

// Everything needed to run the transfer model.
struct TransferModel {
  ModelConfig config;
  Vocabulary vocab;
  GeneratorParams generator;
  DiscriminatorParams discriminator;
};

TransferModel make_transfer_model(const ModelConfig& config, Vocabulary vocab, std::uint64_t seed);

// Vocabulary over the rendered (marker-linearized) forms of all three inputs.
Vocabulary build_transfer_vocab(const std::vector<ParallelPair>& pairs, const NerCorpus& source,
                                const NerCorpus& target, const PrefixConfig& prefixes = {});

// Marker-rendered ids, optionally preceded by the direction prefix.
std::vector<TokenId> render_ids(const Vocabulary& vocab, const TaggedSentence& sentence,
                                std::optional<Direction> prefix = std::nullopt);

struct LossWeights {
  double pg = 1.0;
  double cr = 0.5;
  double adv = 1.25;

  void validate() const;
};

// Supervised paraphrase example: prefixed input, target ending in <EOS>.
struct PgExample {
  std::vector<TokenId> input;
  std::vector<TokenId> target;
};

// Cycle example: `input` is the prefixed sentence; the paraphrase is re-encoded
// behind `reverse_prefix` and must reconstruct `original`.
struct CycleExample {
  std::vector<TokenId> input;
  std::vector<TokenId> reverse_prefix;
  std::vector<TokenId> original;
};

// Both directions of a pair. Throws if a target side contains <UNK> and
// `strict` is set.
std::vector<PgExample> make_pg_examples(const Vocabulary& vocab, const ParallelPair& pair,
                                        bool strict = true);
CycleExample make_cycle_example(const Vocabulary& vocab, const TaggedSentence& sentence,
                                Direction direction);

// Each loss returns its unweighted value and adds `weight` times its gradient
// into the parameters' grad buffers.

// Teacher-forced mean token NLL of the target.
double loss_pg(GeneratorParams& params, const ModelConfig& config, const PgExample& example,
               double weight = 1.0);

// Per-step Gumbel noise for one soft rollout, drawn from `seed`.
std::vector<ad::Vector> draw_cycle_noise(std::size_t steps, std::size_t vocab_size, std::uint64_t seed);

// Cycle reconstruction: the soft paraphrase y_t = softmax((logits_t + g_t)/tau)
// is rolled out for |original| steps, its expected embeddings are re-encoded
// behind the reverse prefix, and the original plus <EOS> is teacher-forced.
// Returns mean(source terms) + mean(target terms); either side may be empty.
double loss_cr(GeneratorParams& params, const ModelConfig& config,
               std::span<const CycleExample> source, std::span<const CycleExample> target,
               double tau, std::uint64_t noise_seed, double weight = 1.0);

// E_src[-log D(z)] + E_tgt[-log(1 - D(z))]; gradients only into `disc`.
double loss_adv_discriminator(DiscriminatorParams& disc, std::span<const LatentSequence> source,
                              std::span<const LatentSequence> target, double weight = 1.0);

struct AdversarialResult {
  double loss = 0.0;
  std::vector<LatentSequence> source_latents;  // re-encoded soft paraphrases
  std::vector<LatentSequence> target_latents;
};

// Flipped-label generator loss E_src[-log(1 - D(z))] + E_tgt[-log D(z)] with a
// frozen discriminator; z is the re-encoded soft paraphrase.
AdversarialResult loss_adv_generator(GeneratorParams& params, const DiscriminatorParams& disc,
                                     const ModelConfig& config,
                                     std::span<const CycleExample> source,
                                     std::span<const CycleExample> target, double tau,
                                     std::uint64_t noise_seed, double weight = 1.0);

struct LossTerms {
  double pg = 0.0;
  double cr = 0.0;
  double adv = 0.0;
};

double total_loss(const LossTerms& terms, const LossWeights& weights);

// ---------------------------------------------------------------------------

enum class OptimizerKind { kSgd, kAdamW };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kSgd;
  double learning_rate = 1e-4;
  double weight_decay = 0.01;  // decoupled
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_norm = 0.0;  // global gradient norm clip; 0 disables

  void validate() const;
};

std::string to_string(OptimizerKind kind);
OptimizerKind parse_optimizer_kind(const std::string& name);

// Updates the bound tensors from their grad buffers, then clears them.
class Optimizer {
 public:
  Optimizer(OptimizerConfig config, std::vector<ad::Tensor*> tensors);
  void step();
  std::size_t steps() const { return steps_; }

 private:
  OptimizerConfig config_;
  std::vector<ad::Tensor*> tensors_;
  std::vector<ad::Matrix> m_, v_;
  std::size_t steps_ = 0;
};

struct TrainConfig {
  OptimizerConfig optimizer;
  std::size_t epochs = 5;
  std::size_t batch_size = 6;
  std::optional<std::size_t> stage2_start;  // default ceil(epochs / 2)
  double tau = 1.0;
  std::uint64_t seed = 0;
  bool train_discriminator_in_stage2 = true;
  std::size_t warm_start_epochs = 0;  // denoising autoencoder epochs before stage 1
  double warm_start_drop = 0.1;

  std::size_t resolved_stage2_start() const;
  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  std::size_t stage = 1;
  double pg = 0.0;
  double cr = 0.0;
  double adv = 0.0;      // discriminator loss
  double gen_adv = 0.0;  // generator adversarial loss
  double total = 0.0;    // weighted generator objective
  double disc_accuracy = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::size_t stage2_start = 0;
  double initial_pg = 0.0;  // mean L_pg over the parallel data before training
  double wall_seconds = 0.0;
  std::string checkpoint_path;
};

struct TrainResult {
  TransferModel model;
  TrainReport report;
};

// Mean L_pg over all pairs in both directions, without touching gradients.
double evaluate_pg(const TransferModel& model, const std::vector<ParallelPair>& pairs);

TrainResult run_training(const std::vector<ParallelPair>& pairs, const NerCorpus& source,
                         const NerCorpus& target, const ModelConfig& model_config,
                         const TrainConfig& config, const LossWeights& weights,
                         const PrefixConfig& prefixes = {});

// One JSON record per epoch. Wall time is not included.
void write_report_jsonl(const TrainReport& report, const std::string& path);

}  // namespace stner
