#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "stner/autodiff.hpp"
#include "stner/automaton.hpp"
#include "stner/rng.hpp"
#include "stner/vocab.hpp"

namespace stner {

struct ModelConfig {
  std::size_t embedding_dim = 32;
  double init_scale = 0.08;
  bool tied_embeddings = false;   // output layer reuses the embedding matrix
  bool straight_through = false;  // hard one-hot forward on the cycle path

  bool operator==(const ModelConfig&) const = default;
};

// Encoder-decoder generator: a GRU encoder, a GRU decoder started from the
// last encoder state, additive attention over encoder states, and a combined
// output layer
//   o_t = tanh(W_c [h_t; c_t; e_{t-1}] + b_c),   logits_t = W_out o_t + b_out.
struct GeneratorParams {
  ad::Tensor embedding;                    // |V| x d
  ad::Tensor enc_w, enc_u, enc_b;          // 3d x d, 3d x d, 3d x 1
  ad::Tensor dec_w, dec_u, dec_b;          // 3d x d, 3d x d, 3d x 1
  ad::Tensor att_query, att_key, att_v;    // d x d, d x d, d x 1
  ad::Tensor comb_w, comb_b;               // d x 3d, d x 1
  ad::Tensor out_w, out_b;                 // |V| x d, |V| x 1

  static GeneratorParams zeros(const ModelConfig& config, std::size_t vocab_size);
  // Uniform(-init_scale, init_scale) for every entry.
  static GeneratorParams init(const ModelConfig& config, std::size_t vocab_size, std::uint64_t seed);

  std::vector<ad::Tensor*> tensors();
  std::vector<const ad::Tensor*> tensors() const;
  void zero_grad();
  bool all_finite() const;
  std::size_t vocab_size() const { return static_cast<std::size_t>(embedding.value.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(embedding.value.cols()); }
};

// sigma(w . meanpool(latents) + b)
struct DiscriminatorParams {
  ad::Tensor w;  // d x 1
  ad::Tensor b;  // 1 x 1

  static DiscriminatorParams zeros(const ModelConfig& config);
  static DiscriminatorParams init(const ModelConfig& config, std::uint64_t seed);

  std::vector<ad::Tensor*> tensors();
  std::vector<const ad::Tensor*> tensors() const;
  void zero_grad();
  bool all_finite() const;
};

// Per-position encoder states, one column per input position.
struct LatentSequence {
  ad::Matrix states;  // d x N

  std::size_t length() const { return static_cast<std::size_t>(states.cols()); }
};

// Generator ops bound to a tape. Binding with a mutable GeneratorParams on a
// recording tape routes gradients into its grad buffers; otherwise the
// parameters are read-only references.
class GeneratorGraph {
 public:
  GeneratorGraph(ad::Tape& tape, GeneratorParams& params, const ModelConfig& config);
  GeneratorGraph(ad::Tape& tape, const GeneratorParams& params, const ModelConfig& config);

  ad::Tape& tape() { return tape_; }

  ad::Var embed(TokenId id);
  // Expected embedding under a distribution over the vocabulary.
  ad::Var soft_embed(ad::Var distribution);

  struct Encoded {
    ad::Var states;  // d x N
    ad::Var last;    // d x 1
  };
  Encoded encode(std::span<const ad::Var> inputs);
  Encoded encode_ids(std::span<const TokenId> ids);

  struct Cursor {
    ad::Var states;
    ad::Var keys;
    ad::Var hidden;
  };
  Cursor start_decoder(const Encoded& encoded);
  // Consumes the embedding of the previous token and returns next-token logits.
  ad::Var decoder_step(Cursor& cursor, ad::Var previous_embedding);

 private:
  void bind(const GeneratorParams& params, GeneratorParams* trainable);

  ad::Tape& tape_;
  const ModelConfig& config_;
  ad::Var embedding_, enc_w_, enc_u_, enc_b_, dec_w_, dec_u_, dec_b_;
  ad::Var att_query_, att_key_, att_v_, comb_w_, comb_b_, out_w_, out_b_;
};

// Deterministic encoder forward pass.
LatentSequence encode(const GeneratorParams& params, const ModelConfig& config,
                      std::span<const TokenId> input);

// Next-token logits given full history (history[0] must be <BOS>).
ad::Vector decode_step(const GeneratorParams& params, const ModelConfig& config,
                       const LatentSequence& latents, std::span<const TokenId> history);

// Incremental decoder for sampling: one call per emitted token.
class DecoderSession {
 public:
  DecoderSession(const GeneratorParams& params, const ModelConfig& config,
                 const LatentSequence& latents);
  ad::Vector next_logits(TokenId previous);

 private:
  ad::Tape tape_;
  ad::Matrix states_;
  GeneratorGraph graph_;
  GeneratorGraph::Cursor cursor_;
};

// Probability floor applied inside log(pi).
inline constexpr double kProbabilityFloor = 1e-12;

// softmax((log max(pi, eps) + g) / tau) with g drawn i.i.d. Gumbel(0, 1).
std::vector<double> gumbel_softmax(std::span<const double> probabilities, double tau, Rng& rng);
// Same with caller-provided noise.
std::vector<double> gumbel_softmax(std::span<const double> probabilities, double tau,
                                   std::span<const double> noise);

struct SamplerConfig {
  std::size_t top_k = 50;
  double top_p = 0.98;
  double temperature = 1.5;
  std::uint64_t seed = 0;

  void validate() const;
};

std::vector<double> softmax(std::span<const double> logits);

// softmax(logits / temperature), keep the top_k most probable tokens, then the
// shortest descending prefix of those whose renormalized mass reaches top_p,
// and renormalize. Ties are ordered by token id. Zero-probability tokens never
// survive; the argmax always does.
std::vector<double> filter_top_k_top_p(std::span<const double> logits, const SamplerConfig& config);

// Inverse-CDF draw over a probability vector.
TokenId sample_index(std::span<const double> probabilities, Rng& rng);

struct SampleOptions {
  std::size_t max_len = 65;  // emitted tokens, <EOS> included
  bool use_mask = true;      // false is a diagnostic mode without constraints
};

// Generated ids without <BOS>; ends with <EOS> unless an unconstrained run was
// cut at max_len.
std::vector<TokenId> constrained_sample(const GeneratorParams& params, const ModelConfig& config,
                                        const LatentSequence& latents, const SamplerConfig& sampler,
                                        const ConstraintAutomaton& automaton, Rng& rng,
                                        const SampleOptions& options = {});

double discriminate(const DiscriminatorParams& params, const LatentSequence& latents);

}  // namespace stner
