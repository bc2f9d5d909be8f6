#include "stner/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "stner/error.hpp"

namespace stner {

using ad::Matrix;
using ad::Tensor;
using ad::Var;

namespace {

void fill_uniform(Tensor& t, double scale, Rng& rng) {
  for (Eigen::Index j = 0; j < t.value.cols(); ++j)
    for (Eigen::Index i = 0; i < t.value.rows(); ++i) t.value(i, j) = (2.0 * rng.uniform() - 1.0) * scale;
}

}  // namespace

GeneratorParams GeneratorParams::zeros(const ModelConfig& config, std::size_t vocab_size) {
  if (config.embedding_dim == 0) throw usage_error("embedding_dim must be positive");
  if (vocab_size < 5) throw usage_error("vocabulary too small");
  const auto d = static_cast<Eigen::Index>(config.embedding_dim);
  const auto v = static_cast<Eigen::Index>(vocab_size);
  GeneratorParams p;
  p.embedding = Tensor("embedding", v, d);
  p.enc_w = Tensor("encoder.w", 3 * d, d);
  p.enc_u = Tensor("encoder.u", 3 * d, d);
  p.enc_b = Tensor("encoder.b", 3 * d, 1);
  p.dec_w = Tensor("decoder.w", 3 * d, d);
  p.dec_u = Tensor("decoder.u", 3 * d, d);
  p.dec_b = Tensor("decoder.b", 3 * d, 1);
  p.att_query = Tensor("attention.query", d, d);
  p.att_key = Tensor("attention.key", d, d);
  p.att_v = Tensor("attention.v", d, 1);
  p.comb_w = Tensor("output.combine_w", d, 3 * d);
  p.comb_b = Tensor("output.combine_b", d, 1);
  p.out_w = Tensor("output.w", v, d);
  p.out_b = Tensor("output.b", v, 1);
  return p;
}

GeneratorParams GeneratorParams::init(const ModelConfig& config, std::size_t vocab_size,
                                      std::uint64_t seed) {
  GeneratorParams p = zeros(config, vocab_size);
  Rng rng(derive_seed(seed, "generator_init"));
  for (Tensor* t : p.tensors()) fill_uniform(*t, config.init_scale, rng);
  return p;
}

std::vector<Tensor*> GeneratorParams::tensors() {
  return {&embedding, &enc_w, &enc_u, &enc_b, &dec_w, &dec_u, &dec_b, &att_query,
          &att_key,   &att_v, &comb_w, &comb_b, &out_w, &out_b};
}

std::vector<const Tensor*> GeneratorParams::tensors() const {
  return {&embedding, &enc_w, &enc_u, &enc_b, &dec_w, &dec_u, &dec_b, &att_query,
          &att_key,   &att_v, &comb_w, &comb_b, &out_w, &out_b};
}

void GeneratorParams::zero_grad() {
  for (Tensor* t : tensors()) t->zero_grad();
}

bool GeneratorParams::all_finite() const {
  const auto all = tensors();
  return std::all_of(all.begin(), all.end(), [](const Tensor* t) { return t->all_finite(); });
}

DiscriminatorParams DiscriminatorParams::zeros(const ModelConfig& config) {
  DiscriminatorParams p;
  p.w = Tensor("discriminator.w", static_cast<Eigen::Index>(config.embedding_dim), 1);
  p.b = Tensor("discriminator.b", 1, 1);
  return p;
}

DiscriminatorParams DiscriminatorParams::init(const ModelConfig& config, std::uint64_t seed) {
  DiscriminatorParams p = zeros(config);
  Rng rng(derive_seed(seed, "discriminator_init"));
  for (Tensor* t : p.tensors()) fill_uniform(*t, config.init_scale, rng);
  return p;
}

std::vector<Tensor*> DiscriminatorParams::tensors() { return {&w, &b}; }
std::vector<const Tensor*> DiscriminatorParams::tensors() const { return {&w, &b}; }

void DiscriminatorParams::zero_grad() {
  w.zero_grad();
  b.zero_grad();
}

bool DiscriminatorParams::all_finite() const { return w.all_finite() && b.all_finite(); }

// ---------------------------------------------------------------------------

GeneratorGraph::GeneratorGraph(ad::Tape& tape, GeneratorParams& params, const ModelConfig& config)
    : tape_(tape), config_(config) {
  bind(params, &params);
}

GeneratorGraph::GeneratorGraph(ad::Tape& tape, const GeneratorParams& params,
                               const ModelConfig& config)
    : tape_(tape), config_(config) {
  bind(params, nullptr);
}

void GeneratorGraph::bind(const GeneratorParams& params, GeneratorParams* trainable) {
  auto leaf = [&](const Tensor& t, Tensor* target) {
    return (target && tape_.recording()) ? tape_.parameter(*target) : tape_.reference(t.value);
  };
  GeneratorParams* p = trainable;
  embedding_ = leaf(params.embedding, p ? &p->embedding : nullptr);
  enc_w_ = leaf(params.enc_w, p ? &p->enc_w : nullptr);
  enc_u_ = leaf(params.enc_u, p ? &p->enc_u : nullptr);
  enc_b_ = leaf(params.enc_b, p ? &p->enc_b : nullptr);
  dec_w_ = leaf(params.dec_w, p ? &p->dec_w : nullptr);
  dec_u_ = leaf(params.dec_u, p ? &p->dec_u : nullptr);
  dec_b_ = leaf(params.dec_b, p ? &p->dec_b : nullptr);
  att_query_ = leaf(params.att_query, p ? &p->att_query : nullptr);
  att_key_ = leaf(params.att_key, p ? &p->att_key : nullptr);
  att_v_ = leaf(params.att_v, p ? &p->att_v : nullptr);
  comb_w_ = leaf(params.comb_w, p ? &p->comb_w : nullptr);
  comb_b_ = leaf(params.comb_b, p ? &p->comb_b : nullptr);
  out_w_ = config_.tied_embeddings ? embedding_ : leaf(params.out_w, p ? &p->out_w : nullptr);
  out_b_ = leaf(params.out_b, p ? &p->out_b : nullptr);
}

Var GeneratorGraph::embed(TokenId id) { return tape_.lookup(embedding_, id); }

Var GeneratorGraph::soft_embed(Var distribution) { return tape_.matmul_tn(embedding_, distribution); }

GeneratorGraph::Encoded GeneratorGraph::encode(std::span<const Var> inputs) {
  if (inputs.empty()) throw usage_error("encode: empty input");
  const auto d = static_cast<Eigen::Index>(config_.embedding_dim);
  Var h = tape_.constant(Matrix::Zero(d, 1));
  std::vector<Var> states;
  states.reserve(inputs.size());
  for (Var x : inputs) {
    h = tape_.gru(x, h, enc_w_, enc_u_, enc_b_);
    states.push_back(h);
  }
  return {tape_.hstack(states), h};
}

GeneratorGraph::Encoded GeneratorGraph::encode_ids(std::span<const TokenId> ids) {
  std::vector<Var> inputs;
  inputs.reserve(ids.size());
  for (TokenId id : ids) inputs.push_back(embed(id));
  return encode(inputs);
}

GeneratorGraph::Cursor GeneratorGraph::start_decoder(const Encoded& encoded) {
  return {encoded.states, tape_.matmul(att_key_, encoded.states), encoded.last};
}

Var GeneratorGraph::decoder_step(Cursor& cursor, Var previous_embedding) {
  auto& t = tape_;
  cursor.hidden = t.gru(previous_embedding, cursor.hidden, dec_w_, dec_u_, dec_b_);
  // Additive attention: score_j = v . tanh(W_q h + W_k z_j)
  Var query = t.matmul(att_query_, cursor.hidden);
  Var energy = t.tanh(t.add_column(cursor.keys, query));
  Var scores = t.matmul_tn(energy, att_v_);
  Var weights = t.softmax(scores);
  Var context = t.matmul(cursor.states, weights);
  const Var parts[] = {cursor.hidden, context, previous_embedding};
  Var combined = t.tanh(t.add(t.matmul(comb_w_, t.concat_rows(parts)), comb_b_));
  return t.add(t.matmul(out_w_, combined), out_b_);
}

// ---------------------------------------------------------------------------

LatentSequence encode(const GeneratorParams& params, const ModelConfig& config,
                      std::span<const TokenId> input) {
  for (TokenId id : input)
    if (id < 0 || static_cast<std::size_t>(id) >= params.vocab_size())
      throw usage_error("encode: token id " + std::to_string(id) + " out of range");
  ad::Tape tape(false);
  GeneratorGraph graph(tape, params, config);
  auto enc = graph.encode_ids(input);
  return {tape.value(enc.states)};
}

ad::Vector decode_step(const GeneratorParams& params, const ModelConfig& config,
                       const LatentSequence& latents, std::span<const TokenId> history) {
  if (history.empty() || history.front() != Vocabulary::kBos)
    throw usage_error("decode_step: history must start with <BOS>");
  ad::Tape tape(false);
  GeneratorGraph graph(tape, params, config);
  GeneratorGraph::Encoded enc{tape.reference(latents.states),
                              tape.constant(latents.states.col(latents.states.cols() - 1))};
  auto cursor = graph.start_decoder(enc);
  Var logits;
  for (TokenId id : history) logits = graph.decoder_step(cursor, graph.embed(id));
  return tape.value(logits).col(0);
}

DecoderSession::DecoderSession(const GeneratorParams& params, const ModelConfig& config,
                               const LatentSequence& latents)
    : tape_(false), states_(latents.states), graph_(tape_, params, config) {
  GeneratorGraph::Encoded enc{tape_.reference(states_),
                              tape_.constant(states_.col(states_.cols() - 1))};
  cursor_ = graph_.start_decoder(enc);
}

ad::Vector DecoderSession::next_logits(TokenId previous) {
  Var logits = graph_.decoder_step(cursor_, graph_.embed(previous));
  return tape_.value(logits).col(0);
}

// ---------------------------------------------------------------------------

std::vector<double> gumbel_softmax(std::span<const double> probabilities, double tau, Rng& rng) {
  std::vector<double> noise(probabilities.size());
  for (double& g : noise) g = rng.gumbel();
  return gumbel_softmax(probabilities, tau, noise);
}

std::vector<double> gumbel_softmax(std::span<const double> probabilities, double tau,
                                   std::span<const double> noise) {
  if (!(tau > 0)) throw usage_error("gumbel_softmax: temperature must be positive");
  if (noise.size() != probabilities.size()) throw usage_error("gumbel_softmax: noise size mismatch");
  std::vector<double> scores(probabilities.size());
  for (std::size_t i = 0; i < scores.size(); ++i)
    scores[i] = (std::log(std::max(probabilities[i], kProbabilityFloor)) + noise[i]) / tau;
  return softmax(scores);
}

void SamplerConfig::validate() const {
  if (top_k == 0) throw usage_error("top_k must be positive");
  if (!(top_p > 0.0 && top_p <= 1.0)) throw usage_error("top_p must lie in (0, 1]");
  if (!(temperature > 0.0)) throw usage_error("temperature must be positive");
}

std::vector<double> softmax(std::span<const double> logits) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : logits) m = std::max(m, x);
  std::vector<double> out(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::isinf(logits[i]) && logits[i] < 0 ? 0.0 : std::exp(logits[i] - m);
    total += out[i];
  }
  for (double& p : out) p /= total;
  return out;
}

std::vector<double> filter_top_k_top_p(std::span<const double> logits, const SamplerConfig& config) {
  config.validate();
  std::vector<double> scaled(logits.begin(), logits.end());
  for (double& x : scaled) x /= config.temperature;
  std::vector<double> probs = softmax(scaled);

  std::vector<std::size_t> order(probs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });

  const std::size_t k = std::min(config.top_k, order.size());
  double top_mass = 0.0;
  for (std::size_t i = 0; i < k; ++i) top_mass += probs[order[i]];

  std::vector<double> out(probs.size(), 0.0);
  double cumulative = 0.0;
  double kept = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t id = order[i];
    if (probs[id] <= 0.0) break;
    out[id] = probs[id];
    kept += probs[id];
    cumulative += probs[id] / top_mass;
    if (cumulative >= config.top_p) break;
  }
  for (double& p : out) p /= kept;
  return out;
}

TokenId sample_index(std::span<const double> probabilities, Rng& rng) {
  const double u = rng.uniform();
  double cumulative = 0.0;
  TokenId last_positive = -1;
  for (std::size_t i = 0; i < probabilities.size(); ++i) {
    if (probabilities[i] <= 0.0) continue;
    last_positive = static_cast<TokenId>(i);
    cumulative += probabilities[i];
    if (u < cumulative) return last_positive;
  }
  if (last_positive < 0) throw usage_error("sample_index: empty support");
  return last_positive;
}

std::vector<TokenId> constrained_sample(const GeneratorParams& params, const ModelConfig& config,
                                        const LatentSequence& latents, const SamplerConfig& sampler,
                                        const ConstraintAutomaton& automaton, Rng& rng,
                                        const SampleOptions& options) {
  if (automaton.vocab_size() != params.vocab_size())
    throw usage_error("constrained_sample: automaton and generator vocabularies differ");
  if (options.max_len < 2) throw usage_error("constrained_sample: max_len must be at least 2");
  DecoderSession session(params, config, latents);
  DecoderState state = automaton.initial_state();
  std::vector<TokenId> out;
  TokenId previous = Vocabulary::kBos;
  std::vector<double> logits(params.vocab_size());
  while (out.size() < options.max_len) {
    ad::Vector raw = session.next_logits(previous);
    for (std::size_t i = 0; i < logits.size(); ++i) logits[i] = raw(static_cast<Eigen::Index>(i));
    if (options.use_mask) {
      TokenMask mask = automaton.allowed_mask(state, options.max_len);
      for (std::size_t i = 0; i < logits.size(); ++i)
        if (!mask.allowed[i]) logits[i] = -std::numeric_limits<double>::infinity();
    }
    std::vector<double> probs = filter_top_k_top_p(logits, sampler);
    TokenId token = sample_index(probs, rng);
    out.push_back(token);
    if (options.use_mask) state = automaton.step(state, token);
    if (token == Vocabulary::kEos) break;
    previous = token;
  }
  return out;
}

double discriminate(const DiscriminatorParams& params, const LatentSequence& latents) {
  const double s = params.w.value.col(0).dot(latents.states.rowwise().mean()) + params.b.value(0, 0);
  return s >= 0 ? 1.0 / (1.0 + std::exp(-s)) : std::exp(s) / (1.0 + std::exp(s));
}

}  // namespace stner
