#include "stner/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "stner/error.hpp"
#include "stner/rng.hpp"

namespace stner {

using ad::Matrix;
using ad::Tape;
using ad::Var;

TransferModel make_transfer_model(const ModelConfig& config, Vocabulary vocab, std::uint64_t seed) {
  TransferModel m;
  m.config = config;
  m.generator = GeneratorParams::init(config, vocab.size(), seed);
  m.discriminator = DiscriminatorParams::init(config, seed);
  m.vocab = std::move(vocab);
  return m;
}

Vocabulary build_transfer_vocab(const std::vector<ParallelPair>& pairs, const NerCorpus& source,
                                const NerCorpus& target, const PrefixConfig& prefixes) {
  TypeRegistry registry = source.registry;
  for (const auto& name : target.registry.names())
    if (!registry.contains(name)) registry.add(name);
  std::vector<std::vector<std::string>> lists;
  lists.reserve(2 * pairs.size() + source.size() + target.size());
  for (const auto& p : pairs) {
    lists.push_back(p.source_side.tokens);
    lists.push_back(p.target_side.tokens);
  }
  for (const auto& s : source.sentences) lists.push_back(s.tokens);
  for (const auto& s : target.sentences) lists.push_back(s.tokens);
  return Vocabulary::build(registry, prefixes, lists);
}

std::vector<TokenId> render_ids(const Vocabulary& vocab, const TaggedSentence& sentence,
                                std::optional<Direction> prefix) {
  std::vector<TokenId> ids;
  if (prefix) ids = vocab.prefix_ids(*prefix);
  auto body = vocab.encode(render_tokens(linearize(sentence)));
  ids.insert(ids.end(), body.begin(), body.end());
  return ids;
}

void LossWeights::validate() const {
  if (pg < 0 || cr < 0 || adv < 0) throw usage_error("loss weights must be non-negative");
  if (pg == 0 && cr == 0 && adv == 0) throw usage_error("at least one loss weight must be positive");
}

std::vector<PgExample> make_pg_examples(const Vocabulary& vocab, const ParallelPair& pair,
                                        bool strict) {
  std::vector<PgExample> out;
  const TaggedSentence* sides[2] = {&pair.source_side, &pair.target_side};
  for (int k = 0; k < 2; ++k) {
    const Direction d = k == 0 ? Direction::kSourceToTarget : Direction::kTargetToSource;
    PgExample ex;
    ex.input = render_ids(vocab, *sides[k], d);
    ex.target = render_ids(vocab, *sides[1 - k]);
    if (strict && std::find(ex.target.begin(), ex.target.end(), Vocabulary::kUnk) != ex.target.end())
      throw usage_error("paraphrase target contains an out-of-vocabulary token");
    ex.target.push_back(Vocabulary::kEos);
    out.push_back(std::move(ex));
  }
  return out;
}

CycleExample make_cycle_example(const Vocabulary& vocab, const TaggedSentence& sentence,
                                Direction direction) {
  CycleExample ex;
  ex.input = render_ids(vocab, sentence, direction);
  ex.reverse_prefix = vocab.prefix_ids(reverse(direction));
  ex.original = render_ids(vocab, sentence);
  return ex;
}

namespace {

Var teacher_forced_nll(GeneratorGraph& graph, const GeneratorGraph::Encoded& encoded,
                       std::span<const TokenId> target) {
  Tape& t = graph.tape();
  auto cursor = graph.start_decoder(encoded);
  Var prev = graph.embed(Vocabulary::kBos);
  std::vector<Var> terms;
  terms.reserve(target.size());
  for (TokenId y : target) {
    Var logits = graph.decoder_step(cursor, prev);
    terms.push_back(t.nll(logits, y));
    prev = graph.embed(y);
  }
  return t.scale(t.sum(terms), 1.0 / static_cast<double>(target.size()));
}

// Expected embeddings of the relaxed paraphrase.
std::vector<Var> soft_rollout(GeneratorGraph& graph, std::span<const TokenId> input, std::size_t steps,
                              double tau, std::span<const ad::Vector> noise, bool straight_through) {
  Tape& t = graph.tape();
  auto cursor = graph.start_decoder(graph.encode_ids(input));
  Var prev = graph.embed(Vocabulary::kBos);
  std::vector<Var> out;
  out.reserve(steps);
  for (std::size_t i = 0; i < steps; ++i) {
    Var logits = graph.decoder_step(cursor, prev);
    Var y = t.softmax(t.scale(t.add(logits, t.reference(noise[i])), 1.0 / tau));
    if (straight_through) y = t.straight_through_one_hot(y);
    prev = graph.soft_embed(y);
    out.push_back(prev);
  }
  return out;
}

Var discriminator_score(Tape& t, Var w, Var b, Var states) {
  return t.add(t.matmul_tn(w, t.mean_columns(states)), b);
}

void require_tau(double tau) {
  if (!(tau > 0)) throw usage_error("temperature must be positive");
}

}  // namespace

double loss_pg(GeneratorParams& params, const ModelConfig& config, const PgExample& example,
               double weight) {
  if (example.input.empty() || example.target.empty()) throw usage_error("loss_pg: empty example");
  Tape tape;
  GeneratorGraph graph(tape, params, config);
  Var loss = teacher_forced_nll(graph, graph.encode_ids(example.input), example.target);
  if (weight != 0.0) tape.backward(loss, weight);
  return tape.scalar(loss);
}

std::vector<ad::Vector> draw_cycle_noise(std::size_t steps, std::size_t vocab_size, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<ad::Vector> noise(steps, ad::Vector(static_cast<Eigen::Index>(vocab_size)));
  for (auto& g : noise)
    for (Eigen::Index i = 0; i < g.size(); ++i) g(i) = rng.gumbel();
  return noise;
}

double loss_cr(GeneratorParams& params, const ModelConfig& config,
               std::span<const CycleExample> source, std::span<const CycleExample> target,
               double tau, std::uint64_t noise_seed, double weight) {
  require_tau(tau);
  double total = 0.0;
  const std::span<const CycleExample> sides[2] = {source, target};
  for (int s = 0; s < 2; ++s) {
    const auto& side = sides[s];
    if (side.empty()) continue;
    double side_sum = 0.0;
    const double w = weight / static_cast<double>(side.size());
    for (std::size_t i = 0; i < side.size(); ++i) {
      const CycleExample& ex = side[i];
      if (ex.original.empty()) throw usage_error("loss_cr: empty sentence");
      auto noise = draw_cycle_noise(ex.original.size(), params.vocab_size(),
                                    derive_seed(noise_seed, s == 0 ? "cr_source" : "cr_target", {i}));
      Tape tape;
      GeneratorGraph graph(tape, params, config);
      auto soft = soft_rollout(graph, ex.input, ex.original.size(), tau, noise, config.straight_through);
      std::vector<Var> inputs;
      inputs.reserve(ex.reverse_prefix.size() + soft.size());
      for (TokenId id : ex.reverse_prefix) inputs.push_back(graph.embed(id));
      inputs.insert(inputs.end(), soft.begin(), soft.end());
      std::vector<TokenId> goal = ex.original;
      goal.push_back(Vocabulary::kEos);
      Var loss = teacher_forced_nll(graph, graph.encode(inputs), goal);
      if (w != 0.0) tape.backward(loss, w);
      side_sum += tape.scalar(loss);
    }
    total += side_sum / static_cast<double>(side.size());
  }
  return total;
}

double loss_adv_discriminator(DiscriminatorParams& disc, std::span<const LatentSequence> source,
                              std::span<const LatentSequence> target, double weight) {
  double total = 0.0;
  const std::span<const LatentSequence> sides[2] = {source, target};
  for (int s = 0; s < 2; ++s) {
    if (sides[s].empty()) continue;
    Tape tape;
    Var w = tape.parameter(disc.w);
    Var b = tape.parameter(disc.b);
    std::vector<Var> terms;
    for (const auto& z : sides[s]) {
      Var score = discriminator_score(tape, w, b, tape.reference(z.states));
      // label 1 for source-side paraphrases, 0 for target-side ones
      terms.push_back(tape.scale(tape.log_sigmoid(s == 0 ? score : tape.scale(score, -1.0)), -1.0));
    }
    Var loss = tape.scale(tape.sum(terms), 1.0 / static_cast<double>(terms.size()));
    if (weight != 0.0) tape.backward(loss, weight);
    total += tape.scalar(loss);
  }
  return total;
}

AdversarialResult loss_adv_generator(GeneratorParams& params, const DiscriminatorParams& disc,
                                     const ModelConfig& config,
                                     std::span<const CycleExample> source,
                                     std::span<const CycleExample> target, double tau,
                                     std::uint64_t noise_seed, double weight) {
  require_tau(tau);
  AdversarialResult result;
  const std::span<const CycleExample> sides[2] = {source, target};
  for (int s = 0; s < 2; ++s) {
    const auto& side = sides[s];
    if (side.empty()) continue;
    auto& latents = s == 0 ? result.source_latents : result.target_latents;
    const double w = weight / static_cast<double>(side.size());
    double side_sum = 0.0;
    for (std::size_t i = 0; i < side.size(); ++i) {
      const CycleExample& ex = side[i];
      auto noise = draw_cycle_noise(ex.original.size(), params.vocab_size(),
                                    derive_seed(noise_seed, s == 0 ? "adv_source" : "adv_target", {i}));
      Tape tape;
      GeneratorGraph graph(tape, params, config);
      auto soft = soft_rollout(graph, ex.input, ex.original.size(), tau, noise, config.straight_through);
      auto encoded = graph.encode(soft);
      Var score = discriminator_score(tape, tape.reference(disc.w.value), tape.reference(disc.b.value),
                                      encoded.states);
      // flipped labels: source paraphrases should look like target ones
      Var loss = tape.scale(tape.log_sigmoid(s == 0 ? tape.scale(score, -1.0) : score), -1.0);
      if (w != 0.0) tape.backward(loss, w);
      side_sum += tape.scalar(loss);
      latents.push_back({tape.value(encoded.states)});
    }
    result.loss += side_sum / static_cast<double>(side.size());
  }
  return result;
}

double total_loss(const LossTerms& terms, const LossWeights& weights) {
  return weights.pg * terms.pg + weights.cr * terms.cr + weights.adv * terms.adv;
}

// ---------------------------------------------------------------------------

void OptimizerConfig::validate() const {
  if (!(learning_rate > 0)) throw usage_error("learning rate must be positive");
  if (weight_decay < 0) throw usage_error("weight decay must be non-negative");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw usage_error("betas must lie in [0, 1)");
  if (!(epsilon > 0)) throw usage_error("epsilon must be positive");
  if (clip_norm < 0) throw usage_error("clip_norm must be non-negative");
}

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::kSgd ? "sgd" : "adamw"; }

OptimizerKind parse_optimizer_kind(const std::string& name) {
  if (name == "sgd") return OptimizerKind::kSgd;
  if (name == "adamw" || name == "adam") return OptimizerKind::kAdamW;
  throw usage_error("unknown optimizer '" + name + "' (expected sgd or adamw)");
}

Optimizer::Optimizer(OptimizerConfig config, std::vector<ad::Tensor*> tensors)
    : config_(config), tensors_(std::move(tensors)) {
  config_.validate();
  if (config_.kind == OptimizerKind::kAdamW) {
    for (auto* t : tensors_) {
      m_.push_back(Matrix::Zero(t->value.rows(), t->value.cols()));
      v_.push_back(Matrix::Zero(t->value.rows(), t->value.cols()));
    }
  }
}

void Optimizer::step() {
  ++steps_;
  double scale = 1.0;
  if (config_.clip_norm > 0) {
    double sq = 0.0;
    for (auto* t : tensors_) sq += t->grad.squaredNorm();
    const double norm = std::sqrt(sq);
    if (norm > config_.clip_norm) scale = config_.clip_norm / norm;
  }
  const double lr = config_.learning_rate;
  const double decay = 1.0 - lr * config_.weight_decay;
  if (config_.kind == OptimizerKind::kSgd) {
    for (auto* t : tensors_) {
      t->value *= decay;
      t->value.noalias() -= (lr * scale) * t->grad;
      t->zero_grad();
    }
    return;
  }
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    auto* t = tensors_[i];
    m_[i] = b1 * m_[i] + ((1.0 - b1) * scale) * t->grad;
    v_[i] = b2 * v_[i] + ((1.0 - b2) * scale * scale) * t->grad.cwiseAbs2();
    t->value *= decay;
    t->value.array() -= lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + config_.epsilon);
    t->zero_grad();
  }
}

std::size_t TrainConfig::resolved_stage2_start() const {
  return stage2_start.value_or((epochs + 1) / 2);
}

void TrainConfig::validate() const {
  optimizer.validate();
  if (batch_size == 0) throw usage_error("batch size must be positive");
  if (!(tau > 0)) throw usage_error("tau must be positive");
  if (warm_start_drop < 0 || warm_start_drop >= 1) throw usage_error("warm_start_drop must lie in [0, 1)");
}

// ---------------------------------------------------------------------------

double evaluate_pg(const TransferModel& model, const std::vector<ParallelPair>& pairs) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& pair : pairs) {
    for (const auto& ex : make_pg_examples(model.vocab, pair, false)) {
      Tape tape(false);
      GeneratorGraph graph(tape, model.generator, model.config);
      sum += tape.scalar(teacher_forced_nll(graph, graph.encode_ids(ex.input), ex.target));
      ++n;
    }
  }
  return n ? sum / static_cast<double>(n) : 0.0;
}

namespace {

void check_finite(double value, const char* what, std::size_t epoch, std::size_t step) {
  if (!std::isfinite(value))
    throw Error(ErrorCategory::kDivergence, std::string("training diverged: ") + what + " is " +
                                                std::to_string(value) + " at epoch " +
                                                std::to_string(epoch) + ", step " + std::to_string(step));
}

void warm_start(TransferModel& model, const NerCorpus& source, const NerCorpus& target,
                const TrainConfig& config, Optimizer& opt) {
  std::vector<std::vector<TokenId>> sentences;
  for (const auto* corpus : {&source, &target})
    for (const auto& s : corpus->sentences) sentences.push_back(render_ids(model.vocab, s));
  if (sentences.empty()) return;
  for (std::size_t e = 0; e < config.warm_start_epochs; ++e) {
    Rng rng(derive_seed(config.seed, "warm_start", {e}));
    std::vector<std::size_t> order(sentences.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const double w = 1.0 / static_cast<double>(end - start);
      for (std::size_t k = start; k < end; ++k) {
        const auto& ids = sentences[order[k]];
        PgExample ex;
        for (TokenId id : ids)
          if (!rng.bernoulli(config.warm_start_drop)) ex.input.push_back(id);
        if (ex.input.empty()) ex.input.push_back(ids.front());
        ex.target = ids;
        ex.target.push_back(Vocabulary::kEos);
        check_finite(loss_pg(model.generator, model.config, ex, w), "warm-start loss", e, start);
      }
      opt.step();
    }
  }
}

}  // namespace

TrainResult run_training(const std::vector<ParallelPair>& pairs, const NerCorpus& source,
                         const NerCorpus& target, const ModelConfig& model_config,
                         const TrainConfig& config, const LossWeights& weights,
                         const PrefixConfig& prefixes) {
  config.validate();
  weights.validate();
  const auto started = std::chrono::steady_clock::now();

  TrainResult result;
  TransferModel& model = result.model;
  model = make_transfer_model(model_config, build_transfer_vocab(pairs, source, target, prefixes),
                              config.seed);
  TrainReport& report = result.report;
  report.stage2_start = config.resolved_stage2_start();

  std::vector<std::vector<PgExample>> pg;
  std::vector<CycleExample> adv_source, adv_target, cr_source, cr_target;
  for (const auto& p : pairs) {
    pg.push_back(make_pg_examples(model.vocab, p));
    adv_source.push_back(make_cycle_example(model.vocab, p.source_side, Direction::kSourceToTarget));
    adv_target.push_back(make_cycle_example(model.vocab, p.target_side, Direction::kTargetToSource));
  }
  for (const auto& s : source.sentences)
    cr_source.push_back(make_cycle_example(model.vocab, s, Direction::kSourceToTarget));
  for (const auto& s : target.sentences)
    cr_target.push_back(make_cycle_example(model.vocab, s, Direction::kTargetToSource));

  Optimizer gen_opt(config.optimizer, model.generator.tensors());
  Optimizer disc_opt(config.optimizer, model.discriminator.tensors());
  model.generator.zero_grad();
  model.discriminator.zero_grad();

  warm_start(model, source, target, config, gen_opt);
  report.initial_pg = evaluate_pg(model, pairs);

  const std::size_t half = std::max<std::size_t>(1, config.batch_size / 2);
  std::size_t cr_src_cursor = 0, cr_tgt_cursor = 0;
  std::vector<std::size_t> cr_src_order, cr_tgt_order;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const bool stage2 = epoch >= report.stage2_start;
    const bool use_cr = stage2 && weights.cr > 0 && (!cr_source.empty() || !cr_target.empty());
    const bool use_adv = weights.adv > 0;
    const bool train_disc = use_adv && (!stage2 || config.train_discriminator_in_stage2);

    Rng order_rng(derive_seed(config.seed, "train_order", {epoch}));
    std::vector<std::size_t> order(pairs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    order_rng.shuffle(order);

    auto next_cr = [&](const std::vector<CycleExample>& pool, std::vector<std::size_t>& perm,
                       std::size_t& cursor, std::string_view stage, std::vector<CycleExample>& out) {
      for (std::size_t k = 0; k < half && !pool.empty(); ++k) {
        if (cursor % pool.size() == 0) {
          perm.resize(pool.size());
          for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
          Rng rng(derive_seed(config.seed, stage, {cursor / pool.size()}));
          rng.shuffle(perm);
        }
        out.push_back(pool[perm[cursor % pool.size()]]);
        ++cursor;
      }
    };

    EpochRecord rec;
    rec.epoch = epoch;
    rec.stage = stage2 ? 2 : 1;
    std::size_t steps = 0, disc_correct = 0, disc_total = 0;

    for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++steps) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const std::size_t n = end - start;

      double pg_sum = 0.0;
      std::size_t pg_count = 0;
      for (std::size_t k = start; k < end; ++k) pg_count += pg[order[k]].size();
      for (std::size_t k = start; k < end; ++k)
        for (const auto& ex : pg[order[k]])
          pg_sum += loss_pg(model.generator, model.config, ex, weights.pg / static_cast<double>(pg_count));
      const double pg_loss = pg_sum / static_cast<double>(pg_count);

      AdversarialResult adv;
      if (use_adv) {
        std::vector<CycleExample> src, tgt;
        for (std::size_t k = start; k < end; ++k) {
          src.push_back(adv_source[order[k]]);
          tgt.push_back(adv_target[order[k]]);
        }
        adv = loss_adv_generator(model.generator, model.discriminator, model.config, src, tgt,
                                 config.tau, derive_seed(config.seed, "adv_noise", {epoch, steps}),
                                 weights.adv);
      }

      double cr_loss = 0.0;
      if (use_cr) {
        std::vector<CycleExample> src, tgt;
        next_cr(cr_source, cr_src_order, cr_src_cursor, "cr_source_order", src);
        next_cr(cr_target, cr_tgt_order, cr_tgt_cursor, "cr_target_order", tgt);
        cr_loss = loss_cr(model.generator, model.config, src, tgt, config.tau,
                          derive_seed(config.seed, "cr_noise", {epoch, steps}), weights.cr);
      }

      const double total = weights.pg * pg_loss + weights.cr * cr_loss + weights.adv * adv.loss;
      check_finite(total, "total loss", epoch, steps);
      gen_opt.step();
      if (!model.generator.all_finite())
        throw Error(ErrorCategory::kDivergence,
                    "training diverged: non-finite generator parameters at epoch " +
                        std::to_string(epoch));

      double disc_loss = 0.0;
      if (use_adv) {
        for (const auto& z : adv.source_latents) disc_correct += discriminate(model.discriminator, z) > 0.5;
        for (const auto& z : adv.target_latents) disc_correct += discriminate(model.discriminator, z) < 0.5;
        disc_total += 2 * n;
        disc_loss = loss_adv_discriminator(model.discriminator, adv.source_latents, adv.target_latents,
                                           train_disc ? weights.adv : 0.0);
        check_finite(disc_loss, "discriminator loss", epoch, steps);
        if (train_disc) disc_opt.step();
      }

      rec.pg += pg_loss;
      rec.cr += cr_loss;
      rec.gen_adv += adv.loss;
      rec.adv += disc_loss;
      rec.total += total;
    }
    if (steps > 0) {
      const double s = static_cast<double>(steps);
      rec.pg /= s;
      rec.cr /= s;
      rec.gen_adv /= s;
      rec.adv /= s;
      rec.total /= s;
    }
    rec.disc_accuracy = disc_total ? static_cast<double>(disc_correct) / static_cast<double>(disc_total) : 0.0;
    report.epochs.push_back(rec);
  }

  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

void write_report_jsonl(const TrainReport& report, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot write " + path);
  for (const auto& r : report.epochs) {
    nlohmann::ordered_json j;
    j["epoch"] = r.epoch;
    j["stage"] = r.stage;
    j["pg"] = r.pg;
    j["cr"] = r.cr;
    j["adv"] = r.adv;
    j["gen_adv"] = r.gen_adv;
    j["total"] = r.total;
    j["disc_accuracy"] = r.disc_accuracy;
    j["stage2_start"] = report.stage2_start;
    j["initial_pg"] = report.initial_pg;
    out << j.dump() << '\n';
  }
  if (!out) throw io_error("failed writing " + path);
}

}  // namespace stner
