#include "stner/tagger.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "stner/checkpoint.hpp"
#include "stner/error.hpp"
#include "stner/rng.hpp"

namespace stner {

using ad::Matrix;
using ad::Tape;
using ad::Var;

TagSet::TagSet(const TypeRegistry& registry) {
  tags_.push_back(BioTag::outside());
  for (const auto& t : registry.names()) {
    tags_.push_back(BioTag::begin(t));
    tags_.push_back(BioTag::inside(t));
  }
  for (std::size_t i = 0; i < tags_.size(); ++i) index_.emplace(tags_[i].str(), static_cast<int>(i));
}

int TagSet::index(const BioTag& tag) const {
  auto it = index_.find(tag.str());
  if (it == index_.end()) throw usage_error("tag " + tag.str() + " is not in the tag set");
  return it->second;
}

void TaggerConfig::validate() const {
  optimizer.validate();
  if (embedding_dim == 0 || hidden_dim == 0) throw usage_error("tagger dimensions must be positive");
  if (window < 0) throw usage_error("tagger window must be non-negative");
  if (batch_size == 0) throw usage_error("tagger batch size must be positive");
  if (min_count == 0) throw usage_error("min_count must be at least 1");
}

std::vector<ad::Tensor*> TaggerParams::tensors() { return {&embedding, &hidden_w, &hidden_b, &out_w, &out_b}; }

std::vector<const ad::Tensor*> TaggerParams::tensors() const {
  return {&embedding, &hidden_w, &hidden_b, &out_w, &out_b};
}

void TaggerParams::zero_grad() {
  for (auto* t : tensors()) t->zero_grad();
}

bool TaggerParams::all_finite() const {
  for (const auto* t : tensors())
    if (!t->all_finite()) return false;
  return true;
}

TaggerModel::TaggerModel(TaggerConfig config, TypeRegistry registry, std::vector<std::string> vocab)
    : config_(config), registry_(std::move(registry)), vocab_(std::move(vocab)) {
  config_.validate();
  if (vocab_.size() < 2 || vocab_[kPad] != "<PAD>" || vocab_[kUnk] != "<UNK>")
    throw usage_error("tagger vocabulary must start with <PAD>, <UNK>");
  for (std::size_t i = 0; i < vocab_.size(); ++i)
    if (!index_.emplace(vocab_[i], static_cast<int>(i)).second)
      throw usage_error("duplicate tagger vocabulary entry '" + vocab_[i] + "'");
  tags_ = TagSet(registry_);
  const auto v = static_cast<Eigen::Index>(vocab_.size());
  const auto d = static_cast<Eigen::Index>(config_.embedding_dim);
  const auto h = static_cast<Eigen::Index>(config_.hidden_dim);
  const auto w = static_cast<Eigen::Index>(2 * config_.window + 1);
  const auto t = static_cast<Eigen::Index>(tags_.size());
  params_.embedding = ad::Tensor("tagger.embedding", v, d);
  params_.hidden_w = ad::Tensor("tagger.hidden_w", h, w * d);
  params_.hidden_b = ad::Tensor("tagger.hidden_b", h, 1);
  params_.out_w = ad::Tensor("tagger.out_w", t, h);
  params_.out_b = ad::Tensor("tagger.out_b", t, 1);
}

TaggerModel TaggerModel::random(TaggerConfig config, TypeRegistry registry, std::vector<std::string> vocab) {
  TaggerModel m(config, std::move(registry), std::move(vocab));
  Rng rng(derive_seed(config.seed, "tagger_init"));
  for (auto* t : m.params_.tensors())
    for (Eigen::Index j = 0; j < t->value.cols(); ++j)
      for (Eigen::Index i = 0; i < t->value.rows(); ++i)
        t->value(i, j) = (2.0 * rng.uniform() - 1.0) * config.init_scale;
  return m;
}

int TaggerModel::token_id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

std::vector<int> TaggerModel::encode(const std::vector<std::string>& tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(token_id(t));
  return ids;
}

std::vector<std::string> build_tagger_vocab(std::span<const NerCorpus* const> corpora,
                                            std::size_t min_count) {
  std::vector<std::string> order;
  std::unordered_map<std::string, std::size_t> counts;
  for (const NerCorpus* c : corpora)
    for (const auto& s : c->sentences)
      for (const auto& t : s.tokens)
        if (counts[t]++ == 0) order.push_back(t);
  std::vector<std::string> vocab = {"<PAD>", "<UNK>"};
  for (const auto& t : order)
    if (counts[t] >= min_count && t != "<PAD>" && t != "<UNK>") vocab.push_back(t);
  return vocab;
}

namespace {

Var tagger_logits(Tape& tape, const TaggerModel& model, Var emb, Var hw, Var hb, Var ow, Var ob,
                  const std::vector<int>& ids) {
  Var x = tape.window_lookup(emb, ids, model.config().window, TaggerModel::kPad);
  Var h = tape.tanh(tape.add_column(tape.matmul(hw, x), hb));
  return tape.add_column(tape.matmul(ow, h), ob);
}

}  // namespace

double tagger_loss(TaggerModel& model, const TaggedSentence& sentence, double weight) {
  if (sentence.size() == 0) throw usage_error("tagger_loss: empty sentence");
  std::vector<int> targets;
  targets.reserve(sentence.size());
  for (const auto& t : sentence.tags) targets.push_back(model.tags().index(t));
  Tape tape;
  auto& p = model.params();
  Var logits = tagger_logits(tape, model, tape.parameter(p.embedding), tape.parameter(p.hidden_w),
                             tape.parameter(p.hidden_b), tape.parameter(p.out_w), tape.parameter(p.out_b),
                             model.encode(sentence.tokens));
  Var loss = tape.cross_entropy_columns(logits, targets);
  if (weight != 0.0) tape.backward(loss, weight);
  return tape.scalar(loss);
}

std::vector<BioTag> repair_bio(std::vector<BioTag> tags) {
  for (std::size_t i = 0; i < tags.size(); ++i) {
    if (tags[i].kind != BioKind::kI) continue;
    const bool continues = i > 0 && tags[i - 1].kind != BioKind::kO && tags[i - 1].type == tags[i].type;
    if (!continues) tags[i].kind = BioKind::kB;
  }
  return tags;
}

Prediction predict(const TaggerModel& model, const std::vector<std::string>& tokens) {
  Prediction out;
  if (tokens.empty()) return out;
  Tape tape(false);
  const auto& p = model.params();
  Var logits = tagger_logits(tape, model, tape.reference(p.embedding.value), tape.reference(p.hidden_w.value),
                             tape.reference(p.hidden_b.value), tape.reference(p.out_w.value),
                             tape.reference(p.out_b.value), model.encode(tokens));
  const Matrix& l = tape.value(logits);
  std::vector<BioTag> raw;
  for (Eigen::Index j = 0; j < l.cols(); ++j) {
    Eigen::Index best = 0;
    const double m = l.col(j).maxCoeff(&best);
    const double z = (l.col(j).array() - m).exp().sum();
    raw.push_back(model.tags().tag(static_cast<std::size_t>(best)));
    out.confidences.push_back(1.0 / z);
  }
  out.tags = repair_bio(std::move(raw));
  return out;
}

NerCorpus predict_corpus(const TaggerModel& model, const NerCorpus& corpus) {
  NerCorpus out;
  out.style = corpus.style;
  out.registry = model.registry();
  for (const auto& s : corpus.sentences) out.sentences.push_back({s.tokens, predict(model, s.tokens).tags});
  return out;
}

std::vector<EntitySpan> extract_spans(const TaggedSentence& sentence) {
  std::vector<EntitySpan> spans;
  for (std::size_t i = 0; i < sentence.tags.size(); ++i) {
    const BioTag& t = sentence.tags[i];
    if (t.kind == BioKind::kB) {
      spans.push_back({i, i, t.type});
    } else if (t.kind == BioKind::kI) {
      if (spans.empty() || spans.back().end + 1 != i || spans.back().type != t.type)
        throw usage_error("extract_spans: sentence is not BIO-valid at token " + std::to_string(i));
      spans.back().end = i;
    }
  }
  return spans;
}

EvalResult make_eval_result(std::size_t tp, std::size_t fp, std::size_t fn) {
  EvalResult r{tp, fp, fn, 0.0, 0.0, 0.0};
  if (tp + fp) r.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  if (tp + fn) r.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  if (tp) r.micro_f1 = 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
  return r;
}

EvalResult micro_f1(const NerCorpus& gold, const NerCorpus& pred) {
  if (gold.size() != pred.size())
    throw usage_error("micro_f1: corpora differ in sentence count (" + std::to_string(gold.size()) + " vs " +
                      std::to_string(pred.size()) + ")");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (gold.sentences[i].size() != pred.sentences[i].size())
      throw usage_error("micro_f1: sentence " + std::to_string(i) + " differs in token count");
    auto g = extract_spans(gold.sentences[i]);
    auto p = extract_spans(pred.sentences[i]);
    std::size_t a = 0, b = 0, hit = 0;
    // both span lists are sorted by start and non-overlapping
    while (a < g.size() && b < p.size()) {
      if (g[a] == p[b]) {
        ++hit;
        ++a;
        ++b;
      } else if (g[a].start < p[b].start || (g[a].start == p[b].start && g[a] < p[b])) {
        ++a;
      } else {
        ++b;
      }
    }
    tp += hit;
    fp += p.size() - hit;
    fn += g.size() - hit;
  }
  return make_eval_result(tp, fp, fn);
}

TaggerPhase fit_tagger(TaggerModel& model, const NerCorpus& train, const NerCorpus* dev,
                       std::string phase_name, std::size_t phase_index) {
  if (train.size() == 0) throw usage_error("cannot train a tagger on an empty corpus");
  const TaggerConfig& config = model.config();
  TaggerPhase phase;
  phase.name = std::move(phase_name);
  Optimizer opt(config.optimizer, model.params().tensors());
  model.params().zero_grad();

  TaggerParams best = model.params();
  double best_f1 = -1.0;
  for (std::size_t e = 0; e < config.epochs; ++e) {
    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(config.seed, "tagger_order", {phase_index, e}));
    rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const double w = 1.0 / static_cast<double>(end - start);
      for (std::size_t k = start; k < end; ++k) loss_sum += tagger_loss(model, train.sentences[order[k]], w);
      opt.step();
    }
    if (!std::isfinite(loss_sum) || !model.params().all_finite())
      throw Error(ErrorCategory::kDivergence, "tagger training diverged in epoch " + std::to_string(e));
    TaggerEpoch rec{e, loss_sum / static_cast<double>(train.size()), 0.0};
    if (dev) {
      rec.dev_f1 = micro_f1(*dev, predict_corpus(model, *dev)).micro_f1;
      if (rec.dev_f1 > best_f1) {
        best_f1 = rec.dev_f1;
        best = model.params();
        phase.best_epoch = e;
      }
    } else {
      phase.best_epoch = e;
    }
    phase.epochs.push_back(rec);
  }
  if (dev && config.epochs > 0) {
    model.params() = best;
    model.params().zero_grad();
  }
  return phase;
}

TaggerTrainResult train_tagger(const NerCorpus& train, const NerCorpus* dev, const TaggerConfig& config) {
  if (train.size() == 0) throw usage_error("cannot train a tagger on an empty corpus");
  const NerCorpus* corpora[] = {&train};
  TaggerTrainResult result;
  result.model = TaggerModel::random(config, train.registry, build_tagger_vocab(corpora, config.min_count));
  result.phases.push_back(fit_tagger(result.model, train, dev, "train"));
  return result;
}

std::vector<ParallelPair> pseudo_label(const TaggerModel& model, const std::vector<ParallelPair>& pairs,
                                       double threshold, PseudoLabelStats* stats) {
  std::vector<ParallelPair> out;
  out.reserve(pairs.size());
  std::size_t labeled = 0;
  auto confident = [&](const Prediction& p) {
    bool any_entity = false;
    for (const auto& t : p.tags) any_entity = any_entity || t.is_entity();
    for (std::size_t i = 0; i < p.tags.size(); ++i)
      if ((!any_entity || p.tags[i].is_entity()) && !(p.confidences[i] > threshold)) return false;
    return true;
  };
  for (const auto& pair : pairs) {
    ParallelPair next = pair;
    Prediction src = predict(model, pair.source_side.tokens);
    Prediction tgt = predict(model, pair.target_side.tokens);
    if (confident(src) && confident(tgt)) {
      next.source_side.tags = src.tags;
      next.target_side.tags = tgt.tags;
      next.has_ner = true;
      ++labeled;
    } else {
      next.source_side.tags.assign(pair.source_side.size(), BioTag::outside());
      next.target_side.tags.assign(pair.target_side.size(), BioTag::outside());
      next.has_ner = false;
    }
    out.push_back(std::move(next));
  }
  if (stats) *stats = {pairs.size(), labeled};
  return out;
}

void save_tagger(const TaggerModel& model, const std::string& path) {
  const auto& c = model.config();
  CheckpointBlob blob;
  blob.kind = "tagger";
  blob.config = {{"embedding_dim", c.embedding_dim}, {"hidden_dim", c.hidden_dim}, {"window", c.window},
                 {"epochs", c.epochs},               {"batch_size", c.batch_size}, {"min_count", c.min_count},
                 {"init_scale", c.init_scale},       {"seed", c.seed},             {"optimizer", stner::to_json(c.optimizer)},
                 {"registry", stner::to_json(model.registry())}};
  blob.vocab = model.vocab();
  for (const auto* t : model.params().tensors()) blob.tensors.push_back(*t);
  write_checkpoint_file(blob, path);
}

TaggerModel load_tagger(const std::string& path) {
  CheckpointBlob blob = read_checkpoint_file(path);
  if (blob.kind != "tagger") throw format_error(path + " is a '" + blob.kind + "' checkpoint, not tagger");
  try {
    const auto& j = blob.config;
    TaggerConfig c;
    c.embedding_dim = j.at("embedding_dim").get<std::size_t>();
    c.hidden_dim = j.at("hidden_dim").get<std::size_t>();
    c.window = j.at("window").get<int>();
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.min_count = j.value("min_count", c.min_count);
    c.init_scale = j.value("init_scale", c.init_scale);
    c.seed = j.value("seed", c.seed);
    if (j.contains("optimizer")) c.optimizer = optimizer_from_json(j.at("optimizer"), c.optimizer);
    TaggerModel m(c, registry_from_json(j.at("registry")), blob.vocab);
    restore_tensors(blob, m.params().tensors());
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw format_error(std::string("malformed tagger checkpoint config: ") + e.what());
  }
}

}  // namespace stner
