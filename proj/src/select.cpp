#include "stner/select.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "stner/error.hpp"
#include "stner/rng.hpp"

namespace stner {

std::u32string decode_utf8(std::string_view text) {
  std::u32string out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    const auto c = static_cast<unsigned char>(text[i]);
    std::size_t len = 0;
    char32_t cp = 0;
    if (c < 0x80) {
      len = 1;
      cp = c;
    } else if ((c & 0xE0) == 0xC0) {
      len = 2;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      len = 3;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      len = 4;
      cp = c & 0x07;
    }
    bool ok = len > 0 && i + len <= text.size();
    for (std::size_t k = 1; ok && k < len; ++k) {
      const auto cc = static_cast<unsigned char>(text[i + k]);
      if ((cc & 0xC0) != 0x80) ok = false;
      cp = (cp << 6) | (cc & 0x3F);
    }
    static constexpr char32_t kMin[5] = {0, 0, 0x80, 0x800, 0x10000};
    if (ok && (cp < kMin[len] || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF))) ok = false;
    if (!ok) {
      out.push_back(U'�');
      ++i;
      continue;
    }
    out.push_back(cp);
    i += len;
  }
  return out;
}

std::size_t edit_distance_chars(std::string_view a, std::string_view b) {
  const std::u32string x = decode_utf8(a), y = decode_utf8(b);
  std::vector<std::size_t> row(y.size() + 1);
  for (std::size_t j = 0; j <= y.size(); ++j) row[j] = j;
  for (std::size_t i = 1; i <= x.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= y.size(); ++j) {
      const std::size_t up = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (x[i - 1] == y[j - 1] ? 0 : 1)});
      diag = up;
    }
  }
  return row[y.size()];
}

std::string surface_text(const LinearizedSentence& lin) {
  std::string out;
  for (const auto& t : surface_tokens(lin)) {
    if (!out.empty()) out += ' ';
    out += t;
  }
  return out;
}

double diversity_score(std::string_view original, std::string_view candidate) {
  const std::size_t n = std::max(decode_utf8(original).size(), decode_utf8(candidate).size());
  if (n == 0) return 0.0;
  return std::clamp(static_cast<double>(edit_distance_chars(original, candidate)) / static_cast<double>(n), 0.0,
                    1.0);
}

double diversity_score(const LinearizedSentence& original, const LinearizedSentence& candidate) {
  return diversity_score(surface_text(original), surface_text(candidate));
}

namespace {

std::string lowercase_ascii(std::string s) {
  for (char& c : s)
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  return s;
}

std::unordered_set<std::string> content_set(const LinearizedSentence& lin,
                                            const std::unordered_set<std::string>& stop) {
  std::unordered_set<std::string> out;
  for (const auto& t : surface_tokens(lin)) {
    std::string w = lowercase_ascii(t);
    if (!stop.count(w)) out.insert(std::move(w));
  }
  return out;
}

}  // namespace

const std::unordered_set<std::string>& default_stop_words() {
  static const std::unordered_set<std::string> words = {
      "a",    "an",   "the",  "and",   "or",   "but",  "of",   "to",   "in",   "on",  "at",  "for",
      "with", "from", "by",   "is",    "are",  "was",  "were", "be",   "been", "am",  "it",  "its",
      "this", "that", "i",    "you",   "he",   "she",  "we",   "they", "me",   "him", "her", "us",
      "them", "my",   "your", "our",   "their", "do",  "does", "did",  "have", "has", "had", "will",
      "would", "can", "could", "not",  "so",   "very", ".",    ",",    "!",    "?",   "!!",  "...",
      ";",    ":",    "'",    "\""};
  return words;
}

double adequacy_score(const LinearizedSentence& original, const LinearizedSentence& candidate,
                      const std::unordered_set<std::string>& stop_words) {
  const auto a = content_set(original, stop_words);
  const auto b = content_set(candidate, stop_words);
  if (a.empty()) return b.empty() ? 1.0 : 0.0;
  std::size_t shared = 0;
  for (const auto& w : a) shared += b.count(w);
  return static_cast<double>(shared) / static_cast<double>(a.size());
}

// ---------------------------------------------------------------------------

StyleClassifier::StyleClassifier(std::vector<std::string> vocab, std::size_t dim) : vocab_(std::move(vocab)) {
  if (vocab_.empty() || vocab_[0] != "<UNK>") vocab_.insert(vocab_.begin(), "<UNK>");
  for (std::size_t i = 0; i < vocab_.size(); ++i) index_.emplace(vocab_[i], static_cast<int>(i));
  embedding_ = ad::Tensor("style.embedding", static_cast<Eigen::Index>(vocab_.size()), static_cast<Eigen::Index>(dim));
  w_ = ad::Tensor("style.w", static_cast<Eigen::Index>(dim), 1);
  b_ = ad::Tensor("style.b", 1, 1);
}

int StyleClassifier::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? 0 : it->second;
}

StyleClassifier StyleClassifier::train(const std::vector<std::vector<std::string>>& source,
                                       const std::vector<std::vector<std::string>>& target,
                                       const Config& config) {
  std::vector<std::string> vocab = {"<UNK>"};
  std::unordered_set<std::string> seen = {"<UNK>"};
  for (const auto* side : {&source, &target})
    for (const auto& s : *side)
      for (const auto& t : s)
        if (seen.insert(t).second) vocab.push_back(t);
  StyleClassifier clf(std::move(vocab), config.dim);
  Rng init(derive_seed(config.seed, "style_init"));
  for (auto* t : {&clf.embedding_, &clf.w_})
    for (Eigen::Index j = 0; j < t->value.cols(); ++j)
      for (Eigen::Index i = 0; i < t->value.rows(); ++i) t->value(i, j) = (2 * init.uniform() - 1) * config.init_scale;

  struct Item {
    const std::vector<std::string>* tokens;
    bool target;
  };
  std::vector<Item> items;
  for (const auto& s : source)
    if (!s.empty()) items.push_back({&s, false});
  for (const auto& s : target)
    if (!s.empty()) items.push_back({&s, true});

  Optimizer opt({OptimizerKind::kAdamW, config.learning_rate, 0.0}, {&clf.embedding_, &clf.w_, &clf.b_});
  for (std::size_t e = 0; e < config.epochs; ++e) {
    Rng rng(derive_seed(config.seed, "style_order", {e}));
    rng.shuffle(items);
    for (std::size_t start = 0; start < items.size(); start += config.batch_size) {
      const std::size_t end = std::min(items.size(), start + config.batch_size);
      for (std::size_t k = start; k < end; ++k) {
        std::vector<int> ids;
        for (const auto& t : *items[k].tokens) ids.push_back(clf.id(t));
        ad::Tape tape;
        ad::Var pooled = tape.mean_columns(tape.window_lookup(tape.parameter(clf.embedding_), ids, 0, 0));
        ad::Var score = tape.add(tape.matmul_tn(tape.parameter(clf.w_), pooled), tape.parameter(clf.b_));
        ad::Var loss = tape.scale(tape.log_sigmoid(items[k].target ? score : tape.scale(score, -1.0)), -1.0);
        tape.backward(loss, 1.0 / static_cast<double>(end - start));
      }
      opt.step();
    }
  }
  clf.trained_ = true;
  return clf;
}

double StyleClassifier::probability_target(const std::vector<std::string>& tokens) const {
  if (vocab_.empty()) return 0.5;
  ad::Vector pooled = ad::Vector::Zero(embedding_.value.cols());
  for (const auto& t : tokens) pooled += embedding_.value.row(id(t)).transpose();
  if (!tokens.empty()) pooled /= static_cast<double>(tokens.size());
  const double s = w_.value.col(0).dot(pooled) + b_.value(0, 0);
  return s >= 0 ? 1.0 / (1.0 + std::exp(-s)) : std::exp(s) / (1.0 + std::exp(s));
}

double StyleClassifier::accuracy(const std::vector<std::vector<std::string>>& source,
                                 const std::vector<std::vector<std::string>>& target) const {
  std::size_t right = 0;
  for (const auto& s : source) right += probability_target(s) < 0.5;
  for (const auto& s : target) right += probability_target(s) > 0.5;
  const std::size_t n = source.size() + target.size();
  return n ? static_cast<double>(right) / static_cast<double>(n) : 0.0;
}

// ---------------------------------------------------------------------------

namespace {
constexpr int kBosId = 0, kEndId = 1, kUnkId = 2;
std::uint64_t bigram_key(int a, int b) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) | static_cast<std::uint32_t>(b);
}
}  // namespace

BigramLM BigramLM::fit(const std::vector<std::vector<std::string>>& sentences, double k) {
  if (k < 0) throw usage_error("bigram smoothing constant must be non-negative");
  BigramLM lm;
  lm.k_ = k;
  lm.index_ = {{"<s>", kBosId}, {"</s>", kEndId}, {"<unk>", kUnkId}};
  for (const auto& s : sentences)
    for (const auto& t : s) lm.index_.emplace(t, static_cast<int>(lm.index_.size()));
  lm.context_.assign(lm.index_.size(), 0.0);
  for (const auto& s : sentences) {
    int prev = kBosId;
    for (const auto& t : s) {
      const int cur = lm.index_.at(t);
      lm.bigram_[bigram_key(prev, cur)] += 1.0;
      lm.context_[static_cast<std::size_t>(prev)] += 1.0;
      prev = cur;
    }
    lm.bigram_[bigram_key(prev, kEndId)] += 1.0;
    lm.context_[static_cast<std::size_t>(prev)] += 1.0;
  }
  return lm;
}

int BigramLM::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnkId : it->second;
}

double BigramLM::probability(const std::string& previous, const std::string& next) const {
  const int a = previous == "<s>" ? kBosId : id(previous);
  const int b = next == "</s>" ? kEndId : id(next);
  if (context_.empty()) return 0.0;
  auto it = bigram_.find(bigram_key(a, b));
  const double count = it == bigram_.end() ? 0.0 : it->second;
  const double outcomes = static_cast<double>(index_.size() - 1);  // anything but <s>
  const double denom = context_[static_cast<std::size_t>(a)] + k_ * outcomes;
  return denom > 0 ? (count + k_) / denom : 0.0;
}

double BigramLM::cross_entropy(const std::vector<std::string>& tokens) const {
  double nll = 0.0;
  std::string prev = "<s>";
  for (std::size_t i = 0; i <= tokens.size(); ++i) {
    const std::string& next = i < tokens.size() ? tokens[i] : std::string("</s>");
    const double p = probability(prev, next);
    if (!(p > 0)) return std::numeric_limits<double>::infinity();
    nll -= std::log(p);
    prev = next;
  }
  return nll / static_cast<double>(tokens.size() + 1);
}

double fluency_from_entropy(double cross_entropy, double c) {
  if (!(c > 0)) throw usage_error("fluency constant must be positive");
  const double p = std::exp(-cross_entropy);
  return p / (p + c);
}

// ---------------------------------------------------------------------------

ConsistencyScorer::ConsistencyScorer(std::shared_ptr<const StyleClassifier> classifier)
    : classifier_(std::move(classifier)) {
  if (!classifier_ || !classifier_->trained()) throw usage_error("consistency scorer needs a trained style classifier");
}

double ConsistencyScorer::score(const LinearizedSentence&, const LinearizedSentence& candidate) const {
  return classifier_->probability_target(surface_tokens(candidate));
}

AdequacyScorer::AdequacyScorer(std::unordered_set<std::string> stop_words) : stop_words_(std::move(stop_words)) {}

double AdequacyScorer::score(const LinearizedSentence& original, const LinearizedSentence& candidate) const {
  return adequacy_score(original, candidate, stop_words_);
}

FluencyScorer::FluencyScorer(std::shared_ptr<const BigramLM> lm, double c) : lm_(std::move(lm)), c_(c) {
  if (!lm_) throw usage_error("fluency scorer needs a language model");
  if (!(c_ > 0)) throw usage_error("fluency constant must be positive");
}

double FluencyScorer::score(const LinearizedSentence&, const LinearizedSentence& candidate) const {
  return fluency_from_entropy(lm_->cross_entropy(surface_tokens(candidate)), c_);
}

double DiversityScorer::score(const LinearizedSentence& original, const LinearizedSentence& candidate) const {
  return diversity_score(original, candidate);
}

// ---------------------------------------------------------------------------

void SelectionWeights::validate() const {
  for (double w : as_array())
    if (w < 0 || !std::isfinite(w)) throw usage_error("selection weights must be finite and non-negative");
  if (consistency == 0 && adequacy == 0 && fluency == 0 && diversity == 0)
    throw usage_error("selection weights must not all be zero");
}

double weighted_total(const std::array<double, 4>& scores, const SelectionWeights& weights) {
  const auto w = weights.as_array();
  double total = 0.0;
  for (std::size_t m = 0; m < 4; ++m) total += w[m] * scores[m];
  return total;
}

void score_candidate(Candidate& candidate, const LinearizedSentence& original, const ScorerSet& scorers,
                     const SelectionWeights& weights) {
  const auto all = scorers.all();
  for (std::size_t m = 0; m < 4; ++m) {
    if (!all[m]) throw usage_error("scorer set is incomplete");
    candidate.scores[m] = std::clamp(all[m]->score(original, candidate.text), 0.0, 1.0);
  }
  candidate.total = weighted_total(candidate.scores, weights);
}

std::size_t select_best_index(std::span<const Candidate> candidates, const SelectionWeights& weights) {
  if (candidates.empty()) throw usage_error("select_best: no candidates");
  std::size_t best = 0;
  double best_total = weighted_total(candidates[0].scores, weights);
  for (std::size_t i = 1; i < candidates.size(); ++i) {
    const double t = weighted_total(candidates[i].scores, weights);
    if (t > best_total || (t == best_total && candidates[i].candidate_index < candidates[best].candidate_index)) {
      best = i;
      best_total = t;
    }
  }
  return best;
}

const Candidate& select_best(std::span<const Candidate> candidates, const SelectionWeights& weights) {
  return candidates[select_best_index(candidates, weights)];
}

AugmentResult augment_corpus(const TransferModel& model, const NerCorpus& source, const ScorerSet& scorers,
                             const SelectionWeights& weights, const AugmentOptions& options) {
  weights.validate();
  options.sampler.validate();
  if (options.k == 0) throw usage_error("k must be positive");
  AugmentResult result;
  result.pseudo.style = Style::kTarget;
  result.pseudo.registry = model.vocab.registry();
  ConstraintAutomaton automaton(model.vocab);

  for (std::size_t i = 0; i < source.size(); ++i) {
    const TaggedSentence& s = source.sentences[i];
    const LinearizedSentence original = linearize(s);
    const LatentSequence latents =
        encode(model.generator, model.config, render_ids(model.vocab, s, Direction::kSourceToTarget));
    std::vector<Candidate> candidates;
    for (std::size_t j = 0; j < options.k; ++j) {
      Rng rng(derive_seed(options.seed, "generate", {i, j}));
      auto ids = constrained_sample(model.generator, model.config, latents, options.sampler, automaton, rng,
                                    {options.max_len, true});
      if (!ids.empty() && ids.back() == Vocabulary::kEos) ids.pop_back();
      auto parsed = parse_rendered(model.vocab.decode(ids), model.vocab.registry());
      if (auto* err = std::get_if<ParseError>(&parsed))
        throw Error(ErrorCategory::kInternal, "constrained sample failed to parse (" +
                                                  std::string(to_string(err->code)) + ") for sentence " +
                                                  std::to_string(i));
      Candidate c;
      c.origin_index = i;
      c.candidate_index = j;
      c.text = std::get<LinearizedSentence>(std::move(parsed));
      score_candidate(c, original, scorers, weights);
      candidates.push_back(std::move(c));
    }
    const std::size_t best = select_best_index(candidates, weights);
    result.pseudo.sentences.push_back(delinearize(candidates[best].text));
    for (std::size_t j = 0; j < candidates.size(); ++j) {
      const Candidate& c = candidates[j];
      result.dump.push_back({i, c.candidate_index, render(c.text), c.scores, c.total, j == best});
    }
  }
  return result;
}

void write_candidate_dump(const std::vector<CandidateRecord>& dump, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot write " + path);
  for (const auto& r : dump) {
    nlohmann::ordered_json j;
    j["origin_index"] = r.origin_index;
    j["candidate_index"] = r.candidate_index;
    j["rendered_text"] = r.rendered_text;
    j["consistency"] = r.scores[0];
    j["adequacy"] = r.scores[1];
    j["fluency"] = r.scores[2];
    j["diversity"] = r.scores[3];
    j["total"] = r.total;
    j["selected"] = r.selected;
    out << j.dump() << '\n';
  }
  if (!out) throw io_error("failed writing " + path);
}

}  // namespace stner
