#include "stner/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "stner/error.hpp"
#include "stner/rng.hpp"

namespace stner {

bool is_valid_type_name(std::string_view name) {
  if (name.empty()) return false;
  return std::all_of(name.begin(), name.end(), [](char c) {
    return (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_';
  });
}

TypeRegistry::TypeRegistry(const std::vector<std::string>& names) {
  for (const auto& n : names) add(n);
}

TypeRegistry TypeRegistry::ontonotes() {
  return TypeRegistry({"WORK_OF_ART", "ORG", "FAC", "LAW", "PERCENT", "PRODUCT", "MONEY", "DATE",
                       "PERSON", "GPE", "QUANTITY", "CARDINAL", "NORP", "TIME", "EVENT",
                       "ORDINAL", "LOC", "LANGUAGE"});
}

void TypeRegistry::add(const std::string& name) {
  if (!is_valid_type_name(name)) throw format_error("invalid entity type name '" + name + "'");
  if (contains(name)) throw format_error("duplicate entity type '" + name + "'");
  names_.push_back(name);
}

bool TypeRegistry::contains(std::string_view name) const { return index_of(name).has_value(); }

std::optional<std::size_t> TypeRegistry::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (names_[i] == name) return i;
  return std::nullopt;
}

BioTag BioTag::parse(std::string_view text) {
  if (text == "O") return outside();
  if (text.size() > 2 && text[1] == '-' && (text[0] == 'B' || text[0] == 'I')) {
    std::string type(text.substr(2));
    if (is_valid_type_name(type))
      return {text[0] == 'B' ? BioKind::kB : BioKind::kI, std::move(type)};
  }
  throw format_error("malformed tag '" + std::string(text) + "'");
}

std::string BioTag::str() const {
  switch (kind) {
    case BioKind::kO:
      return "O";
    case BioKind::kB:
      return "B-" + type;
    case BioKind::kI:
      return "I-" + type;
  }
  return "O";
}

std::optional<std::string> bio_violation(const TaggedSentence& sentence) {
  if (sentence.tokens.empty()) return "empty sentence";
  if (sentence.tokens.size() != sentence.tags.size())
    return "token/tag count mismatch (" + std::to_string(sentence.tokens.size()) + " vs " +
           std::to_string(sentence.tags.size()) + ")";
  for (std::size_t i = 0; i < sentence.tags.size(); ++i) {
    const BioTag& tag = sentence.tags[i];
    if (tag.kind == BioKind::kO) {
      if (!tag.type.empty()) return "O tag with entity type at position " + std::to_string(i);
      continue;
    }
    if (tag.type.empty()) return "entity tag without type at position " + std::to_string(i);
    if (tag.kind == BioKind::kI) {
      const bool continues = i > 0 && sentence.tags[i - 1].is_entity() &&
                             sentence.tags[i - 1].type == tag.type;
      if (!continues)
        return "I-" + tag.type + " without preceding B/I of the same type at position " +
               std::to_string(i);
    }
  }
  return std::nullopt;
}

void validate_sentence(const TaggedSentence& sentence) {
  if (auto v = bio_violation(sentence)) throw format_error("BIO violation: " + *v);
}

TaggedSentence make_sentence(const std::vector<std::string>& tokens,
                             const std::vector<std::string>& tags) {
  TaggedSentence s;
  s.tokens = tokens;
  s.tags.reserve(tags.size());
  for (const auto& t : tags) s.tags.push_back(BioTag::parse(t));
  return s;
}

std::vector<std::size_t> class_sentence_counts(const std::vector<TaggedSentence>& sentences,
                                               const TypeRegistry& registry) {
  std::vector<std::size_t> counts(registry.size(), 0);
  std::vector<char> seen(registry.size());
  for (const auto& s : sentences) {
    std::fill(seen.begin(), seen.end(), 0);
    for (const auto& tag : s.tags) {
      if (!tag.is_entity()) continue;
      if (auto idx = registry.index_of(tag.type)) seen[*idx] = 1;
    }
    for (std::size_t c = 0; c < counts.size(); ++c) counts[c] += seen[c];
  }
  return counts;
}

void validate_corpus(const NerCorpus& corpus) {
  for (std::size_t i = 0; i < corpus.sentences.size(); ++i) {
    const auto& s = corpus.sentences[i];
    if (auto v = bio_violation(s))
      throw format_error("sentence " + std::to_string(i) + ": BIO violation: " + *v);
    for (const auto& tag : s.tags)
      if (tag.is_entity() && !corpus.registry.contains(tag.type))
        throw format_error("sentence " + std::to_string(i) + ": unregistered entity type '" +
                           tag.type + "'");
  }
}

// ---------------------------------------------------------------------------

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
    if (i == line.size()) break;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t') ++j;
    fields.push_back(line.substr(i, j - i));
    i = j;
  }
  return fields;
}

}  // namespace

NerCorpus read_conll(std::istream& in, TypeRegistry registry, const ConllReadOptions& options) {
  NerCorpus corpus;
  corpus.style = options.style;
  corpus.registry = std::move(registry);

  TaggedSentence current;
  std::size_t current_start_line = 0;
  auto flush = [&]() {
    if (current.tokens.empty()) return;
    if (auto v = bio_violation(current))
      throw format_error("sentence " + std::to_string(corpus.sentences.size()) +
                         " (starting at line " + std::to_string(current_start_line) +
                         "): BIO violation: " + *v);
    corpus.sentences.push_back(std::move(current));
    current = {};
  };

  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto fields = split_fields(line);
    if (fields.empty()) {
      flush();
      continue;
    }
    if (fields.size() != 2)
      throw format_error("line " + std::to_string(line_no) +
                         ": expected `token<TAB>tag`, found " + std::to_string(fields.size()) +
                         " fields");
    BioTag tag;
    try {
      tag = BioTag::parse(fields[1]);
    } catch (const Error& e) {
      throw format_error("line " + std::to_string(line_no) + ": " + e.what());
    }
    if (tag.is_entity() && !corpus.registry.contains(tag.type)) {
      if (options.strict)
        throw format_error("line " + std::to_string(line_no) + ": unknown entity type '" +
                           tag.type + "'");
      corpus.registry.add(tag.type);
    }
    if (current.tokens.empty()) current_start_line = line_no;
    current.tokens.emplace_back(fields[0]);
    current.tags.push_back(std::move(tag));
  }
  flush();
  if (corpus.sentences.empty()) throw format_error("empty input: no sentences found");
  return corpus;
}

NerCorpus read_conll_file(const std::string& path, TypeRegistry registry,
                          const ConllReadOptions& options) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open '" + path + "' for reading");
  try {
    return read_conll(in, std::move(registry), options);
  } catch (const Error& e) {
    throw Error(e.category(), path + ": " + e.what());
  }
}

void write_conll(const NerCorpus& corpus, std::ostream& out) {
  for (std::size_t i = 0; i < corpus.sentences.size(); ++i) {
    const auto& s = corpus.sentences[i];
    if (i > 0) out << '\n';
    for (std::size_t t = 0; t < s.tokens.size(); ++t) out << s.tokens[t] << '\t' << s.tags[t].str() << '\n';
  }
  if (!out) throw io_error("write failure while emitting CoNLL data");
}

void write_conll_file(const NerCorpus& corpus, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot open '" + path + "' for writing");
  write_conll(corpus, out);
  out.flush();
  if (!out) throw io_error("write failure on '" + path + "'");
}

// ---------------------------------------------------------------------------

namespace {

nlohmann::json sentence_to_json(const TaggedSentence& s) {
  nlohmann::json tags = nlohmann::json::array();
  for (const auto& t : s.tags) tags.push_back(t.str());
  return {{"tokens", s.tokens}, {"tags", tags}};
}

TaggedSentence sentence_from_json(const nlohmann::json& j) {
  auto s = make_sentence(j.at("tokens").get<std::vector<std::string>>(),
                         j.at("tags").get<std::vector<std::string>>());
  validate_sentence(s);
  return s;
}

}  // namespace

std::vector<ParallelPair> read_pairs_jsonl(std::istream& in) {
  std::vector<ParallelPair> pairs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    try {
      auto j = nlohmann::json::parse(line);
      ParallelPair p;
      p.has_ner = j.at("has_ner").get<bool>();
      p.source_side = sentence_from_json(j.at("source"));
      p.target_side = sentence_from_json(j.at("target"));
      pairs.push_back(std::move(p));
    } catch (const nlohmann::json::exception& e) {
      throw format_error("line " + std::to_string(line_no) + ": " + e.what());
    } catch (const Error& e) {
      throw format_error("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return pairs;
}

std::vector<ParallelPair> read_pairs_jsonl_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open '" + path + "' for reading");
  try {
    return read_pairs_jsonl(in);
  } catch (const Error& e) {
    throw Error(e.category(), path + ": " + e.what());
  }
}

void write_pairs_jsonl(const std::vector<ParallelPair>& pairs, std::ostream& out) {
  for (const auto& p : pairs) {
    nlohmann::json j;
    j["has_ner"] = p.has_ner;
    j["source"] = sentence_to_json(p.source_side);
    j["target"] = sentence_to_json(p.target_side);
    out << j.dump() << '\n';
  }
  if (!out) throw io_error("write failure while emitting pairs");
}

void write_pairs_jsonl_file(const std::vector<ParallelPair>& pairs, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot open '" + path + "' for writing");
  write_pairs_jsonl(pairs, out);
  out.flush();
  if (!out) throw io_error("write failure on '" + path + "'");
}

// ---------------------------------------------------------------------------

NerCorpus sample_few_shot(const NerCorpus& corpus, const FewShotSpec& spec) {
  if (spec.k == 0) throw usage_error("few-shot k must be positive");
  const auto& registry = corpus.registry;
  const std::size_t num_classes = registry.size();

  // Per-sentence class membership.
  std::vector<std::vector<std::size_t>> members(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    std::vector<char> seen(num_classes, 0);
    for (const auto& tag : corpus.sentences[i].tags)
      if (tag.is_entity())
        if (auto idx = registry.index_of(tag.type)) seen[*idx] = 1;
    for (std::size_t c = 0; c < num_classes; ++c)
      if (seen[c]) members[i].push_back(c);
  }

  const auto support = class_sentence_counts(corpus.sentences, registry);
  for (std::size_t c = 0; c < num_classes; ++c)
    if (support[c] < spec.k)
      throw infeasible_error("few-shot sampling infeasible: class " + registry.names()[c] +
                             " occurs in only " + std::to_string(support[c]) +
                             " sentences (k = " + std::to_string(spec.k) + ")");

  std::vector<std::size_t> order(corpus.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(derive_seed(spec.seed, "few_shot"));
  rng.shuffle(order);

  std::vector<std::size_t> counts(num_classes, 0);
  std::vector<std::size_t> chosen;
  auto all_satisfied = [&]() {
    return std::all_of(counts.begin(), counts.end(), [&](std::size_t n) { return n >= spec.k; });
  };
  for (std::size_t idx : order) {
    if (all_satisfied()) break;
    const auto& m = members[idx];
    bool helps = false;
    bool overflows = false;
    for (std::size_t c : m) {
      helps |= counts[c] < spec.k;
      overflows |= counts[c] + 1 > 2 * spec.k;
    }
    if (!helps || overflows) continue;
    for (std::size_t c : m) ++counts[c];
    chosen.push_back(idx);
  }
  for (std::size_t c = 0; c < num_classes; ++c)
    if (counts[c] < spec.k)
      throw infeasible_error("few-shot sampling could not raise class " + registry.names()[c] +
                             " to k = " + std::to_string(spec.k) + " (reached " +
                             std::to_string(counts[c]) + ")");

  std::sort(chosen.begin(), chosen.end());
  NerCorpus out{{}, corpus.style, corpus.registry};
  for (std::size_t idx : chosen) out.sentences.push_back(corpus.sentences[idx]);
  return out;
}

NerCorpus sample_low_resource(const NerCorpus& corpus, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw usage_error("low-resource sample size must be positive");
  if (n > corpus.size())
    throw infeasible_error("low-resource sample size " + std::to_string(n) +
                           " exceeds corpus size " + std::to_string(corpus.size()));
  std::vector<std::size_t> idx(corpus.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng rng(derive_seed(seed, "low_resource"));
  // Partial Fisher-Yates: the first n slots become the sample.
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t j = i + rng.below(idx.size() - i);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(n);
  std::sort(idx.begin(), idx.end());
  NerCorpus out{{}, corpus.style, corpus.registry};
  out.sentences.reserve(n);
  for (std::size_t i : idx) out.sentences.push_back(corpus.sentences[i]);
  return out;
}

// ---------------------------------------------------------------------------

std::size_t linearized_length(const TaggedSentence& sentence) {
  std::size_t spans = 0;
  for (const auto& tag : sentence.tags) spans += tag.kind == BioKind::kB;
  return sentence.tokens.size() + 2 * spans;
}

NerCorpus filter_by_linearized_length(const NerCorpus& corpus, std::size_t max_len) {
  NerCorpus out{{}, corpus.style, corpus.registry};
  for (const auto& s : corpus.sentences)
    if (linearized_length(s) <= max_len) out.sentences.push_back(s);
  return out;
}

std::vector<ParallelPair> filter_by_linearized_length(const std::vector<ParallelPair>& pairs,
                                                      std::size_t max_len) {
  std::vector<ParallelPair> out;
  for (const auto& p : pairs)
    if (linearized_length(p.source_side) <= max_len && linearized_length(p.target_side) <= max_len)
      out.push_back(p);
  return out;
}

// ---------------------------------------------------------------------------

NerCorpus augment_entity_replacement(const NerCorpus& source, const NerCorpus& target,
                                     std::uint64_t seed) {
  // Inventory of target spans per class.
  std::map<std::string, std::vector<std::vector<std::string>>> inventory;
  for (const auto& s : target.sentences) {
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s.tags[i].kind != BioKind::kB) continue;
      std::size_t j = i + 1;
      while (j < s.size() && s.tags[j].kind == BioKind::kI) ++j;
      inventory[s.tags[i].type].emplace_back(s.tokens.begin() + i, s.tokens.begin() + j);
    }
  }

  NerCorpus out{{}, source.style, source.registry};
  out.sentences.reserve(source.size());
  for (std::size_t n = 0; n < source.size(); ++n) {
    const auto& s = source.sentences[n];
    Rng rng(derive_seed(seed, "ada", {n}));
    TaggedSentence result;
    std::size_t i = 0;
    while (i < s.size()) {
      if (s.tags[i].kind != BioKind::kB) {
        result.tokens.push_back(s.tokens[i]);
        result.tags.push_back(s.tags[i]);
        ++i;
        continue;
      }
      std::size_t j = i + 1;
      while (j < s.size() && s.tags[j].kind == BioKind::kI) ++j;
      const std::string& type = s.tags[i].type;
      auto it = inventory.find(type);
      if (it == inventory.end()) {
        for (std::size_t t = i; t < j; ++t) {
          result.tokens.push_back(s.tokens[t]);
          result.tags.push_back(s.tags[t]);
        }
      } else {
        const auto& span = it->second[rng.below(it->second.size())];
        for (std::size_t t = 0; t < span.size(); ++t) {
          result.tokens.push_back(span[t]);
          result.tags.push_back(t == 0 ? BioTag::begin(type) : BioTag::inside(type));
        }
      }
      i = j;
    }
    out.sentences.push_back(std::move(result));
  }
  return out;
}

}  // namespace stner
