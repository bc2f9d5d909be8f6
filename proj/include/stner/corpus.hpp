#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace stner {

// Entity type names are short identifiers over [A-Z_0-9].
bool is_valid_type_name(std::string_view name);

// Ordered set of entity type names. Order is stable and defines type ids.
class TypeRegistry {
 public:
  TypeRegistry() = default;
  explicit TypeRegistry(const std::vector<std::string>& names);

  // The 18 OntoNotes 5.0 types.
  static TypeRegistry ontonotes();

  // Adds a new type; throws on invalid or duplicate names.
  void add(const std::string& name);
  bool contains(std::string_view name) const;
  std::optional<std::size_t> index_of(std::string_view name) const;

  const std::vector<std::string>& names() const { return names_; }
  std::size_t size() const { return names_.size(); }

  bool operator==(const TypeRegistry&) const = default;

 private:
  std::vector<std::string> names_;
};

enum class BioKind : std::uint8_t { kO, kB, kI };

struct BioTag {
  BioKind kind = BioKind::kO;
  std::string type;  // empty iff kind == kO

  static BioTag outside() { return {}; }
  static BioTag begin(std::string type) { return {BioKind::kB, std::move(type)}; }
  static BioTag inside(std::string type) { return {BioKind::kI, std::move(type)}; }

  // "O", "B-LOC", "I-WORK_OF_ART". Throws a format error on anything else.
  static BioTag parse(std::string_view text);
  std::string str() const;

  bool is_entity() const { return kind != BioKind::kO; }
  bool operator==(const BioTag&) const = default;
};

struct TaggedSentence {
  std::vector<std::string> tokens;
  std::vector<BioTag> tags;

  std::size_t size() const { return tokens.size(); }
  bool operator==(const TaggedSentence&) const = default;
};

// Describes the first BIO well-formedness violation, or nullopt if the
// sentence is valid. An empty sentence is a violation.
std::optional<std::string> bio_violation(const TaggedSentence& sentence);
void validate_sentence(const TaggedSentence& sentence);

// Builds a sentence from whitespace-free tokens and tag strings.
TaggedSentence make_sentence(const std::vector<std::string>& tokens,
                             const std::vector<std::string>& tags);

// Number of sentences containing at least one mention of each class, indexed
// like the registry.
std::vector<std::size_t> class_sentence_counts(const std::vector<TaggedSentence>& sentences,
                                               const TypeRegistry& registry);

enum class Style { kSource, kTarget };

struct NerCorpus {
  std::vector<TaggedSentence> sentences;
  Style style = Style::kSource;
  TypeRegistry registry;

  std::size_t size() const { return sentences.size(); }
  bool operator==(const NerCorpus&) const = default;
};

// Throws on BIO violations or unregistered entity types.
void validate_corpus(const NerCorpus& corpus);

struct ParallelPair {
  TaggedSentence source_side;
  TaggedSentence target_side;
  bool has_ner = false;  // false means tags are all-O placeholders

  bool operator==(const ParallelPair&) const = default;
};

// ---------------------------------------------------------------------------
// CoNLL-style I/O: one `token<TAB|spaces>tag` per line, blank line between
// sentences. Writing always uses a single tab and '\n'.

struct ConllReadOptions {
  bool strict = true;  // reject unknown entity types instead of registering them
  Style style = Style::kSource;
};

NerCorpus read_conll(std::istream& in, TypeRegistry registry, const ConllReadOptions& options = {});
NerCorpus read_conll_file(const std::string& path, TypeRegistry registry,
                          const ConllReadOptions& options = {});
void write_conll(const NerCorpus& corpus, std::ostream& out);
void write_conll_file(const NerCorpus& corpus, const std::string& path);

// Line-delimited JSON, one pair per line:
// {"has_ner":bool,"source":{"tokens":[..],"tags":[..]},"target":{...}}
std::vector<ParallelPair> read_pairs_jsonl(std::istream& in);
std::vector<ParallelPair> read_pairs_jsonl_file(const std::string& path);
void write_pairs_jsonl(const std::vector<ParallelPair>& pairs, std::ostream& out);
void write_pairs_jsonl_file(const std::vector<ParallelPair>& pairs, const std::string& path);

// ---------------------------------------------------------------------------
// Data-regime samplers. All are pure functions of (input, seed) and keep the
// original sentence order.

struct FewShotSpec {
  std::size_t k = 10;
  std::uint64_t seed = 0;
};

// Greedy K~2K sampler: every registry class ends up in [k, 2k] selected
// sentences. Throws an infeasible error naming the class otherwise.
NerCorpus sample_few_shot(const NerCorpus& corpus, const FewShotSpec& spec);

// Uniform subset of size n without replacement.
NerCorpus sample_low_resource(const NerCorpus& corpus, std::size_t n, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Length filtering on the marker-linearized form (prefix not counted; the
// bound is inclusive).

std::size_t linearized_length(const TaggedSentence& sentence);
NerCorpus filter_by_linearized_length(const NerCorpus& corpus, std::size_t max_len = 64);
std::vector<ParallelPair> filter_by_linearized_length(const std::vector<ParallelPair>& pairs,
                                                      std::size_t max_len = 64);

// Entity-replacement baseline: every entity span in `source` whose class has
// at least one span in `target` is replaced by a uniformly drawn target span.
NerCorpus augment_entity_replacement(const NerCorpus& source, const NerCorpus& target,
                                     std::uint64_t seed);

}  // namespace stner
