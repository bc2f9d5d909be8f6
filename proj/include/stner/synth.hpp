#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "stner/corpus.hpp"

namespace stner {

// Generative grammar for a two-style (formal/informal) NER corpus.
//
//   sentence  := template with every slot `<TYPE>` filled by a uniformly drawn
//                lexicon entry of that TYPE (tagged B-TYPE I-TYPE ...)
//   formal    := the filled template verbatim
//   informal  := formal, then
//                1. phrase substitution over the literal (non-slot) tokens,
//                   greedy longest match left to right, matches never cross a
//                   slot;
//                2. every literal output token is dropped with probability
//                   drop_probability (a sentence is never emptied);
//                3. every entity span is lowercased with probability
//                   lowercase_entity_probability.
//
// Parallel pairs share template and fills. The unpaired source (formal) and
// target (informal) corpora are independent draws.
struct SynthConfig {
  std::vector<std::string> templates;  // whitespace-separated, slots as <TYPE>
  std::map<std::string, std::vector<std::string>> lexicon;  // TYPE -> surface forms
  std::vector<std::pair<std::string, std::string>> substitutions;  // formal -> informal
  double drop_probability = 0.1;
  double lowercase_entity_probability = 0.5;
  bool pairs_with_gold_tags = false;  // otherwise pair tags are all-O placeholders
  std::size_t num_pairs = 2000;
  std::size_t num_source = 1000;
  std::size_t num_target = 1000;

  // Built-in three-class (LOC, ORG, PERSON) configuration.
  static SynthConfig defaults();
};

struct SynthResult {
  std::vector<ParallelPair> pairs;
  NerCorpus source;
  NerCorpus target;
};

SynthResult make_synthetic_style_corpus(const SynthConfig& config, std::uint64_t seed);

}  // namespace stner
