#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>

#include "stner/corpus.hpp"
#include "stner/error.hpp"
#include "stner/linearize.hpp"
#include "stner/synth.hpp"
#include "support.hpp"

using namespace stner;
using stner::testing::random_corpus;
using stner::testing::three_types;

namespace {

ErrorCategory category_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.category();
  }
  return ErrorCategory::kInternal;
}

}  // namespace

TEST_CASE("bio tags parse and print") {
  CHECK(BioTag::parse("O") == BioTag::outside());
  CHECK(BioTag::parse("B-LOC") == BioTag::begin("LOC"));
  CHECK(BioTag::parse("I-WORK_OF_ART") == BioTag::inside("WORK_OF_ART"));
  CHECK(BioTag::parse("I-WORK_OF_ART").str() == "I-WORK_OF_ART");
  for (const char* bad : {"", "B", "B-", "X-LOC", "b-LOC", "B-loc", "O-LOC"})
    CHECK(category_of([&] { BioTag::parse(bad); }) == ErrorCategory::kFormat);
}

TEST_CASE("bio violations") {
  CHECK_FALSE(bio_violation(make_sentence({"John", "Smith", "ran"}, {"B-PERSON", "I-PERSON", "O"})));
  CHECK(bio_violation(make_sentence({"Smith"}, {"I-PERSON"})));
  CHECK(bio_violation(make_sentence({"a", "b"}, {"B-LOC", "I-ORG"})));
  CHECK(bio_violation(make_sentence({"a", "b"}, {"O", "I-ORG"})));
  CHECK(bio_violation(TaggedSentence{}));
  CHECK_FALSE(bio_violation(make_sentence({"a", "b"}, {"B-LOC", "B-LOC"})));
}

TEST_CASE("registry rejects bad and duplicate names") {
  TypeRegistry r;
  r.add("LOC");
  CHECK(category_of([&] { r.add("LOC"); }) == ErrorCategory::kFormat);
  CHECK(category_of([&] { r.add("loc"); }) == ErrorCategory::kFormat);
  CHECK(TypeRegistry::ontonotes().size() == 18);
  CHECK(r.index_of("LOC") == 0u);
  CHECK_FALSE(r.index_of("ORG"));
}

TEST_CASE("conll round trip") {
  Rng rng(7);
  NerCorpus c = random_corpus(rng, three_types(), 50);
  std::stringstream ss;
  write_conll(c, ss);
  NerCorpus back = read_conll(ss, three_types(), {true, Style::kSource});
  CHECK(back == c);
}

TEST_CASE("conll reader accepts tabs, spaces and trailing blank lines") {
  std::istringstream in("John\tB-PERSON\nran   O\n\n\nParis B-LOC\n\n");
  NerCorpus c = read_conll(in, three_types());
  REQUIRE(c.size() == 2);
  CHECK(c.sentences[0].tokens == std::vector<std::string>{"John", "ran"});
  CHECK(c.sentences[1].tags[0] == BioTag::begin("LOC"));
}

TEST_CASE("conll reader reports malformed input with format errors") {
  auto parse = [](const std::string& text, bool strict = true) {
    std::istringstream in(text);
    return read_conll(in, three_types(), {strict, Style::kSource});
  };
  CHECK(category_of([&] { parse("John\n"); }) == ErrorCategory::kFormat);
  CHECK(category_of([&] { parse("John B-PERSON extra\n"); }) == ErrorCategory::kFormat);
  CHECK(category_of([&] { parse("Smith I-PERSON\n"); }) == ErrorCategory::kFormat);
  CHECK(category_of([&] { parse("Rome B-CITY\n"); }) == ErrorCategory::kFormat);
  NerCorpus lax = parse("Rome B-CITY\n", false);
  CHECK(lax.registry.contains("CITY"));
}

TEST_CASE("missing conll file is an io error") {
  CHECK(category_of([] { read_conll_file("/nonexistent/x.conll", three_types()); }) == ErrorCategory::kIo);
}

TEST_CASE("pairs jsonl round trip") {
  Rng rng(3);
  std::vector<ParallelPair> pairs;
  for (int i = 0; i < 20; ++i) {
    ParallelPair p;
    p.source_side = testing::random_sentence(rng, three_types());
    p.target_side = testing::random_sentence(rng, three_types());
    p.has_ner = i % 2 == 0;
    pairs.push_back(p);
  }
  std::stringstream ss;
  write_pairs_jsonl(pairs, ss);
  CHECK(read_pairs_jsonl(ss) == pairs);
  std::istringstream bad("{\"source\": 3}\n");
  CHECK(category_of([&] { read_pairs_jsonl(bad); }) == ErrorCategory::kFormat);
}

TEST_CASE("few-shot sampling keeps every class within [k, 2k]") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    NerCorpus c = random_corpus(rng, three_types(), 300);
    const std::size_t k = 1 + seed % 8;
    NerCorpus s = sample_few_shot(c, {k, seed});
    for (std::size_t n : class_sentence_counts(s.sentences, s.registry)) {
      CHECK(n >= k);
      CHECK(n <= 2 * k);
    }
    // Order-preserving subset.
    std::size_t j = 0;
    for (const auto& sent : s.sentences) {
      while (j < c.size() && !(c.sentences[j] == sent)) ++j;
      CHECK(j < c.size());
      ++j;
    }
    CHECK(sample_few_shot(c, {k, seed}) == s);
  }
}

TEST_CASE("few-shot sampling names the infeasible class") {
  NerCorpus c;
  c.registry = three_types();
  c.sentences = {make_sentence({"Paris"}, {"B-LOC"}), make_sentence({"Acme"}, {"B-ORG"})};
  try {
    sample_few_shot(c, {1, 0});
    FAIL("expected infeasible");
  } catch (const Error& e) {
    CHECK(e.category() == ErrorCategory::kInfeasible);
    CHECK(std::string(e.what()).find("PERSON") != std::string::npos);
  }
}

TEST_CASE("low-resource sampling draws n distinct sentences in order") {
  Rng rng(11);
  NerCorpus c = random_corpus(rng, three_types(), 200);
  for (std::size_t i = 0; i < c.size(); ++i) c.sentences[i].tokens[0] = "id" + std::to_string(i);
  NerCorpus s = sample_low_resource(c, 64, 5);
  REQUIRE(s.size() == 64);
  std::vector<int> ids;
  for (const auto& sent : s.sentences) ids.push_back(std::stoi(sent.tokens[0].substr(2)));
  CHECK(std::is_sorted(ids.begin(), ids.end()));
  CHECK(std::adjacent_find(ids.begin(), ids.end()) == ids.end());
  CHECK(sample_low_resource(c, 64, 5) == s);
  CHECK_FALSE(sample_low_resource(c, 64, 6) == s);
  CHECK(category_of([&] { sample_low_resource(c, 201, 0); }) == ErrorCategory::kInfeasible);
}

TEST_CASE("length filter uses the marker-rendered length inclusively") {
  TaggedSentence s = make_sentence({"John", "Smith", "ran"}, {"B-PERSON", "I-PERSON", "O"});
  CHECK(linearized_length(s) == 5);
  CHECK(linearized_length(s) == render_tokens(linearize(s)).size());
  NerCorpus c;
  c.registry = three_types();
  c.sentences = {s};
  CHECK(filter_by_linearized_length(c, 5).size() == 1);
  CHECK(filter_by_linearized_length(c, 4).size() == 0);
}

TEST_CASE("entity replacement swaps spans of shared classes only") {
  NerCorpus src, tgt;
  src.registry = tgt.registry = three_types();
  src.sentences = {make_sentence({"John", "Smith", "visited", "Paris"}, {"B-PERSON", "I-PERSON", "O", "B-LOC"})};
  tgt.sentences = {make_sentence({"lol", "bob"}, {"O", "B-PERSON"})};
  NerCorpus out = augment_entity_replacement(src, tgt, 1);
  REQUIRE(out.size() == 1);
  CHECK(out.sentences[0] == make_sentence({"bob", "visited", "Paris"}, {"B-PERSON", "O", "B-LOC"}));
}

TEST_CASE("synthetic corpus is deterministic and parallel") {
  SynthConfig cfg = SynthConfig::defaults();
  cfg.num_pairs = 50;
  cfg.num_source = 30;
  cfg.num_target = 30;
  SynthResult a = make_synthetic_style_corpus(cfg, 9);
  SynthResult b = make_synthetic_style_corpus(cfg, 9);
  CHECK(a.pairs == b.pairs);
  CHECK(a.source == b.source);
  CHECK(a.target == b.target);
  CHECK(a.pairs.size() == 50);
  for (const auto& p : a.pairs) {
    CHECK_FALSE(bio_violation(p.source_side));
    CHECK_FALSE(bio_violation(p.target_side));
  }
  validate_corpus(a.source);
  validate_corpus(a.target);
  CHECK(a.target.style == Style::kTarget);
}
