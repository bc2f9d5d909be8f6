#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <deque>
#include <map>

#include "stner/automaton.hpp"
#include "support.hpp"

using namespace stner;
using stner::testing::three_types;

namespace {

Vocabulary small_vocab() {
  return Vocabulary::build(three_types(), PrefixConfig{}, {{"a", "b", "c"}});
}

std::optional<DecoderState> try_step(const ConstraintAutomaton& a, const DecoderState& s, TokenId t) {
  try {
    return a.step(s, t);
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

// Breadth-first search over grammar transitions for the fewest tokens to
// reach a terminal state; capped to keep the search finite.
std::size_t bfs_to_finish(const ConstraintAutomaton& a, const DecoderState& start) {
  if (ConstraintAutomaton::is_terminal(start)) return 0;
  std::deque<std::pair<DecoderState, std::size_t>> q{{start, 0}};
  while (!q.empty()) {
    auto [s, d] = q.front();
    q.pop_front();
    if (d > 6) break;
    for (TokenId t = 0; t < static_cast<TokenId>(a.vocab_size()); ++t)
      if (auto n = try_step(a, s, t)) {
        if (ConstraintAutomaton::is_terminal(*n)) return d + 1;
        q.push_back({*n, d + 1});
      }
  }
  return 1000;
}

}  // namespace

TEST_CASE("token classes follow the vocabulary layout") {
  Vocabulary v = small_vocab();
  ConstraintAutomaton a(v);
  CHECK(a.classify(Vocabulary::kEos).kind == TokenClassKind::kEos);
  CHECK(a.classify(Vocabulary::kBos).kind == TokenClassKind::kBos);
  CHECK(a.classify(v.start_marker_id(1)).kind == TokenClassKind::kStartMarker);
  CHECK(a.classify(v.start_marker_id(1)).entity_type == 1);
  CHECK(a.classify(v.end_marker_id(2)).kind == TokenClassKind::kEndMarker);
  CHECK(a.classify(v.id("a")).kind == TokenClassKind::kOrdinary);
  CHECK(a.vocab_size() == v.size());
}

TEST_CASE("grammar transitions") {
  Vocabulary v = small_vocab();
  ConstraintAutomaton a(v);
  auto s = a.initial_state();
  auto m = a.allowed_mask(s, 65);
  CHECK_FALSE(m.contains(Vocabulary::kEos));
  CHECK_FALSE(m.contains(v.end_marker_id(0)));
  CHECK(m.contains(v.start_marker_id(0)));
  CHECK_FALSE(m.contains(Vocabulary::kPad));
  CHECK_FALSE(m.contains(Vocabulary::kBos));
  s = a.step(s, v.start_marker_id(0));
  m = a.allowed_mask(s, 65);
  CHECK_FALSE(m.contains(v.end_marker_id(0)));  // empty entity
  CHECK_FALSE(m.contains(v.start_marker_id(1)));  // nesting
  s = a.step(s, v.id("a"));
  m = a.allowed_mask(s, 65);
  CHECK(m.contains(v.end_marker_id(0)));
  CHECK_FALSE(m.contains(v.end_marker_id(1)));  // type mismatch
  CHECK_FALSE(m.contains(Vocabulary::kEos));    // unclosed entity
  s = a.step(s, v.end_marker_id(0));
  CHECK(a.allowed_mask(s, 65).contains(Vocabulary::kEos));
  s = a.step(s, Vocabulary::kEos);
  CHECK(ConstraintAutomaton::is_terminal(s));
  CHECK_THROWS(a.allowed_mask(s, 65));
  CHECK_THROWS(a.step(a.initial_state(), Vocabulary::kEos));
}

TEST_CASE("mask equals grammatical tokens whose successor can still finish") {
  Vocabulary v = small_vocab();
  ConstraintAutomaton a(v);
  Rng rng(1);
  for (int walk = 0; walk < 300; ++walk) {
    const std::size_t max_len = 2 + rng.below(10);
    DecoderState s = a.initial_state();
    while (!ConstraintAutomaton::is_terminal(s)) {
      TokenMask m = a.allowed_mask(s, max_len);
      std::vector<TokenId> allowed;
      for (TokenId t = 0; t < static_cast<TokenId>(v.size()); ++t) {
        auto n = try_step(a, s, t);
        const bool expect = n && n->steps <= max_len && bfs_to_finish(a, *n) <= max_len - n->steps;
        CHECK(m.contains(t) == expect);
        if (m.contains(t)) allowed.push_back(t);
      }
      REQUIRE_FALSE(allowed.empty());
      s = a.step(s, allowed[rng.below(allowed.size())]);
    }
    CHECK(s.steps <= max_len);
  }
}

TEST_CASE("tokens_to_finish matches search") {
  Vocabulary v = small_vocab();
  ConstraintAutomaton a(v);
  DecoderState s = a.initial_state();
  CHECK(ConstraintAutomaton::tokens_to_finish(s) == bfs_to_finish(a, s));
  s = a.step(s, v.start_marker_id(2));
  CHECK(ConstraintAutomaton::tokens_to_finish(s) == bfs_to_finish(a, s));
  s = a.step(s, v.id("b"));
  CHECK(ConstraintAutomaton::tokens_to_finish(s) == bfs_to_finish(a, s));
  s = a.step(s, v.end_marker_id(2));
  CHECK(ConstraintAutomaton::tokens_to_finish(s) == bfs_to_finish(a, s));
}

TEST_CASE("every masked random walk renders to a parseable sentence") {
  Vocabulary v = small_vocab();
  ConstraintAutomaton a(v);
  Rng rng(9);
  for (int walk = 0; walk < 2000; ++walk) {
    const std::size_t max_len = 2 + rng.below(30);
    DecoderState s = a.initial_state();
    std::vector<TokenId> ids;
    while (!ConstraintAutomaton::is_terminal(s)) {
      TokenMask m = a.allowed_mask(s, max_len);
      std::vector<TokenId> allowed;
      for (TokenId t = 0; t < static_cast<TokenId>(v.size()); ++t)
        if (m.contains(t)) allowed.push_back(t);
      const TokenId t = allowed[rng.below(allowed.size())];
      ids.push_back(t);
      s = a.step(s, t);
    }
    CHECK(ids.size() <= max_len);
    ids.pop_back();
    CHECK(testing::oracle_accepts(v.decode(ids), v.registry()));
  }
}

TEST_CASE("budget of two forces a one-word sentence") {
  Vocabulary v = small_vocab();
  ConstraintAutomaton a(v);
  DecoderState s = a.initial_state();
  TokenMask m = a.allowed_mask(s, 2);
  CHECK_FALSE(m.contains(v.start_marker_id(0)));
  CHECK(m.contains(v.id("a")));
  s = a.step(s, v.id("a"));
  m = a.allowed_mask(s, 2);
  CHECK(m.count() == 1);
  CHECK(m.contains(Vocabulary::kEos));
}
