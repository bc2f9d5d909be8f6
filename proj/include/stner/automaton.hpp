#pragma once

#include <cstddef>
#include <vector>

#include "stner/vocab.hpp"

namespace stner {

// Prefix-tree decoding constraints over the marker-rendered format.
//
//   <BOS> -> AtStart
//   AtStart  --Ordinary-->     InText
//   AtStart  --<START_T>-->    InEntity(T, 0)
//   InText   --Ordinary-->     InText
//   InText   --<START_T>-->    InEntity(T, 0)
//   InText   --<EOS>-->        Done
//   InEntity(T, n) --Ordinary-->  InEntity(T, n + 1)
//   InEntity(T, n >= 1) --<END_T>--> InText
//
// A step budget additionally removes every token after which the shortest
// remaining path to <EOS> would no longer fit, so each walk terminates validly
// within max_len emitted tokens (counting <EOS>).

enum class TokenClassKind { kOrdinary, kStartMarker, kEndMarker, kBos, kEos, kSpecial };

struct TokenClass {
  TokenClassKind kind = TokenClassKind::kOrdinary;
  int entity_type = -1;  // registry index for markers
};

enum class Phase { kAtStart, kInText, kInEntity, kDone };

struct DecoderState {
  Phase phase = Phase::kAtStart;
  int entity_type = -1;            // valid in kInEntity
  std::size_t tokens_inside = 0;   // valid in kInEntity
  std::size_t emitted_segments = 0;
  std::size_t steps = 0;           // tokens consumed, <EOS> included
  bool text_open = false;          // an ordinary token continues the current text segment

  bool operator==(const DecoderState&) const = default;
};

struct TokenMask {
  std::vector<char> allowed;  // indexed by token id

  bool contains(TokenId id) const {
    return id >= 0 && static_cast<std::size_t>(id) < allowed.size() && allowed[static_cast<std::size_t>(id)];
  }
  std::size_t count() const;
};

class ConstraintAutomaton {
 public:
  explicit ConstraintAutomaton(const Vocabulary& vocab);

  const TokenClass& classify(TokenId id) const { return classes_.at(static_cast<std::size_t>(id)); }
  std::size_t vocab_size() const { return classes_.size(); }

  DecoderState initial_state() const { return {}; }
  // Throws for unreachable states (terminal, or budget already exhausted).
  TokenMask allowed_mask(const DecoderState& state, std::size_t max_len) const;
  // Grammar transition; throws on tokens the grammar forbids in `state`.
  DecoderState step(const DecoderState& state, TokenId token) const;
  static bool is_terminal(const DecoderState& state) { return state.phase == Phase::kDone; }

  // Fewest tokens (including <EOS>) needed to terminate from `state`.
  static std::size_t tokens_to_finish(const DecoderState& state);

 private:
  bool grammatical(const DecoderState& state, const TokenClass& cls) const;

  std::vector<TokenClass> classes_;
};

}  // namespace stner
