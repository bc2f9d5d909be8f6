#include "stner/automaton.hpp"

#include <algorithm>
#include <numeric>

#include "stner/error.hpp"

namespace stner {

std::size_t TokenMask::count() const {
  return static_cast<std::size_t>(std::count(allowed.begin(), allowed.end(), char{1}));
}

ConstraintAutomaton::ConstraintAutomaton(const Vocabulary& vocab) : classes_(vocab.size()) {
  classes_[Vocabulary::kPad] = {TokenClassKind::kSpecial, -1};
  classes_[Vocabulary::kUnk] = {TokenClassKind::kSpecial, -1};
  classes_[Vocabulary::kBos] = {TokenClassKind::kBos, -1};
  classes_[Vocabulary::kEos] = {TokenClassKind::kEos, -1};
  for (std::size_t t = 0; t < vocab.registry().size(); ++t) {
    classes_[static_cast<std::size_t>(vocab.start_marker_id(t))] = {TokenClassKind::kStartMarker,
                                                                    static_cast<int>(t)};
    classes_[static_cast<std::size_t>(vocab.end_marker_id(t))] = {TokenClassKind::kEndMarker,
                                                                  static_cast<int>(t)};
  }
}

bool ConstraintAutomaton::grammatical(const DecoderState& state, const TokenClass& cls) const {
  switch (state.phase) {
    case Phase::kAtStart:
      return cls.kind == TokenClassKind::kOrdinary || cls.kind == TokenClassKind::kStartMarker;
    case Phase::kInText:
      return cls.kind == TokenClassKind::kOrdinary || cls.kind == TokenClassKind::kStartMarker ||
             cls.kind == TokenClassKind::kEos;
    case Phase::kInEntity:
      return cls.kind == TokenClassKind::kOrdinary ||
             (cls.kind == TokenClassKind::kEndMarker && cls.entity_type == state.entity_type &&
              state.tokens_inside >= 1);
    case Phase::kDone:
      return false;
  }
  return false;
}

std::size_t ConstraintAutomaton::tokens_to_finish(const DecoderState& state) {
  switch (state.phase) {
    case Phase::kAtStart:
      return 2;
    case Phase::kInText:
      return 1;
    case Phase::kInEntity:
      return state.tokens_inside >= 1 ? 2 : 3;
    case Phase::kDone:
      return 0;
  }
  return 0;
}

TokenMask ConstraintAutomaton::allowed_mask(const DecoderState& state, std::size_t max_len) const {
  if (state.phase == Phase::kDone) throw usage_error("allowed_mask: state is terminal");
  if (state.phase == Phase::kInEntity &&
      (state.entity_type < 0 || static_cast<std::size_t>(state.entity_type) * 2 + 5 >= classes_.size()))
    throw usage_error("allowed_mask: unreachable entity state");
  if (state.steps >= max_len || tokens_to_finish(state) > max_len - state.steps)
    throw usage_error("allowed_mask: state exceeds the step budget");

  const std::size_t remaining_after = max_len - state.steps - 1;
  TokenMask mask;
  mask.allowed.assign(classes_.size(), 0);

  // Tokens of one class lead to the same successor shape, so the budget test is
  // evaluated once per class.
  auto fits = [&](TokenClassKind kind) {
    DecoderState next = state;
    switch (kind) {
      case TokenClassKind::kOrdinary:
        if (state.phase == Phase::kInEntity) {
          ++next.tokens_inside;
        } else {
          next.phase = Phase::kInText;
        }
        break;
      case TokenClassKind::kStartMarker:
        next.phase = Phase::kInEntity;
        next.tokens_inside = 0;
        break;
      case TokenClassKind::kEndMarker:
        next.phase = Phase::kInText;
        break;
      case TokenClassKind::kEos:
        next.phase = Phase::kDone;
        break;
      default:
        return false;
    }
    return tokens_to_finish(next) <= remaining_after;
  };
  const bool ordinary_fits = fits(TokenClassKind::kOrdinary);
  const bool start_fits = fits(TokenClassKind::kStartMarker);
  const bool end_fits = fits(TokenClassKind::kEndMarker);
  const bool eos_fits = fits(TokenClassKind::kEos);

  for (std::size_t id = 0; id < classes_.size(); ++id) {
    const TokenClass& cls = classes_[id];
    if (!grammatical(state, cls)) continue;
    bool ok = false;
    switch (cls.kind) {
      case TokenClassKind::kOrdinary:
        ok = ordinary_fits;
        break;
      case TokenClassKind::kStartMarker:
        ok = start_fits;
        break;
      case TokenClassKind::kEndMarker:
        ok = end_fits;
        break;
      case TokenClassKind::kEos:
        ok = eos_fits;
        break;
      default:
        break;
    }
    mask.allowed[id] = ok;
  }
  return mask;
}

DecoderState ConstraintAutomaton::step(const DecoderState& state, TokenId token) const {
  if (token < 0 || static_cast<std::size_t>(token) >= classes_.size())
    throw usage_error("step: token id " + std::to_string(token) + " out of range");
  const TokenClass& cls = classes_[static_cast<std::size_t>(token)];
  if (!grammatical(state, cls))
    throw usage_error("step: illegal token id " + std::to_string(token) + " in current state");
  DecoderState next = state;
  ++next.steps;
  switch (cls.kind) {
    case TokenClassKind::kOrdinary:
      if (state.phase == Phase::kInEntity) {
        ++next.tokens_inside;
      } else {
        if (!state.text_open) ++next.emitted_segments;
        next.phase = Phase::kInText;
        next.text_open = true;
      }
      break;
    case TokenClassKind::kStartMarker:
      next.phase = Phase::kInEntity;
      next.entity_type = cls.entity_type;
      next.tokens_inside = 0;
      next.text_open = false;
      ++next.emitted_segments;
      break;
    case TokenClassKind::kEndMarker:
      next.phase = Phase::kInText;
      next.entity_type = -1;
      next.tokens_inside = 0;
      next.text_open = false;
      break;
    case TokenClassKind::kEos:
      next.phase = Phase::kDone;
      break;
    default:
      break;
  }
  return next;
}

}  // namespace stner
