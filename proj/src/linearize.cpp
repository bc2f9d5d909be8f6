#include "stner/linearize.hpp"

#include <algorithm>
#include <sstream>

#include "stner/error.hpp"

namespace stner {

namespace {

std::vector<std::string> split_ws(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> out;
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

constexpr std::string_view kStart = "<START_";
constexpr std::string_view kEnd = "<END_";

std::optional<std::string> marker_type(std::string_view token, std::string_view head) {
  if (token.size() <= head.size() + 1 || token.substr(0, head.size()) != head ||
      token.back() != '>')
    return std::nullopt;
  std::string type(token.substr(head.size(), token.size() - head.size() - 1));
  if (!is_valid_type_name(type)) return std::nullopt;
  return type;
}

}  // namespace

std::vector<std::string> TaskPrefix::tokens() const { return split_ws(text); }

TaskPrefix PrefixConfig::prefix(Direction d) const {
  return {d, d == Direction::kSourceToTarget ? source_to_target : target_to_source};
}

void PrefixConfig::validate() const {
  for (const auto* p : {&source_to_target, &target_to_source}) {
    if (p->size() < 3 || p->substr(p->size() - 2) != ": " || split_ws(*p).empty())
      throw usage_error("task prefix '" + *p + "' must be non-empty and end with \": \"");
  }
  if (source_to_target == target_to_source) throw usage_error("task prefixes must differ");
}

Direction reverse(Direction d) {
  return d == Direction::kSourceToTarget ? Direction::kTargetToSource : Direction::kSourceToTarget;
}

std::string start_marker(std::string_view type) { return std::string(kStart) + std::string(type) + ">"; }
std::string end_marker(std::string_view type) { return std::string(kEnd) + std::string(type) + ">"; }

std::optional<std::string> start_marker_type(std::string_view token) {
  return marker_type(token, kStart);
}
std::optional<std::string> end_marker_type(std::string_view token) {
  return marker_type(token, kEnd);
}

LinearizedSentence linearize(const TaggedSentence& sentence, std::optional<TaskPrefix> prefix) {
  LinearizedSentence lin;
  lin.prefix = std::move(prefix);
  std::size_t i = 0;
  const std::size_t n = sentence.size();
  while (i < n) {
    if (sentence.tags[i].kind == BioKind::kO) {
      TextSegment text;
      while (i < n && sentence.tags[i].kind == BioKind::kO) text.tokens.push_back(sentence.tokens[i++]);
      lin.segments.emplace_back(std::move(text));
    } else {
      EntitySegment ent{sentence.tags[i].type, {sentence.tokens[i]}};
      ++i;
      while (i < n && sentence.tags[i].kind == BioKind::kI) ent.tokens.push_back(sentence.tokens[i++]);
      lin.segments.emplace_back(std::move(ent));
    }
  }
  return lin;
}

TaggedSentence delinearize(const LinearizedSentence& lin) {
  TaggedSentence s;
  for (const auto& seg : lin.segments) {
    if (const auto* text = std::get_if<TextSegment>(&seg)) {
      for (const auto& t : text->tokens) {
        s.tokens.push_back(t);
        s.tags.push_back(BioTag::outside());
      }
    } else {
      const auto& ent = std::get<EntitySegment>(seg);
      for (std::size_t i = 0; i < ent.tokens.size(); ++i) {
        s.tokens.push_back(ent.tokens[i]);
        s.tags.push_back(i == 0 ? BioTag::begin(ent.type) : BioTag::inside(ent.type));
      }
    }
  }
  return s;
}

std::vector<std::string> render_tokens(const LinearizedSentence& lin) {
  std::vector<std::string> out;
  if (lin.prefix) out = lin.prefix->tokens();
  for (const auto& seg : lin.segments) {
    if (const auto* text = std::get_if<TextSegment>(&seg)) {
      out.insert(out.end(), text->tokens.begin(), text->tokens.end());
    } else {
      const auto& ent = std::get<EntitySegment>(seg);
      out.push_back(start_marker(ent.type));
      out.insert(out.end(), ent.tokens.begin(), ent.tokens.end());
      out.push_back(end_marker(ent.type));
    }
  }
  return out;
}

std::string render(const LinearizedSentence& lin) {
  std::string out;
  for (const auto& t : render_tokens(lin)) {
    if (!out.empty()) out += ' ';
    out += t;
  }
  return out;
}

std::vector<std::string> surface_tokens(const LinearizedSentence& lin) {
  std::vector<std::string> out;
  for (const auto& seg : lin.segments) {
    const auto& toks = std::holds_alternative<TextSegment>(seg) ? std::get<TextSegment>(seg).tokens
                                                                : std::get<EntitySegment>(seg).tokens;
    out.insert(out.end(), toks.begin(), toks.end());
  }
  return out;
}

std::string_view to_string(ParseErrorCode code) {
  switch (code) {
    case ParseErrorCode::kUnclosedEntity:
      return "UnclosedEntity";
    case ParseErrorCode::kTypeMismatch:
      return "TypeMismatch";
    case ParseErrorCode::kNestedEntity:
      return "NestedEntity";
    case ParseErrorCode::kEmptyEntity:
      return "EmptyEntity";
    case ParseErrorCode::kStrayEndMarker:
      return "StrayEndMarker";
    case ParseErrorCode::kEmptySentence:
      return "EmptySentence";
  }
  return "Unknown";
}

ParseResult parse_rendered(const std::vector<std::string>& tokens, const TypeRegistry& registry,
                           const PrefixConfig* prefixes) {
  LinearizedSentence lin;
  std::size_t pos = 0;
  if (prefixes) {
    for (Direction d : {Direction::kSourceToTarget, Direction::kTargetToSource}) {
      TaskPrefix p = prefixes->prefix(d);
      auto ptoks = p.tokens();
      if (ptoks.size() <= tokens.size() &&
          std::equal(ptoks.begin(), ptoks.end(), tokens.begin())) {
        lin.prefix = std::move(p);
        pos = ptoks.size();
        break;
      }
    }
  }

  auto registered = [&](const std::optional<std::string>& t) { return t && registry.contains(*t); };

  std::optional<EntitySegment> open;
  for (; pos < tokens.size(); ++pos) {
    const std::string& tok = tokens[pos];
    auto start = start_marker_type(tok);
    auto end = end_marker_type(tok);
    if (registered(start)) {
      if (open) return ParseError{ParseErrorCode::kNestedEntity, pos};
      open = EntitySegment{*start, {}};
    } else if (registered(end)) {
      if (!open) return ParseError{ParseErrorCode::kStrayEndMarker, pos};
      if (*end != open->type) return ParseError{ParseErrorCode::kTypeMismatch, pos};
      if (open->tokens.empty()) return ParseError{ParseErrorCode::kEmptyEntity, pos};
      lin.segments.emplace_back(std::move(*open));
      open.reset();
    } else if (open) {
      open->tokens.push_back(tok);
    } else if (!lin.segments.empty() && std::holds_alternative<TextSegment>(lin.segments.back())) {
      std::get<TextSegment>(lin.segments.back()).tokens.push_back(tok);
    } else {
      lin.segments.emplace_back(TextSegment{{tok}});
    }
  }
  if (open) return ParseError{ParseErrorCode::kUnclosedEntity, tokens.size()};
  if (lin.segments.empty()) return ParseError{ParseErrorCode::kEmptySentence, tokens.size()};
  return lin;
}

}  // namespace stner
