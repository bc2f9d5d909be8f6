#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "stner/corpus.hpp"

namespace stner {

enum class Direction { kSourceToTarget, kTargetToSource };

struct TaskPrefix {
  Direction direction = Direction::kSourceToTarget;
  std::string text;  // ends with ": "

  std::vector<std::string> tokens() const;
  bool operator==(const TaskPrefix&) const = default;
};

// The two configured prefix strings.
struct PrefixConfig {
  std::string source_to_target = "transfer source to target: ";
  std::string target_to_source = "transfer target to source: ";

  TaskPrefix prefix(Direction d) const;
  void validate() const;
};

Direction reverse(Direction d);

struct TextSegment {
  std::vector<std::string> tokens;
  bool operator==(const TextSegment&) const = default;
};

struct EntitySegment {
  std::string type;
  std::vector<std::string> tokens;  // non-empty
  bool operator==(const EntitySegment&) const = default;
};

using Segment = std::variant<TextSegment, EntitySegment>;

struct LinearizedSentence {
  std::optional<TaskPrefix> prefix;
  std::vector<Segment> segments;

  bool operator==(const LinearizedSentence&) const = default;
};

std::string start_marker(std::string_view type);
std::string end_marker(std::string_view type);
// Entity type of a `<START_T>` / `<END_T>` token, or nullopt.
std::optional<std::string> start_marker_type(std::string_view token);
std::optional<std::string> end_marker_type(std::string_view token);

LinearizedSentence linearize(const TaggedSentence& sentence,
                             std::optional<TaskPrefix> prefix = std::nullopt);
TaggedSentence delinearize(const LinearizedSentence& lin);

// Marker-rendered tokens, prefix first when present.
std::vector<std::string> render_tokens(const LinearizedSentence& lin);
std::string render(const LinearizedSentence& lin);
// Surface tokens only: no prefix, no markers.
std::vector<std::string> surface_tokens(const LinearizedSentence& lin);

enum class ParseErrorCode {
  kUnclosedEntity,
  kTypeMismatch,
  kNestedEntity,
  kEmptyEntity,
  kStrayEndMarker,
  kEmptySentence,
};

std::string_view to_string(ParseErrorCode code);

struct ParseError {
  ParseErrorCode code;
  std::size_t token_index;  // offending token; the token count for end-of-input errors
  bool operator==(const ParseError&) const = default;
};

using ParseResult = std::variant<LinearizedSentence, ParseError>;

// Recognizes: [prefix] segment+, where an entity span is
// `<START_T> token+ <END_T>` with registered T and no nesting. Marker-shaped
// tokens of unregistered types are ordinary tokens. A leading prefix is
// recognized only if `prefixes` is given.
ParseResult parse_rendered(const std::vector<std::string>& tokens, const TypeRegistry& registry,
                           const PrefixConfig* prefixes = nullptr);

}  // namespace stner
