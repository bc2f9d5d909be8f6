#include "stner/vocab.hpp"

#include "stner/error.hpp"

namespace stner {

void Vocabulary::add(const std::string& token) {
  if (ids_.count(token)) return;
  ids_.emplace(token, static_cast<TokenId>(tokens_.size()));
  tokens_.push_back(token);
}

void Vocabulary::index_structure() {
  forward_prefix_.clear();
  backward_prefix_.clear();
  for (const auto& t : prefixes_.prefix(Direction::kSourceToTarget).tokens()) forward_prefix_.push_back(id(t));
  for (const auto& t : prefixes_.prefix(Direction::kTargetToSource).tokens()) backward_prefix_.push_back(id(t));
}

Vocabulary Vocabulary::build(const TypeRegistry& registry, const PrefixConfig& prefixes,
                             const std::vector<std::vector<std::string>>& token_lists) {
  prefixes.validate();
  Vocabulary v;
  v.registry_ = registry;
  v.prefixes_ = prefixes;
  for (auto special : {kPadToken, kBosToken, kEosToken, kUnkToken}) v.add(std::string(special));
  for (const auto& type : registry.names()) {
    v.add(start_marker(type));
    v.add(end_marker(type));
  }
  for (Direction d : {Direction::kSourceToTarget, Direction::kTargetToSource})
    for (const auto& t : prefixes.prefix(d).tokens()) v.add(t);
  for (const auto& list : token_lists)
    for (const auto& t : list) v.add(t);
  v.index_structure();
  return v;
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens, const TypeRegistry& registry,
                                   const PrefixConfig& prefixes) {
  Vocabulary expected = build(registry, prefixes, {});
  if (tokens.size() < expected.size())
    throw format_error("vocabulary too small for its registry and prefixes");
  for (std::size_t i = 0; i < expected.size(); ++i)
    if (tokens[i] != expected.tokens_[i])
      throw format_error("vocabulary layout mismatch at id " + std::to_string(i) + " ('" +
                         tokens[i] + "' vs '" + expected.tokens_[i] + "')");
  Vocabulary v;
  v.registry_ = registry;
  v.prefixes_ = prefixes;
  for (auto& t : tokens) {
    if (v.ids_.count(t)) throw format_error("duplicate vocabulary token '" + t + "'");
    v.add(t);
  }
  v.index_structure();
  return v;
}

bool Vocabulary::contains(std::string_view token) const { return ids_.count(std::string(token)) > 0; }

TokenId Vocabulary::id(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
    throw usage_error("token id " + std::to_string(id) + " out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

TokenId Vocabulary::start_marker_id(std::size_t type_index) const {
  return static_cast<TokenId>(4 + 2 * type_index);
}

TokenId Vocabulary::end_marker_id(std::size_t type_index) const {
  return static_cast<TokenId>(5 + 2 * type_index);
}

const std::vector<TokenId>& Vocabulary::prefix_ids(Direction d) const {
  return d == Direction::kSourceToTarget ? forward_prefix_ : backward_prefix_;
}

std::vector<TokenId> Vocabulary::encode(const std::vector<std::string>& tokens) const {
  std::vector<TokenId> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(id(t));
  return out;
}

std::vector<std::string> Vocabulary::decode(const std::vector<TokenId>& ids) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (TokenId i : ids) out.push_back(token(i));
  return out;
}

}  // namespace stner
