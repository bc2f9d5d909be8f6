#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "stner/corpus.hpp"
#include "stner/linearize.hpp"

namespace stner {

using TokenId = std::int32_t;

// Token <-> id bijection shared by the generator, the decoding automaton and
// the checkpoint format. Layout: specials, then START/END markers per
// registered type (registry order), then prefix words, then corpus tokens in
// order of first appearance.
class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kBos = 1;
  static constexpr TokenId kEos = 2;
  static constexpr TokenId kUnk = 3;
  static constexpr std::string_view kPadToken = "<PAD>";
  static constexpr std::string_view kBosToken = "<BOS>";
  static constexpr std::string_view kEosToken = "<EOS>";
  static constexpr std::string_view kUnkToken = "<UNK>";

  Vocabulary() = default;

  static Vocabulary build(const TypeRegistry& registry, const PrefixConfig& prefixes,
                          const std::vector<std::vector<std::string>>& token_lists);

  // Restores a vocabulary from its full token list (as stored in checkpoints);
  // validates that the layout matches the registry and prefixes.
  static Vocabulary from_tokens(std::vector<std::string> tokens, const TypeRegistry& registry,
                                const PrefixConfig& prefixes);

  std::size_t size() const { return tokens_.size(); }
  bool contains(std::string_view token) const;
  // UNK for unknown tokens.
  TokenId id(std::string_view token) const;
  const std::string& token(TokenId id) const;

  TokenId start_marker_id(std::size_t type_index) const;
  TokenId end_marker_id(std::size_t type_index) const;
  const std::vector<TokenId>& prefix_ids(Direction d) const;

  std::vector<TokenId> encode(const std::vector<std::string>& tokens) const;
  std::vector<std::string> decode(const std::vector<TokenId>& ids) const;

  const TypeRegistry& registry() const { return registry_; }
  const PrefixConfig& prefixes() const { return prefixes_; }
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  void add(const std::string& token);
  void index_structure();

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> ids_;
  TypeRegistry registry_;
  PrefixConfig prefixes_;
  std::vector<TokenId> forward_prefix_;
  std::vector<TokenId> backward_prefix_;
};

}  // namespace stner
