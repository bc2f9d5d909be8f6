#include "stner/synth.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

#include "stner/error.hpp"
#include "stner/rng.hpp"

namespace stner {

namespace {

std::vector<std::string> split_ws(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> out;
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

struct Item {
  bool is_slot = false;
  std::string text;  // literal token or slot type
};

using Template = std::vector<Item>;

struct Substitution {
  std::vector<std::string> from;
  std::vector<std::string> to;
};

// A realized sentence before style rendering: literal tokens and entity spans.
struct Filled {
  struct Piece {
    bool is_entity = false;
    std::string type;
    std::vector<std::string> tokens;
  };
  std::vector<Piece> pieces;
};

std::string lowercase(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

class Grammar {
 public:
  explicit Grammar(const SynthConfig& config) : config_(config) {
    if (config.templates.empty()) throw usage_error("synthetic corpus needs at least one template");
    for (const auto& [type, entries] : config.lexicon) {
      if (!is_valid_type_name(type)) throw usage_error("invalid lexicon class '" + type + "'");
      if (entries.empty()) throw usage_error("empty lexicon for class " + type);
      registry_.add(type);
      auto& parsed = lexicon_[type];
      for (const auto& e : entries) {
        auto toks = split_ws(e);
        if (toks.empty()) throw usage_error("blank lexicon entry for class " + type);
        parsed.push_back(std::move(toks));
      }
    }
    for (const auto& t : config.templates) {
      Template parsed;
      for (auto& tok : split_ws(t)) {
        if (tok.size() > 2 && tok.front() == '<' && tok.back() == '>') {
          std::string type = tok.substr(1, tok.size() - 2);
          if (!lexicon_.count(type)) throw usage_error("empty lexicon for class " + type);
          parsed.push_back({true, type});
        } else {
          parsed.push_back({false, tok});
        }
      }
      if (parsed.empty()) throw usage_error("blank template");
      templates_.push_back(std::move(parsed));
    }
    for (const auto& [from, to] : config.substitutions) {
      Substitution s{split_ws(from), split_ws(to)};
      if (s.from.empty()) throw usage_error("substitution with empty source phrase");
      subs_.push_back(std::move(s));
    }
    // Longest source phrase first; stable keeps table order among equals.
    std::stable_sort(subs_.begin(), subs_.end(), [](const Substitution& a, const Substitution& b) {
      return a.from.size() > b.from.size();
    });
  }

  const TypeRegistry& registry() const { return registry_; }

  Filled draw(Rng& rng) const {
    const Template& tpl = templates_[rng.below(templates_.size())];
    Filled f;
    for (const auto& item : tpl) {
      if (item.is_slot) {
        const auto& entries = lexicon_.at(item.text);
        f.pieces.push_back({true, item.text, entries[rng.below(entries.size())]});
      } else if (!f.pieces.empty() && !f.pieces.back().is_entity) {
        f.pieces.back().tokens.push_back(item.text);
      } else {
        f.pieces.push_back({false, "", {item.text}});
      }
    }
    return f;
  }

  static TaggedSentence render(const Filled& f) {
    TaggedSentence s;
    for (const auto& p : f.pieces) {
      for (std::size_t i = 0; i < p.tokens.size(); ++i) {
        s.tokens.push_back(p.tokens[i]);
        if (!p.is_entity)
          s.tags.push_back(BioTag::outside());
        else
          s.tags.push_back(i == 0 ? BioTag::begin(p.type) : BioTag::inside(p.type));
      }
    }
    return s;
  }

  Filled informal(const Filled& formal, Rng& rng) const {
    Filled out;
    for (const auto& p : formal.pieces) {
      if (p.is_entity) {
        auto piece = p;
        if (rng.bernoulli(config_.lowercase_entity_probability))
          for (auto& t : piece.tokens) t = lowercase(t);
        out.pieces.push_back(std::move(piece));
        continue;
      }
      Filled::Piece piece{false, "", substitute(p.tokens)};
      std::vector<std::string> kept;
      for (auto& t : piece.tokens)
        if (!rng.bernoulli(config_.drop_probability)) kept.push_back(t);
      piece.tokens = std::move(kept);
      if (!piece.tokens.empty()) out.pieces.push_back(std::move(piece));
    }
    if (out.pieces.empty()) {
      // Every token was dropped; fall back to the substituted text.
      for (const auto& p : formal.pieces)
        out.pieces.push_back({p.is_entity, p.type, p.is_entity ? p.tokens : substitute(p.tokens)});
    }
    return out;
  }

 private:
  std::vector<std::string> substitute(const std::vector<std::string>& tokens) const {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < tokens.size()) {
      const Substitution* hit = nullptr;
      for (const auto& s : subs_) {
        if (i + s.from.size() > tokens.size()) continue;
        if (std::equal(s.from.begin(), s.from.end(), tokens.begin() + i)) {
          hit = &s;
          break;
        }
      }
      if (hit) {
        out.insert(out.end(), hit->to.begin(), hit->to.end());
        i += hit->from.size();
      } else {
        out.push_back(tokens[i++]);
      }
    }
    if (out.empty()) out = tokens;
    return out;
  }

  const SynthConfig& config_;
  TypeRegistry registry_;
  std::map<std::string, std::vector<std::vector<std::string>>> lexicon_;
  std::vector<Template> templates_;
  std::vector<Substitution> subs_;
};

TaggedSentence strip_tags(TaggedSentence s) {
  for (auto& t : s.tags) t = BioTag::outside();
  return s;
}

}  // namespace

SynthResult make_synthetic_style_corpus(const SynthConfig& config, std::uint64_t seed) {
  Grammar grammar(config);
  SynthResult result;
  result.source = {{}, Style::kSource, grammar.registry()};
  result.target = {{}, Style::kTarget, grammar.registry()};

  for (std::size_t i = 0; i < config.num_pairs; ++i) {
    Rng rng(derive_seed(seed, "synth_pair", {i}));
    Filled formal = grammar.draw(rng);
    Filled informal = grammar.informal(formal, rng);
    ParallelPair pair;
    pair.source_side = Grammar::render(formal);
    pair.target_side = Grammar::render(informal);
    pair.has_ner = config.pairs_with_gold_tags;
    if (!pair.has_ner) {
      pair.source_side = strip_tags(std::move(pair.source_side));
      pair.target_side = strip_tags(std::move(pair.target_side));
    }
    result.pairs.push_back(std::move(pair));
  }
  for (std::size_t i = 0; i < config.num_source; ++i) {
    Rng rng(derive_seed(seed, "synth_source", {i}));
    result.source.sentences.push_back(Grammar::render(grammar.draw(rng)));
  }
  for (std::size_t i = 0; i < config.num_target; ++i) {
    Rng rng(derive_seed(seed, "synth_target", {i}));
    Filled formal = grammar.draw(rng);
    result.target.sentences.push_back(Grammar::render(grammar.informal(formal, rng)));
  }
  return result;
}

SynthConfig SynthConfig::defaults() {
  SynthConfig c;
  c.templates = {
      "<PERSON> will travel to <LOC> next week .",
      "you are going to meet <PERSON> at <ORG> tomorrow .",
      "I do not know whether <PERSON> works for <ORG> .",
      "the weather in <LOC> is very good today .",
      "<ORG> announced that it is going to open an office in <LOC> .",
      "have you seen the new film with <PERSON> ?",
      "I think that <PERSON> is a very good player .",
      "because of the storm , the flights to <LOC> were cancelled .",
      "thank you for the information about <ORG> .",
      "<PERSON> and <PERSON> are going to <LOC> together .",
      "I would like to know more about <ORG> .",
      "yes , I have been to <LOC> before .",
      "you are right , <PERSON> is very funny .",
      "please tell me what <ORG> is doing in <LOC> .",
      "I am not sure that <PERSON> will come tonight .",
      "it is very cold in <LOC> this morning .",
      "<PERSON> said that <ORG> is hiring again .",
      "do you want to go to <LOC> with me ?",
      "I really like the products of <ORG> .",
      "what do you think about <PERSON> ?",
      "my brother works for <ORG> in <LOC> .",
      "I saw <PERSON> at the airport yesterday .",
  };
  c.lexicon = {
      {"PERSON",
       {"Barack Obama", "Taylor Swift", "Lionel Messi", "Maria", "David Miller", "Emma Watson",
        "Kevin", "Angela Merkel", "Serena Williams", "Tom Hanks", "Sarah", "Michael Jordan",
        "Elon Musk", "Alice", "Peter Parker", "Oprah Winfrey", "James", "Linda Chen",
        "Roger Federer", "Anna Schmidt"}},
      {"ORG",
       {"Google", "Microsoft", "United Nations", "Apple", "Amazon", "NASA", "Toyota",
        "Bank of America", "Red Cross", "FIFA", "Harvard University", "BBC", "Intel", "Netflix",
        "World Bank", "Starbucks", "IBM", "General Motors", "Boeing", "Spotify"}},
      {"LOC",
       {"Paris", "New York", "London", "Tokyo", "California", "Berlin", "Mount Everest", "Texas",
        "Chicago", "Sydney", "Rome", "Lake Tahoe", "Toronto", "Hong Kong", "Florida", "Boston",
        "Madrid", "Seattle", "Cairo", "Rio de Janeiro"}},
  };
  c.substitutions = {
      {"you are", "ur"},     {"going to", "gonna"},   {"want to", "wanna"},
      {"would like to", "wanna"}, {"I am", "im"},     {"I", "i"},
      {"do not", "dont"},    {"because", "bcoz"},     {"very", "super"},
      {"yes", "yea"},        {"thank you", "thx"},    {"please", "plz"},
      {"you", "u"},          {"really", "rly"},       {".", "!!"},
      {"tomorrow", "tmrw"},  {"information", "info"}, {"about", "bout"},
      {"before", "b4"},      {"together", "2gether"}, {"what", "wat"},
      {"know", "kno"},       {"good", "gud"},         {"tonight", "2nite"},
      {"the", "da"},         {"with", "w/"},          {"yesterday", "yday"},
  };
  return c;
}

}  // namespace stner
