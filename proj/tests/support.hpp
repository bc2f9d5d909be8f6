#pragma once

// Helpers shared by the unit tests and the acceptance binary: random data
// generators, finite-difference checking, and brute-force reference
// implementations written independently of the library code.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "stner/autodiff.hpp"
#include "stner/corpus.hpp"
#include "stner/linearize.hpp"
#include "stner/model.hpp"
#include "stner/rng.hpp"

namespace stner::testing {

// ---------------------------------------------------------------------------
// Random data

inline const std::vector<std::string>& token_pool() {
  static const std::vector<std::string> pool = {
      "the", "a",     "Paris", "met",  "at", "Acme", "Corp", "John", "Smith", "went", ",",      ".",
      "to",  "über", "日本",  "x",    "-",  "ok",   "lol",  "New",  "York",  "START", "<b>", "END_LOC",
      "'s",  "U.S.", "said",  "from", "in", "42",   "&",    "al",   "b",     "c"};
  return pool;
}

inline TypeRegistry three_types() { return TypeRegistry({"LOC", "ORG", "PERSON"}); }

// A BIO-valid sentence of 1..max_len tokens.
inline TaggedSentence random_sentence(Rng& rng, const TypeRegistry& reg, std::size_t max_len = 20,
                                      double entity_rate = 0.3) {
  const auto& pool = token_pool();
  TaggedSentence s;
  const std::size_t n = 1 + rng.below(max_len);
  std::string open;
  for (std::size_t i = 0; i < n; ++i) {
    s.tokens.push_back(pool[rng.below(pool.size())]);
    const double u = rng.uniform();
    if (!open.empty() && u < 0.4) {
      s.tags.push_back(BioTag::inside(open));
    } else if (u < 0.4 + entity_rate) {
      open = reg.names()[rng.below(reg.size())];
      s.tags.push_back(BioTag::begin(open));
    } else {
      open.clear();
      s.tags.push_back(BioTag::outside());
    }
  }
  return s;
}

inline NerCorpus random_corpus(Rng& rng, const TypeRegistry& reg, std::size_t n, std::size_t max_len = 15) {
  NerCorpus c;
  c.registry = reg;
  for (std::size_t i = 0; i < n; ++i) c.sentences.push_back(random_sentence(rng, reg, max_len));
  return c;
}

// ---------------------------------------------------------------------------
// Finite differences

inline std::string sci(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6e", x);
  return buf;
}

struct GradCheck {
  double max_rel = 0.0;
  std::size_t checked = 0;
  std::size_t failures = 0;
  std::string worst;
};

// Five-point central differences over every entry of every tensor. `loss` must
// evaluate the objective without side effects on the values. An entry passes
// when |a - n| <= tol * max(|a|, |n|), or when both are below `zero_floor`,
// which sits above the roundoff of the difference quotient (~1e-12 at h=1e-3).
inline GradCheck check_gradients(const std::vector<ad::Tensor*>& tensors, const std::function<double()>& loss,
                                 const std::function<void()>& analytic, double h = 1e-3, double tol = 1e-4,
                                 double zero_floor = 1e-8) {
  for (auto* t : tensors) t->zero_grad();
  analytic();
  std::vector<ad::Matrix> grads;
  for (auto* t : tensors) grads.push_back(t->grad);
  GradCheck out;
  for (std::size_t k = 0; k < tensors.size(); ++k) {
    ad::Matrix& v = tensors[k]->value;
    for (Eigen::Index j = 0; j < v.cols(); ++j)
      for (Eigen::Index i = 0; i < v.rows(); ++i) {
        const double orig = v(i, j);
        auto at = [&](double x) {
          v(i, j) = x;
          return loss();
        };
        const double d1 = at(orig + h) - at(orig - h);
        const double d2 = at(orig + 2 * h) - at(orig - 2 * h);
        v(i, j) = orig;
        const double num = (8 * d1 - d2) / (12 * h);
        const double ana = grads[k](i, j);
        const double diff = std::abs(ana - num);
        const double scale = std::max(std::abs(ana), std::abs(num));
        const double rel = scale > 0 ? diff / scale : 0.0;
        ++out.checked;
        const bool ok = diff <= tol * scale || (std::abs(ana) < zero_floor && std::abs(num) < zero_floor);
        if (!ok) {
          ++out.failures;
          if (rel > out.max_rel) {
            out.max_rel = rel;
            out.worst = tensors[k]->name + "(" + std::to_string(i) + "," + std::to_string(j) +
                        ") analytic=" + sci(ana) + " numeric=" + sci(num);
          }
        } else if (scale >= zero_floor) {
          out.max_rel = std::max(out.max_rel, rel);
        }
      }
  }
  for (auto* t : tensors) t->zero_grad();
  return out;
}

// ---------------------------------------------------------------------------
// Oracles

// Recognizer for the rendered grammar written as an explicit scan over
// (marker?, type) tokens. Returns true iff the token list is a well-formed
// sentence: at least one segment, entity spans non-empty, matched and flat.
inline bool oracle_accepts(const std::vector<std::string>& tokens, const TypeRegistry& reg) {
  auto kind = [&](const std::string& t) -> std::pair<int, std::string> {
    for (const auto& ty : reg.names()) {
      if (t == "<START_" + ty + ">") return {1, ty};
      if (t == "<END_" + ty + ">") return {2, ty};
    }
    return {0, ""};
  };
  if (tokens.empty()) return false;
  std::optional<std::string> open;
  std::size_t inside = 0;
  for (const auto& t : tokens) {
    auto [k, ty] = kind(t);
    if (k == 1) {
      if (open) return false;
      open = ty;
      inside = 0;
    } else if (k == 2) {
      if (!open || *open != ty || inside == 0) return false;
      open.reset();
    } else if (open) {
      ++inside;
    }
  }
  return !open;
}

// Spans as (start, end, type) from a run-length pass: a run is a maximal
// stretch of entity tokens of one type not interrupted by a B tag.
inline std::set<std::tuple<std::size_t, std::size_t, std::string>> oracle_spans(const TaggedSentence& s) {
  std::set<std::tuple<std::size_t, std::size_t, std::string>> out;
  std::size_t i = 0;
  while (i < s.tags.size()) {
    if (!s.tags[i].is_entity()) {
      ++i;
      continue;
    }
    const std::string ty = s.tags[i].type;
    std::size_t j = i + 1;
    while (j < s.tags.size() && s.tags[j].kind == BioKind::kI && s.tags[j].type == ty) ++j;
    out.insert({i, j, ty});
    i = j;
  }
  return out;
}

struct OracleF1 {
  std::size_t tp = 0, fp = 0, fn = 0;
  double f1 = 0.0;
};

inline OracleF1 oracle_micro_f1(const NerCorpus& gold, const NerCorpus& pred) {
  std::set<std::tuple<std::size_t, std::size_t, std::size_t, std::string>> g, p;
  for (std::size_t k = 0; k < gold.sentences.size(); ++k)
    for (const auto& [a, b, t] : oracle_spans(gold.sentences[k])) g.insert({k, a, b, t});
  for (std::size_t k = 0; k < pred.sentences.size(); ++k)
    for (const auto& [a, b, t] : oracle_spans(pred.sentences[k])) p.insert({k, a, b, t});
  OracleF1 r;
  for (const auto& x : p) (g.count(x) ? r.tp : r.fp)++;
  for (const auto& x : g)
    if (!p.count(x)) ++r.fn;
  const double denom = 2.0 * r.tp + r.fp + r.fn;
  r.f1 = denom > 0 ? 2.0 * r.tp / denom : 0.0;
  return r;
}

// Quadratic Levenshtein DP over code points.
inline std::size_t oracle_levenshtein(const std::u32string& a, const std::u32string& b) {
  std::vector<std::vector<std::size_t>> d(a.size() + 1, std::vector<std::size_t>(b.size() + 1));
  for (std::size_t i = 0; i <= a.size(); ++i) d[i][0] = i;
  for (std::size_t j = 0; j <= b.size(); ++j) d[0][j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i)
    for (std::size_t j = 1; j <= b.size(); ++j)
      d[i][j] = std::min({d[i - 1][j] + 1, d[i][j - 1] + 1, d[i - 1][j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
  return d[a.size()][b.size()];
}

// Sort by (probability desc, id asc), keep k, then scan for the shortest
// prefix whose mass within the kept set reaches p. Returns surviving ids.
inline std::set<std::size_t> oracle_top_k_top_p(const std::vector<double>& logits, std::size_t k, double p,
                                                double temperature) {
  const std::size_t n = logits.size();
  double mx = -INFINITY;
  for (double l : logits) mx = std::max(mx, l / temperature);
  std::vector<double> prob(n);
  double z = 0;
  for (std::size_t i = 0; i < n; ++i) z += prob[i] = std::exp(logits[i] / temperature - mx);
  for (double& v : prob) v /= z;
  std::vector<std::size_t> ids(n);
  std::iota(ids.begin(), ids.end(), 0);
  std::sort(ids.begin(), ids.end(), [&](std::size_t a, std::size_t b) {
    if (prob[a] != prob[b]) return prob[a] > prob[b];
    return a < b;
  });
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < ids.size() && i < k; ++i)
    if (prob[ids[i]] > 0) kept.push_back(ids[i]);
  double mass = 0;
  for (std::size_t i : kept) mass += prob[i];
  std::set<std::size_t> out;
  double acc = 0;
  for (std::size_t i : kept) {
    out.insert(i);
    acc += prob[i] / mass;
    if (acc >= p) break;
  }
  return out;
}

// Linear scan for the maximum total, keeping the first (lowest index) on ties.
inline std::size_t oracle_argmax(const std::vector<std::array<double, 4>>& table, const std::array<double, 4>& w,
                                 const std::vector<std::size_t>& candidate_index) {
  std::size_t best = 0;
  double best_total = -INFINITY;
  for (std::size_t i = 0; i < table.size(); ++i) {
    double t = 0;
    for (std::size_t m = 0; m < 4; ++m) t += w[m] * table[i][m];
    if (t > best_total || (t == best_total && candidate_index[i] < candidate_index[best])) {
      best_total = t;
      best = i;
    }
  }
  return best;
}

}  // namespace stner::testing
