#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "stner/automaton.hpp"
#include "stner/model.hpp"
#include "stner/synth.hpp"
#include "stner/train.hpp"
#include "support.hpp"

using namespace stner;

namespace {

std::vector<double> random_pi(Rng& rng, std::size_t n) {
  std::vector<double> p(n);
  double z = 0;
  for (double& v : p) z += v = 0.05 + rng.uniform();
  for (double& v : p) v /= z;
  return p;
}

std::set<std::size_t> support_of(const std::vector<double>& p) {
  std::set<std::size_t> s;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p[i] > 0) s.insert(i);
  return s;
}

Vocabulary synth_vocab() {
  SynthConfig cfg = SynthConfig::defaults();
  cfg.num_pairs = 100;
  cfg.num_source = 50;
  cfg.num_target = 50;
  SynthResult d = make_synthetic_style_corpus(cfg, 1);
  return build_transfer_vocab(d.pairs, d.source, d.target);
}

}  // namespace

TEST_CASE("softmax handles masked entries") {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> l = {1.0, -inf, 1.0};
  auto p = softmax(l);
  CHECK(p[0] == doctest::Approx(0.5));
  CHECK(p[1] == 0.0);
}

TEST_CASE("gumbel softmax with zero noise and unit temperature is the identity") {
  Rng rng(1);
  for (int rep = 0; rep < 100; ++rep) {
    auto pi = random_pi(rng, 1 + rng.below(20));
    std::vector<double> zero(pi.size(), 0.0);
    auto y = gumbel_softmax(pi, 1.0, zero);
    for (std::size_t i = 0; i < pi.size(); ++i) CHECK(std::abs(y[i] - pi[i]) <= 1e-12);
  }
}

TEST_CASE("gumbel softmax argmax frequencies follow pi") {
  Rng rng(2);
  const std::vector<double> pi = {0.4, 0.25, 0.2, 0.1, 0.05};
  std::vector<double> freq(pi.size(), 0.0);
  const int n = 100000;
  for (int s = 0; s < n; ++s) {
    auto y = gumbel_softmax(pi, 0.1, rng);
    freq[static_cast<std::size_t>(std::max_element(y.begin(), y.end()) - y.begin())] += 1.0 / n;
  }
  double tv = 0;
  for (std::size_t i = 0; i < pi.size(); ++i) tv += 0.5 * std::abs(freq[i] - pi[i]);
  CHECK(tv < 0.02);
}

TEST_CASE("low temperature approaches one-hot") {
  const std::vector<double> pi = {0.5, 0.3, 0.2};
  std::vector<double> zero(3, 0.0);
  auto y = gumbel_softmax(pi, 0.01, zero);
  CHECK(*std::max_element(y.begin(), y.end()) > 0.999);
}

TEST_CASE("gumbel softmax rejects bad input") {
  std::vector<double> pi = {0.5, 0.5}, noise = {0.0};
  CHECK_THROWS(gumbel_softmax(pi, 0.0, std::vector<double>{0, 0}));
  CHECK_THROWS(gumbel_softmax(pi, 1.0, noise));
}

TEST_CASE("top-k/top-p survivors match the sort-and-scan oracle") {
  Rng rng(3);
  SamplerConfig cfg;  // k = 50, p = 0.98
  for (int rep = 0; rep < 1000; ++rep) {
    const std::size_t n = 1 + rng.below(200);
    std::vector<double> logits(n);
    for (double& l : logits) l = 4 * rng.uniform() - 2;
    if (rep % 5 == 0)
      for (std::size_t i = 0; i < n; i += 3) logits[i] = -std::numeric_limits<double>::infinity();
    if (rep % 7 == 0)
      for (std::size_t i = 1; i < n; i += 2) logits[i] = logits[0];
    if (std::all_of(logits.begin(), logits.end(), [](double l) { return std::isinf(l); })) logits[0] = 0;
    auto got = filter_top_k_top_p(logits, cfg);
    CHECK(support_of(got) == testing::oracle_top_k_top_p(logits, cfg.top_k, cfg.top_p, cfg.temperature));
    CHECK(std::accumulate(got.begin(), got.end(), 0.0) == doctest::Approx(1.0));
  }
}

TEST_CASE("filter keeps the argmax and respects k") {
  SamplerConfig cfg;
  cfg.top_k = 1;
  cfg.top_p = 1.0;
  std::vector<double> l = {0.1, 3.0, 0.2};
  auto p = filter_top_k_top_p(l, cfg);
  CHECK(p == std::vector<double>{0.0, 1.0, 0.0});
}

TEST_CASE("sample_index is an inverse-cdf draw") {
  Rng rng(4);
  std::vector<double> p = {0.0, 0.7, 0.0, 0.3};
  std::vector<int> counts(4, 0);
  for (int i = 0; i < 20000; ++i) ++counts[static_cast<std::size_t>(sample_index(p, rng))];
  CHECK(counts[0] == 0);
  CHECK(counts[2] == 0);
  CHECK(counts[1] / 20000.0 == doctest::Approx(0.7).epsilon(0.03));
  CHECK_THROWS(sample_index(std::vector<double>{0.0, 0.0}, rng));
}

TEST_CASE("incremental decoding equals full-history decoding") {
  Vocabulary v = synth_vocab();
  ModelConfig mc;
  mc.embedding_dim = 8;
  GeneratorParams g = GeneratorParams::init(mc, v.size(), 3);
  std::vector<TokenId> input = {10, 11, 12, 13};
  LatentSequence z = encode(g, mc, input);
  CHECK(z.length() == 4);
  DecoderSession session(g, mc, z);
  std::vector<TokenId> history = {Vocabulary::kBos};
  for (TokenId next : {20, 21, 22}) {
    ad::Vector a = session.next_logits(history.back());
    ad::Vector b = decode_step(g, mc, z, history);
    CHECK((a - b).cwiseAbs().maxCoeff() < 1e-12);
    history.push_back(next);
  }
}

TEST_CASE("constrained sampling from a random generator always parses") {
  Vocabulary v = synth_vocab();
  ModelConfig mc;
  GeneratorParams g = GeneratorParams::init(mc, v.size(), 7);
  ConstraintAutomaton automaton(v);
  SamplerConfig sc;
  Rng rng(5);
  std::size_t unmasked_ok = 0;
  for (int i = 0; i < 100; ++i) {
    std::vector<TokenId> input = {static_cast<TokenId>(10 + i % 20), 12, 14};
    LatentSequence z = encode(g, mc, input);
    auto ids = constrained_sample(g, mc, z, sc, automaton, rng, {20, true});
    REQUIRE(ids.back() == Vocabulary::kEos);
    CHECK(ids.size() <= 20);
    ids.pop_back();
    CHECK(testing::oracle_accepts(v.decode(ids), v.registry()));
    auto raw = constrained_sample(g, mc, z, sc, automaton, rng, {20, false});
    if (!raw.empty() && raw.back() == Vocabulary::kEos) raw.pop_back();
    unmasked_ok += std::holds_alternative<LinearizedSentence>(parse_rendered(v.decode(raw), v.registry()));
  }
  CHECK(unmasked_ok < 100);
}

TEST_CASE("parameter init is seeded and bounded") {
  ModelConfig mc;
  mc.embedding_dim = 4;
  auto a = GeneratorParams::init(mc, 30, 1), b = GeneratorParams::init(mc, 30, 1), c = GeneratorParams::init(mc, 30, 2);
  CHECK(a.embedding.value == b.embedding.value);
  CHECK_FALSE(a.embedding.value == c.embedding.value);
  CHECK(a.embedding.value.cwiseAbs().maxCoeff() <= mc.init_scale);
  CHECK(a.all_finite());
  auto d = DiscriminatorParams::init(mc, 1);
  LatentSequence z{ad::Matrix::Random(4, 3)};
  const double p = discriminate(d, z);
  CHECK(p > 0);
  CHECK(p < 1);
}
