#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <string_view>
#include <vector>

namespace stner {

std::uint64_t splitmix64(std::uint64_t x);

// Seed derivation: every random stream in the pipeline comes from the top-level
// seed mixed with a stage name and a list of indices.
std::uint64_t derive_seed(std::uint64_t base, std::string_view stage,
                          std::initializer_list<std::uint64_t> indices = {});

// xoshiro256** with explicit helpers so results do not depend on the
// standard library's distribution implementations.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed);

  std::uint64_t next();
  std::uint64_t operator()() { return next(); }
  static constexpr std::uint64_t min() { return 0; }
  static constexpr std::uint64_t max() { return ~std::uint64_t{0}; }

  // Uniform in [0, 1).
  double uniform();
  // Uniform in (0, 1); never returns an endpoint.
  double uniform_open();
  // Uniform integer in [0, n). n must be positive.
  std::size_t below(std::size_t n);
  bool bernoulli(double p) { return uniform() < p; }
  // Standard Gumbel(0, 1) via -log(-log(u)).
  double gumbel();

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = below(i);
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::uint64_t state_[4];
};

}  // namespace stner
