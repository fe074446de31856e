#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace eclab::num {

// Fixed stream ids so that changing one consumer does not shift another's
// random sequence.
namespace stream {
inline constexpr std::uint64_t init = 1;
inline constexpr std::uint64_t data = 2;
inline constexpr std::uint64_t gumbel = 3;
inline constexpr std::uint64_t sampling = 4;
inline constexpr std::uint64_t corpus = 5;
inline constexpr std::uint64_t split = 6;
inline constexpr std::uint64_t eval = 7;
}  // namespace stream

// xoshiro256** seeded through splitmix64 from (seed, stream). All
// distributions are implemented here so sequences are identical across
// standard libraries.
class Prng {
 public:
  explicit Prng(std::uint64_t seed = 0, std::uint64_t stream = 0);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_; }

  // Independent generator for a sub-stream of the same seed.
  Prng fork(std::uint64_t sub) const;

  std::uint64_t next_u64();
  // [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Unbiased integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  // Index drawn with probability proportional to weights (need not sum to 1).
  std::size_t categorical(std::span<const double> weights);
  // k distinct values of [0, n) in draw order.
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

  template <class T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }
  template <class T>
  void shuffle(std::vector<T>& items) {
    shuffle(std::span<T>(items));
  }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t s_[4];
};

}  // namespace eclab::num
