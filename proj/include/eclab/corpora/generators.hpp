#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "eclab/corpora/types.hpp"
#include "eclab/numcore/prng.hpp"

namespace eclab::corpora {

// ---- paren-zipf -----------------------------------------------------------

struct ParenZipfConfig {
  int vocab_size = 5000;
  std::size_t token_count = 0;
  double zipf_exponent = 1.0;
  double open_prob = 0.5;
  std::size_t line_length = 512;
};

// Exact Zipf(s) sampler over ranks 1..n via a cumulative table.
class ZipfSampler {
 public:
  ZipfSampler(int n, double s);
  // Rank in [1, n].
  int sample(num::Prng& rng) const;
  double probability(int rank) const;
  int size() const { return static_cast<int>(cdf_.size()); }

 private:
  std::vector<double> cdf_;
};

// Each line is an independently balanced bracket string: word w opens and
// the matching close re-emits w. Word id = Zipf rank - 1.
Corpus gen_paren_zipf(const ParenZipfConfig& config, num::Prng& rng);

// Stack-machine acceptance: a token closes when it equals the open top.
bool is_balanced(const Message& line);

// ---- feature statistics and random inputs ---------------------------------

FeatureStats feature_stats(const FeatureSet& features);
FeatureSet random_inputs(const FeatureStats& stats, std::size_t n, num::Prng& rng);

// ---- permutation ablation -------------------------------------------------

Corpus permute_corpus(const Corpus& corpus, num::Prng& rng);
Message truncate_at_zero(const Message& m);

// ---- synthetic grounded world ---------------------------------------------

struct SyntheticWorldSpec {
  int attributes = 4;
  int values = 6;
  double noise = 0.05;
  // 0 enumerates every attribute tuple once; otherwise tuples are drawn
  // uniformly with replacement.
  std::size_t objects = 0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct World {
  FeatureSet features;
  CaptionSet captions;
  std::vector<std::string> vocab;
  std::vector<std::vector<int>> tuples;
  SyntheticWorldSpec spec;

  // Per-attribute block vectors of row i: A rows of `values` dims.
  std::vector<std::vector<float>> feature_sequence(std::size_t i) const;
  World subset(std::span<const std::size_t> rows) const;
};

// Function words of the natural-side vocabulary; attribute words follow.
namespace natural {
inline constexpr int kSeparator = 0;  // "."
inline constexpr int kThe = 1;
inline constexpr int kThing = 2;
inline constexpr int kWith = 3;
inline constexpr int kAnd = 4;
inline constexpr int kFirstAttributeWord = 5;
}  // namespace natural

int attribute_word(const SyntheticWorldSpec& spec, int attribute, int value);
Message render_caption(const SyntheticWorldSpec& spec, const std::vector<int>& tuple);
std::vector<std::string> natural_vocab(const SyntheticWorldSpec& spec);

World synthetic_world(const SyntheticWorldSpec& spec);

}  // namespace eclab::corpora
