#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "eclab/corpora/types.hpp"

namespace eclab::metrics {

using corpora::Message;

std::size_t levenshtein(std::span<const int> a, std::span<const int> b);

// Throws ContractError for a zero-norm input.
double neg_cosine(std::span<const float> u, std::span<const float> v);
double neg_cosine(std::span<const double> u, std::span<const double> v);

// A correlation that may be undefined (zero variance); `reason` says why.
struct Correlation {
  std::optional<double> rho;
  std::string reason;
  bool defined() const { return rho.has_value(); }
};

Correlation pearson(std::span<const double> x, std::span<const double> y);
// Fractional ranks, ties share their average rank (1-based).
std::vector<double> fractional_ranks(std::span<const double> x);
Correlation spearman(std::span<const double> x, std::span<const double> y);

enum class TopoMode { full, sampled };

struct TopoSimOptions {
  // Unset picks full for N <= full_limit, else sampled.
  std::optional<TopoMode> mode;
  std::size_t full_limit = 2000;
  std::size_t pairs = 100000;
  std::uint64_t seed = 0;
  // Pair blocks are scored on this many threads; result is thread-independent.
  int threads = 1;
};

struct TopoSimReport {
  std::optional<double> rho;
  std::string reason;
  std::size_t pair_count = 0;
  TopoMode mode = TopoMode::full;
  std::uint64_t seed = 0;
  bool defined() const { return rho.has_value(); }
};

TopoSimReport topographic_similarity(const std::vector<Message>& messages,
                                     const corpora::FeatureSet& features,
                                     const TopoSimOptions& options = {});

struct UnigramReport {
  std::vector<std::size_t> counts;  // indexed by token id, length vocab_size
  std::size_t total = 0;
  double entropy = 0.0;  // nats
  std::size_t used_vocab = 0;
  // Least-squares slope of -log freq on log rank; unset with fewer than 2 used tokens.
  std::optional<double> zipf_exponent;
};

UnigramReport unigram_stats(const corpora::Corpus& corpus);

struct RougeL {
  double precision = 0.0;
  double recall = 0.0;
  double f = 0.0;
};

inline constexpr double kRougeBeta = 1.2;

std::size_t lcs_length(std::span<const int> a, std::span<const int> b);
RougeL rouge_l(std::span<const int> candidate, std::span<const int> reference, double beta = kRougeBeta);

// Unsmoothed corpus-level BLEU-4.
double bleu4(const std::vector<Message>& candidates, const std::vector<Message>& references);

double perplexity(double nll_total_nats, std::size_t token_count);

}  // namespace eclab::metrics
