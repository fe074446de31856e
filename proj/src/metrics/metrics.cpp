#include "eclab/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <thread>
#include <unordered_set>

#include "eclab/errors.hpp"
#include "eclab/numcore/prng.hpp"

namespace eclab::metrics {

std::size_t levenshtein(std::span<const int> a, std::span<const int> b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  std::iota(prev.begin(), prev.end(), std::size_t{0});
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

namespace {

template <class T>
double neg_cosine_impl(std::span<const T> u, std::span<const T> v) {
  if (u.size() != v.size()) throw ShapeError("neg_cosine: length mismatch");
  double uv = 0, uu = 0, vv = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    uv += static_cast<double>(u[i]) * v[i];
    uu += static_cast<double>(u[i]) * u[i];
    vv += static_cast<double>(v[i]) * v[i];
  }
  if (uu == 0.0 || vv == 0.0) throw ContractError("neg_cosine: zero-norm vector");
  return -uv / (std::sqrt(uu) * std::sqrt(vv));
}

}  // namespace

double neg_cosine(std::span<const float> u, std::span<const float> v) { return neg_cosine_impl(u, v); }
double neg_cosine(std::span<const double> u, std::span<const double> v) { return neg_cosine_impl(u, v); }

Correlation pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ShapeError("pearson: length mismatch");
  if (x.size() < 2) throw ContractError("pearson: need at least 2 points");
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0) return {std::nullopt, "zero variance in first list"};
  if (syy == 0.0) return {std::nullopt, "zero variance in second list"};
  double r = sxy / std::sqrt(sxx * syy);
  return {std::clamp(r, -1.0, 1.0), ""};
}

std::vector<double> fractional_ranks(std::span<const double> x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> r(x.size());
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

Correlation spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ShapeError("spearman: length mismatch");
  auto rx = fractional_ranks(x), ry = fractional_ranks(y);
  return pearson(rx, ry);
}

TopoSimReport topographic_similarity(const std::vector<Message>& messages, const corpora::FeatureSet& features,
                                     const TopoSimOptions& options) {
  const std::size_t n = messages.size();
  if (n != features.n) {
    throw ShapeError("topographic_similarity: " + std::to_string(n) + " messages vs " +
                     std::to_string(features.n) + " feature rows");
  }
  if (n < 3) throw ContractError("topographic_similarity: need at least 3 items");
  TopoSimReport rep;
  rep.mode = options.mode.value_or(n <= options.full_limit ? TopoMode::full : TopoMode::sampled);
  rep.seed = options.seed;

  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  const std::size_t all_pairs = n * (n - 1) / 2;
  if (rep.mode == TopoMode::full || options.pairs >= all_pairs) {
    pairs.reserve(all_pairs);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) pairs.emplace_back(i, j);
  } else {
    num::Prng rng(options.seed, num::stream::eval);
    for (std::size_t k : rng.sample_without_replacement(all_pairs, options.pairs)) {
      // Invert the row-major upper-triangle index k -> (i, j).
      auto start = [n](std::size_t r) { return r * (2 * n - r - 1) / 2; };
      const double m = static_cast<double>(2 * n - 1);
      auto i = static_cast<std::size_t>(std::max(0.0, std::floor((m - std::sqrt(m * m - 8.0 * static_cast<double>(k))) / 2.0)));
      while (i > 0 && start(i) > k) --i;
      while (i + 1 < n && start(i + 1) <= k) ++i;
      const std::size_t rem = k - start(i);
      pairs.emplace_back(i, i + 1 + rem);
    }
  }
  rep.pair_count = pairs.size();

  std::vector<double> ed(pairs.size()), cs(pairs.size());
  auto work = [&](std::size_t lo, std::size_t hi) {
    for (std::size_t p = lo; p < hi; ++p) {
      auto [i, j] = pairs[p];
      ed[p] = static_cast<double>(levenshtein(messages[i], messages[j]));
      cs[p] = neg_cosine(features.row(i), features.row(j));
    }
  };
  const std::size_t threads = static_cast<std::size_t>(std::max(1, options.threads));
  if (threads == 1 || pairs.size() < 4096) {
    work(0, pairs.size());
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (pairs.size() + threads - 1) / threads;
    for (std::size_t t = 0; t < threads; ++t) {
      const std::size_t lo = t * chunk, hi = std::min(pairs.size(), lo + chunk);
      if (lo < hi) pool.emplace_back(work, lo, hi);
    }
    for (auto& th : pool) th.join();
  }

  auto c = spearman(ed, cs);
  if (!c.defined()) {
    bool ed_const = std::all_of(ed.begin(), ed.end(), [&](double v) { return v == ed[0]; });
    rep.reason = ed_const ? "zero edit-distance variance" : "zero feature-distance variance";
    return rep;
  }
  rep.rho = c.rho;
  return rep;
}

UnigramReport unigram_stats(const corpora::Corpus& corpus) {
  UnigramReport r;
  r.counts.assign(static_cast<std::size_t>(std::max(corpus.vocab_size, 0)), 0);
  for (const auto& m : corpus.messages)
    for (int t : m) {
      if (t < 0 || t >= corpus.vocab_size) throw DataError("unigram_stats: token " + std::to_string(t) + " outside vocabulary");
      ++r.counts[static_cast<std::size_t>(t)];
    }
  r.total = std::accumulate(r.counts.begin(), r.counts.end(), std::size_t{0});
  if (r.total == 0) throw ContractError("unigram_stats: empty corpus");
  std::vector<double> freq;
  for (std::size_t c : r.counts) {
    if (c == 0) continue;
    ++r.used_vocab;
    const double p = static_cast<double>(c) / static_cast<double>(r.total);
    r.entropy -= p * std::log(p);
    freq.push_back(static_cast<double>(c));
  }
  if (freq.size() >= 2) {
    std::sort(freq.begin(), freq.end(), std::greater<>());
    // Fit log f = a - s log r.
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const double n = static_cast<double>(freq.size());
    for (std::size_t i = 0; i < freq.size(); ++i) {
      const double x = std::log(static_cast<double>(i + 1)), y = std::log(freq[i]);
      sx += x;
      sy += y;
      sxx += x * x;
      sxy += x * y;
    }
    const double denom = n * sxx - sx * sx;
    if (denom > 0) r.zipf_exponent = -(n * sxy - sx * sy) / denom;
  }
  return r;
}

std::size_t lcs_length(std::span<const int> a, std::span<const int> b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

RougeL rouge_l(std::span<const int> candidate, std::span<const int> reference, double beta) {
  if (reference.empty()) throw ContractError("rouge_l: empty reference");
  RougeL r;
  const std::size_t l = lcs_length(candidate, reference);
  if (l == 0) return r;
  r.precision = static_cast<double>(l) / static_cast<double>(candidate.size());
  r.recall = static_cast<double>(l) / static_cast<double>(reference.size());
  const double b2 = beta * beta;
  r.f = (1 + b2) * r.precision * r.recall / (r.recall + b2 * r.precision);
  return r;
}

namespace {

struct NgramHash {
  std::size_t operator()(const std::vector<int>& v) const {
    std::size_t h = 1469598103934665603ull;
    for (int x : v) h = (h ^ static_cast<std::size_t>(x)) * 1099511628211ull;
    return h;
  }
};

std::unordered_map<std::vector<int>, std::size_t, NgramHash> ngram_counts(const Message& m, std::size_t n) {
  std::unordered_map<std::vector<int>, std::size_t, NgramHash> out;
  if (m.size() < n) return out;
  for (std::size_t i = 0; i + n <= m.size(); ++i) ++out[std::vector<int>(m.begin() + static_cast<std::ptrdiff_t>(i), m.begin() + static_cast<std::ptrdiff_t>(i + n))];
  return out;
}

}  // namespace

double bleu4(const std::vector<Message>& candidates, const std::vector<Message>& references) {
  if (candidates.empty()) throw ContractError("bleu4: empty candidate list");
  if (candidates.size() != references.size()) {
    throw ShapeError("bleu4: " + std::to_string(candidates.size()) + " candidates vs " +
                     std::to_string(references.size()) + " references");
  }
  std::size_t cand_len = 0, ref_len = 0;
  double log_p = 0.0;
  for (std::size_t n = 1; n <= 4; ++n) {
    std::size_t matched = 0, total = 0;
    for (std::size_t k = 0; k < candidates.size(); ++k) {
      auto cc = ngram_counts(candidates[k], n);
      auto rc = ngram_counts(references[k], n);
      for (const auto& [g, c] : cc) {
        total += c;
        auto it = rc.find(g);
        if (it != rc.end()) matched += std::min(c, it->second);
      }
    }
    // An order with no candidate n-grams contributes precision 1.
    if (total == 0) continue;
    if (matched == 0) return 0.0;
    log_p += std::log(static_cast<double>(matched) / static_cast<double>(total));
  }
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    cand_len += candidates[k].size();
    ref_len += references[k].size();
  }
  if (cand_len == 0) return 0.0;
  const double bp = cand_len >= ref_len ? 1.0 : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(cand_len));
  return bp * std::exp(log_p / 4.0);
}

double perplexity(double nll_total_nats, std::size_t token_count) {
  if (token_count == 0) throw ContractError("perplexity: token_count must be positive");
  return std::exp(nll_total_nats / static_cast<double>(token_count));
}

}  // namespace eclab::metrics
