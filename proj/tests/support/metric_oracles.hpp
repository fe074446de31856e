#pragma once

// Deliberately naive reference implementations used only by tests.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <vector>

#include "eclab/corpora/types.hpp"

namespace eclab::testing {

inline std::size_t levenshtein_recursive(const std::vector<int>& a, std::size_t i, const std::vector<int>& b,
                                         std::size_t j) {
  if (i == a.size()) return b.size() - j;
  if (j == b.size()) return a.size() - i;
  std::size_t best = 1 + levenshtein_recursive(a, i + 1, b, j);
  best = std::min(best, 1 + levenshtein_recursive(a, i, b, j + 1));
  best = std::min(best, (a[i] == b[j] ? 0 : 1) + levenshtein_recursive(a, i + 1, b, j + 1));
  return best;
}

inline std::optional<double> two_pass_pearson(const std::vector<double>& x, const std::vector<double>& y) {
  double mx = 0, my = 0;
  for (double v : x) mx += v;
  for (double v : y) my += v;
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(y.size());
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0 || syy == 0) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

// O(n^2) rank: count strictly smaller plus half the ties.
inline std::vector<double> counting_ranks(const std::vector<double>& x) {
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    double less = 0, equal = 0;
    for (double v : x) {
      if (v < x[i]) less += 1;
      if (v == x[i]) equal += 1;
    }
    r[i] = less + (equal + 1) / 2;
  }
  return r;
}

inline std::optional<double> rank_then_pearson(const std::vector<double>& x, const std::vector<double>& y) {
  return two_pass_pearson(counting_ranks(x), counting_ranks(y));
}

inline std::optional<double> brute_force_toposim(const std::vector<std::vector<int>>& messages,
                                                 const corpora::FeatureSet& f) {
  std::vector<double> ed, cs;
  for (std::size_t i = 0; i < messages.size(); ++i) {
    for (std::size_t j = i + 1; j < messages.size(); ++j) {
      ed.push_back(static_cast<double>(levenshtein_recursive(messages[i], 0, messages[j], 0)));
      double uv = 0, uu = 0, vv = 0;
      for (std::size_t d = 0; d < f.d; ++d) {
        uv += static_cast<double>(f.row(i)[d]) * f.row(j)[d];
        uu += static_cast<double>(f.row(i)[d]) * f.row(i)[d];
        vv += static_cast<double>(f.row(j)[d]) * f.row(j)[d];
      }
      cs.push_back(-uv / (std::sqrt(uu) * std::sqrt(vv)));
    }
  }
  return rank_then_pearson(ed, cs);
}

}  // namespace eclab::testing
