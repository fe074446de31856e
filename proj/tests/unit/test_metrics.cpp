#include <doctest.h>

#include <cmath>
#include <numeric>

#include "eclab/corpora/generators.hpp"
#include "eclab/errors.hpp"
#include "eclab/metrics/metrics.hpp"
#include "support/metric_oracles.hpp"

using namespace eclab;
using namespace eclab::metrics;
using eclab::corpora::Message;

namespace {

Message random_message(num::Prng& rng, std::size_t max_len, int vocab) {
  Message m(rng.below(max_len + 1));
  for (auto& t : m) t = static_cast<int>(rng.below(static_cast<std::uint64_t>(vocab)));
  return m;
}

std::vector<double> random_vector(num::Prng& rng, std::size_t n, bool ties) {
  std::vector<double> v(n);
  for (auto& x : v) x = ties ? static_cast<double>(rng.below(6)) : rng.normal();
  return v;
}

}  // namespace

TEST_CASE("levenshtein matches the recursive definition") {
  num::Prng rng(1, 0);
  for (int k = 0; k < 1000; ++k) {
    Message a = random_message(rng, 6, 3), b = random_message(rng, 6, 3);
    CHECK(levenshtein(a, b) == testing::levenshtein_recursive(a, 0, b, 0));
  }
  Message x{1, 2, 3};
  CHECK(levenshtein(x, x) == 0);
  CHECK(levenshtein(Message{}, x) == 3);
}

TEST_CASE("levenshtein is a metric") {
  num::Prng rng(2, 0);
  for (int k = 0; k < 300; ++k) {
    Message a = random_message(rng, 7, 4), b = random_message(rng, 7, 4), c = random_message(rng, 7, 4);
    CHECK(levenshtein(a, b) == levenshtein(b, a));
    CHECK(levenshtein(a, c) <= levenshtein(a, b) + levenshtein(b, c));
    CHECK((levenshtein(a, b) == 0) == (a == b));
  }
}

TEST_CASE("neg_cosine examples") {
  std::vector<double> u{1, 2, 3}, w{-1, -2, -3}, o1{1, 0}, o2{0, 5}, z{0, 0};
  CHECK(neg_cosine(std::span<const double>(u), u) == doctest::Approx(-1.0));
  CHECK(neg_cosine(std::span<const double>(u), w) == doctest::Approx(1.0));
  CHECK(neg_cosine(std::span<const double>(o1), o2) == 0.0);
  CHECK_THROWS_AS(neg_cosine(std::span<const double>(o1), z), ContractError);
}

TEST_CASE("pearson and spearman against independent implementations") {
  num::Prng rng(3, 0);
  for (int k = 0; k < 100; ++k) {
    auto x = random_vector(rng, 100, false), y = random_vector(rng, 100, false);
    auto p = pearson(x, y);
    REQUIRE(p.defined());
    CHECK(std::abs(*p.rho - *testing::two_pass_pearson(x, y)) <= 1e-12);

    auto xt = random_vector(rng, 50, true), yt = random_vector(rng, 50, true);
    auto s = spearman(xt, yt);
    auto o = testing::rank_then_pearson(xt, yt);
    REQUIRE(s.defined() == o.has_value());
    if (o) CHECK(std::abs(*s.rho - *o) <= 1e-12);
  }
  std::vector<double> x{1, 2, 3, 4}, up{3, 5, 7, 9}, down{4, 3, 1, 0}, flat{2, 2, 2, 2};
  CHECK(*pearson(x, up).rho == doctest::Approx(1.0));
  std::vector<double> anti{-3, -5, -7, -9};
  CHECK(*pearson(x, anti).rho == doctest::Approx(-1.0));
  CHECK(*spearman(x, up).rho == doctest::Approx(1.0));
  CHECK(*spearman(x, down).rho == doctest::Approx(-1.0));
  CHECK_FALSE(pearson(x, flat).defined());
  CHECK_FALSE(spearman(flat, x).defined());
}

TEST_CASE("spearman is invariant under monotone transforms") {
  num::Prng rng(4, 0);
  auto x = random_vector(rng, 40, false), y = random_vector(rng, 40, false);
  std::vector<double> ex(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) ex[i] = std::exp(3 * x[i]) + 7;
  CHECK(*spearman(x, y).rho == *spearman(ex, y).rho);
}

TEST_CASE("toposim matches brute force on small worlds") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    num::Prng rng(seed, 0);
    corpora::SyntheticWorldSpec spec{.attributes = 2 + static_cast<int>(seed % 2), .values = 3, .noise = 0.0,
                                     .objects = 5 + static_cast<std::size_t>(rng.below(11)), .seed = seed};
    auto w = corpora::synthetic_world(spec);
    std::vector<Message> msgs;
    for (std::size_t i = 0; i < w.features.n; ++i) {
      // Mix of ground-truth captions and noise messages.
      msgs.push_back(seed % 3 == 0 ? random_message(rng, 5, 4) : w.captions.pairs[i].second);
    }
    auto rep = topographic_similarity(msgs, w.features);
    auto oracle = testing::brute_force_toposim(msgs, w.features);
    REQUIRE(rep.defined() == oracle.has_value());
    if (oracle) CHECK(*rep.rho == *oracle);
    CHECK(rep.pair_count == w.features.n * (w.features.n - 1) / 2);
  }
}

TEST_CASE("toposim of ground-truth captions is high and undefined for constant messages") {
  auto w = corpora::synthetic_world({.attributes = 3, .values = 4, .noise = 0.0, .objects = 200, .seed = 7});
  std::vector<Message> caps;
  for (const auto& p : w.captions.pairs) caps.push_back(p.second);
  auto rep = topographic_similarity(caps, w.features);
  REQUIRE(rep.defined());
  CHECK(*rep.rho > 0.5);

  std::vector<Message> same(w.features.n, Message{3, 3});
  auto und = topographic_similarity(same, w.features);
  CHECK_FALSE(und.defined());
  CHECK(und.reason == "zero edit-distance variance");
}

TEST_CASE("toposim is invariant under joint permutation") {
  num::Prng rng(5, 0);
  auto w = corpora::synthetic_world({.attributes = 3, .values = 3, .noise = 0.1, .objects = 40, .seed = 2});
  std::vector<Message> msgs;
  for (std::size_t i = 0; i < w.features.n; ++i) msgs.push_back(random_message(rng, 4, 3));
  std::vector<std::size_t> perm(w.features.n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  rng.shuffle(perm);
  std::vector<Message> pm;
  for (auto i : perm) pm.push_back(msgs[i]);
  auto a = topographic_similarity(msgs, w.features);
  auto b = topographic_similarity(pm, w.features.subset(perm));
  CHECK(*a.rho == doctest::Approx(*b.rho).epsilon(1e-12));
}

TEST_CASE("sampled toposim converges to full mode") {
  auto w = corpora::synthetic_world({.attributes = 4, .values = 4, .noise = 0.3, .objects = 500, .seed = 3});
  std::vector<Message> caps;
  num::Prng rng(6, 0);
  for (const auto& p : w.captions.pairs) {
    Message m = p.second;
    if (rng.uniform() < 0.3) m[rng.below(m.size())] = 0;
    caps.push_back(m);
  }
  auto full = topographic_similarity(caps, w.features, {.mode = TopoMode::full});
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    auto s = topographic_similarity(caps, w.features, {.mode = TopoMode::sampled, .pairs = 100000, .seed = seed});
    CHECK(s.pair_count == 100000);
    CHECK(std::abs(*s.rho - *full.rho) < 0.05);
  }
  auto threaded = topographic_similarity(caps, w.features, {.mode = TopoMode::full, .threads = 3});
  CHECK(*threaded.rho == *full.rho);
}

TEST_CASE("unigram statistics") {
  corpora::Corpus c;
  c.vocab_size = 100;
  for (int t = 0; t < 100; ++t) c.messages.push_back({t, t});
  auto r = unigram_stats(c);
  CHECK(r.entropy == doctest::Approx(std::log(100.0)).epsilon(1e-12));
  CHECK(r.used_vocab == 100);

  corpora::Corpus one;
  one.vocab_size = 5;
  one.messages = {{2, 2, 2}, {2}};
  auto r1 = unigram_stats(one);
  CHECK(r1.entropy == 0.0);
  CHECK(r1.used_vocab == 1);
  CHECK_FALSE(r1.zipf_exponent.has_value());

  num::Prng rng(1, 0);
  auto pz = corpora::gen_paren_zipf({.vocab_size = 1000, .token_count = 200000}, rng);
  auto rz = unigram_stats(pz);
  REQUIRE(rz.zipf_exponent.has_value());
  CHECK(*rz.zipf_exponent > 0.7);
  CHECK(*rz.zipf_exponent < 1.3);
}

TEST_CASE("rouge_l examples") {
  Message abcd{1, 2, 3, 4}, acd{1, 3, 4}, xyz{7, 8, 9};
  auto same = rouge_l(abcd, abcd);
  CHECK(same.precision == 1.0);
  CHECK(same.recall == 1.0);
  CHECK(same.f == doctest::Approx(1.0).epsilon(1e-15));
  auto r = rouge_l(abcd, acd);
  CHECK(std::abs(r.precision - 0.75) < 1e-9);
  CHECK(std::abs(r.recall - 1.0) < 1e-9);
  const double b2 = 1.44;
  CHECK(std::abs(r.f - (1 + b2) * 0.75 / (1.0 + b2 * 0.75)) < 1e-9);
  CHECK(rouge_l(abcd, xyz).f == 0.0);
  CHECK(rouge_l(Message{}, xyz).f == 0.0);
}

TEST_CASE("bleu4 examples") {
  std::vector<Message> refs{{1, 2, 3, 4, 5}, {6, 7, 8, 9}};
  CHECK(bleu4(refs, refs) == doctest::Approx(1.0).epsilon(1e-15));
  // "the cat sat" vs "the cat sat on"
  double b = bleu4({{1, 2, 3}}, {{1, 2, 3, 4}});
  CHECK(std::abs(b - std::exp(-1.0 / 3.0)) < 1e-9);
  CHECK(bleu4({{1, 2, 3, 4, 9}}, {{1, 2, 3, 5, 4}}) == 0.0);
  CHECK_THROWS_AS(bleu4({}, {}), ContractError);
}

TEST_CASE("overlap metrics are invariant to joint relabeling") {
  num::Prng rng(9, 0);
  std::vector<int> relabel{5, 9, 2, 7, 0, 3};
  for (int k = 0; k < 50; ++k) {
    std::vector<Message> c, r, c2, r2;
    for (int i = 0; i < 4; ++i) {
      c.push_back(random_message(rng, 8, 6));
      r.push_back(random_message(rng, 8, 6));
      if (r.back().empty()) r.back().push_back(1);
    }
    for (auto& m : c) {
      c2.emplace_back();
      for (int t : m) c2.back().push_back(relabel[static_cast<std::size_t>(t)]);
    }
    for (auto& m : r) {
      r2.emplace_back();
      for (int t : m) r2.back().push_back(relabel[static_cast<std::size_t>(t)]);
    }
    CHECK(bleu4(c, r) == bleu4(c2, r2));
    CHECK(rouge_l(c[0], r[0]).f == rouge_l(c2[0], r2[0]).f);
  }
}

TEST_CASE("perplexity") {
  CHECK(perplexity(1000 * std::log(50.0), 1000) == doctest::Approx(50.0));
  CHECK(perplexity(0.0, 10) == 1.0);
  CHECK_THROWS_AS(perplexity(1.0, 0), ContractError);
  std::vector<double> per_token{0.1, 2.0, 0.7, 1.3};
  double mean = (0.1 + 2.0 + 0.7 + 1.3) / 4;
  CHECK(perplexity(0.1 + 2.0 + 0.7 + 1.3, 4) == doctest::Approx(std::exp(mean)).epsilon(1e-14));
}
