#include <doctest.h>

#include <cmath>
#include <numeric>

#include "eclab/ecgame/game.hpp"
#include "eclab/langmodel/lm.hpp"
#include "support/grad_suite.hpp"

using namespace eclab;
using namespace eclab::lm;
using eclab::num::DType;
using eclab::num::Prng;

namespace {

LMConfig tiny(int vocab) {
  LMConfig c;
  c.layers = 1;
  c.heads = 2;
  c.model_dim = 16;
  c.ffn_dim = 32;
  c.context = 16;
  c.vocab_size = vocab;
  c.batch_size = 8;
  c.steps = 20;
  c.eval_interval = 5;
  c.learning_rate = 3e-3;
  return c;
}

corpora::Corpus random_corpus(int vocab, std::size_t lines, std::size_t len, std::uint64_t seed) {
  corpora::Corpus c;
  c.vocab_size = vocab;
  Prng rng(seed, 0);
  for (std::size_t i = 0; i < lines; ++i) {
    corpora::Message m;
    for (std::size_t t = 0; t < len; ++t) m.push_back(1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(vocab - 1))));
    c.messages.push_back(m);
  }
  return c;
}

corpora::Corpus cyclic_corpus(std::size_t lines) {
  corpora::Corpus c;
  c.vocab_size = 4;
  for (std::size_t i = 0; i < lines; ++i) c.messages.push_back({1, 2, 3});
  return c;
}

}  // namespace

TEST_CASE("lm config validation and strict JSON") {
  LMConfig c = tiny(10);
  CHECK_NOTHROW(c.validate());
  LMConfig bad = c;
  bad.heads = 3;
  CHECK_THROWS_AS(bad.validate(), ContractError);
  bad = c;
  bad.context = 1;
  CHECK_THROWS_AS(bad.validate(), ContractError);
  auto j = c.to_json();
  CHECK(LMConfig::from_json(j).to_json() == j);
  j["layer"] = 3;
  CHECK_THROWS_AS(LMConfig::from_json(j), DataError);
}

TEST_CASE("lm init is seeded and parameter counts follow the closed form") {
  for (Arch a : {Arch::transformer, Arch::gru}) {
    LMConfig c = tiny(23);
    c.architecture = a;
    c.layers = a == Arch::transformer ? 2 : 1;
    auto x = lm_init(c).to_checkpoint(0), y = lm_init(c).to_checkpoint(0);
    CHECK(num::checkpoints_bit_equal(x, y));
    c.seed = 1;
    CHECK_FALSE(num::checkpoints_bit_equal(x, lm_init(c).to_checkpoint(0)));
    CHECK(parameter_count(lm_init(c)) == expected_parameter_count(c));
  }
  // Hand arithmetic for the default desk config at V=100.
  LMConfig d;
  d.vocab_size = 100;
  const std::size_t block = 4 * 64 + 4 * (64 * 64 + 64) + (64 * 256 + 256) + (256 * 64 + 64);
  CHECK(expected_parameter_count(d) == 100 * 64 + 128 * 64 + 2 * block + 128 + 64 * 100 + 100);
}

TEST_CASE("initial NLL is close to ln V") {
  for (Arch a : {Arch::transformer, Arch::gru}) {
    LMConfig c = tiny(50);
    c.architecture = a;
    const auto stream = pack_corpus(random_corpus(50, 40, 10, 3));
    const double nll = evaluate_stream(lm_init(c), stream).mean();
    CHECK(std::abs(nll - std::log(50.0)) < 0.05 * std::log(50.0));
  }
}

TEST_CASE("packing joins messages with the separator") {
  corpora::Corpus c;
  c.vocab_size = 5;
  c.messages = {{1, 2}, {3}, {4, 4}};
  CHECK(pack_corpus(c) == std::vector<int>{1, 2, 0, 3, 0, 4, 4, 0});
}

TEST_CASE("perplexity equals exp of the mean per-token dump") {
  for (Arch a : {Arch::transformer, Arch::gru}) {
    LMConfig c = tiny(9);
    c.architecture = a;
    c.context = 7;
    const auto stream = pack_corpus(random_corpus(9, 37, 5, 4));  // not a multiple of the context
    const EvalNll r = evaluate_stream(lm_init(c), stream, true);
    REQUIRE(r.per_token.size() == stream.size() - 1);
    CHECK(r.tokens == stream.size() - 1);
    const double sum = std::accumulate(r.per_token.begin(), r.per_token.end(), 0.0);
    CHECK(std::abs(sum - r.total) < 1e-9 * sum);
    CHECK(r.perplexity() == doctest::Approx(std::exp(sum / static_cast<double>(r.per_token.size()))).epsilon(1e-12));
    for (double v : r.per_token) CHECK(v > 0.0);
  }
}

TEST_CASE("zero learning rate keeps the init as best") {
  LMConfig c = tiny(8);
  c.learning_rate = 0.0;
  const auto tr = random_corpus(8, 30, 6, 5), va = random_corpus(8, 5, 6, 6);
  LanguageModel m = lm_init(c);
  auto res = lm_train(m, tr, va, c);
  CHECK(res.best_step == 0);
  const auto init = m.to_checkpoint(0);
  for (const auto& p : init.tensors) CHECK(num::tensors_bit_equal(p.tensor, res.best.get(p.name)));
}

TEST_CASE("cyclic corpus is memorized") {
  LMConfig c = tiny(4);
  c.steps = 500;
  c.eval_interval = 100;
  c.learning_rate = 1e-2;
  const auto tr = cyclic_corpus(200), va = cyclic_corpus(20), te = cyclic_corpus(20);
  auto res = lm_train(lm_init(c), tr, va, c);
  const double ppl = evaluate_stream(LanguageModel::from_checkpoint(res.best), pack_corpus(te)).perplexity();
  MESSAGE("cyclic ppl " << ppl);
  CHECK(ppl < 1.1);
}

TEST_CASE("best validation NLL bounds the log and training is reproducible") {
  LMConfig c = tiny(12);
  c.steps = 30;
  const auto tr = random_corpus(12, 60, 8, 7), va = random_corpus(12, 10, 8, 8);
  auto a = lm_train(lm_init(c), tr, va, c), b = lm_train(lm_init(c), tr, va, c);
  REQUIRE(a.log.size() == 7);  // step 0 plus every 5 steps
  for (const auto& e : a.log) {
    REQUIRE(e.valid_nll);
    CHECK(a.best_valid_nll <= *e.valid_nll);
    CHECK(e.step % c.eval_interval == 0);
  }
  CHECK(num::checkpoints_bit_equal(a.best, b.best));
  CHECK(a.log_json() == b.log_json());
  const double re = evaluate_stream(LanguageModel::from_checkpoint(a.best), pack_corpus(va)).mean();
  CHECK(re == a.best_valid_nll);
}

TEST_CASE("vocabulary overflow is rejected") {
  LMConfig c = tiny(5);
  CHECK_THROWS_AS(lm_train(lm_init(c), random_corpus(9, 10, 4, 1), random_corpus(5, 4, 4, 2), c), DataError);
}

TEST_CASE("transplant re-initializes only vocabulary tensors") {
  LMConfig src = tiny(30);
  src.seed = 11;
  LanguageModel s = lm_init(src);
  LMConfig dst = tiny(12);
  dst.seed = 12;
  LanguageModel t = transplant(s, dst);
  const auto sc = s.to_checkpoint(0), tc = t.to_checkpoint(0);
  const auto fresh = lm_init(dst).to_checkpoint(0);
  for (const auto& p : tc.tensors) {
    if (is_vocab_param(p.name)) {
      CHECK(p.tensor.shape()[p.name == "head.bias" ? 0 : (p.name == "head.weight" ? 1 : 0)] == 12);
      CHECK(num::tensors_bit_equal(p.tensor, fresh.get(p.name)));
    } else {
      CHECK(num::tensors_bit_equal(p.tensor, sc.get(p.name)));
    }
  }
  LMConfig g = dst;
  g.architecture = Arch::gru;
  CHECK_THROWS_AS(transplant(s, g), ContractError);
  LMConfig wide = dst;
  wide.model_dim = 32;
  CHECK_THROWS_AS(transplant(s, wide), ShapeError);
}

TEST_CASE("zero-step finetune at equal vocab equals direct evaluation") {
  LMConfig c = tiny(10);
  const auto corpus = random_corpus(10, 100, 6, 21);
  const Splits sp = split_corpus(corpus, 0.8, 0.1, 3);
  CHECK(sp.train.messages.size() == 80);
  CHECK(sp.valid.messages.size() == 10);
  CHECK(sp.test.messages.size() == 10);
  c.steps = 15;
  auto pre = lm_train(lm_init(c), sp.train, sp.valid, c);
  LMConfig ft = c;
  ft.steps = 0;
  ft.seed = 99;
  auto r = lm_finetune(pre.best, sp, ft);
  const double direct = evaluate_stream(LanguageModel::from_checkpoint(pre.best), pack_corpus(sp.test)).perplexity();
  CHECK(*r.test_ppl == direct);
}

TEST_CASE("speaker transplant copies weights byte for byte") {
  game::GameConfig gc;
  gc.vocab_size = 11;
  gc.seq_len = 3;
  gc.hidden_dim = 8;
  gc.feature_dim = 6;
  gc.seed = 5;
  const auto model = game::GameModel::init(gc);
  const auto ckpt = model.to_checkpoint(0);
  LMConfig c = tiny(11);
  c.architecture = Arch::gru;
  c.model_dim = 8;
  LanguageModel m = lm_from_speaker(ckpt, c);
  const auto lc = m.to_checkpoint(0);
  CHECK(num::tensors_bit_equal(lc.get("tok_embed"), ckpt.get("speaker.embed")));
  for (const char* w : {"w_z", "b_z", "w_r", "b_r", "w_h", "b_h"}) {
    CHECK(num::tensors_bit_equal(lc.get(std::string("gru.") + w), ckpt.get(std::string("speaker.gru.") + w)));
  }
  CHECK(num::tensors_bit_equal(lc.get("head.weight"), ckpt.get("speaker.head.weight")));
  CHECK(num::tensors_bit_equal(lc.get("head.bias"), ckpt.get("speaker.head.bias")));

  // Zero steps at matching vocab: deterministic ppl from the transplanted weights.
  const Splits sp = split_corpus(random_corpus(11, 50, 3, 2), 0.8, 0.1, 0);
  LMConfig z = c;
  z.steps = 0;
  auto r1 = model_transfer_gru(ckpt, sp, z), r2 = model_transfer_gru(ckpt, sp, z);
  CHECK(*r1.test_ppl == *r2.test_ppl);
  CHECK(*r1.test_ppl == evaluate_stream(m, pack_corpus(sp.test)).perplexity());

  LMConfig wrong = c;
  wrong.model_dim = 16;
  CHECK_THROWS_AS(lm_from_speaker(ckpt, wrong), ShapeError);
}

TEST_CASE("one-layer transformer LM loss passes gradcheck") {
  const auto c = testing::lm_loss_case();
  INFO(c.result.worst);
  CHECK(c.result.ok);
  LMConfig shape;
  shape.layers = 1;
  shape.model_dim = 8;
  shape.ffn_dim = 12;
  shape.context = 4;
  shape.vocab_size = 7;
  CHECK(c.result.checked == parameter_count(lm_init(shape)));
}

TEST_CASE("transfer plan with only scratch gives one row") {
  TransferPlan plan;
  plan.target = split_corpus(random_corpus(9, 60, 5, 1), 0.8, 0.1, 0);
  plan.finetune = tiny(9);
  plan.finetune.steps = 5;
  plan.seeds = {0};
  auto rep = transfer_experiment(plan);
  CHECK(rep.rows() == std::vector<std::string>{"scratch"});
  REQUIRE(rep.cells.size() == 1);
  CHECK(rep.cells[0].test_ppl.has_value());
  CHECK(rep.table() == transfer_experiment(plan).table());
}
