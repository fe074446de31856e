// Acceptance run: one PASS/FAIL line per criterion.
//   acceptance [--criterion N]... [--work DIR]

#include <CLI11.hpp>

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "eclab/corpora/emergent.hpp"
#include "eclab/corpora/generators.hpp"
#include "eclab/corpora/io.hpp"
#include "eclab/ecgame/game.hpp"
#include "eclab/langmodel/lm.hpp"
#include "eclab/metrics/metrics.hpp"
#include "eclab/numcore/checkpoint.hpp"
#include "eclab/seq2seq/seq2seq.hpp"
#include "eclab/xlab/cli.hpp"
#include "eclab/xlab/sweep.hpp"
#include "support/grad_suite.hpp"
#include "support/metric_oracles.hpp"

using namespace eclab;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = true;
  std::string summary;
};

// Collects named sub-checks; the criterion passes only if all of them do.
class Checks {
 public:
  void expect(bool ok, const std::string& what) {
    std::printf("  [%s] %s\n", ok ? "ok" : "FAILED", what.c_str());
    std::fflush(stdout);
    pass_ = pass_ && ok;
    if (!ok) ++failed_;
  }
  bool pass() const { return pass_; }
  int failed() const { return failed_; }

 private:
  bool pass_ = true;
  int failed_ = 0;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

double median3(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

fs::path fresh(const fs::path& p) {
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// The 4x6 world the speaker experiments share.
corpora::SyntheticWorldSpec world_4x6(std::uint64_t seed, std::size_t objects = 0) {
  return {.attributes = 4, .values = 6, .noise = 0.05, .objects = objects, .seed = seed};
}

game::GameConfig game_config_c3(std::uint64_t seed) {
  game::GameConfig c;  // V=64, T=8, K=15, H=64, D=24
  c.learning_rate = 2e-3;
  c.pool_size = 1000;
  c.steps = 3000;
  c.checkpoint_interval = 3000;
  c.seed = seed;
  return c;
}

// Trained on every tuple of the seed-100 world; reused by criteria 4, 5 and 7.
num::Checkpoint reference_speaker() {
  const auto w = corpora::synthetic_world(world_4x6(100));
  const auto t0 = Clock::now();
  auto r = game::train_game(game_config_c3(0), w.features);
  if (r.diverged) throw DivergenceError(r.divergence);
  std::printf("  reference speaker trained in %.0f s, final train accuracy %.3f\n", seconds_since(t0),
              r.log.back().train_accuracy);
  return r.checkpoints.back();
}

// ---------------------------------------------------------------------------

Outcome c1_gradients(const fs::path&) {
  const auto t0 = Clock::now();
  Checks ck;
  auto report = [&](const testing::GradCase& c) {
    ck.expect(c.result.ok, fmt("%s: %zu entries, worst %.3g of tolerance%s%s", c.name.c_str(), c.result.checked,
                               c.result.worst_error, c.result.ok ? "" : " at ", c.result.ok ? "" : c.result.worst.c_str()));
  };
  const auto prims = testing::primitive_cases(20);
  double worst = 0;
  std::size_t bad = 0, entries = 0;
  for (const auto& c : prims) {
    worst = std::max(worst, c.result.worst_error);
    entries += c.result.checked;
    if (!c.result.ok) {
      ++bad;
      std::printf("    %s: %s\n", c.name.c_str(), c.result.worst.c_str());
    }
  }
  ck.expect(bad == 0, fmt("%zu primitive checks over 20 random shape draws (%zu entries, rtol 1e-5), worst %.3g of "
                          "tolerance, %zu failing",
                          prims.size(), entries, worst, bad));
  report(testing::gru_chain_case());
  report(testing::game_loss_case());
  report(testing::lm_loss_case());
  report(testing::s2s_loss_case(s2s::InputMode::tokens));
  report(testing::s2s_loss_case(s2s::InputMode::features));
  const double secs = seconds_since(t0);
  ck.expect(secs < 120, fmt("runtime %.1f s < 120 s", secs));
  return {ck.pass(), fmt("gradient suite, %d failing check(s), %.1f s", ck.failed(), secs)};
}

Outcome c2_metric_oracles(const fs::path&) {
  Checks ck;
  num::Prng rng(2024, 0);
  auto random_message = [&](std::size_t max_len, int vocab) {
    corpora::Message m(rng.below(max_len + 1));
    for (auto& t : m) t = static_cast<int>(rng.below(static_cast<std::uint64_t>(vocab)));
    return m;
  };
  int lev_bad = 0;
  for (int k = 0; k < 1000; ++k) {
    const auto a = random_message(6, 4), b = random_message(6, 4);
    lev_bad += metrics::levenshtein(a, b) != testing::levenshtein_recursive(a, 0, b, 0);
  }
  ck.expect(lev_bad == 0, fmt("levenshtein vs exhaustive recursion on 1000 pairs: %d mismatches", lev_bad));

  double pe = 0, se = 0;
  int undefined_mismatch = 0;
  for (int k = 0; k < 100; ++k) {
    std::vector<double> x(60), y(60), xt(60), yt(60);
    for (auto& v : x) v = rng.normal();
    for (auto& v : y) v = rng.normal();
    for (auto& v : xt) v = static_cast<double>(rng.below(5));  // ties exercise average ranks
    for (auto& v : yt) v = static_cast<double>(rng.below(5));
    pe = std::max(pe, std::abs(*metrics::pearson(x, y).rho - *testing::two_pass_pearson(x, y)));
    const auto s = metrics::spearman(xt, yt);
    const auto o = testing::rank_then_pearson(xt, yt);
    if (s.defined() != o.has_value()) ++undefined_mismatch;
    else if (o) se = std::max(se, std::abs(*s.rho - *o));
  }
  ck.expect(pe <= 1e-12 && se <= 1e-12 && undefined_mismatch == 0,
            fmt("pearson/spearman vs two-pass oracles on 100 vectors: max diff %.2g / %.2g", pe, se));

  int topo_bad = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    num::Prng wr(seed, 1);
    const auto w = corpora::synthetic_world({.attributes = 2 + static_cast<int>(seed % 2), .values = 3, .noise = 0.1,
                                             .objects = 4 + static_cast<std::size_t>(wr.below(12)), .seed = seed});
    std::vector<corpora::Message> msgs;
    for (std::size_t i = 0; i < w.features.n; ++i)
      msgs.push_back(seed % 2 ? random_message(4, 3) : w.captions.pairs[i].second);
    const auto rep = metrics::topographic_similarity(msgs, w.features);
    const auto oracle = testing::brute_force_toposim(msgs, w.features);
    const bool same = rep.defined() == oracle.has_value() && (!oracle || *rep.rho == *oracle);
    topo_bad += !same;
  }
  ck.expect(topo_bad == 0, fmt("toposim vs brute force on 20 worlds (N <= 15), exact: %d mismatches", topo_bad));

  const corpora::Message abcd{1, 2, 3, 4}, acd{1, 3, 4};
  const auto r = metrics::rouge_l(abcd, acd);
  const double b2 = 1.2 * 1.2, f = (1 + b2) * 0.75 * 1.0 / (1.0 + b2 * 0.75);
  ck.expect(std::abs(r.precision - 0.75) < 1e-9 && std::abs(r.recall - 1.0) < 1e-9 && std::abs(r.f - f) < 1e-9,
            fmt("rouge_l('a b c d', 'a c d'): P %.12f R %.12f F %.12f", r.precision, r.recall, r.f));
  const double bleu = metrics::bleu4({{1, 2, 3}}, {{1, 2, 3, 4}});
  ck.expect(std::abs(bleu - std::exp(-1.0 / 3.0)) < 1e-9,
            fmt("bleu4('the cat sat', 'the cat sat on') = %.12f, expected exp(-1/3)", bleu));
  ck.expect(metrics::bleu4({{1, 2, 3, 4}}, {{1, 2, 3, 4}}) == 1.0 && metrics::rouge_l(abcd, corpora::Message{7, 8}).f == 0.0,
            "identity and disjoint overlap cases");
  return {ck.pass(), fmt("metric oracles, %d failing check(s)", ck.failed())};
}

Outcome c3_game(const fs::path&) {
  Checks ck;
  std::vector<double> acc;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto w = corpora::synthetic_world(world_4x6(100 + seed));
    num::Prng split(seed, num::stream::split);
    std::vector<std::size_t> idx(w.features.n);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    split.shuffle(idx);
    const std::size_t n_train = idx.size() * 4 / 5;
    const auto train = w.features.subset({idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train)});
    const auto held = w.features.subset({idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end()});
    const auto cfg = game_config_c3(seed);

    const auto untrained = game::eval_accuracy(game::GameModel::init(cfg), held, {.trials = 10000, .seed = 9});
    const double p0 = 1.0 / 16.0, sigma = std::sqrt(p0 * (1 - p0) / 10000.0);
    ck.expect(std::abs(untrained.accuracy - p0) <= 3 * sigma,
              fmt("seed %llu untrained accuracy %.4f within 3 sigma (%.4f) of 1/16", (unsigned long long)seed,
                  untrained.accuracy, 3 * sigma));

    const auto t0 = Clock::now();
    const auto r = game::train_game(cfg, train);
    const double secs = seconds_since(t0);
    if (r.diverged) {
      ck.expect(false, "seed " + std::to_string(seed) + " diverged: " + r.divergence);
      acc.push_back(0.0);
      continue;
    }
    const auto m = game::GameModel::from_checkpoint(r.checkpoints.back());
    const auto ev = game::eval_accuracy(m, held, {.trials = 2000, .seed = 9});
    acc.push_back(ev.accuracy);
    std::printf("  seed %llu: held-out accuracy %.4f (%zu held-out objects), trained in %.0f s\n",
                (unsigned long long)seed, ev.accuracy, held.n, secs);
    ck.expect(secs < 600, fmt("seed %llu runtime %.0f s < 600 s", (unsigned long long)seed, secs));
  }
  const double med = median3(acc);
  ck.expect(med >= 0.90, fmt("median held-out accuracy %.4f >= 0.90", med));
  return {ck.pass(), fmt("game training, median held-out accuracy %.4f over 3 seeds", med)};
}

Outcome c4_corpora(const fs::path&) {
  Checks ck;
  corpora::ParenZipfConfig pc;
  pc.vocab_size = 5000;
  pc.token_count = 1000000;
  num::Prng rng(4, num::stream::corpus);
  const auto pz = corpora::gen_paren_zipf(pc, rng);
  std::size_t balanced = 0;
  std::vector<double> counts(5000, 0.0);
  for (const auto& line : pz.messages) {
    balanced += corpora::is_balanced(line);
    for (int t : line) counts[static_cast<std::size_t>(t)] += 1.0;
  }
  ck.expect(balanced == pz.messages.size(),
            fmt("%zu / %zu paren-zipf lines balanced", balanced, pz.messages.size()));
  corpora::ZipfSampler z(5000, 1.0);
  const double total = static_cast<double>(pz.token_count());
  double kl = 0.0;
  for (int r = 1; r <= 5000; ++r) {
    const double p = counts[static_cast<std::size_t>(r - 1)] / total;
    if (p > 0) kl += p * std::log(p / z.probability(r));
  }
  ck.expect(kl < 0.05, fmt("KL(empirical || Zipf s=1) over %.0f tokens = %.5f nats < 0.05", total, kl));
  const double h = metrics::unigram_stats(pz).entropy;
  ck.expect(h >= 6.0 && h <= 6.6, fmt("vocab-5000 entropy %.4f nats in [6.0, 6.6]", h));

  const auto speaker = reference_speaker();
  const auto objs = corpora::synthetic_world(world_4x6(200, 5000));
  num::Prng r1(1, num::stream::sampling), r2(1, num::stream::sampling);
  const auto ec = corpora::generate_corpus(speaker, objs.features, r1);
  const auto rs = corpora::random_speaker_corpus(game::GameConfig::from_json(speaker.config), objs.features, r2);
  const double he = metrics::unigram_stats(ec).entropy, hr = metrics::unigram_stats(rs).entropy;
  ck.expect(he < hr, fmt("trained EC entropy %.4f < random-speaker entropy %.4f (same %zu inputs)", he, hr, objs.features.n));
  return {ck.pass(), fmt("corpus properties: KL %.4f, H(pz) %.3f, H(ec) %.3f < H(random) %.3f", kl, h, he, hr)};
}

Outcome c5_transfer(const fs::path&) {
  Checks ck;
  const auto t0 = Clock::now();
  const auto speaker = reference_speaker();
  const auto gc = game::GameConfig::from_json(speaker.config);
  // 25000 inputs x 8 tokens = 200k-token source corpora.
  const auto src = corpora::synthetic_world(world_4x6(200, 25000));
  num::Prng r1(1, num::stream::sampling), r2(1, num::stream::data), r3(1, 0);
  const auto ec = corpora::generate_corpus(speaker, src.features, r1);
  const auto perm = corpora::permute_corpus(ec, r2);
  const auto rs = corpora::random_speaker_corpus(gc, src.features, r3);
  // 12500 captions of 8 words = 100k-token target.
  const auto target = xlab::captions_corpus(corpora::synthetic_world(world_4x6(300, 12500)).captions);
  std::printf("  source tokens %zu, target tokens %zu\n", ec.token_count(), target.token_count());

  lm::LMConfig pre;  // 2 layers, d=64
  pre.context = 128;
  pre.steps = 1000;
  pre.eval_interval = 200;
  lm::LMConfig ft = pre;
  // Short fine-tune: with a few hundred steps every row saturates at the same perplexity.
  ft.steps = 60;
  ft.eval_interval = 10;
  lm::LMConfig gru_pre = pre, gru_ft = ft;
  gru_pre.architecture = gru_ft.architecture = lm::Arch::gru;
  gru_pre.model_dim = gru_ft.model_dim = gc.hidden_dim;

  lm::TransferReport all;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    lm::TransferPlan plan;
    plan.sources = {{"ec", ec}, {"permuted-ec", perm}, {"random-speaker", rs}};
    plan.speaker = speaker;
    plan.gru_source = ec;
    plan.target = lm::split_corpus(target, 0.8, 0.1, seed);
    plan.pretrain = pre;
    plan.finetune = ft;
    plan.gru_pretrain = gru_pre;
    plan.gru_finetune = gru_ft;
    plan.seeds = {seed};
    const auto rep = lm::transfer_experiment(plan);
    for (const auto& c : rep.cells) {
      std::printf("  seed %llu %-20s %s\n", (unsigned long long)seed, c.row.c_str(),
                  c.test_ppl ? fmt("%.4f", *c.test_ppl).c_str() : ("error: " + c.error).c_str());
      all.cells.push_back(c);
    }
    std::fflush(stdout);
  }
  auto med = [&](const char* row) { return all.median(row).value_or(NAN); };
  const double e = med("ec"), s = med("scratch"), p = med("permuted-ec"), r = med("random-speaker");
  const double gcor = med("gru-corpus-transfer"), gmod = med("gru-model-transfer");
  ck.expect(e < s, fmt("ppl(EC) %.4f < ppl(scratch) %.4f", e, s));
  ck.expect(e <= p, fmt("ppl(EC) %.4f <= ppl(permuted) %.4f", e, p));
  ck.expect(p <= r, fmt("ppl(permuted) %.4f <= ppl(random-speaker) %.4f", p, r));
  ck.expect(gcor <= gmod, fmt("ppl(GRU corpus transfer) %.4f <= ppl(GRU model transfer) %.4f", gcor, gmod));
  const double secs = seconds_since(t0);
  ck.expect(secs < 3600, fmt("runtime %.0f s < 3600 s", secs));
  return {ck.pass(), fmt("transfer medians: ec %.3f, scratch %.3f, permuted %.3f, random %.3f, gru-corpus %.3f, "
                         "gru-model %.3f",
                         e, s, p, r, gcor, gmod)};
}

Outcome c6_sweep(const fs::path& work) {
  Checks ck;
  const auto t0 = Clock::now();
  xlab::SweepSpec spec;
  spec.setups = {{64, 8}, {16, 4}, {6, 3}};
  spec.trials = 2;
  spec.steps = 500;
  spec.checkpoint_interval = 100;
  xlab::SweepOptions opts;
  opts.out_dir = fresh(work / "c6");
  opts.on_point = [&](const xlab::SweepPoint& p) {
    std::printf("  %-7s trial %d step %3lld  acc %.3f  toposim %.3f  translation %.3f  -ppl %.4f%s\n", p.setup.c_str(),
                p.trial, (long long)p.step, p.accuracy.value_or(NAN), p.toposim.value_or(NAN),
                p.translation.value_or(NAN), p.neg_ppl.at("captions").value_or(NAN),
                p.error.empty() ? "" : ("  error: " + p.error).c_str());
    std::fflush(stdout);
  };
  const auto points = xlab::run_sweep(spec, opts);
  ck.expect(points.size() == 30, fmt("%zu sweep points", points.size()));
  const auto tr = xlab::correlate(points, "translation", "captions");
  const auto tp = xlab::correlate(points, "toposim", "captions");
  const auto ac = xlab::correlate(points, "accuracy", "captions");
  const double rt = tr.pearson.rho.value_or(NAN), rp = tp.pearson.rho.value_or(NAN);
  std::printf("  pearson vs -ppl: translation %.3f (n=%zu), toposim %.3f (n=%zu), accuracy %.3f\n", rt, tr.used, rp,
              tp.used, ac.pearson.rho.value_or(NAN));
  ck.expect(rt > rp || (!tp.pearson.rho && tr.pearson.rho), fmt("Pearson(translation) %.3f > Pearson(toposim) %.3f", rt, rp));
  ck.expect(rt > 0.3, fmt("Pearson(translation) %.3f > 0.3", rt));
  corpora::write_text_file(opts.out_dir / "translation_report.json", tr.to_json().dump(2) + "\n");
  corpora::write_text_file(opts.out_dir / "toposim_report.json", tp.to_json().dump(2) + "\n");
  return {ck.pass(), fmt("sweep of 30 points: Pearson translation %.3f, toposim %.3f (%.0f s)", rt, rp,
                         seconds_since(t0))};
}

Outcome c7_captioning(const fs::path&) {
  Checks ck;
  const auto speaker = reference_speaker();
  const auto tw = corpora::synthetic_world(world_4x6(300, 900));
  std::vector<std::size_t> rows;
  std::vector<corpora::Message> caps;
  for (const auto& p : tw.captions.pairs) {
    rows.push_back(p.first);
    caps.push_back(p.second);
  }
  // Each 24-dim input is read as 4 vectors of 6.
  const auto nat = s2s::segment_examples(tw.features.subset(rows), 4, caps);
  const std::vector<s2s::Example> train(nat.begin(), nat.begin() + 500), valid(nat.begin() + 500, nat.begin() + 700),
      test(nat.begin() + 700, nat.end());
  std::vector<double> enc, scratch;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto src = corpora::synthetic_world(world_4x6(200, 5000));
    num::Prng r(seed, num::stream::sampling);
    const auto ec = corpora::generate_corpus(speaker, src.features, r);
    s2s::Seq2SeqConfig c;
    c.input_mode = s2s::InputMode::features;
    c.feature_dim = 6;
    c.max_source_len = 4;
    c.model_dim = 32;
    c.ffn_dim = 64;
    c.seed = seed;
    c.target_vocab = ec.vocab_size;
    c.epochs = 3;
    const auto pre = s2s::caption_pretrain(s2s::segment_examples(src.features, 4, ec.messages), c);
    c.target_vocab = tw.captions.vocab_size;
    c.epochs = 4;
    const auto e = s2s::caption_finetune(pre.checkpoint, train, valid, test, c, s2s::Transfer::encoder_only);
    const auto n = s2s::caption_finetune(std::nullopt, train, valid, test, c, s2s::Transfer::none);
    std::printf("  seed %llu: BLEU-4 encoder-transfer %.4f, scratch %.4f (ROUGE-L %.4f / %.4f)\n",
                (unsigned long long)seed, e.test_bleu4, n.test_bleu4, e.test_rouge_l, n.test_rouge_l);
    enc.push_back(e.test_bleu4);
    scratch.push_back(n.test_bleu4);
  }
  const double me = median3(enc), ms = median3(scratch);
  ck.expect(me >= ms, fmt("median BLEU-4 encoder-transfer %.4f >= scratch %.4f", me, ms));
  return {ck.pass(), fmt("captioning with 500 pairs: median BLEU-4 %.4f (encoder transfer) vs %.4f (scratch)", me, ms)};
}

struct CliRun {
  int code;
  std::string out, err;
};

CliRun xlab_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "xlab");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream o, e;
  const int code = xlab::run_cli(static_cast<int>(argv.size()), argv.data(), o, e);
  return {code, o.str(), e.str()};
}

// Every regular file under root, relative path -> bytes.
std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = corpora::read_text_file(e.path());
  return out;
}

Outcome c8_determinism(const fs::path& work) {
  Checks ck;
  const fs::path root = fresh(work / "c8");
  corpora::write_text_file(root / "world.json", R"({"attributes": 3, "values": 4, "objects": 300, "seed": 5})");
  corpora::write_text_file(root / "game.json",
                           R"({"vocab_size": 10, "seq_len": 4, "steps": 100, "checkpoint_interval": 50, "pool_size": 200})");
  corpora::write_text_file(root / "lm.json",
                           R"({"layers": 1, "model_dim": 16, "ffn_dim": 32, "context": 16, "steps": 20, "eval_interval": 10})");
  corpora::write_text_file(root / "translate.json", R"({"model": {"model_dim": 16, "ffn_dim": 32, "epochs": 2}})");

  auto pipeline = [&](const fs::path& d, const std::string& seed) {
    const auto w = (d / "world").string(), g = (d / "game").string();
    std::vector<std::vector<std::string>> steps{
        {"--config", (root / "world.json").string(), "--out", w, "gen-world"},
        {"--config", (root / "game.json").string(), "--seed", seed, "--out", g, "train-game", "--features", w + "/features.bin"},
        {"--seed", seed, "--out", (d / "corpus").string(), "gen-corpus", "--checkpoint", g + "/step_000100", "--features",
         w + "/features.bin"},
        {"--seed", seed, "--out", (d / "permuted").string(), "ablate", "permute", "--corpus", (d / "corpus/corpus.txt").string()},
        {"--seed", seed, "--out", (d / "pz").string(), "gen-paren-zipf", "--tokens", "4000", "--vocab", "40"},
        {"--config", (root / "lm.json").string(), "--seed", seed, "--out", (d / "lm").string(), "lm-pretrain", "--corpus",
         (d / "corpus/corpus.txt").string()},
        {"--config", (root / "translate.json").string(), "--seed", seed, "--out", (d / "translate").string(),
         "translate-metric", "--checkpoint", g + "/step_000100", "--features", w + "/features.bin", "--captions",
         w + "/captions.txt"},
    };
    for (const auto& s : steps) {
      const auto r = xlab_cli(s);
      if (r.code != 0) {
        std::printf("    xlab %s failed (%d): %s\n", s[s.size() > 4 ? 4 : 0].c_str(), r.code, r.err.c_str());
        return false;
      }
    }
    return true;
  };
  const bool ok_a = pipeline(root / "a", "7"), ok_b = pipeline(root / "b", "7"), ok_c = pipeline(root / "c", "8");
  ck.expect(ok_a && ok_b && ok_c, "CLI pipeline (gen-world, train-game, gen-corpus, ablate, gen-paren-zipf, lm-pretrain, "
                                  "translate-metric) exits 0");
  const auto sa = snapshot(root / "a"), sb = snapshot(root / "b"), sc = snapshot(root / "c");
  ck.expect(!sa.empty() && sa == sb, fmt("identical invocations: %zu artifacts byte-identical", sa.size()));
  ck.expect(sa.at("corpus/corpus.txt") != sc.at("corpus/corpus.txt") && sa.at("game/step_000100/tensors.bin") !=
                                                                             sc.at("game/step_000100/tensors.bin"),
            "a different --seed changes the checkpoint and corpus");

  const auto corpus = corpora::read_corpus(root / "a/corpus/corpus.txt");
  corpora::write_corpus(corpus, root / "rt_corpus.txt");
  ck.expect(corpora::read_text_file(root / "rt_corpus.txt") == sa.at("corpus/corpus.txt"), "corpus round trip is byte exact");
  const auto feats = corpora::read_features(root / "a/world/features.bin");
  corpora::write_features(feats, root / "rt_features.bin");
  const auto feats2 = corpora::read_features(root / "rt_features.bin");
  ck.expect(corpora::read_text_file(root / "rt_features.bin") == sa.at("world/features.bin") &&
                std::equal(feats.values.begin(), feats.values.end(), feats2.values.begin(), feats2.values.end(),
                           [](float x, float y) { return std::bit_cast<std::uint32_t>(x) == std::bit_cast<std::uint32_t>(y); }),
            "feature round trip is bit exact");
  const auto ckpt = num::load_checkpoint(root / "a/game/step_000100");
  num::save_checkpoint(ckpt, root / "rt_ckpt");
  ck.expect(num::checkpoints_bit_equal(ckpt, num::load_checkpoint(root / "rt_ckpt")) &&
                corpora::read_text_file(root / "rt_ckpt/tensors.bin") == sa.at("game/step_000100/tensors.bin"),
            "checkpoint round trip is bit exact");

  std::string same = "# vocab_size=10\n";
  for (std::size_t i = 0; i < feats.n; ++i) same += "3 3 1\n";
  corpora::write_text_file(root / "constant.txt", same);
  const auto topo = xlab_cli({"toposim", "--corpus", (root / "constant.txt").string(), "--features",
                              (root / "a/world/features.bin").string()});
  bool undefined_reported = false;
  if (topo.code == 0) {
    const auto j = nlohmann::json::parse(topo.out);
    undefined_reported = j["rho"].is_null() && j.value("reason", "") == "zero edit-distance variance";
  }
  ck.expect(undefined_reported, "toposim of identical messages exits 0 and reports undefined with its reason");
  return {ck.pass(), fmt("determinism and formats, %d failing check(s)", ck.failed())};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<int> which;
  std::string work = (fs::temp_directory_path() / "eclab_acceptance").string();
  app.add_option("--criterion", which, "Criterion number(s) 1-8; default all")->check(CLI::Range(1, 8));
  app.add_option("--work", work, "Scratch directory");
  CLI11_PARSE(app, argc, argv);
  if (which.empty()) which = {1, 2, 3, 4, 5, 6, 7, 8};

  const std::vector<std::pair<const char*, std::function<Outcome(const fs::path&)>>> criteria{
      {"gradient suite", c1_gradients},       {"metric oracles", c2_metric_oracles},
      {"game training", c3_game},             {"corpus properties", c4_corpora},
      {"transfer direction", c5_transfer},    {"translation-metric sweep", c6_sweep},
      {"captioning transfer", c7_captioning}, {"determinism and formats", c8_determinism},
  };
  fs::create_directories(work);
  std::vector<std::string> lines;
  bool all = true;
  for (int n : which) {
    const auto& [title, run] = criteria[static_cast<std::size_t>(n - 1)];
    std::printf("criterion %d: %s\n", n, title);
    std::fflush(stdout);
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = run(work);
    } catch (const std::exception& e) {
      o = {false, std::string("aborted: ") + e.what()};
    }
    lines.push_back(fmt("%s criterion %d (%s): %s [%.0f s]", o.pass ? "PASS" : "FAIL", n, title, o.summary.c_str(),
                        seconds_since(t0)));
    std::printf("%s\n\n", lines.back().c_str());
    std::fflush(stdout);
    all = all && o.pass;
  }
  if (which.size() > 1) {
    std::printf("summary\n");
    for (const auto& l : lines) std::printf("%s\n", l.c_str());
  }
  return all ? 0 : 1;
}
