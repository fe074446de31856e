#include "eclab/xlab/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>

#include "eclab/corpora/emergent.hpp"
#include "eclab/corpora/generators.hpp"
#include "eclab/corpora/io.hpp"
#include "eclab/ecgame/game.hpp"
#include "eclab/errors.hpp"
#include "eclab/langmodel/lm.hpp"
#include "eclab/metrics/metrics.hpp"
#include "eclab/numcore/checkpoint.hpp"
#include "eclab/seq2seq/seq2seq.hpp"
#include "eclab/util/json_config.hpp"
#include "eclab/xlab/sweep.hpp"

namespace eclab::xlab {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
  int threads = 1;
};

json load_config(const Globals& g) {
  if (g.config_path.empty()) return json::object();
  const std::string text = corpora::read_text_file(g.config_path);
  try {
    json j = json::parse(text);
    if (!j.is_object()) throw DataError(g.config_path + ": config must be a JSON object");
    return j;
  } catch (const json::parse_error& e) {
    throw DataError(g.config_path + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  fs::create_directories(path.parent_path().empty() ? fs::path(".") : path.parent_path());
  corpora::write_text_file(path, j.dump(2) + "\n");
}

corpora::SyntheticWorldSpec world_spec(const json& j, const Globals& g) {
  corpora::SyntheticWorldSpec w;
  util::StrictObject o(j, "world config", {"attributes", "values", "noise", "objects", "seed"});
  o.get("attributes", w.attributes);
  o.get("values", w.values);
  o.get("noise", w.noise);
  o.get("objects", w.objects);
  o.get("seed", w.seed);
  if (g.seed) w.seed = *g.seed;
  return w;
}

game::GameConfig game_config(const json& j, const Globals& g) {
  game::GameConfig c = game::GameConfig::from_json(j);
  if (g.seed) c.seed = *g.seed;
  return c;
}

lm::LMConfig lm_config(const json& j, const Globals& g, int vocab) {
  lm::LMConfig c = lm::LMConfig::from_json(j);
  if (g.seed) c.seed = *g.seed;
  if (vocab > 0) c.vocab_size = vocab;
  return c;
}

void write_lm_result(const fs::path& out, const lm::LMTrainResult& r, const lm::LMConfig& c, std::ostream& os) {
  num::save_checkpoint(r.best, out / "best");
  json j = r.log_json();
  j["config"] = c.to_json();
  write_json(out / "result.json", j);
  os << "best step " << r.best_step << ", valid nll " << std::setprecision(6) << r.best_valid_nll;
  if (r.test_ppl) os << ", test ppl " << *r.test_ppl;
  os << '\n';
}

std::vector<double> parse_split(const std::string& s) {
  std::vector<double> v;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ',')) v.push_back(std::stod(part));
  if (v.size() != 2) throw DataError("--split expects TRAIN,VALID fractions, got '" + s + "'");
  return v;
}

std::string corpus_summary(const corpora::Corpus& c) {
  return std::to_string(c.messages.size()) + " messages, " + std::to_string(c.token_count()) + " tokens, vocab " +
         std::to_string(c.vocab_size);
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Emergent-communication transfer experiments", "xlab"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "JSON config for the subcommand");
  app.add_option("--seed", g.seed, "Seed (overrides the config)");
  app.add_option("--out", g.out, "Output directory");
  app.add_option("--threads", g.threads, "Worker threads for toposim")->check(CLI::PositiveNumber);
  app.fallthrough();

  std::string features, corpus, checkpoint, captions, table, decode = "sample", mode, metric, target = "captions";
  std::string split = "0.8,0.1", transfer = "encoder-only", axis_str;
  bool truncate = false;
  std::size_t count = 0, tokens = 0, segments = 4, train_pairs = 500;
  int vocab = 0;
  std::vector<int> values;

  auto* train_game = app.add_subcommand("train-game", "Train speaker and listener");
  train_game->add_option("--features", features, "Feature file")->required();
  auto* gen_corpus = app.add_subcommand("gen-corpus", "Emergent corpus from a speaker checkpoint");
  gen_corpus->add_option("--checkpoint", checkpoint)->required();
  gen_corpus->add_option("--features", features)->required();
  gen_corpus->add_option("--decode", decode)->check(CLI::IsMember({"sample", "greedy"}));
  gen_corpus->add_flag("--truncate-at-zero", truncate);
  auto* gen_pz = app.add_subcommand("gen-paren-zipf", "Balanced Zipfian bracket corpus");
  gen_pz->add_option("--tokens", tokens, "Token count");
  gen_pz->add_option("--vocab", vocab, "Vocabulary size");
  auto* gen_world = app.add_subcommand("gen-world", "Synthetic attribute world: features, captions, vocab");
  auto* ablate = app.add_subcommand("ablate", "Ablation corpora and inputs");
  ablate->add_option("mode", mode)->required()->check(CLI::IsMember({"permute", "random-speaker", "random-input"}));
  ablate->add_option("--corpus", corpus);
  ablate->add_option("--features", features);
  ablate->add_option("--count", count, "Rows for random-input (default: same as input)");
  auto* stats = app.add_subcommand("stats", "Unigram statistics of a corpus");
  stats->add_option("--corpus", corpus)->required();
  auto* toposim = app.add_subcommand("toposim", "Topographic similarity of messages and inputs");
  toposim->add_option("--corpus", corpus)->required();
  toposim->add_option("--features", features)->required();
  toposim->add_option("--mode", mode)->check(CLI::IsMember({"full", "sampled"}));
  auto* lm_pretrain = app.add_subcommand("lm-pretrain", "Pretrain a language model on a source corpus");
  lm_pretrain->add_option("--corpus", corpus)->required();
  auto* lm_finetune = app.add_subcommand("lm-finetune", "Fine-tune a pretrained LM on a target corpus");
  lm_finetune->add_option("--checkpoint", checkpoint)->required();
  lm_finetune->add_option("--corpus", corpus)->required();
  lm_finetune->add_option("--split", split, "Train,valid fractions");
  auto* lm_scratch = app.add_subcommand("lm-scratch", "Train an LM from scratch on a target corpus");
  lm_scratch->add_option("--corpus", corpus)->required();
  lm_scratch->add_option("--split", split, "Train,valid fractions");
  auto* model_transfer = app.add_subcommand("model-transfer", "GRU LM initialized from a speaker");
  model_transfer->add_option("--checkpoint", checkpoint)->required();
  model_transfer->add_option("--corpus", corpus)->required();
  model_transfer->add_option("--split", split, "Train,valid fractions");
  auto* translate = app.add_subcommand("translate-metric", "Emergent-to-natural translation score");
  translate->add_option("--checkpoint", checkpoint)->required();
  translate->add_option("--features", features)->required();
  translate->add_option("--captions", captions)->required();
  auto* cap_pre = app.add_subcommand("caption-pretrain", "Feature-sequence to emergent-message model");
  cap_pre->add_option("--features", features)->required();
  cap_pre->add_option("--corpus", corpus, "One message per feature row")->required();
  cap_pre->add_option("--segments", segments, "Source vectors per row");
  auto* cap_ft = app.add_subcommand("caption-finetune", "Fine-tune captioning on natural captions");
  cap_ft->add_option("--features", features)->required();
  cap_ft->add_option("--captions", captions)->required();
  cap_ft->add_option("--checkpoint", checkpoint, "Captioning pretrain checkpoint");
  cap_ft->add_option("--transfer", transfer)->check(CLI::IsMember({"encoder-only", "all", "none"}));
  cap_ft->add_option("--segments", segments, "Source vectors per row");
  cap_ft->add_option("--train-pairs", train_pairs, "Fine-tuning pairs");
  auto* sweep = app.add_subcommand("sweep", "Checkpoint sweep (resumable), or a setup sweep with --axis");
  sweep->add_option("--axis", axis_str)->check(CLI::IsMember({"vocab", "seqlen"}));
  sweep->add_option("--values", values, "Axis values");
  auto* correlate_cmd = app.add_subcommand("correlate", "Correlate a metric with downstream performance");
  correlate_cmd->add_option("--table", table)->required();
  correlate_cmd->add_option("--metric", metric)->required();
  correlate_cmd->add_option("--target", target);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n' << "run with --help for usage\n";
    return kExitUsage;
  }

  const fs::path outdir = g.out;
  try {
    const json cfg = load_config(g);
    if (*train_game) {
      const auto f = corpora::read_features(features);
      game::GameConfig c = game_config(cfg, g);
      if (!cfg.contains("feature_dim")) c.feature_dim = static_cast<int>(f.d);
      game::TrainOptions to;
      to.out_dir = outdir;
      to.keep_in_memory = false;
      const auto r = game::train_game(c, f, to);
      if (r.diverged) {
        err << "diverged: " << r.divergence << '\n';
        return kExitDivergence;
      }
      if (!r.log.empty()) out << "final loss " << r.log.back().loss << ", train accuracy " << r.log.back().train_accuracy << '\n';
      return kExitOk;
    }
    if (*gen_corpus) {
      util::StrictObject(cfg, "gen-corpus config", {});
      const auto ck = num::load_checkpoint(checkpoint);
      const auto f = corpora::read_features(features);
      num::Prng rng(g.seed.value_or(0), num::stream::sampling);
      corpora::GenerateOptions go;
      go.decode = game::decode_from_name(decode);
      go.truncate_at_zero = truncate;
      go.source = fs::path(checkpoint).filename().string();
      const auto c = corpora::generate_corpus(ck, f, rng, go);
      corpora::write_corpus(c, outdir / "corpus.txt");
      out << corpus_summary(c) << '\n';
      return kExitOk;
    }
    if (*gen_pz) {
      corpora::ParenZipfConfig pc;
      util::StrictObject o(cfg, "paren-zipf config", {"vocab_size", "token_count", "zipf_exponent", "open_prob", "line_length"});
      o.get("vocab_size", pc.vocab_size);
      o.get("token_count", pc.token_count);
      o.get("zipf_exponent", pc.zipf_exponent);
      o.get("open_prob", pc.open_prob);
      o.get("line_length", pc.line_length);
      if (tokens) pc.token_count = tokens;
      if (vocab) pc.vocab_size = vocab;
      num::Prng rng(g.seed.value_or(0), num::stream::corpus);
      const auto c = corpora::gen_paren_zipf(pc, rng);
      corpora::write_corpus(c, outdir / "corpus.txt");
      out << corpus_summary(c) << '\n';
      return kExitOk;
    }
    if (*gen_world) {
      const auto spec = world_spec(cfg, g);
      const auto w = corpora::synthetic_world(spec);
      corpora::write_features(w.features, outdir / "features.bin");
      corpora::write_captions(w.captions, outdir / "captions.txt");
      corpora::write_vocab(w.vocab, outdir / "vocab.txt");
      out << w.features.n << " objects, feature dim " << w.features.d << ", caption vocab " << w.vocab.size() << '\n';
      return kExitOk;
    }
    if (*ablate) {
      const std::uint64_t seed = g.seed.value_or(0);
      if (mode == "permute") {
        if (corpus.empty()) throw ContractError("ablate permute needs --corpus");
        num::Prng rng(seed, num::stream::corpus);
        const auto c = corpora::permute_corpus(corpora::read_corpus(corpus), rng);
        corpora::write_corpus(c, outdir / "corpus.txt");
        out << corpus_summary(c) << '\n';
      } else if (mode == "random-speaker") {
        if (features.empty()) throw ContractError("ablate random-speaker needs --features");
        const auto f = corpora::read_features(features);
        game::GameConfig gc = game_config(cfg, g);
        gc.feature_dim = static_cast<int>(f.d);
        num::Prng rng(seed, num::stream::sampling);
        const auto c = corpora::random_speaker_corpus(gc, f, rng);
        corpora::write_corpus(c, outdir / "corpus.txt");
        out << corpus_summary(c) << '\n';
      } else {
        if (features.empty()) throw ContractError("ablate random-input needs --features");
        const auto f = corpora::read_features(features);
        num::Prng rng(seed, num::stream::data);
        auto r = corpora::random_inputs(corpora::feature_stats(f), count ? count : f.n, rng);
        corpora::write_features(r, outdir / "features.bin");
        out << r.n << " random inputs of dim " << r.d << '\n';
      }
      return kExitOk;
    }
    if (*stats) {
      const auto c = corpora::read_corpus(corpus);
      const auto r = metrics::unigram_stats(c);
      json j{{"tokens", r.total}, {"vocab_size", c.vocab_size}, {"used_vocab", r.used_vocab}, {"entropy_nats", r.entropy}};
      j["zipf_exponent"] = r.zipf_exponent ? json(*r.zipf_exponent) : json(nullptr);
      out << j.dump(2) << '\n';
      return kExitOk;
    }
    if (*toposim) {
      const auto c = corpora::read_corpus(corpus);
      const auto f = corpora::read_features(features);
      metrics::TopoSimOptions o;
      util::StrictObject so(cfg, "toposim config", {"full_limit", "pairs"});
      so.get("full_limit", o.full_limit);
      so.get("pairs", o.pairs);
      if (mode == "full") o.mode = metrics::TopoMode::full;
      if (mode == "sampled") o.mode = metrics::TopoMode::sampled;
      o.seed = g.seed.value_or(0);
      o.threads = g.threads;
      const auto r = metrics::topographic_similarity(c.messages, f, o);
      json j{{"rho", r.rho ? json(*r.rho) : json(nullptr)},
             {"pairs", r.pair_count},
             {"mode", r.mode == metrics::TopoMode::full ? "full" : "sampled"},
             {"seed", r.seed}};
      if (!r.rho) j["reason"] = r.reason;
      out << j.dump(2) << '\n';
      return kExitOk;
    }
    if (*lm_pretrain) {
      const auto c = corpora::read_corpus(corpus);
      lm::LMConfig lc = lm_config(cfg, g, c.vocab_size);
      const auto s = lm::split_corpus(c, 0.95, 0.05, lc.seed);
      const auto r = lm::lm_train(lm::lm_init(lc), s.train, s.valid, lc);
      write_lm_result(outdir, r, lc, out);
      return kExitOk;
    }
    if (*lm_finetune || *lm_scratch || *model_transfer) {
      const auto c = corpora::read_corpus(corpus);
      const auto sp = parse_split(split);
      lm::LMConfig lc = lm_config(cfg, g, c.vocab_size);
      const auto s = lm::split_corpus(c, sp[0], sp[1], lc.seed);
      lm::LMTrainResult r;
      if (*lm_finetune) {
        r = lm::lm_finetune(num::load_checkpoint(checkpoint), s, lc);
      } else if (*lm_scratch) {
        r = lm::lm_scratch(s, lc);
      } else {
        const auto spk = num::load_checkpoint(checkpoint);
        lc.architecture = lm::Arch::gru;
        if (!cfg.contains("model_dim")) lc.model_dim = game::GameConfig::from_json(spk.config).hidden_dim;
        r = lm::model_transfer_gru(spk, s, lc);
      }
      write_lm_result(outdir, r, lc, out);
      return kExitOk;
    }
    if (*translate) {
      const auto ck = num::load_checkpoint(checkpoint);
      const auto f = corpora::read_features(features);
      const auto caps = corpora::read_captions(captions);
      s2s::TranslationMetricConfig tc;
      util::StrictObject o(cfg, "translation config", {"model", "train_fraction", "message_decode"});
      if (cfg.contains("model")) {
        json m = tc.model.to_json();
        for (auto it = cfg["model"].begin(); it != cfg["model"].end(); ++it) m[it.key()] = it.value();
        tc.model = s2s::Seq2SeqConfig::from_json(m);
      }
      o.get("train_fraction", tc.train_fraction);
      std::string md = game::decode_name(tc.message_decode);
      o.get("message_decode", md);
      tc.message_decode = game::decode_from_name(md);
      num::Prng rng(g.seed.value_or(0), num::stream::eval);
      auto r = s2s::translation_metric(ck, f, caps, tc, rng);
      r.per_pair_path = "per_pair.csv";
      std::ostringstream pp;
      pp << "eval_index,rouge_l_f\n" << std::setprecision(17);
      for (std::size_t i = 0; i < r.per_pair.size(); ++i) pp << i << ',' << r.per_pair[i] << '\n';
      corpora::write_text_file(outdir / "per_pair.csv", pp.str());
      json j = r.to_json();
      j["config"] = {{"model", tc.model.to_json()}, {"train_fraction", tc.train_fraction}, {"message_decode", md}};
      write_json(outdir / "report.json", j);
      out << "translation ROUGE-L F " << std::setprecision(6) << r.mean_rouge_l << " over " << r.eval_pairs << " pairs\n";
      return kExitOk;
    }
    if (*cap_pre) {
      const auto f = corpora::read_features(features);
      const auto c = corpora::read_corpus(corpus);
      if (c.messages.size() != f.n) {
        throw DataError("caption-pretrain: " + std::to_string(c.messages.size()) + " messages for " +
                        std::to_string(f.n) + " feature rows");
      }
      s2s::Seq2SeqConfig sc = s2s::Seq2SeqConfig::from_json(cfg);
      if (g.seed) sc.seed = *g.seed;
      sc.input_mode = s2s::InputMode::features;
      sc.feature_dim = static_cast<int>(f.d / segments);
      sc.target_vocab = c.vocab_size;
      const auto r = s2s::caption_pretrain(s2s::segment_examples(f, segments, c.messages), sc);
      num::save_checkpoint(r.checkpoint, outdir / "checkpoint");
      write_json(outdir / "result.json", json{{"epoch_loss", r.epoch_loss}, {"config", sc.to_json()}});
      if (!r.epoch_loss.empty()) out << "final epoch loss " << r.epoch_loss.back() << '\n';
      return kExitOk;
    }
    if (*cap_ft) {
      const auto f = corpora::read_features(features);
      const auto caps = corpora::read_captions(captions);
      caps.validate(f.n);
      s2s::Seq2SeqConfig sc = s2s::Seq2SeqConfig::from_json(cfg);
      if (g.seed) sc.seed = *g.seed;
      sc.input_mode = s2s::InputMode::features;
      sc.feature_dim = static_cast<int>(f.d / segments);
      sc.target_vocab = caps.vocab_size;
      std::vector<std::size_t> rows;
      std::vector<corpora::Message> targets;
      for (const auto& p : caps.pairs) {
        rows.push_back(p.first);
        targets.push_back(p.second);
      }
      auto all = s2s::segment_examples(f.subset(rows), segments, targets);
      num::Prng rng(sc.seed, num::stream::split);
      rng.shuffle(all);
      const std::size_t held = all.size() / 10;
      if (all.size() < train_pairs + 2 * held || held == 0) {
        throw DataError("caption-finetune: " + std::to_string(all.size()) + " pairs cannot hold " +
                        std::to_string(train_pairs) + " training pairs plus valid and test tenths");
      }
      const std::vector<s2s::Example> valid(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(held));
      const std::vector<s2s::Example> test(all.begin() + static_cast<std::ptrdiff_t>(held),
                                           all.begin() + static_cast<std::ptrdiff_t>(2 * held));
      const std::vector<s2s::Example> train(all.begin() + static_cast<std::ptrdiff_t>(2 * held),
                                            all.begin() + static_cast<std::ptrdiff_t>(2 * held + train_pairs));
      std::optional<num::Checkpoint> pre;
      if (!checkpoint.empty()) pre = num::load_checkpoint(checkpoint);
      const auto r = s2s::caption_finetune(pre, train, valid, test, sc, s2s::transfer_from_name(transfer));
      json j = r.to_json();
      j["config"] = sc.to_json();
      j["transfer"] = transfer;
      write_json(outdir / "report.json", j);
      out << "best epoch " << r.best_epoch << ", test BLEU-4 " << r.test_bleu4 << ", ROUGE-L " << r.test_rouge_l << '\n';
      return kExitOk;
    }
    if (*sweep) {
      SweepSpec spec = SweepSpec::from_json(cfg);
      if (g.seed) spec.seed = *g.seed;
      spec.threads = g.threads;
      SweepOptions so;
      so.out_dir = outdir;
      so.on_point = [&](const SweepPoint& p) {
        out << p.setup << " trial " << p.trial << " step " << p.step << (p.error.empty() ? "" : " error: " + p.error)
            << '\n';
      };
      if (!axis_str.empty()) {
        const auto r = setup_sweep(axis_from_name(axis_str), values, spec, so);
        write_json(outdir / "setup_sweep.json", r.to_json());
      } else {
        if (!values.empty()) throw ContractError("--values needs --axis");
        const auto pts = run_sweep(spec, so);
        out << pts.size() << " points in " << (outdir / "points.csv").string() << '\n';
      }
      return kExitOk;
    }
    if (*correlate_cmd) {
      util::StrictObject(cfg, "correlate config", {});
      const auto pts = read_points(table);
      const auto r = correlate(pts, metric, target);
      const std::string stem = "correlation_" + metric + "_" + target;
      write_json(outdir / (stem + ".json"), r.to_json());
      corpora::write_text_file(outdir / (stem + ".csv"), r.scatter_csv());
      out << r.to_json().dump(2) << '\n';
      return kExitOk;
    }
  } catch (const DivergenceError& e) {
    err << "diverged: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const ContractError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace eclab::xlab
