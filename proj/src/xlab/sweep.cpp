#include "eclab/xlab/sweep.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "eclab/corpora/emergent.hpp"
#include "eclab/corpora/io.hpp"
#include "eclab/errors.hpp"
#include "eclab/numcore/checkpoint.hpp"
#include "eclab/util/json_config.hpp"

namespace eclab::xlab {

using nlohmann::json;
namespace fs = std::filesystem;

corpora::Corpus captions_corpus(const corpora::CaptionSet& captions) {
  corpora::Corpus c;
  c.vocab_size = captions.vocab_size;
  for (const auto& p : captions.pairs) c.messages.push_back(p.second);
  c.provenance.set("generator", "captions");
  return c;
}

double downstream_ppl(const corpora::Corpus& source, const lm::Splits& target, const DownstreamSpec& spec,
                      std::uint64_t seed) {
  lm::LMConfig pre = spec.pretrain;
  pre.vocab_size = source.vocab_size;
  pre.seed = seed;
  const lm::Splits s = lm::split_corpus(source, 0.95, 0.05, seed);
  const lm::LMTrainResult pr = lm::lm_train(lm::lm_init(pre), s.train, s.valid, pre);
  lm::LMConfig ft = spec.finetune;
  ft.vocab_size = target.train.vocab_size;
  ft.seed = seed;
  return *lm::lm_finetune(pr.best, target, ft).test_ppl;
}

std::string SetupSpec::id() const { return "V" + std::to_string(vocab_size) + "-T" + std::to_string(seq_len); }

SweepSpec::SweepSpec() {
  game.learning_rate = 2e-3;
  game.pool_size = 1000;
  game.checkpoint_interval = checkpoint_interval;
  game.steps = steps;

  auto& pre = downstream.pretrain;
  // A 1-layer d32 LM gave perplexities too noisy to rank checkpoints.
  pre.layers = 2;
  pre.heads = 2;
  pre.model_dim = 64;
  pre.ffn_dim = 256;
  pre.context = 64;
  pre.steps = 500;
  pre.eval_interval = 100;
  downstream.finetune = pre;
  downstream.finetune.steps = 60;
  downstream.finetune.eval_interval = 10;

  auto& tm = translation.model;
  tm.model_dim = 32;
  tm.ffn_dim = 64;
  tm.epochs = 6;
  tm.batch_size = 32;
  translation.train_fraction = 0.8;
}

namespace {

json world_to_json(const corpora::SyntheticWorldSpec& w) {
  return json{{"attributes", w.attributes}, {"values", w.values}, {"noise", w.noise}, {"objects", w.objects},
              {"seed", w.seed}};
}

corpora::SyntheticWorldSpec world_from_json(const json& j) {
  corpora::SyntheticWorldSpec w;
  util::StrictObject o(j, "world", {"attributes", "values", "noise", "objects", "seed"});
  o.get("attributes", w.attributes);
  o.get("values", w.values);
  o.get("noise", w.noise);
  o.get("objects", w.objects);
  o.get("seed", w.seed);
  return w;
}

// Partial JSON over a default-initialized config: present keys override.
template <class Config>
Config merge_config(const Config& base, const json& j) {
  json merged = base.to_json();
  if (!j.is_object()) throw DataError("expected a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) merged[it.key()] = it.value();
  return Config::from_json(merged);
}

}  // namespace

void SweepSpec::validate() const {
  auto fail = [](const std::string& m) { throw ContractError("sweep spec: " + m); };
  if (setups.empty()) fail("no setups");
  if (trials < 1) fail("trials must be >= 1");
  if (steps < 1 || checkpoint_interval < 1 || steps % checkpoint_interval != 0) {
    fail("checkpoint_interval must divide steps");
  }
  for (const auto& m : metrics) {
    if (m != "accuracy" && m != "toposim" && m != "translation") {
      fail("unknown metric '" + m + "' (valid: accuracy, toposim, translation)");
    }
  }
  if (targets.empty()) fail("no downstream targets");
  world.validate();
  if (grounded_objects < 20 || source_objects < 1 || target_objects < 10) fail("object counts too small");
}

json SweepSpec::to_json() const {
  json s = json::array();
  for (const auto& x : setups) s.push_back({{"vocab_size", x.vocab_size}, {"seq_len", x.seq_len}});
  return json{{"setups", s},
              {"trials", trials},
              {"steps", steps},
              {"checkpoint_interval", checkpoint_interval},
              {"metrics", metrics},
              {"targets", targets},
              {"game", game.to_json()},
              {"world", world_to_json(world)},
              {"grounded_objects", grounded_objects},
              {"source_objects", source_objects},
              {"target_objects", target_objects},
              {"toposim_objects", toposim_objects},
              {"eval_trials", eval_trials},
              {"pretrain", downstream.pretrain.to_json()},
              {"finetune", downstream.finetune.to_json()},
              {"target_split", {downstream.target_train, downstream.target_valid}},
              {"translation",
               {{"model", translation.model.to_json()},
                {"train_fraction", translation.train_fraction},
                {"message_decode", game::decode_name(translation.message_decode)}}},
              {"seed", seed}};
}

SweepSpec SweepSpec::from_json(const json& j) {
  SweepSpec s;
  const json defaults = s.to_json();
  std::vector<std::string> keys;
  for (auto it = defaults.begin(); it != defaults.end(); ++it) keys.push_back(it.key());
  util::StrictObject o(j, "sweep spec", keys);
  if (j.contains("setups")) {
    s.setups.clear();
    for (const auto& x : j["setups"]) {
      SetupSpec st;
      util::StrictObject so(x, "sweep setup", {"vocab_size", "seq_len"});
      so.get("vocab_size", st.vocab_size);
      so.get("seq_len", st.seq_len);
      s.setups.push_back(st);
    }
  }
  o.get("trials", s.trials);
  o.get("steps", s.steps);
  o.get("checkpoint_interval", s.checkpoint_interval);
  o.get("metrics", s.metrics);
  o.get("targets", s.targets);
  if (j.contains("game")) s.game = merge_config(s.game, j["game"]);
  if (j.contains("world")) s.world = world_from_json(j["world"]);
  o.get("grounded_objects", s.grounded_objects);
  o.get("source_objects", s.source_objects);
  o.get("target_objects", s.target_objects);
  o.get("toposim_objects", s.toposim_objects);
  o.get("eval_trials", s.eval_trials);
  if (j.contains("pretrain")) s.downstream.pretrain = merge_config(s.downstream.pretrain, j["pretrain"]);
  if (j.contains("finetune")) s.downstream.finetune = merge_config(s.downstream.finetune, j["finetune"]);
  if (j.contains("target_split")) {
    std::vector<double> ts;
    o.get("target_split", ts);
    if (ts.size() != 2) throw DataError("sweep spec: target_split must be [train, valid]");
    s.downstream.target_train = ts[0];
    s.downstream.target_valid = ts[1];
  }
  if (j.contains("translation")) {
    const json& t = j["translation"];
    util::StrictObject to(t, "sweep translation", {"model", "train_fraction", "message_decode"});
    if (t.contains("model")) s.translation.model = merge_config(s.translation.model, t["model"]);
    to.get("train_fraction", s.translation.train_fraction);
    std::string d = game::decode_name(s.translation.message_decode);
    to.get("message_decode", d);
    s.translation.message_decode = game::decode_from_name(d);
  }
  o.get("seed", s.seed);
  return s;
}

std::uint64_t SweepSpec::cell_seed(std::size_t setup, int trial) const {
  return seed * 1000003ULL + setup * 1000ULL + static_cast<std::uint64_t>(trial);
}

std::optional<double> SweepPoint::metric(const std::string& name) const {
  if (name == "accuracy") return accuracy;
  if (name == "toposim") return toposim;
  if (name == "translation") return translation;
  if (name.rfind("neg_ppl:", 0) == 0) {
    auto it = neg_ppl.find(name.substr(8));
    if (it != neg_ppl.end()) return it->second;
    return std::nullopt;
  }
  throw DataError("unknown metric '" + name + "' (valid: accuracy, toposim, translation, neg_ppl:<target>)");
}

namespace {

const std::vector<std::string> kFixedColumns{"setup",    "vocab_size", "seq_len",        "trial",
                                             "step",     "seed",       "accuracy",       "toposim",
                                             "toposim_reason", "translation"};

std::string fmt(const std::optional<double>& v) {
  if (!v) return "";
  std::ostringstream os;
  os << std::setprecision(17) << *v;
  return os.str();
}

std::optional<double> parse_opt(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return std::stod(s);
}

std::string clean(std::string s) {
  for (char& ch : s)
    if (ch == ',' || ch == '\n' || ch == '\r') ch = ';';
  return s;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

std::string points_header(const std::vector<std::string>& targets) {
  std::string h = util::join(kFixedColumns, ",");
  for (const auto& t : targets) h += ",neg_ppl:" + clean(t);
  return h + ",error";
}

std::string point_row(const SweepPoint& p, const std::vector<std::string>& targets) {
  std::ostringstream os;
  os << p.setup << ',' << p.vocab_size << ',' << p.seq_len << ',' << p.trial << ',' << p.step << ',' << p.seed << ','
     << fmt(p.accuracy) << ',' << fmt(p.toposim) << ',' << clean(p.toposim_reason) << ',' << fmt(p.translation);
  for (const auto& t : targets) {
    auto it = p.neg_ppl.find(t);
    os << ',' << (it == p.neg_ppl.end() ? "" : fmt(it->second));
  }
  os << ',' << clean(p.error);
  return os.str();
}

std::vector<SweepPoint> read_points(const fs::path& csv) {
  std::ifstream in(csv);
  if (!in) throw DataError("cannot open sweep table " + csv.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError(csv.string() + ": empty sweep table");
  const auto header = split_csv(line);
  if (header.size() < kFixedColumns.size() + 1 ||
      !std::equal(kFixedColumns.begin(), kFixedColumns.end(), header.begin()) || header.back() != "error") {
    throw DataError(csv.string() + ": not a sweep table header");
  }
  std::vector<std::string> targets;
  for (std::size_t i = kFixedColumns.size(); i + 1 < header.size(); ++i) targets.push_back(header[i].substr(8));
  std::vector<SweepPoint> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != header.size()) {
      throw ParseError(csv.string() + ":" + std::to_string(lineno), "expected " + std::to_string(header.size()) +
                                                                        " fields, got " + std::to_string(f.size()));
    }
    try {
      SweepPoint p;
      p.setup = f[0];
      p.vocab_size = std::stoi(f[1]);
      p.seq_len = std::stoi(f[2]);
      p.trial = std::stoi(f[3]);
      p.step = std::stoll(f[4]);
      p.seed = std::stoull(f[5]);
      p.accuracy = parse_opt(f[6]);
      p.toposim = parse_opt(f[7]);
      p.toposim_reason = f[8];
      p.translation = parse_opt(f[9]);
      for (std::size_t t = 0; t < targets.size(); ++t) p.neg_ppl[targets[t]] = parse_opt(f[kFixedColumns.size() + t]);
      p.error = f.back();
      out.push_back(std::move(p));
    } catch (const std::logic_error& e) {
      throw ParseError(csv.string() + ":" + std::to_string(lineno), std::string("bad number: ") + e.what());
    }
  }
  return out;
}

namespace {

struct SweepData {
  corpora::World game_world;
  corpora::World grounded;
  corpora::World source;
  std::map<std::string, lm::Splits> targets;
};

corpora::World sampled_world(corpora::SyntheticWorldSpec w, std::size_t objects, std::uint64_t offset) {
  w.objects = objects;
  w.seed += offset;
  return corpora::synthetic_world(w);
}

SweepData prepare(const SweepSpec& spec) {
  SweepData d;
  d.game_world = corpora::synthetic_world(spec.world);
  // Fresh noisy draws, so none of these vectors were seen in game training.
  d.grounded = sampled_world(spec.world, spec.grounded_objects, 1);
  d.source = sampled_world(spec.world, spec.source_objects, 2);
  for (const auto& t : spec.targets) {
    corpora::Corpus c;
    if (t == "captions") {
      c = captions_corpus(sampled_world(spec.world, spec.target_objects, 3).captions);
    } else {
      c = corpora::read_corpus(t);
    }
    d.targets[t] = lm::split_corpus(c, spec.downstream.target_train, spec.downstream.target_valid, spec.seed);
  }
  return d;
}

bool wants(const SweepSpec& s, const std::string& m) {
  return std::find(s.metrics.begin(), s.metrics.end(), m) != s.metrics.end();
}

SweepPoint evaluate_point(const SweepSpec& spec, const SweepData& data, const num::Checkpoint& ckpt, SweepPoint p) {
  const game::GameModel model = game::GameModel::from_checkpoint(ckpt);
  auto guarded = [&](const char* what, const std::function<void()>& f) {
    try {
      f();
    } catch (const Error& e) {
      if (!p.error.empty()) p.error += "; ";
      p.error += std::string(what) + ": " + e.what();
    }
  };
  if (wants(spec, "accuracy")) {
    guarded("accuracy", [&] {
      game::EvalOptions eo;
      eo.distractors = spec.game.distractors;
      eo.trials = spec.eval_trials;
      eo.seed = p.seed;
      p.accuracy = game::eval_accuracy(model, data.grounded.features, eo).accuracy;
    });
  }
  if (wants(spec, "toposim")) {
    guarded("toposim", [&] {
      std::vector<std::size_t> rows;
      for (std::size_t i = 0; i < std::min(spec.toposim_objects, data.grounded.features.n); ++i) rows.push_back(i);
      const auto feats = data.grounded.features.subset(rows);
      num::Prng rng(p.seed, num::stream::sampling);
      corpora::GenerateOptions go;
      go.decode = game::Decode::greedy;
      const auto msgs = corpora::generate_corpus(model, feats, rng, go);
      metrics::TopoSimOptions to;
      to.seed = p.seed;
      to.threads = spec.threads;
      const auto r = metrics::topographic_similarity(msgs.messages, feats, to);
      p.toposim = r.rho;
      p.toposim_reason = r.reason;
    });
  }
  if (wants(spec, "translation")) {
    guarded("translation", [&] {
      num::Prng rng(p.seed, num::stream::eval);
      p.translation =
          s2s::translation_metric(ckpt, data.grounded.features, data.grounded.captions, spec.translation, rng)
              .mean_rouge_l;
    });
  }
  guarded("downstream", [&] {
    num::Prng rng(p.seed, num::stream::sampling);
    const auto corpus = corpora::generate_corpus(model, data.source.features, rng, {});
    for (const auto& [name, splits] : data.targets) {
      p.neg_ppl[name] = std::nullopt;
      // One LM seed for every point: perplexity differences then come from the corpus alone.
      p.neg_ppl[name] = -downstream_ppl(corpus, splits, spec.downstream, spec.seed);
    }
  });
  return p;
}

std::vector<num::Checkpoint> cell_checkpoints(const game::GameConfig& gc, const corpora::FeatureSet& features,
                                              const fs::path& dir) {
  std::vector<num::Checkpoint> out;
  bool complete = fs::exists(dir / "train_log.json");
  for (int s = gc.checkpoint_interval; complete && s <= gc.steps; s += gc.checkpoint_interval) {
    const fs::path p = dir / game::checkpoint_dir_name(s);
    if (!fs::exists(p)) {
      complete = false;
      break;
    }
    out.push_back(num::load_checkpoint(p));
  }
  if (complete && !out.empty() && out.front().config == gc.to_json()) return out;
  game::TrainOptions to;
  to.out_dir = dir;
  auto r = game::train_game(gc, features, to);
  if (r.diverged) throw DivergenceError(r.divergence);
  return r.checkpoints;
}

}  // namespace

std::vector<SweepPoint> run_sweep(const SweepSpec& spec, const SweepOptions& opts) {
  spec.validate();
  fs::create_directories(opts.out_dir);
  const fs::path spec_path = opts.out_dir / "sweep_spec.json", table = opts.out_dir / "points.csv";
  const json sj = spec.to_json();
  if (fs::exists(spec_path)) {
    const json old = json::parse(corpora::read_text_file(spec_path));
    if (old != sj) throw DataError(opts.out_dir.string() + " holds a sweep with a different spec");
  } else {
    corpora::write_text_file(spec_path, sj.dump(2) + "\n");
  }
  std::vector<SweepPoint> points;
  if (fs::exists(table)) {
    points = read_points(table);
  } else {
    corpora::write_text_file(table, points_header(spec.targets) + "\n");
  }
  std::set<std::tuple<std::string, int, std::int64_t>> done;
  for (const auto& p : points) done.insert({p.setup, p.trial, p.step});

  const SweepData data = prepare(spec);
  std::ofstream out(table, std::ios::app);
  std::size_t fresh = 0;
  for (std::size_t si = 0; si < spec.setups.size(); ++si) {
    const SetupSpec& st = spec.setups[si];
    for (int trial = 0; trial < spec.trials; ++trial) {
      bool need = false;
      for (int s = spec.checkpoint_interval; s <= spec.steps; s += spec.checkpoint_interval)
        need = need || !done.count({st.id(), trial, s});
      if (!need) continue;
      game::GameConfig gc = spec.game;
      gc.vocab_size = st.vocab_size;
      gc.seq_len = st.seq_len;
      gc.steps = spec.steps;
      gc.checkpoint_interval = spec.checkpoint_interval;
      gc.seed = spec.cell_seed(si, trial);
      gc.feature_dim = static_cast<int>(data.game_world.features.d);
      const fs::path cell = opts.out_dir / "runs" / st.id() / ("trial_" + std::to_string(trial));
      std::vector<num::Checkpoint> ckpts;
      std::string cell_error;
      try {
        ckpts = cell_checkpoints(gc, data.game_world.features, cell);
      } catch (const Error& e) {
        cell_error = std::string("game: ") + e.what();
      }
      for (int s = spec.checkpoint_interval; s <= spec.steps; s += spec.checkpoint_interval) {
        if (done.count({st.id(), trial, s})) continue;
        if (opts.max_new_points && fresh >= *opts.max_new_points) return points;
        SweepPoint p;
        p.setup = st.id();
        p.vocab_size = st.vocab_size;
        p.seq_len = st.seq_len;
        p.trial = trial;
        p.step = s;
        p.seed = gc.seed;
        if (!cell_error.empty()) {
          p.error = cell_error;
        } else {
          const auto it = std::find_if(ckpts.begin(), ckpts.end(), [&](const num::Checkpoint& c) { return c.step == s; });
          if (it == ckpts.end()) p.error = "missing checkpoint";
          else p = evaluate_point(spec, data, *it, p);
        }
        out << point_row(p, spec.targets) << '\n';
        out.flush();
        if (opts.on_point) opts.on_point(p);
        points.push_back(std::move(p));
        ++fresh;
      }
    }
  }
  return points;
}

json CorrelationReport::to_json() const {
  auto corr = [](const metrics::Correlation& c) {
    json j{{"value", c.rho ? json(*c.rho) : json(nullptr)}};
    if (!c.reason.empty()) j["reason"] = c.reason;
    return j;
  };
  return json{{"metric", metric},         {"target", target},   {"total", total},
              {"used", used},             {"excluded", excluded}, {"pearson", corr(pearson)},
              {"spearman", corr(spearman)}};
}

std::string CorrelationReport::scatter_csv() const {
  std::ostringstream os;
  os << metric << ",neg_ppl:" << target << '\n' << std::setprecision(17);
  for (const auto& [x, y] : scatter) os << x << ',' << y << '\n';
  return os.str();
}

CorrelationReport correlate(const std::vector<SweepPoint>& points, const std::string& metric,
                            const std::string& target, Exclusion policy) {
  (void)policy;  // drop_undefined is the only policy
  CorrelationReport r;
  r.metric = metric;
  r.target = target;
  r.total = points.size();
  std::vector<double> xs, ys;
  for (const auto& p : points) {
    const auto x = p.metric(metric);
    const auto y = p.metric("neg_ppl:" + target);
    if (!x) {
      std::string why = p.error.empty() ? "metric undefined" : "point error";
      if (metric == "toposim" && !p.toposim_reason.empty()) why = p.toposim_reason;
      ++r.excluded[why];
      continue;
    }
    if (!y) {
      ++r.excluded["downstream undefined"];
      continue;
    }
    xs.push_back(*x);
    ys.push_back(*y);
    r.scatter.emplace_back(*x, *y);
  }
  r.used = xs.size();
  if (r.used < 3) {
    throw DataError("correlate: only " + std::to_string(r.used) + " usable points for " + metric + " vs " + target +
                    " (need at least 3)");
  }
  r.pearson = metrics::pearson(xs, ys);
  r.spearman = metrics::spearman(xs, ys);
  return r;
}

Axis axis_from_name(const std::string& s) {
  if (s == "vocab") return Axis::vocab;
  if (s == "seqlen") return Axis::seqlen;
  throw DataError("unknown axis '" + s + "' (expected vocab or seqlen)");
}

const char* axis_name(Axis a) { return a == Axis::vocab ? "vocab" : "seqlen"; }

GroupStats group_stats(const std::vector<double>& values) {
  GroupStats g;
  g.n = values.size();
  if (values.empty()) return g;
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  g.mean = mean;
  if (values.size() >= 2) {
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    g.variance = ss / static_cast<double>(values.size() - 1);
  }
  return g;
}

json SetupSweepReport::to_json() const {
  json gs = json::array();
  for (const auto& g : groups) {
    json st = json::object();
    for (const auto& [k, s] : g.stats) {
      st[k] = {{"n", s.n},
               {"mean", s.mean ? json(*s.mean) : json(nullptr)},
               {"variance", s.variance ? json(*s.variance) : json(nullptr)}};
    }
    gs.push_back({{"value", g.value}, {"seeds", g.seeds}, {"stats", st}});
  }
  return json{{"axis", axis_name(axis)}, {"groups", gs}};
}

SetupSweepReport group_setup_points(Axis axis, const std::vector<SweepPoint>& points, std::int64_t final_step,
                                    const std::vector<std::string>& targets) {
  SetupSweepReport r;
  r.axis = axis;
  std::map<int, std::vector<const SweepPoint*>> by;
  for (const auto& p : points)
    if (p.step == final_step) by[axis == Axis::vocab ? p.vocab_size : p.seq_len].push_back(&p);
  std::vector<std::string> keys{"accuracy", "toposim", "translation"};
  for (const auto& t : targets) keys.push_back("neg_ppl:" + t);
  for (const auto& [value, ps] : by) {
    SetupGroup g;
    g.value = value;
    for (const auto* p : ps) g.seeds.push_back(p->seed);
    for (const auto& k : keys) {
      std::vector<double> v;
      for (const auto* p : ps)
        if (auto x = p->metric(k)) v.push_back(*x);
      g.stats[k] = group_stats(v);
    }
    r.groups.push_back(std::move(g));
  }
  return r;
}

SetupSweepReport setup_sweep(Axis axis, const std::vector<int>& values, const SweepSpec& fixed,
                             const SweepOptions& opts) {
  if (values.empty()) throw ContractError("setup_sweep: no values");
  if (fixed.setups.size() != 1) throw ContractError("setup_sweep: the fixed spec must hold exactly one setup");
  SweepSpec s = fixed;
  s.setups.clear();
  for (int v : values) {
    SetupSpec st = fixed.setups[0];
    (axis == Axis::vocab ? st.vocab_size : st.seq_len) = v;
    s.setups.push_back(st);
  }
  const auto points = run_sweep(s, opts);
  return group_setup_points(axis, points, s.steps, s.targets);
}

}  // namespace eclab::xlab
