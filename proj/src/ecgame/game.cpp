#include "eclab/ecgame/game.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "eclab/errors.hpp"
#include "eclab/util/json_config.hpp"

namespace eclab::game {

using nlohmann::json;
using namespace eclab::num;

void GameConfig::validate() const {
  auto fail = [](const std::string& m) { throw ContractError("game config: " + m); };
  if (vocab_size < 3) fail("vocab_size must be >= 3 (ids 0 and 1 are reserved)");
  if (seq_len < 1) fail("seq_len must be >= 1");
  if (distractors < 1) fail("distractors must be >= 1");
  if (distractors >= batch_size) fail("distractors must be < batch_size");
  if (batch_size > pool_size) fail("batch_size must be <= pool_size");
  if (hidden_dim < 1 || feature_dim < 1 || embed_dim < 0) fail("dimensions must be positive");
  if (!(temperature > 0.0)) fail("temperature must be positive");
  if (learning_rate < 0.0) fail("learning_rate must be non-negative");
  if (clip_norm < 0.0) fail("clip_norm must be non-negative");
  if (steps < 0) fail("steps must be non-negative");
  if (checkpoint_interval < 1) fail("checkpoint_interval must be >= 1");
  if (log_interval < 1) fail("log_interval must be >= 1");
}

json GameConfig::to_json() const {
  return json{{"vocab_size", vocab_size},
              {"seq_len", seq_len},
              {"distractors", distractors},
              {"hidden_dim", hidden_dim},
              {"feature_dim", feature_dim},
              {"embed_dim", embed_dim},
              {"temperature", temperature},
              {"batch_size", batch_size},
              {"pool_size", pool_size},
              {"learning_rate", learning_rate},
              {"clip_norm", clip_norm},
              {"steps", steps},
              {"checkpoint_interval", checkpoint_interval},
              {"log_interval", log_interval},
              {"seed", seed},
              {"dtype", dtype_name(dtype)}};
}

GameConfig GameConfig::from_json(const json& j) {
  GameConfig c;
  std::vector<std::string> keys;
  const json defaults = c.to_json();
  for (auto it = defaults.begin(); it != defaults.end(); ++it) keys.push_back(it.key());
  util::StrictObject o(j, "game config", keys);
  o.get("vocab_size", c.vocab_size);
  o.get("seq_len", c.seq_len);
  o.get("distractors", c.distractors);
  o.get("hidden_dim", c.hidden_dim);
  o.get("feature_dim", c.feature_dim);
  o.get("embed_dim", c.embed_dim);
  o.get("temperature", c.temperature);
  o.get("batch_size", c.batch_size);
  o.get("pool_size", c.pool_size);
  o.get("learning_rate", c.learning_rate);
  o.get("clip_norm", c.clip_norm);
  o.get("steps", c.steps);
  o.get("checkpoint_interval", c.checkpoint_interval);
  o.get("log_interval", c.log_interval);
  o.get("seed", c.seed);
  std::string dt = dtype_name(c.dtype);
  o.get("dtype", dt);
  try {
    c.dtype = dtype_from_name(dt);
  } catch (const Error& e) {
    throw DataError(std::string("game config: ") + e.what());
  }
  c.validate();
  return c;
}

void SpeakerParams::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".embed", embed});
  gru.collect(out, prefix + ".gru");
  head.collect(out, prefix + ".head");
  if (has_projection()) project.collect(out, prefix + ".project");
}

void ListenerParams::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".embed", embed});
  gru.collect(out, prefix + ".gru");
  image.collect(out, prefix + ".image");
}

SpeakerParams init_speaker(const GameConfig& c, Prng& rng) {
  const auto V = static_cast<std::size_t>(c.vocab_size), H = static_cast<std::size_t>(c.hidden_dim),
             D = static_cast<std::size_t>(c.feature_dim), E = c.embed();
  SpeakerParams p;
  p.embed = init_normal({V, E}, 1.0, rng, c.dtype);
  p.gru = make_gru(E, H, rng, c.dtype);
  p.head = make_linear_uniform(H, V, rng, c.dtype);
  if (D != H) p.project = make_linear_uniform(D, H, rng, c.dtype);
  return p;
}

ListenerParams init_listener(const GameConfig& c, Prng& rng) {
  const auto V = static_cast<std::size_t>(c.vocab_size), H = static_cast<std::size_t>(c.hidden_dim),
             D = static_cast<std::size_t>(c.feature_dim), E = c.embed();
  ListenerParams p;
  p.embed = init_normal({V, E}, 1.0, rng, c.dtype);
  p.gru = make_gru(E, H, rng, c.dtype);
  p.image = make_linear_uniform(D, H, rng, c.dtype);
  return p;
}

json game_meta() {
  return json{{"kind", "game"},
              {"init",
               {{"embed", "normal(0,1)"},
                {"gru", "uniform(-1/sqrt(H),1/sqrt(H))"},
                {"affine", "uniform(-1/sqrt(fan_in),1/sqrt(fan_in))"}}},
              {"speaker_head", "affine H->V"},
              {"listener_image", "affine D->H"},
              {"projection", "affine D->H when D != H, identity otherwise"},
              {"score", "1/(||hl_T - image(i)||^2 + 1e-10)"},
              {"null_token", kNullToken},
              {"cls_token", kClsToken}};
}

GameModel GameModel::init(const GameConfig& config) {
  config.validate();
  Prng rng(config.seed, stream::init);
  GameModel m;
  m.config = config;
  m.speaker = init_speaker(config, rng);
  m.listener = init_listener(config, rng);
  return m;
}

ParamList GameModel::params() const {
  ParamList out;
  speaker.collect(out);
  listener.collect(out);
  return out;
}

Checkpoint GameModel::to_checkpoint(std::int64_t step) const {
  return snapshot(params(), step, config.to_json(), game_meta());
}

GameModel GameModel::from_checkpoint(const Checkpoint& ckpt) {
  GameModel m = init(GameConfig::from_json(ckpt.config));
  restore(ckpt, m.params());
  return m;
}

SpeakerParams speaker_from_checkpoint(const Checkpoint& ckpt, const GameConfig& c) {
  Prng rng(c.seed, stream::init);
  SpeakerParams p = init_speaker(c, rng);
  ParamList pl;
  p.collect(pl);
  restore(ckpt, pl);
  return p;
}

const char* decode_name(Decode d) {
  switch (d) {
    case Decode::soft: return "soft";
    case Decode::sample: return "sample";
    case Decode::greedy: return "greedy";
  }
  return "?";
}

Decode decode_from_name(const std::string& s) {
  if (s == "soft") return Decode::soft;
  if (s == "sample") return Decode::sample;
  if (s == "greedy") return Decode::greedy;
  throw DataError("unknown decode mode '" + s + "' (expected soft, sample or greedy)");
}

namespace {

// -1e9 on [CLS] keeps it out of every distribution without introducing inf.
Tensor cls_mask(std::size_t V, DType dt) {
  Tensor m = Tensor::zeros({V}, dt);
  m.buffer().set(static_cast<std::size_t>(kClsToken), -1e9);
  return m;
}

}  // namespace

SpeakerOutput speaker_forward(const Tensor& features, const SpeakerParams& p, const GameConfig& c, Decode mode,
                              Prng& rng) {
  if (features.rank() != 2 || features.dim(1) != static_cast<std::size_t>(c.feature_dim)) {
    throw ShapeError("speaker_forward: features " + shape_str(features.shape()) + " but feature_dim is " +
                     std::to_string(c.feature_dim));
  }
  const std::size_t B = features.dim(0), V = static_cast<std::size_t>(c.vocab_size);
  const DType dt = features.dtype();
  SpeakerOutput out;
  out.messages.assign(B, Message{});
  for (auto& m : out.messages) m.reserve(static_cast<std::size_t>(c.seq_len));
  Tensor h = p.has_projection() ? p.project(features) : features;
  std::vector<int> tokens(B, kClsToken);
  Tensor x = embedding(p.embed, tokens);
  const Tensor mask = cls_mask(V, dt);
  for (int t = 0; t < c.seq_len; ++t) {
    h = gru_cell(x, h, p.gru);
    Tensor logits = add(p.head(h), mask);
    if (!logits.buffer().all_finite()) {
      throw DivergenceError("speaker logits became non-finite at message position " + std::to_string(t));
    }
    if (mode == Decode::soft) {
      Tensor y = gumbel_softmax(logits, c.temperature, rng, false);
      tokens = argmax_rows(y);
      x = soft_embedding(y, p.embed);
      out.distributions.push_back(y);
    } else {
      Tensor probs = softmax(logits);
      if (mode == Decode::greedy) {
        tokens = argmax_rows(probs);
      } else {
        const std::vector<double> pv = probs.to_vector();
        for (std::size_t b = 0; b < B; ++b) {
          tokens[b] = static_cast<int>(rng.categorical(std::span<const double>(pv.data() + b * V, V)));
        }
      }
      x = embedding(p.embed, tokens);
      out.distributions.push_back(probs);
    }
    for (std::size_t b = 0; b < B; ++b) out.messages[b].push_back(tokens[b]);
  }
  return out;
}

Tensor listener_encode_soft(const std::vector<Tensor>& steps, const ListenerParams& p) {
  if (steps.empty()) throw ContractError("listener: empty message");
  const std::size_t B = steps[0].dim(0), H = p.gru.hidden_dim();
  Tensor h = Tensor::zeros({B, H}, steps[0].dtype());
  for (const auto& y : steps) h = gru_cell(soft_embedding(y, p.embed), h, p.gru);
  return h;
}

Tensor listener_encode_tokens(const std::vector<Message>& messages, const ListenerParams& p, DType dt) {
  if (messages.empty() || messages[0].empty()) throw ContractError("listener: empty message");
  const std::size_t B = messages.size(), T = messages[0].size(), H = p.gru.hidden_dim();
  Tensor h = Tensor::zeros({B, H}, dt);
  std::vector<int> ids(B);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t b = 0; b < B; ++b) {
      if (messages[b].size() != T) throw ShapeError("listener: messages of unequal length in one batch");
      ids[b] = messages[b][t];
    }
    h = gru_cell(embedding(p.embed, ids), h, p.gru);
  }
  return h;
}

Tensor listener_scores(const Tensor& hl, const Tensor& candidates, std::size_t per_item, const ListenerParams& p) {
  const std::size_t B = hl.dim(0);
  if (candidates.rank() != 2 || candidates.dim(0) != B * per_item) {
    throw ShapeError("listener_scores: candidates " + shape_str(candidates.shape()) + " for " + std::to_string(B) +
                     " items of " + std::to_string(per_item));
  }
  Tensor img = p.image(candidates);
  Tensor d2 = squared_l2(sub(repeat_rows(hl, per_item), img));
  return reshape(reciprocal(add_scalar(d2, kScoreEps)), {B, per_item});
}

std::size_t SelectionDistribution::guess() const {
  return static_cast<std::size_t>(std::max_element(probabilities.begin(), probabilities.end()) -
                                  probabilities.begin());
}

void GameBatch::validate() const {
  if (targets.size() != candidates.size() || targets.size() != correct.size()) {
    throw ContractError("game batch: inconsistent item counts");
  }
  for (std::size_t b = 0; b < targets.size(); ++b) {
    const auto& c = candidates[b];
    if (correct[b] >= c.size() || c[correct[b]] != targets[b]) {
      throw ContractError("game batch: item " + std::to_string(b) + " does not hold its target at the flagged slot");
    }
    for (std::size_t k = 0; k < c.size(); ++k) {
      if (k != correct[b] && c[k] == targets[b]) {
        throw ContractError("game batch: target row " + std::to_string(targets[b]) +
                            " duplicated among its distractors");
      }
    }
  }
}

GameBatch sample_batch(std::size_t rows, std::size_t pool, std::size_t batch, std::size_t distractors, Prng& rng) {
  if (pool > rows) throw ContractError("sample_batch: pool larger than the feature set");
  if (batch > pool || distractors + 1 > pool) throw ContractError("sample_batch: pool too small");
  GameBatch g;
  const auto pool_rows = rng.sample_without_replacement(rows, pool);
  const auto picks = rng.sample_without_replacement(pool, batch);
  for (std::size_t tpos : picks) {
    const std::size_t target = pool_rows[tpos];
    const std::size_t slot = static_cast<std::size_t>(rng.below(distractors + 1));
    std::vector<std::size_t> cand;
    cand.reserve(distractors + 1);
    for (std::size_t d : rng.sample_without_replacement(pool - 1, distractors)) {
      cand.push_back(pool_rows[d >= tpos ? d + 1 : d]);
    }
    cand.insert(cand.begin() + static_cast<std::ptrdiff_t>(slot), target);
    g.targets.push_back(target);
    g.candidates.push_back(std::move(cand));
    g.correct.push_back(slot);
  }
  return g;
}

Tensor gather_rows(const corpora::FeatureSet& f, std::span<const std::size_t> rows, DType dt) {
  Tensor t = Tensor::zeros({rows.size(), f.d}, dt);
  dispatch(dt, [&]<class T>() {
    auto out = t.data<T>();
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i] >= f.n) throw ContractError("gather_rows: row " + std::to_string(rows[i]) + " out of range");
      auto r = f.row(rows[i]);
      std::copy(r.begin(), r.end(), out.begin() + static_cast<std::ptrdiff_t>(i * f.d));
    }
  });
  return t;
}

namespace {

Tensor gather_candidates(const corpora::FeatureSet& f, const GameBatch& batch, DType dt) {
  std::vector<std::size_t> all;
  for (const auto& c : batch.candidates) all.insert(all.end(), c.begin(), c.end());
  return gather_rows(f, all, dt);
}

void check_features(const GameConfig& c, const corpora::FeatureSet& f) {
  if (f.d != static_cast<std::size_t>(c.feature_dim)) {
    throw ShapeError("feature set has D=" + std::to_string(f.d) + " but the game expects feature_dim=" +
                     std::to_string(c.feature_dim));
  }
}

}  // namespace

LossOutput game_loss(const GameModel& m, const corpora::FeatureSet& features, const GameBatch& batch,
                     Prng& gumbel_rng) {
  check_features(m.config, features);
  batch.validate();
  const std::size_t C = batch.candidates.at(0).size();
  Tensor inputs = gather_rows(features, batch.targets, m.config.dtype);
  SpeakerOutput spk = speaker_forward(inputs, m.speaker, m.config, Decode::soft, gumbel_rng);
  Tensor hl = listener_encode_soft(spk.distributions, m.listener);
  Tensor scores = listener_scores(hl, gather_candidates(features, batch, m.config.dtype), C, m.listener);
  std::vector<int> correct(batch.correct.begin(), batch.correct.end());
  LossOutput out;
  out.loss = mean(softmax_cross_entropy(scores, correct));
  const auto guesses = argmax_rows(scores);
  for (std::size_t b = 0; b < guesses.size(); ++b) out.correct += guesses[b] == correct[b] ? 1 : 0;
  return out;
}

std::string checkpoint_dir_name(std::int64_t step) {
  std::ostringstream s;
  s << "step_" << std::setw(6) << std::setfill('0') << step;
  return s.str();
}

json log_to_json(const std::vector<LogEntry>& log) {
  json a = json::array();
  for (const auto& e : log) a.push_back({{"step", e.step}, {"loss", e.loss}, {"train_accuracy", e.train_accuracy}});
  return a;
}

TrainResult train_game(const GameConfig& config, const corpora::FeatureSet& features, const TrainOptions& opts) {
  config.validate();
  check_features(config, features);
  if (features.n <= static_cast<std::size_t>(config.batch_size)) {
    throw DataError("train_game: need more than batch_size=" + std::to_string(config.batch_size) +
                    " feature rows, got " + std::to_string(features.n));
  }
  if (features.n < static_cast<std::size_t>(config.pool_size)) {
    throw DataError("train_game: pool_size=" + std::to_string(config.pool_size) + " exceeds the " +
                    std::to_string(features.n) + " feature rows");
  }
  GameModel model = GameModel::init(config);
  ParamList params = model.params();
  AdamState adam = make_adam(params, config.learning_rate);
  adam.clip_norm = config.clip_norm;
  Prng data_rng(config.seed, stream::data);
  Prng gumbel_rng(config.seed, stream::gumbel);
  TrainResult result;

  auto emit = [&](std::int64_t step) {
    Checkpoint ck = model.to_checkpoint(step);
    if (opts.out_dir) save_checkpoint(ck, *opts.out_dir / checkpoint_dir_name(step));
    if (opts.keep_in_memory) result.checkpoints.push_back(std::move(ck));
  };
  auto write_log = [&]() {
    if (!opts.out_dir) return;
    json j{{"config", config.to_json()}, {"log", log_to_json(result.log)}, {"diverged", result.diverged}};
    if (result.diverged) j["divergence"] = result.divergence;
    std::ofstream(*opts.out_dir / "train_log.json") << j.dump(2) << '\n';
  };
  if (opts.out_dir) std::filesystem::create_directories(*opts.out_dir);

  if (config.steps == 0) {
    emit(0);
    write_log();
    return result;
  }
  double loss_acc = 0.0, correct_acc = 0.0;
  std::size_t seen = 0, window = 0;
  for (int step = 1; step <= config.steps; ++step) {
    try {
      GameBatch batch = sample_batch(features.n, static_cast<std::size_t>(config.pool_size),
                                     static_cast<std::size_t>(config.batch_size),
                                     static_cast<std::size_t>(config.distractors), data_rng);
      LossOutput lo = game_loss(model, features, batch, gumbel_rng);
      const double lv = lo.loss.item();
      if (!std::isfinite(lv)) throw DivergenceError("game loss is non-finite at step " + std::to_string(step));
      lo.loss.backward();
      adam_step(params, adam);
      loss_acc += lv;
      correct_acc += static_cast<double>(lo.correct);
      seen += batch.targets.size();
      ++window;
    } catch (const DivergenceError& e) {
      result.diverged = true;
      result.divergence = e.what();
      clear_grads(params);
      write_log();
      return result;
    }
    if (step % config.log_interval == 0 || step == config.steps) {
      LogEntry e{step, loss_acc / static_cast<double>(window), correct_acc / static_cast<double>(seen)};
      result.log.push_back(e);
      if (opts.on_log) opts.on_log(e);
      loss_acc = correct_acc = 0.0;
      seen = window = 0;
    }
    if (step % config.checkpoint_interval == 0 || step == config.steps) emit(step);
  }
  write_log();
  return result;
}

std::vector<SelectionDistribution> listen(const GameModel& model, const corpora::FeatureSet& features,
                                          const std::vector<Message>& messages, const GameBatch& batch) {
  NoGradGuard ng;
  const std::size_t C = batch.candidates.at(0).size();
  Tensor hl = listener_encode_tokens(messages, model.listener, model.config.dtype);
  Tensor scores = listener_scores(hl, gather_candidates(features, batch, model.config.dtype), C, model.listener);
  Tensor probs = softmax(scores);
  const auto sv = scores.to_vector(), pv = probs.to_vector();
  std::vector<SelectionDistribution> out(messages.size());
  for (std::size_t b = 0; b < messages.size(); ++b) {
    auto& d = out[b];
    d.candidates = batch.candidates[b];
    d.correct = batch.correct[b];
    d.scores.assign(sv.begin() + static_cast<std::ptrdiff_t>(b * C), sv.begin() + static_cast<std::ptrdiff_t>((b + 1) * C));
    d.probabilities.assign(pv.begin() + static_cast<std::ptrdiff_t>(b * C), pv.begin() + static_cast<std::ptrdiff_t>((b + 1) * C));
  }
  return out;
}

EvalResult eval_accuracy_with(const corpora::FeatureSet& features, const EvalOptions& opts, const SpeakFn& speak,
                              const ListenFn& listen_fn) {
  if (opts.trials <= 0) throw ContractError("eval_accuracy: trials must be positive");
  const auto K = static_cast<std::size_t>(opts.distractors);
  if (K + 1 > features.n) {
    throw ContractError("eval_accuracy: " + std::to_string(K + 1) + " candidates need at least that many rows");
  }
  Prng trial_rng(opts.seed, stream::eval);
  Prng speak_rng(opts.seed, stream::sampling);
  EvalResult r;
  const auto total = static_cast<std::size_t>(opts.trials);
  const std::size_t chunk = std::max<std::size_t>(1, opts.chunk);
  for (std::size_t start = 0; start < total; start += chunk) {
    const std::size_t n = std::min(chunk, total - start);
    GameBatch batch;
    for (std::size_t i = 0; i < n; ++i) {
      auto cand = trial_rng.sample_without_replacement(features.n, K + 1);
      const auto slot = static_cast<std::size_t>(trial_rng.below(K + 1));
      batch.targets.push_back(cand[slot]);
      batch.correct.push_back(slot);
      batch.candidates.push_back(std::move(cand));
    }
    auto messages = speak(batch.targets, speak_rng);
    auto dists = listen_fn(messages, batch);
    for (auto& d : dists) {
      r.correct += d.guess() == d.correct ? 1 : 0;
      if (opts.dump) r.dumped.push_back(std::move(d));
    }
    r.trials += n;
  }
  r.accuracy = static_cast<double>(r.correct) / static_cast<double>(r.trials);
  return r;
}

EvalResult eval_accuracy(const GameModel& model, const corpora::FeatureSet& features, const EvalOptions& opts) {
  check_features(model.config, features);
  if (opts.decode == Decode::soft) throw ContractError("eval_accuracy: soft decoding is for training only");
  SpeakFn speak = [&](std::span<const std::size_t> rows, Prng& rng) {
    NoGradGuard ng;
    return speaker_forward(gather_rows(features, rows, model.config.dtype), model.speaker, model.config, opts.decode,
                           rng)
        .messages;
  };
  ListenFn lf = [&](const std::vector<Message>& msgs, const GameBatch& batch) {
    return listen(model, features, msgs, batch);
  };
  return eval_accuracy_with(features, opts, speak, lf);
}

}  // namespace eclab::game
