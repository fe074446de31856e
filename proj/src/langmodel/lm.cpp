#include "eclab/langmodel/lm.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "eclab/errors.hpp"
#include "eclab/metrics/metrics.hpp"
#include "eclab/util/json_config.hpp"

namespace eclab::lm {

using nlohmann::json;
using namespace eclab::num;

const char* arch_name(Arch a) { return a == Arch::transformer ? "transformer" : "gru"; }

Arch arch_from_name(const std::string& s) {
  if (s == "transformer") return Arch::transformer;
  if (s == "gru") return Arch::gru;
  throw DataError("unknown architecture '" + s + "' (expected transformer or gru)");
}

void LMConfig::validate() const {
  auto fail = [](const std::string& m) { throw ContractError("lm config: " + m); };
  if (vocab_size < 1) fail("vocab_size must be positive");
  if (model_dim < 1 || layers < 0 || ffn_dim < 1) fail("dimensions must be positive");
  if (architecture == Arch::transformer) {
    if (heads < 1 || model_dim % heads != 0) fail("model_dim must be divisible by heads");
    if (layers < 1) fail("transformer needs at least one layer");
  }
  if (context < 2) fail("context must be >= 2");
  if (batch_size < 1) fail("batch_size must be positive");
  if (steps < 0) fail("steps must be non-negative");
  if (eval_interval < 1) fail("eval_interval must be positive");
  if (learning_rate < 0 || clip_norm < 0) fail("learning_rate and clip_norm must be non-negative");
}

json LMConfig::to_json() const {
  return json{{"architecture", arch_name(architecture)},
              {"layers", layers},
              {"heads", heads},
              {"model_dim", model_dim},
              {"ffn_dim", ffn_dim},
              {"context", context},
              {"vocab_size", vocab_size},
              {"learning_rate", learning_rate},
              {"clip_norm", clip_norm},
              {"batch_size", batch_size},
              {"steps", steps},
              {"eval_interval", eval_interval},
              {"seed", seed},
              {"dtype", dtype_name(dtype)}};
}

LMConfig LMConfig::from_json(const json& j) {
  LMConfig c;
  const json defaults = c.to_json();
  std::vector<std::string> keys;
  for (auto it = defaults.begin(); it != defaults.end(); ++it) keys.push_back(it.key());
  util::StrictObject o(j, "lm config", keys);
  std::string arch = arch_name(c.architecture), dt = dtype_name(c.dtype);
  o.get("architecture", arch);
  o.get("layers", c.layers);
  o.get("heads", c.heads);
  o.get("model_dim", c.model_dim);
  o.get("ffn_dim", c.ffn_dim);
  o.get("context", c.context);
  o.get("vocab_size", c.vocab_size);
  o.get("learning_rate", c.learning_rate);
  o.get("clip_norm", c.clip_norm);
  o.get("batch_size", c.batch_size);
  o.get("steps", c.steps);
  o.get("eval_interval", c.eval_interval);
  o.get("seed", c.seed);
  o.get("dtype", dt);
  c.architecture = arch_from_name(arch);
  try {
    c.dtype = dtype_from_name(dt);
  } catch (const Error& e) {
    throw DataError(std::string("lm config: ") + e.what());
  }
  return c;
}

ParamList LanguageModel::params() const {
  ParamList out;
  out.push_back({"tok_embed", tok_embed});
  if (config.architecture == Arch::transformer) {
    out.push_back({"pos_embed", pos_embed});
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      const std::string p = "blocks." + std::to_string(i);
      const Block& b = blocks[i];
      b.ln1.collect(out, p + ".ln1");
      b.wq.collect(out, p + ".wq");
      b.wk.collect(out, p + ".wk");
      b.wv.collect(out, p + ".wv");
      b.wo.collect(out, p + ".wo");
      b.ln2.collect(out, p + ".ln2");
      b.ff1.collect(out, p + ".ff1");
      b.ff2.collect(out, p + ".ff2");
    }
    final_ln.collect(out, "final_ln");
  } else {
    gru.collect(out, "gru");
  }
  head.collect(out, "head");
  return out;
}

namespace {

json lm_meta(const LMConfig& c) {
  json m{{"kind", "lm"}, {"architecture", arch_name(c.architecture)}};
  if (c.architecture == Arch::transformer) {
    m["init"] = {{"weights", "normal(0,0.02)"}, {"bias", "zero"}, {"layer_norm", "gamma=1, beta=0"}};
    m["blocks"] = "pre-norm, learned positions, untied head";
  } else {
    m["init"] = {{"embed", "normal(0,1)"}, {"gru", "uniform(-1/sqrt(H),1/sqrt(H))"}, {"head", "normal(0,0.02)"}};
  }
  return m;
}

}  // namespace

Checkpoint LanguageModel::to_checkpoint(std::int64_t step, json meta) const {
  json m = lm_meta(config);
  for (auto it = meta.begin(); it != meta.end(); ++it) m[it.key()] = it.value();
  return snapshot(params(), step, config.to_json(), m);
}

LanguageModel LanguageModel::from_checkpoint(const Checkpoint& ckpt) {
  LanguageModel m = lm_init(LMConfig::from_json(ckpt.config));
  restore(ckpt, m.params());
  return m;
}

bool is_vocab_param(const std::string& name) {
  return name == "tok_embed" || name == "head.weight" || name == "head.bias";
}

LanguageModel lm_init(const LMConfig& config) {
  config.validate();
  Prng rng(config.seed, stream::init);
  const auto V = static_cast<std::size_t>(config.vocab_size), d = static_cast<std::size_t>(config.model_dim),
             F = static_cast<std::size_t>(config.ffn_dim), ctx = static_cast<std::size_t>(config.context);
  const DType dt = config.dtype;
  LanguageModel m;
  m.config = config;
  if (config.architecture == Arch::transformer) {
    const double s = 0.02;
    m.tok_embed = init_normal({V, d}, s, rng, dt);
    m.pos_embed = init_normal({ctx, d}, s, rng, dt);
    for (int l = 0; l < config.layers; ++l) {
      Block b;
      b.ln1 = make_layer_norm(d, dt);
      b.wq = make_linear_normal(d, d, s, rng, dt);
      b.wk = make_linear_normal(d, d, s, rng, dt);
      b.wv = make_linear_normal(d, d, s, rng, dt);
      b.wo = make_linear_normal(d, d, s, rng, dt);
      b.ln2 = make_layer_norm(d, dt);
      b.ff1 = make_linear_normal(d, F, s, rng, dt);
      b.ff2 = make_linear_normal(F, d, s, rng, dt);
      m.blocks.push_back(std::move(b));
    }
    m.final_ln = make_layer_norm(d, dt);
    m.head = make_linear_normal(d, V, s, rng, dt);
  } else {
    m.tok_embed = init_normal({V, d}, 1.0, rng, dt);
    m.gru = make_gru(d, d, rng, dt);
    m.head = make_linear_normal(d, V, 0.02, rng, dt);
  }
  return m;
}

std::size_t parameter_count(const LanguageModel& m) {
  std::size_t n = 0;
  for (const auto& p : m.params()) n += p.tensor.numel();
  return n;
}

std::size_t expected_parameter_count(const LMConfig& c) {
  const auto V = static_cast<std::size_t>(c.vocab_size), d = static_cast<std::size_t>(c.model_dim),
             F = static_cast<std::size_t>(c.ffn_dim), ctx = static_cast<std::size_t>(c.context),
             L = static_cast<std::size_t>(c.layers);
  if (c.architecture == Arch::gru) return V * d + 3 * (2 * d * d + d) + d * V + V;
  const std::size_t block = 2 * 2 * d + 4 * (d * d + d) + (d * F + F) + (F * d + d);
  return V * d + ctx * d + L * block + 2 * d + d * V + V;
}

std::vector<int> pack_corpus(const corpora::Corpus& corpus) {
  std::vector<int> s;
  s.reserve(corpus.token_count() + corpus.messages.size());
  for (const auto& m : corpus.messages) {
    s.insert(s.end(), m.begin(), m.end());
    s.push_back(0);
  }
  return s;
}

namespace {

// Returns logits (rows ordered as `order`) for windows (B, T+1); `targets`
// receives the matching next-token ids.
Tensor forward_logits(const LanguageModel& m, const std::vector<int>& windows, std::size_t B, std::size_t length,
                      std::vector<int>& targets) {
  const std::size_t T = length - 1;
  const auto V = static_cast<std::size_t>(m.config.vocab_size), d = static_cast<std::size_t>(m.config.model_dim);
  if (windows.size() != B * length) throw ShapeError("lm: window buffer does not match (B, T+1)");
  for (int t : windows) {
    if (t < 0 || static_cast<std::size_t>(t) >= V) {
      throw DataError("lm: token " + std::to_string(t) + " outside vocabulary of " + std::to_string(V));
    }
  }
  targets.clear();
  if (m.config.architecture == Arch::transformer) {
    if (T > static_cast<std::size_t>(m.config.context)) throw ShapeError("lm: window longer than the context");
    std::vector<int> inputs;
    inputs.reserve(B * T);
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t t = 0; t < T; ++t) {
        inputs.push_back(windows[b * length + t]);
        targets.push_back(windows[b * length + t + 1]);
      }
    }
    Tensor x = embedding(m.tok_embed, inputs);
    x = reshape(add(reshape(x, {B, T, d}), slice(m.pos_embed, 0, 0, T)), {B * T, d});
    const auto heads = static_cast<std::size_t>(m.config.heads);
    AttentionMask mask{.causal = true, .key_lengths = {}, .heads = heads};
    for (const Block& blk : m.blocks) {
      Tensor h = blk.ln1(x);
      Tensor q = split_heads(blk.wq(h), B, heads), k = split_heads(blk.wk(h), B, heads),
             v = split_heads(blk.wv(h), B, heads);
      x = add(x, blk.wo(merge_heads(scaled_dot_attention(q, k, v, mask), B, heads)));
      x = add(x, blk.ff2(relu(blk.ff1(blk.ln2(x)))));
    }
    return m.head(m.final_ln(x));
  }
  // GRU: rows are time-major (t * B + b).
  Tensor h = Tensor::zeros({B, d}, m.config.dtype);
  std::vector<Tensor> hs;
  std::vector<int> ids(B);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t b = 0; b < B; ++b) ids[b] = windows[b * length + t];
    h = gru_cell(embedding(m.tok_embed, ids), h, m.gru);
    hs.push_back(h);
  }
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t b = 0; b < B; ++b) targets.push_back(windows[b * length + t + 1]);
  return m.head(concat(hs, 0));
}

}  // namespace

Tensor lm_loss(const LanguageModel& m, const std::vector<int>& windows, std::size_t batch, std::size_t length) {
  std::vector<int> targets;
  Tensor logits = forward_logits(m, windows, batch, length, targets);
  return mean(softmax_cross_entropy(logits, targets));
}

double EvalNll::perplexity() const { return metrics::perplexity(total, tokens); }

EvalNll evaluate_stream(const LanguageModel& m, const std::vector<int>& stream, bool per_token) {
  if (stream.size() < 2) throw ContractError("evaluate_stream: need at least two tokens");
  NoGradGuard ng;
  const auto ctx = static_cast<std::size_t>(m.config.context);
  const std::size_t predicted = stream.size() - 1;
  EvalNll r;
  if (per_token) r.per_token.assign(predicted, 0.0);
  const bool gru = m.config.architecture == Arch::gru;
  // Full windows batched together, then the remainder.
  const std::size_t full = predicted / ctx, rest = predicted % ctx;
  const std::size_t group = 16;
  auto run = [&](std::size_t first_window, std::size_t count, std::size_t n) {
    std::vector<int> windows;
    windows.reserve(count * (n + 1));
    for (std::size_t w = 0; w < count; ++w) {
      const std::size_t s = (first_window + w) * ctx;
      windows.insert(windows.end(), stream.begin() + static_cast<std::ptrdiff_t>(s),
                     stream.begin() + static_cast<std::ptrdiff_t>(s + n + 1));
    }
    std::vector<int> targets;
    Tensor logits = forward_logits(m, windows, count, n + 1, targets);
    const auto nll = softmax_cross_entropy(logits, targets).to_vector();
    for (std::size_t row = 0; row < nll.size(); ++row) {
      r.total += nll[row];
      if (per_token) {
        const std::size_t w = gru ? row % count : row / n;
        const std::size_t t = gru ? row / count : row % n;
        r.per_token[(first_window + w) * ctx + t] = nll[row];
      }
    }
    r.tokens += nll.size();
  };
  for (std::size_t w = 0; w < full; w += group) run(w, std::min(group, full - w), ctx);
  if (rest) run(full, 1, rest);
  return r;
}

Splits split_corpus(const corpora::Corpus& corpus, double train_frac, double valid_frac, std::uint64_t seed) {
  if (train_frac <= 0 || valid_frac < 0 || train_frac + valid_frac > 1.0) {
    throw ContractError("split_corpus: fractions must be positive and sum to at most 1");
  }
  std::vector<std::size_t> idx(corpus.messages.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Prng rng(seed, stream::split);
  rng.shuffle(idx);
  const auto n = static_cast<double>(idx.size());
  const auto n_train = static_cast<std::size_t>(std::llround(n * train_frac));
  const auto n_valid = static_cast<std::size_t>(std::llround(n * valid_frac));
  Splits s;
  for (auto* part : {&s.train, &s.valid, &s.test}) {
    part->vocab_size = corpus.vocab_size;
    part->provenance = corpus.provenance;
  }
  for (std::size_t i = 0; i < idx.size(); ++i) {
    auto& part = i < n_train ? s.train : (i < n_train + n_valid ? s.valid : s.test);
    part.messages.push_back(corpus.messages[idx[i]]);
  }
  s.train.provenance.set("split", "train");
  s.valid.provenance.set("split", "valid");
  s.test.provenance.set("split", "test");
  return s;
}

json LMTrainResult::log_json() const {
  json a = json::array();
  for (const auto& e : log) {
    json j{{"step", e.step}};
    if (std::isfinite(e.train_nll)) j["train_nll"] = e.train_nll;  // none before the first step
    if (e.valid_nll) j["valid_nll"] = *e.valid_nll;
    a.push_back(j);
  }
  json out{{"best_step", best_step}, {"best_valid_nll", best_valid_nll}, {"log", a}};
  if (test_ppl) out["test_ppl"] = *test_ppl;
  return out;
}

LMTrainResult lm_train(const LanguageModel& init, const corpora::Corpus& train, const corpora::Corpus& valid,
                       const LMConfig& config) {
  config.validate();
  if (train.vocab_size > config.vocab_size || valid.vocab_size > config.vocab_size) {
    throw DataError("lm_train: corpus vocabulary " + std::to_string(std::max(train.vocab_size, valid.vocab_size)) +
                    " exceeds model vocabulary " + std::to_string(config.vocab_size));
  }
  const std::vector<int> tr = pack_corpus(train), va = pack_corpus(valid);
  if (tr.size() < 2 || va.size() < 2) throw DataError("lm_train: train and valid splits need at least two tokens");
  // Train a private copy so `init` stays untouched.
  LanguageModel m = lm_init(config);
  restore(snapshot(init.params(), 0, json::object(), json::object()), m.params());
  ParamList params = m.params();
  AdamState adam = make_adam(params, config.learning_rate);
  adam.clip_norm = config.clip_norm;
  Prng rng(config.seed, stream::data);
  const std::size_t length = std::min<std::size_t>(static_cast<std::size_t>(config.context) + 1, tr.size());
  const auto B = static_cast<std::size_t>(config.batch_size);

  LMTrainResult res;
  auto validate_at = [&](std::int64_t step, double train_nll) {
    const double v = evaluate_stream(m, va).mean();
    if (!std::isfinite(v)) throw DivergenceError("lm validation NLL is non-finite at step " + std::to_string(step));
    res.log.push_back({step, train_nll, v});
    if (res.log.size() == 1 || v < res.best_valid_nll) {
      res.best_valid_nll = v;
      res.best_step = step;
      res.best = m.to_checkpoint(step);
    }
  };
  validate_at(0, std::nan(""));
  double acc = 0.0;
  int window = 0;
  std::vector<int> windows(B * length);
  for (int step = 1; step <= config.steps; ++step) {
    for (std::size_t b = 0; b < B; ++b) {
      const auto s = static_cast<std::size_t>(rng.below(tr.size() - length + 1));
      std::copy(tr.begin() + static_cast<std::ptrdiff_t>(s), tr.begin() + static_cast<std::ptrdiff_t>(s + length),
                windows.begin() + static_cast<std::ptrdiff_t>(b * length));
    }
    Tensor loss = lm_loss(m, windows, B, length);
    const double lv = loss.item();
    if (!std::isfinite(lv)) throw DivergenceError("lm training loss is non-finite at step " + std::to_string(step));
    loss.backward();
    adam_step(params, adam);
    acc += lv;
    ++window;
    if (step % config.eval_interval == 0 || step == config.steps) {
      validate_at(step, acc / window);
      acc = 0.0;
      window = 0;
    }
  }
  return res;
}

LanguageModel transplant(const LanguageModel& source, const LMConfig& target_config) {
  if (source.config.architecture != target_config.architecture) {
    throw ContractError(std::string("transplant: architecture mismatch (") + arch_name(source.config.architecture) +
                        " source, " + arch_name(target_config.architecture) + " target)");
  }
  LanguageModel m = lm_init(target_config);
  const bool same_vocab = source.config.vocab_size == target_config.vocab_size;
  ParamList dst = m.params(), src = source.params();
  if (dst.size() != src.size()) throw ContractError("transplant: layer count mismatch");
  for (std::size_t i = 0; i < dst.size(); ++i) {
    if (is_vocab_param(dst[i].name) && !same_vocab) continue;
    if (dst[i].tensor.shape() != src[i].tensor.shape() || dst[i].tensor.dtype() != src[i].tensor.dtype()) {
      throw ShapeError("transplant: '" + dst[i].name + "' is " + shape_str(src[i].tensor.shape()) +
                       " in the source but " + shape_str(dst[i].tensor.shape()) + " in the target");
    }
    Tensor t = dst[i].tensor;
    t.buffer() = src[i].tensor.buffer();
  }
  return m;
}

namespace {

LMTrainResult finish(LMTrainResult r, const corpora::Corpus& test) {
  const auto best = LanguageModel::from_checkpoint(r.best);
  r.test_ppl = evaluate_stream(best, pack_corpus(test)).perplexity();
  return r;
}

// Checked before training so a too-small target fails fast.
void require_test(const Splits& target) {
  if (pack_corpus(target.test).size() < 2) {
    throw DataError("target test split has fewer than two tokens (" + std::to_string(target.test.messages.size()) +
                    " messages); use a larger corpus or a smaller train+valid fraction");
  }
}

LMConfig with_vocab(LMConfig c, int v) {
  c.vocab_size = v;
  return c;
}

}  // namespace

LMTrainResult lm_finetune(const Checkpoint& source, const Splits& target, const LMConfig& config) {
  require_test(target);
  LanguageModel src = LanguageModel::from_checkpoint(source);
  LanguageModel m = transplant(src, config);
  return finish(lm_train(m, target.train, target.valid, config), target.test);
}

LMTrainResult lm_scratch(const Splits& target, const LMConfig& config) {
  require_test(target);
  return finish(lm_train(lm_init(config), target.train, target.valid, config), target.test);
}

LanguageModel lm_from_speaker(const Checkpoint& speaker, const LMConfig& config) {
  const game::GameConfig gc = game::GameConfig::from_json(speaker.config);
  if (config.architecture != Arch::gru) throw ContractError("model transfer needs a gru LM config");
  if (static_cast<std::size_t>(config.model_dim) != static_cast<std::size_t>(gc.hidden_dim) ||
      gc.embed() != static_cast<std::size_t>(gc.hidden_dim)) {
    throw ShapeError("model transfer: speaker hidden/embed dims " + std::to_string(gc.hidden_dim) + "/" +
                     std::to_string(gc.embed()) + " but LM model_dim is " + std::to_string(config.model_dim));
  }
  LMConfig c = with_vocab(config, gc.vocab_size);
  c.dtype = gc.dtype;
  LanguageModel m = lm_init(c);
  auto copy = [&](Tensor dst, const std::string& name) { dst.buffer() = speaker.get(name).buffer(); };
  copy(m.tok_embed, "speaker.embed");
  copy(m.gru.w_z, "speaker.gru.w_z");
  copy(m.gru.b_z, "speaker.gru.b_z");
  copy(m.gru.w_r, "speaker.gru.w_r");
  copy(m.gru.b_r, "speaker.gru.b_r");
  copy(m.gru.w_h, "speaker.gru.w_h");
  copy(m.gru.b_h, "speaker.gru.b_h");
  copy(m.head.weight, "speaker.head.weight");
  copy(m.head.bias, "speaker.head.bias");
  return m;
}

LMTrainResult model_transfer_gru(const Checkpoint& speaker, const Splits& target, const LMConfig& config) {
  require_test(target);
  LanguageModel src = lm_from_speaker(speaker, config);
  LMConfig c = config;
  c.dtype = src.config.dtype;
  LanguageModel m = transplant(src, c);
  return finish(lm_train(m, target.train, target.valid, c), target.test);
}

std::optional<double> TransferReport::median(const std::string& row) const {
  std::vector<double> v;
  for (const auto& c : cells)
    if (c.row == row && c.test_ppl) v.push_back(*c.test_ppl);
  if (v.empty()) return std::nullopt;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::vector<std::string> TransferReport::rows() const {
  std::vector<std::string> r;
  for (const auto& c : cells)
    if (std::find(r.begin(), r.end(), c.row) == r.end()) r.push_back(c.row);
  return r;
}

json TransferReport::to_json() const {
  json cj = json::array();
  for (const auto& c : cells) {
    json j{{"row", c.row}, {"seed", c.seed}};
    if (c.test_ppl) j["test_ppl"] = *c.test_ppl;
    if (!c.error.empty()) j["error"] = c.error;
    cj.push_back(j);
  }
  json med = json::object();
  for (const auto& r : rows()) {
    auto m = median(r);
    med[r] = m ? json(*m) : json(nullptr);
  }
  return json{{"cells", cj}, {"median_test_ppl", med}};
}

std::string TransferReport::table() const {
  std::ostringstream os;
  os << "row\tseed\ttest_ppl\n";
  for (const auto& c : cells) {
    os << c.row << '\t' << c.seed << '\t';
    if (c.test_ppl) {
      os << std::fixed << std::setprecision(4) << *c.test_ppl;
    } else {
      os << "error: " << c.error;
    }
    os << '\n';
  }
  for (const auto& r : rows()) {
    auto m = median(r);
    os << r << "\tmedian\t";
    if (m) os << std::fixed << std::setprecision(4) << *m;
    else os << "-";
    os << '\n';
  }
  return os.str();
}

TransferReport transfer_experiment(const TransferPlan& plan) {
  TransferReport rep;
  const int target_vocab = plan.target.train.vocab_size;
  auto cell = [&](const std::string& row, std::uint64_t seed, const std::function<double()>& run) {
    TransferCell c{row, seed, std::nullopt, ""};
    try {
      c.test_ppl = run();
    } catch (const Error& e) {
      c.error = e.what();
    }
    rep.cells.push_back(std::move(c));
  };
  auto pretrain = [&](const corpora::Corpus& source, LMConfig cfg, std::uint64_t seed) {
    cfg.vocab_size = source.vocab_size;
    cfg.seed = seed;
    Splits s = split_corpus(source, 0.95, 0.05, seed);
    return lm_train(lm_init(cfg), s.train, s.valid, cfg).best;
  };
  for (std::uint64_t seed : plan.seeds) {
    LMConfig ft = with_vocab(plan.finetune, target_vocab);
    ft.seed = seed;
    if (plan.scratch) cell("scratch", seed, [&] { return *lm_scratch(plan.target, ft).test_ppl; });
    for (const auto& src : plan.sources) {
      cell(src.name, seed, [&] { return *lm_finetune(pretrain(src.corpus, plan.pretrain, seed), plan.target, ft).test_ppl; });
    }
    LMConfig g = with_vocab(plan.gru_finetune, target_vocab);
    g.seed = seed;
    if (plan.gru_source) {
      cell("gru-corpus-transfer", seed,
           [&] { return *lm_finetune(pretrain(*plan.gru_source, plan.gru_pretrain, seed), plan.target, g).test_ppl; });
    }
    if (plan.speaker) {
      cell("gru-model-transfer", seed, [&] { return *model_transfer_gru(*plan.speaker, plan.target, g).test_ppl; });
    }
  }
  return rep;
}

}  // namespace eclab::lm
