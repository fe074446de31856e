#include "eclab/seq2seq/seq2seq.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "eclab/corpora/emergent.hpp"
#include "eclab/errors.hpp"
#include "eclab/metrics/metrics.hpp"
#include "eclab/util/json_config.hpp"

namespace eclab::s2s {

using nlohmann::json;
using namespace eclab::num;

const char* input_mode_name(InputMode m) { return m == InputMode::tokens ? "tokens" : "features"; }

InputMode input_mode_from_name(const std::string& s) {
  if (s == "tokens") return InputMode::tokens;
  if (s == "features") return InputMode::features;
  throw DataError("unknown input mode '" + s + "' (expected tokens or features)");
}

const char* transfer_name(Transfer t) {
  switch (t) {
    case Transfer::encoder_only: return "encoder-only";
    case Transfer::all: return "all";
    default: return "none";
  }
}

Transfer transfer_from_name(const std::string& s) {
  if (s == "encoder-only") return Transfer::encoder_only;
  if (s == "all") return Transfer::all;
  if (s == "none") return Transfer::none;
  throw DataError("unknown transfer mode '" + s + "' (expected encoder-only, all or none)");
}

void Seq2SeqConfig::validate() const {
  auto fail = [](const std::string& m) { throw ContractError("seq2seq config: " + m); };
  if (encoder_layers < 1 || decoder_layers < 1) fail("need at least one encoder and one decoder layer");
  if (model_dim < 1 || ffn_dim < 1 || heads < 1) fail("dimensions must be positive");
  if (model_dim % heads != 0) fail("model_dim must be divisible by heads");
  if (input_mode == InputMode::tokens && source_vocab < 1) fail("tokens mode needs source_vocab");
  if (input_mode == InputMode::features && feature_dim < 1) fail("features mode needs feature_dim");
  if (target_vocab < 1) fail("target_vocab must be positive");
  if (max_source_len < 1 || max_target_len < 1) fail("length limits must be positive");
  if (epochs < 0 || batch_size < 1) fail("epochs must be non-negative and batch_size positive");
  if (beam_width < 1) fail("beam width must be >= 1");
  if (learning_rate < 0 || clip_norm < 0) fail("learning_rate and clip_norm must be non-negative");
}

json Seq2SeqConfig::to_json() const {
  return json{{"input_mode", input_mode_name(input_mode)},
              {"encoder_layers", encoder_layers},
              {"decoder_layers", decoder_layers},
              {"heads", heads},
              {"model_dim", model_dim},
              {"ffn_dim", ffn_dim},
              {"source_vocab", source_vocab},
              {"feature_dim", feature_dim},
              {"target_vocab", target_vocab},
              {"max_source_len", max_source_len},
              {"max_target_len", max_target_len},
              {"epochs", epochs},
              {"learning_rate", learning_rate},
              {"clip_norm", clip_norm},
              {"batch_size", batch_size},
              {"decode", decode == DecodeKind::greedy ? "greedy" : "beam"},
              {"beam_width", beam_width},
              {"seed", seed},
              {"dtype", dtype_name(dtype)}};
}

Seq2SeqConfig Seq2SeqConfig::from_json(const json& j) {
  Seq2SeqConfig c;
  const json defaults = c.to_json();
  std::vector<std::string> keys;
  for (auto it = defaults.begin(); it != defaults.end(); ++it) keys.push_back(it.key());
  util::StrictObject o(j, "seq2seq config", keys);
  std::string mode = input_mode_name(c.input_mode), dec = "greedy", dt = dtype_name(c.dtype);
  o.get("input_mode", mode);
  o.get("encoder_layers", c.encoder_layers);
  o.get("decoder_layers", c.decoder_layers);
  o.get("heads", c.heads);
  o.get("model_dim", c.model_dim);
  o.get("ffn_dim", c.ffn_dim);
  o.get("source_vocab", c.source_vocab);
  o.get("feature_dim", c.feature_dim);
  o.get("target_vocab", c.target_vocab);
  o.get("max_source_len", c.max_source_len);
  o.get("max_target_len", c.max_target_len);
  o.get("epochs", c.epochs);
  o.get("learning_rate", c.learning_rate);
  o.get("clip_norm", c.clip_norm);
  o.get("batch_size", c.batch_size);
  o.get("decode", dec);
  o.get("beam_width", c.beam_width);
  o.get("seed", c.seed);
  o.get("dtype", dt);
  c.input_mode = input_mode_from_name(mode);
  if (dec == "greedy") c.decode = DecodeKind::greedy;
  else if (dec == "beam") c.decode = DecodeKind::beam;
  else throw DataError("seq2seq config: unknown decode '" + dec + "' (expected greedy or beam)");
  try {
    c.dtype = dtype_from_name(dt);
  } catch (const Error& e) {
    throw DataError(std::string("seq2seq config: ") + e.what());
  }
  return c;
}

ParamList Seq2SeqModel::params() const {
  ParamList out;
  if (config.input_mode == InputMode::tokens) {
    out.push_back({"encoder.embed", src_embed});
  } else {
    src_proj.collect(out, "encoder.proj");
  }
  out.push_back({"encoder.pos", enc_pos});
  for (std::size_t i = 0; i < encoder.size(); ++i) {
    const std::string p = "encoder.blocks." + std::to_string(i);
    const EncoderBlock& b = encoder[i];
    b.ln1.collect(out, p + ".ln1");
    b.wq.collect(out, p + ".wq");
    b.wk.collect(out, p + ".wk");
    b.wv.collect(out, p + ".wv");
    b.wo.collect(out, p + ".wo");
    b.ln2.collect(out, p + ".ln2");
    b.ff1.collect(out, p + ".ff1");
    b.ff2.collect(out, p + ".ff2");
  }
  enc_ln.collect(out, "encoder.final_ln");
  out.push_back({"decoder.embed", tgt_embed});
  out.push_back({"decoder.pos", dec_pos});
  for (std::size_t i = 0; i < decoder.size(); ++i) {
    const std::string p = "decoder.blocks." + std::to_string(i);
    const DecoderBlock& b = decoder[i];
    b.ln1.collect(out, p + ".ln1");
    b.wq.collect(out, p + ".wq");
    b.wk.collect(out, p + ".wk");
    b.wv.collect(out, p + ".wv");
    b.wo.collect(out, p + ".wo");
    b.ln2.collect(out, p + ".ln2");
    b.cq.collect(out, p + ".cq");
    b.ck.collect(out, p + ".ck");
    b.cv.collect(out, p + ".cv");
    b.co.collect(out, p + ".co");
    b.ln3.collect(out, p + ".ln3");
    b.ff1.collect(out, p + ".ff1");
    b.ff2.collect(out, p + ".ff2");
  }
  dec_ln.collect(out, "decoder.final_ln");
  head.collect(out, "decoder.head");
  return out;
}

Checkpoint Seq2SeqModel::to_checkpoint(std::int64_t step, json meta) const {
  json m{{"kind", "seq2seq"},
         {"init", {{"weights", "normal(0,0.02)"}, {"bias", "zero"}, {"layer_norm", "gamma=1, beta=0"}}},
         {"blocks", "pre-norm, learned positions, untied head"},
         {"sentinels", {{"bos", config.bos()}, {"eos", config.eos()}}}};
  for (auto it = meta.begin(); it != meta.end(); ++it) m[it.key()] = it.value();
  return snapshot(params(), step, config.to_json(), m);
}

Seq2SeqModel Seq2SeqModel::from_checkpoint(const Checkpoint& ckpt) {
  Seq2SeqModel m = s2s_init(Seq2SeqConfig::from_json(ckpt.config));
  restore(ckpt, m.params());
  return m;
}

bool is_encoder_param(const std::string& name) { return name.rfind("encoder.", 0) == 0; }

bool is_target_vocab_param(const std::string& name) {
  return name == "decoder.embed" || name == "decoder.head.weight" || name == "decoder.head.bias";
}

Seq2SeqModel s2s_init(const Seq2SeqConfig& config) {
  config.validate();
  Prng rng(config.seed, stream::init);
  const auto d = static_cast<std::size_t>(config.model_dim), F = static_cast<std::size_t>(config.ffn_dim);
  const DType dt = config.dtype;
  const double s = 0.02;
  Seq2SeqModel m;
  m.config = config;
  if (config.input_mode == InputMode::tokens) {
    m.src_embed = init_normal({static_cast<std::size_t>(config.source_vocab), d}, s, rng, dt);
  } else {
    m.src_proj = make_linear_normal(static_cast<std::size_t>(config.feature_dim), d, s, rng, dt);
  }
  m.enc_pos = init_normal({static_cast<std::size_t>(config.max_source_len), d}, s, rng, dt);
  for (int l = 0; l < config.encoder_layers; ++l) {
    EncoderBlock b;
    b.ln1 = make_layer_norm(d, dt);
    b.wq = make_linear_normal(d, d, s, rng, dt);
    b.wk = make_linear_normal(d, d, s, rng, dt);
    b.wv = make_linear_normal(d, d, s, rng, dt);
    b.wo = make_linear_normal(d, d, s, rng, dt);
    b.ln2 = make_layer_norm(d, dt);
    b.ff1 = make_linear_normal(d, F, s, rng, dt);
    b.ff2 = make_linear_normal(F, d, s, rng, dt);
    m.encoder.push_back(std::move(b));
  }
  m.enc_ln = make_layer_norm(d, dt);
  const auto Vt = static_cast<std::size_t>(config.output_vocab());
  m.tgt_embed = init_normal({Vt, d}, s, rng, dt);
  m.dec_pos = init_normal({static_cast<std::size_t>(config.max_target_len) + 1, d}, s, rng, dt);
  for (int l = 0; l < config.decoder_layers; ++l) {
    DecoderBlock b;
    b.ln1 = make_layer_norm(d, dt);
    b.wq = make_linear_normal(d, d, s, rng, dt);
    b.wk = make_linear_normal(d, d, s, rng, dt);
    b.wv = make_linear_normal(d, d, s, rng, dt);
    b.wo = make_linear_normal(d, d, s, rng, dt);
    b.ln2 = make_layer_norm(d, dt);
    b.cq = make_linear_normal(d, d, s, rng, dt);
    b.ck = make_linear_normal(d, d, s, rng, dt);
    b.cv = make_linear_normal(d, d, s, rng, dt);
    b.co = make_linear_normal(d, d, s, rng, dt);
    b.ln3 = make_layer_norm(d, dt);
    b.ff1 = make_linear_normal(d, F, s, rng, dt);
    b.ff2 = make_linear_normal(F, d, s, rng, dt);
    m.decoder.push_back(std::move(b));
  }
  m.dec_ln = make_layer_norm(d, dt);
  m.head = make_linear_normal(d, Vt, s, rng, dt);
  return m;
}

namespace {

std::size_t source_length(const Seq2SeqConfig& c, const Example& e) {
  if (c.input_mode == InputMode::tokens) return e.source.size();
  return e.features.size() / static_cast<std::size_t>(c.feature_dim);
}

}  // namespace

void check_example(const Seq2SeqConfig& c, const Example& e) {
  if (c.input_mode == InputMode::features && e.features.size() % static_cast<std::size_t>(c.feature_dim) != 0) {
    throw DataError("seq2seq: feature source of " + std::to_string(e.features.size()) +
                    " values is not a multiple of feature_dim " + std::to_string(c.feature_dim));
  }
  const std::size_t n = source_length(c, e);
  if (n == 0) throw DataError("seq2seq: empty source sequence");
  if (n > static_cast<std::size_t>(c.max_source_len)) {
    throw DataError("seq2seq: source length " + std::to_string(n) + " exceeds max_source_len " +
                    std::to_string(c.max_source_len));
  }
  if (e.target.size() > static_cast<std::size_t>(c.max_target_len)) {
    throw DataError("seq2seq: target length " + std::to_string(e.target.size()) + " exceeds max_target_len " +
                    std::to_string(c.max_target_len));
  }
  if (c.input_mode == InputMode::tokens) {
    for (int t : e.source)
      if (t < 0 || t >= c.source_vocab)
        throw DataError("seq2seq: source token " + std::to_string(t) + " outside vocabulary of " +
                        std::to_string(c.source_vocab));
  }
  for (int t : e.target)
    if (t < 0 || t >= c.target_vocab)
      throw DataError("seq2seq: target token " + std::to_string(t) + " outside vocabulary of " +
                      std::to_string(c.target_vocab));
}

namespace {

// Pre-norm attention sublayer: query rows x (B*Tq, d), memory (B*Tk, d).
Tensor attention(const Tensor& xq, const Tensor& mem, const Linear& wq, const Linear& wk, const Linear& wv,
                 const Linear& wo, std::size_t B, const AttentionMask& mask) {
  const std::size_t h = mask.heads;
  Tensor q = split_heads(wq(xq), B, h), k = split_heads(wk(mem), B, h), v = split_heads(wv(mem), B, h);
  return wo(merge_heads(scaled_dot_attention(q, k, v, mask), B, h));
}

Tensor add_positions(const Tensor& x, const Tensor& pos, std::size_t B, std::size_t T, std::size_t d) {
  return reshape(add(reshape(x, {B, T, d}), slice(pos, 0, 0, T)), {B * T, d});
}

struct Encoded {
  Tensor memory;  // (B*L, d)
  std::size_t length = 0;
  std::vector<std::size_t> lengths;
};

Encoded encode(const Seq2SeqModel& m, const std::vector<const Example*>& batch) {
  const Seq2SeqConfig& c = m.config;
  const std::size_t B = batch.size(), d = static_cast<std::size_t>(c.model_dim);
  Encoded e;
  for (const Example* ex : batch) {
    check_example(c, *ex);
    e.lengths.push_back(source_length(c, *ex));
  }
  e.length = *std::max_element(e.lengths.begin(), e.lengths.end());
  const std::size_t L = e.length;
  Tensor x;
  if (c.input_mode == InputMode::tokens) {
    std::vector<int> ids(B * L, 0);  // padding keys are masked out
    for (std::size_t b = 0; b < B; ++b)
      std::copy(batch[b]->source.begin(), batch[b]->source.end(), ids.begin() + static_cast<std::ptrdiff_t>(b * L));
    x = embedding(m.src_embed, ids);
  } else {
    const auto D = static_cast<std::size_t>(c.feature_dim);
    Tensor f = Tensor::zeros({B * L, D}, c.dtype);
    dispatch(c.dtype, [&]<class T>() {
      auto fv = f.data<T>();
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < batch[b]->features.size(); ++i) fv[b * L * D + i] = static_cast<T>(batch[b]->features[i]);
    });
    x = m.src_proj(f);
  }
  x = add_positions(x, m.enc_pos, B, L, d);
  const AttentionMask mask{.causal = false, .key_lengths = e.lengths, .heads = static_cast<std::size_t>(c.heads)};
  for (const EncoderBlock& blk : m.encoder) {
    Tensor h = blk.ln1(x);
    x = add(x, attention(h, h, blk.wq, blk.wk, blk.wv, blk.wo, B, mask));
    x = add(x, blk.ff2(relu(blk.ff1(blk.ln2(x)))));
  }
  e.memory = m.enc_ln(x);
  return e;
}

// Decoder logits (B*T, Vt+2) for input rows `inputs` (B, T) over the memory.
Tensor decode_logits(const Seq2SeqModel& m, const Encoded& enc, const std::vector<int>& inputs, std::size_t B,
                     std::size_t T) {
  const Seq2SeqConfig& c = m.config;
  const std::size_t d = static_cast<std::size_t>(c.model_dim), heads = static_cast<std::size_t>(c.heads);
  Tensor x = add_positions(embedding(m.tgt_embed, inputs), m.dec_pos, B, T, d);
  const AttentionMask self{.causal = true, .key_lengths = {}, .heads = heads};
  const AttentionMask cross{.causal = false, .key_lengths = enc.lengths, .heads = heads};
  for (const DecoderBlock& blk : m.decoder) {
    Tensor h = blk.ln1(x);
    x = add(x, attention(h, h, blk.wq, blk.wk, blk.wv, blk.wo, B, self));
    x = add(x, attention(blk.ln2(x), enc.memory, blk.cq, blk.ck, blk.cv, blk.co, B, cross));
    x = add(x, blk.ff2(relu(blk.ff1(blk.ln3(x)))));
  }
  return m.head(m.dec_ln(x));
}

// Teacher forcing rows: input [bos, y...] padded with eos, targets [y..., eos] padded with -1.
void teacher_rows(const Seq2SeqConfig& c, const std::vector<const Example*>& batch, std::vector<int>& inputs,
                  std::vector<int>& targets, std::size_t& T) {
  T = 0;
  for (const Example* e : batch) T = std::max(T, e->target.size() + 1);
  inputs.assign(batch.size() * T, c.eos());
  targets.assign(batch.size() * T, -1);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& y = batch[b]->target;
    inputs[b * T] = c.bos();
    for (std::size_t t = 0; t < y.size(); ++t) {
      inputs[b * T + t + 1] = y[t];
      targets[b * T + t] = y[t];
    }
    targets[b * T + y.size()] = c.eos();
  }
}

}  // namespace

Tensor s2s_loss(const Seq2SeqModel& m, const std::vector<const Example*>& batch) {
  if (batch.empty()) throw ContractError("s2s_loss: empty batch");
  const Encoded enc = encode(m, batch);
  std::vector<int> inputs, targets;
  std::size_t T = 0;
  teacher_rows(m.config, batch, inputs, targets, T);
  const auto count = static_cast<double>(std::count_if(targets.begin(), targets.end(), [](int t) { return t >= 0; }));
  Tensor nll = softmax_cross_entropy(decode_logits(m, enc, inputs, batch.size(), T), targets, -1);
  return mul_scalar(sum(nll), 1.0 / count);
}

double s2s_eval_loss(const Seq2SeqModel& m, const std::vector<Example>& examples) {
  if (examples.empty()) throw ContractError("s2s_eval_loss: no examples");
  NoGradGuard ng;
  double total = 0.0;
  std::size_t tokens = 0;
  const std::size_t chunk = 64;
  for (std::size_t i = 0; i < examples.size(); i += chunk) {
    std::vector<const Example*> batch;
    for (std::size_t j = i; j < std::min(examples.size(), i + chunk); ++j) batch.push_back(&examples[j]);
    std::size_t n = 0;
    for (const Example* e : batch) n += e->target.size() + 1;
    total += s2s_loss(m, batch).item() * static_cast<double>(n);
    tokens += n;
  }
  return total / static_cast<double>(tokens);
}

S2STrainResult s2s_train(const Seq2SeqModel& init, const std::vector<Example>& pairs, const EpochHook& hook) {
  const Seq2SeqConfig& c = init.config;
  c.validate();
  if (pairs.empty()) throw DataError("s2s_train: no training pairs");
  for (const auto& e : pairs) check_example(c, e);
  Seq2SeqModel m = s2s_init(c);
  restore(snapshot(init.params(), 0, json::object(), json::object()), m.params());
  ParamList params = m.params();
  AdamState adam = make_adam(params, c.learning_rate);
  adam.clip_norm = c.clip_norm;
  Prng rng(c.seed, stream::data);
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto B = static_cast<std::size_t>(c.batch_size);
  S2STrainResult res;
  std::int64_t step = 0;
  for (int epoch = 1; epoch <= c.epochs; ++epoch) {
    rng.shuffle(order);
    double acc = 0.0;
    std::size_t batches = 0;
    for (std::size_t i = 0; i < order.size(); i += B) {
      std::vector<const Example*> batch;
      for (std::size_t j = i; j < std::min(order.size(), i + B); ++j) batch.push_back(&pairs[order[j]]);
      Tensor loss = s2s_loss(m, batch);
      const double lv = loss.item();
      if (!std::isfinite(lv)) {
        throw DivergenceError("seq2seq training loss is non-finite at epoch " + std::to_string(epoch));
      }
      loss.backward();
      adam_step(params, adam);
      acc += lv;
      ++batches;
      ++step;
    }
    res.epoch_loss.push_back(acc / static_cast<double>(batches));
    if (hook) hook(epoch, m, res.epoch_loss.back());
  }
  res.final = m.to_checkpoint(step, json{{"epochs", c.epochs}});
  return res;
}

S2STrainResult s2s_train(const std::vector<Example>& pairs, const Seq2SeqConfig& config) {
  return s2s_train(s2s_init(config), pairs);
}

namespace {

// Log-probabilities of the last position of every row group; the start
// sentinel is never a candidate.
std::vector<std::vector<double>> last_log_probs(const Seq2SeqModel& m, const Encoded& enc,
                                                const std::vector<int>& inputs, std::size_t B, std::size_t T) {
  Tensor lp = log_softmax(decode_logits(m, enc, inputs, B, T), -1);
  const auto V = static_cast<std::size_t>(m.config.output_vocab());
  std::vector<std::vector<double>> out(B, std::vector<double>(V));
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t v = 0; v < V; ++v) out[b][v] = lp.at((b * T + T - 1) * V + v);
  for (auto& row : out) row[static_cast<std::size_t>(m.config.bos())] = -INFINITY;
  return out;
}

int best_token(const std::vector<double>& row) {
  return static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());  // first max wins
}

// Memory of one source repeated for n hypotheses.
Encoded repeat_memory(const Encoded& e, std::size_t n) {
  Encoded r;
  r.length = e.length;
  r.lengths.assign(n, e.lengths[0]);
  r.memory = n == 1 ? e.memory : concat(std::vector<Tensor>(n, e.memory), 0);
  return r;
}

}  // namespace

std::vector<std::vector<int>> greedy_decode_all(const Seq2SeqModel& m, const std::vector<Example>& sources,
                                                std::size_t batch) {
  NoGradGuard ng;
  const Seq2SeqConfig& c = m.config;
  std::vector<std::vector<int>> out(sources.size());
  for (std::size_t i0 = 0; i0 < sources.size(); i0 += batch) {
    std::vector<const Example*> group;
    for (std::size_t j = i0; j < std::min(sources.size(), i0 + batch); ++j) group.push_back(&sources[j]);
    const std::size_t B = group.size();
    const Encoded enc = encode(m, group);
    std::vector<std::vector<int>> prefix(B, std::vector<int>{c.bos()});
    std::vector<bool> done(B, false);
    for (int t = 0; t < c.max_target_len; ++t) {
      const std::size_t T = static_cast<std::size_t>(t) + 1;
      std::vector<int> inputs;
      for (const auto& p : prefix) inputs.insert(inputs.end(), p.begin(), p.end());
      const auto lp = last_log_probs(m, enc, inputs, B, T);
      bool all_done = true;
      for (std::size_t b = 0; b < B; ++b) {
        const int tok = done[b] ? c.eos() : best_token(lp[b]);
        prefix[b].push_back(tok);
        if (tok == c.eos()) done[b] = true;
        all_done = all_done && done[b];
      }
      if (all_done) break;
    }
    for (std::size_t b = 0; b < B; ++b) {
      auto& o = out[i0 + b];
      for (std::size_t t = 1; t < prefix[b].size() && prefix[b][t] != c.eos(); ++t) o.push_back(prefix[b][t]);
    }
  }
  return out;
}

std::vector<int> greedy_decode(const Seq2SeqModel& m, const Example& source) {
  return greedy_decode_all(m, {source}, 1)[0];
}

std::vector<int> beam_decode(const Seq2SeqModel& m, const Example& source, int width) {
  if (width < 1) throw ContractError("beam_decode: width must be >= 1");
  NoGradGuard ng;
  const Seq2SeqConfig& c = m.config;
  const Encoded enc = encode(m, {&source});
  struct Hyp {
    std::vector<int> tokens;  // after the start sentinel
    double score = 0.0;
  };
  std::vector<Hyp> alive{Hyp{}}, finished;
  const auto W = static_cast<std::size_t>(width);
  for (int t = 0; t < c.max_target_len && !alive.empty(); ++t) {
    const std::size_t n = alive.size(), T = static_cast<std::size_t>(t) + 1;
    std::vector<int> inputs;
    for (const auto& h : alive) {
      inputs.push_back(c.bos());
      inputs.insert(inputs.end(), h.tokens.begin(), h.tokens.end());
    }
    const auto lp = last_log_probs(m, repeat_memory(enc, n), inputs, n, T);
    struct Cand {
      double score;
      std::size_t hyp;
      int token;
    };
    std::vector<Cand> cands;
    for (std::size_t h = 0; h < n; ++h)
      for (std::size_t v = 0; v < lp[h].size(); ++v)
        if (std::isfinite(lp[h][v])) cands.push_back({alive[h].score + lp[h][v], h, static_cast<int>(v)});
    // Highest score first; ties go to the earlier hypothesis, then the lower token.
    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
      if (a.score != b.score) return a.score > b.score;
      if (a.hyp != b.hyp) return a.hyp < b.hyp;
      return a.token < b.token;
    });
    std::vector<Hyp> next;
    for (std::size_t i = 0; i < std::min(W, cands.size()); ++i) {
      const Cand& cd = cands[i];
      Hyp h{alive[cd.hyp].tokens, cd.score};
      if (cd.token == c.eos()) {
        finished.push_back(std::move(h));
      } else {
        h.tokens.push_back(cd.token);
        next.push_back(std::move(h));
      }
    }
    alive = std::move(next);
    // Scores only fall, so a finished hypothesis above every live one is final.
    if (!finished.empty() && !alive.empty()) {
      double best_fin = -INFINITY;
      for (const auto& f : finished) best_fin = std::max(best_fin, f.score);
      if (best_fin >= alive.front().score) break;
    }
  }
  for (auto& h : alive) finished.push_back(std::move(h));  // length bound reached
  const auto best = std::max_element(finished.begin(), finished.end(),
                                     [](const Hyp& a, const Hyp& b) { return a.score < b.score; });
  return best->tokens;
}

std::vector<int> s2s_decode(const Seq2SeqModel& m, const Example& source) {
  if (m.config.decode == DecodeKind::beam) return beam_decode(m, source, m.config.beam_width);
  return greedy_decode(m, source);
}

std::vector<int> s2s_decode(const Checkpoint& ckpt, const Example& source) {
  return s2s_decode(Seq2SeqModel::from_checkpoint(ckpt), source);
}

json TranslationMetricReport::to_json() const {
  json j{{"checkpoint", checkpoint_id}, {"train_pairs", train_pairs}, {"eval_pairs", eval_pairs},
         {"epochs", epochs},           {"mean_rouge_l", mean_rouge_l}, {"seed", seed}};
  if (!per_pair_path.empty()) j["per_pair_scores"] = per_pair_path;
  return j;
}

TranslationMetricReport translation_metric_from_messages(const std::vector<corpora::Message>& messages,
                                                         int message_vocab, const corpora::CaptionSet& captions,
                                                         const TranslationMetricConfig& config, std::uint64_t seed) {
  if (messages.size() != captions.pairs.size()) {
    throw ContractError("translation_metric: " + std::to_string(messages.size()) + " messages for " +
                        std::to_string(captions.pairs.size()) + " captions");
  }
  if (!(config.train_fraction > 0.0 && config.train_fraction < 1.0)) {
    throw ContractError("translation_metric: train_fraction must lie in (0, 1)");
  }
  const std::size_t n = messages.size();
  const auto n_train = static_cast<std::size_t>(std::llround(static_cast<double>(n) * config.train_fraction));
  if (n_train == 0 || n_train == n) {
    throw DataError("translation_metric: degenerate split of " + std::to_string(n) + " pairs (train " +
                    std::to_string(n_train) + ", eval " + std::to_string(n - n_train) + ")");
  }
  // Canonical order by content, then a seeded shuffle, so the input order never matters.
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (messages[a] != messages[b]) return messages[a] < messages[b];
    return captions.pairs[a].second < captions.pairs[b].second;
  });
  Prng rng(seed, stream::split);
  rng.shuffle(idx);

  Seq2SeqConfig mc = config.model;
  mc.input_mode = InputMode::tokens;
  mc.source_vocab = message_vocab;
  mc.target_vocab = captions.vocab_size;
  std::size_t src_len = 1, tgt_len = 1;
  for (std::size_t i = 0; i < n; ++i) {
    src_len = std::max(src_len, messages[i].size());
    tgt_len = std::max(tgt_len, captions.pairs[i].second.size());
  }
  mc.max_source_len = std::max(mc.max_source_len, static_cast<int>(src_len));
  mc.max_target_len = std::max(mc.max_target_len, static_cast<int>(tgt_len));
  std::vector<Example> train, eval;
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t i = idx[k];
    Example e{messages[i], {}, captions.pairs[i].second};
    (k < n_train ? train : eval).push_back(std::move(e));
  }
  const Seq2SeqModel model = Seq2SeqModel::from_checkpoint(s2s_train(train, mc).final);
  const auto decoded = greedy_decode_all(model, eval);
  TranslationMetricReport r;
  r.train_pairs = train.size();
  r.eval_pairs = eval.size();
  r.epochs = mc.epochs;
  r.seed = seed;
  double total = 0.0;
  for (std::size_t i = 0; i < eval.size(); ++i) {
    const double f = metrics::rouge_l(decoded[i], eval[i].target).f;
    r.per_pair.push_back(f);
    total += f;
  }
  r.mean_rouge_l = total / static_cast<double>(eval.size());
  return r;
}

TranslationMetricReport translation_metric(const Checkpoint& speaker, const corpora::FeatureSet& features,
                                           const corpora::CaptionSet& captions, const TranslationMetricConfig& config,
                                           Prng& rng) {
  captions.validate(features.n);
  const game::GameConfig gc = game::GameConfig::from_json(speaker.config);
  std::vector<std::size_t> rows;
  for (const auto& p : captions.pairs) rows.push_back(p.first);
  Prng msg_rng(rng.seed(), stream::sampling);
  corpora::GenerateOptions go;
  go.decode = config.message_decode;
  const corpora::Corpus ec = corpora::generate_corpus(speaker, features.subset(rows), msg_rng, go);
  TranslationMetricReport r = translation_metric_from_messages(ec.messages, gc.vocab_size, captions, config, rng.seed());
  r.checkpoint_id = "step " + std::to_string(speaker.step);
  if (speaker.meta.contains("source")) r.checkpoint_id = speaker.meta["source"].get<std::string>();
  return r;
}

std::vector<Example> feature_examples(const std::vector<std::vector<std::vector<float>>>& sequences,
                                      const std::vector<corpora::Message>& targets) {
  if (sequences.size() != targets.size()) throw ContractError("feature_examples: row count mismatch");
  std::vector<Example> out;
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    Example e;
    for (const auto& v : sequences[i]) e.features.insert(e.features.end(), v.begin(), v.end());
    e.target = targets[i];
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<Example> segment_examples(const corpora::FeatureSet& features, std::size_t segments,
                                      const std::vector<corpora::Message>& targets) {
  if (segments == 0 || features.d % segments != 0) {
    throw DataError("segment_examples: feature dim " + std::to_string(features.d) + " is not divisible into " +
                    std::to_string(segments) + " segments");
  }
  if (targets.size() != features.n) throw ContractError("segment_examples: row count mismatch");
  std::vector<Example> out(features.n);
  for (std::size_t i = 0; i < features.n; ++i) {
    const auto r = features.row(i);
    out[i].features.assign(r.begin(), r.end());
    out[i].target = targets[i];
  }
  return out;
}

CaptionPretrainResult caption_pretrain(const std::vector<Example>& pairs, const Seq2SeqConfig& config) {
  if (config.input_mode != InputMode::features) {
    throw ContractError("caption_pretrain: encoder input mode must be features");
  }
  S2STrainResult t = s2s_train(pairs, config);
  CaptionPretrainResult r;
  r.epoch_loss = t.epoch_loss;
  r.checkpoint = std::move(t.final);
  r.checkpoint.meta["tag"] = "captioning-pretrain";
  return r;
}

json CaptionReport::to_json() const {
  json e = json::array();
  for (const auto& x : epochs) {
    json j{{"epoch", x.epoch}, {"valid_loss", x.valid_loss}, {"valid_bleu4", x.valid_bleu4},
           {"valid_rouge_l", x.valid_rouge_l}};
    if (x.train_loss) j["train_loss"] = *x.train_loss;
    e.push_back(j);
  }
  return json{{"epochs", e}, {"best_epoch", best_epoch}, {"test_bleu4", test_bleu4}, {"test_rouge_l", test_rouge_l}};
}

Seq2SeqModel caption_transfer_init(const std::optional<Checkpoint>& pretrain, const Seq2SeqConfig& config,
                                   Transfer transfer) {
  Seq2SeqModel m = s2s_init(config);
  if (transfer == Transfer::none) return m;
  if (!pretrain) throw ContractError(std::string("caption transfer '") + transfer_name(transfer) + "' needs a checkpoint");
  const Seq2SeqConfig src = Seq2SeqConfig::from_json(pretrain->config);
  if (src.input_mode != config.input_mode) throw ShapeError("caption transfer: encoder input modes differ");
  const bool same_vocab = src.target_vocab == config.target_vocab;
  for (auto& p : m.params()) {
    if (transfer == Transfer::encoder_only && !is_encoder_param(p.name)) continue;
    if (transfer == Transfer::all && is_target_vocab_param(p.name) && !same_vocab) continue;
    if (!pretrain->has(p.name)) throw ShapeError("caption transfer: checkpoint lacks '" + p.name + "'");
    const Tensor& s = pretrain->get(p.name);
    if (s.shape() != p.tensor.shape() || s.dtype() != p.tensor.dtype()) {
      throw ShapeError("caption transfer: '" + p.name + "' is " + shape_str(s.shape()) + " in the checkpoint but " +
                       shape_str(p.tensor.shape()) + " in the model");
    }
    p.tensor.buffer() = s.buffer();
  }
  return m;
}

CaptionReport caption_finetune(const std::optional<Checkpoint>& pretrain, const std::vector<Example>& train,
                               const std::vector<Example>& valid, const std::vector<Example>& test,
                               const Seq2SeqConfig& config, Transfer transfer) {
  if (valid.empty() || test.empty()) throw DataError("caption_finetune: valid and test sets must be non-empty");
  const Seq2SeqModel init = caption_transfer_init(pretrain, config, transfer);
  CaptionReport rep;
  auto refs = [](const std::vector<Example>& xs) {
    std::vector<corpora::Message> r;
    for (const auto& x : xs) r.push_back(x.target);
    return r;
  };
  const auto valid_refs = refs(valid);
  double best_loss = INFINITY;
  auto score = [&](int epoch, const Seq2SeqModel& m, std::optional<double> train_loss) {
    CaptionEpoch e;
    e.epoch = epoch;
    e.train_loss = train_loss;
    e.valid_loss = s2s_eval_loss(m, valid);
    const auto hyp = greedy_decode_all(m, valid);
    e.valid_bleu4 = metrics::bleu4(hyp, valid_refs);
    double rl = 0.0;
    for (std::size_t i = 0; i < hyp.size(); ++i) rl += metrics::rouge_l(hyp[i], valid_refs[i]).f;
    e.valid_rouge_l = rl / static_cast<double>(hyp.size());
    rep.epochs.push_back(e);
    if (e.valid_loss < best_loss) {
      best_loss = e.valid_loss;
      rep.best_epoch = epoch;
      rep.best = m.to_checkpoint(epoch, json{{"transfer", transfer_name(transfer)}});
    }
  };
  score(0, init, std::nullopt);
  s2s_train(init, train, [&](int epoch, const Seq2SeqModel& m, double loss) { score(epoch, m, loss); });
  const Seq2SeqModel best = Seq2SeqModel::from_checkpoint(rep.best);
  const auto hyp = greedy_decode_all(best, test);
  const auto test_refs = refs(test);
  rep.test_bleu4 = metrics::bleu4(hyp, test_refs);
  double rl = 0.0;
  for (std::size_t i = 0; i < hyp.size(); ++i) rl += metrics::rouge_l(hyp[i], test_refs[i]).f;
  rep.test_rouge_l = rl / static_cast<double>(hyp.size());
  return rep;
}

}  // namespace eclab::s2s
