#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "eclab/corpora/types.hpp"
#include "eclab/ecgame/game.hpp"
#include "eclab/numcore/checkpoint.hpp"
#include "eclab/numcore/nn.hpp"

namespace eclab::s2s {

using num::Tensor;

enum class InputMode { tokens, features };
const char* input_mode_name(InputMode m);
InputMode input_mode_from_name(const std::string& s);

enum class DecodeKind { greedy, beam };

struct Seq2SeqConfig {
  InputMode input_mode = InputMode::tokens;
  int encoder_layers = 1;
  int decoder_layers = 1;
  int heads = 2;
  int model_dim = 64;
  int ffn_dim = 128;
  int source_vocab = 0;  // tokens mode
  int feature_dim = 0;   // features mode: size of each source vector
  int target_vocab = 0;  // caller ids; start/end sentinels are appended after them
  int max_source_len = 16;
  int max_target_len = 16;
  int epochs = 2;
  double learning_rate = 1e-3;
  double clip_norm = 1.0;
  int batch_size = 32;
  DecodeKind decode = DecodeKind::greedy;
  int beam_width = 1;
  std::uint64_t seed = 0;
  num::DType dtype = num::DType::f32;

  int bos() const { return target_vocab; }
  int eos() const { return target_vocab + 1; }
  int output_vocab() const { return target_vocab + 2; }

  void validate() const;
  nlohmann::json to_json() const;
  static Seq2SeqConfig from_json(const nlohmann::json& j);
};

// One source/target pair. Tokens mode reads `source`; features mode reads
// `features` as (length, feature_dim) row-major.
struct Example {
  std::vector<int> source;
  std::vector<float> features;
  std::vector<int> target;
};

struct EncoderBlock {
  num::LayerNorm ln1;
  num::Linear wq, wk, wv, wo;
  num::LayerNorm ln2;
  num::Linear ff1, ff2;
};

struct DecoderBlock {
  num::LayerNorm ln1;
  num::Linear wq, wk, wv, wo;  // masked self-attention
  num::LayerNorm ln2;
  num::Linear cq, ck, cv, co;  // cross-attention over the encoder output
  num::LayerNorm ln3;
  num::Linear ff1, ff2;
};

struct Seq2SeqModel {
  Seq2SeqConfig config;
  Tensor src_embed;       // tokens mode (Vs, d)
  num::Linear src_proj;   // features mode D -> d
  Tensor enc_pos;         // (max_source_len, d)
  std::vector<EncoderBlock> encoder;
  num::LayerNorm enc_ln;
  Tensor tgt_embed;       // (Vt+2, d)
  Tensor dec_pos;         // (max_target_len + 1, d)
  std::vector<DecoderBlock> decoder;
  num::LayerNorm dec_ln;
  num::Linear head;       // d -> Vt+2

  num::ParamList params() const;
  num::Checkpoint to_checkpoint(std::int64_t step, nlohmann::json meta = nlohmann::json::object()) const;
  static Seq2SeqModel from_checkpoint(const num::Checkpoint& ckpt);
};

bool is_encoder_param(const std::string& name);
// Depends on the target vocabulary.
bool is_target_vocab_param(const std::string& name);

Seq2SeqModel s2s_init(const Seq2SeqConfig& config);

// Throws DataError when an example does not fit the model's vocab or length limits.
void check_example(const Seq2SeqConfig& c, const Example& e);

// Mean teacher-forced NLL per target token (end sentinel included).
Tensor s2s_loss(const Seq2SeqModel& m, const std::vector<const Example*>& batch);
double s2s_eval_loss(const Seq2SeqModel& m, const std::vector<Example>& examples);

struct S2STrainResult {
  num::Checkpoint final;
  std::vector<double> epoch_loss;  // mean training loss of each epoch
};

// Called after every epoch (1-based) with the current weights and the epoch's mean loss.
using EpochHook = std::function<void(int epoch, const Seq2SeqModel&, double train_loss)>;

// Exactly config.epochs passes over shuffled minibatches, starting at `init`.
S2STrainResult s2s_train(const Seq2SeqModel& init, const std::vector<Example>& pairs, const EpochHook& hook = {});
S2STrainResult s2s_train(const std::vector<Example>& pairs, const Seq2SeqConfig& config);

// Uses config.decode; output excludes sentinels and holds at most max_target_len tokens.
std::vector<int> s2s_decode(const Seq2SeqModel& m, const Example& source);
std::vector<int> s2s_decode(const num::Checkpoint& ckpt, const Example& source);
std::vector<int> greedy_decode(const Seq2SeqModel& m, const Example& source);
std::vector<int> beam_decode(const Seq2SeqModel& m, const Example& source, int width);
// Greedy over many sources, batched.
std::vector<std::vector<int>> greedy_decode_all(const Seq2SeqModel& m, const std::vector<Example>& sources,
                                                std::size_t batch = 64);

struct TranslationMetricConfig {
  Seq2SeqConfig model;  // vocab sizes and max lengths are filled in from the data
  double train_fraction = 0.9;
  game::Decode message_decode = game::Decode::greedy;
};

struct TranslationMetricReport {
  std::string checkpoint_id;
  std::size_t train_pairs = 0;
  std::size_t eval_pairs = 0;
  int epochs = 0;
  double mean_rouge_l = 0.0;
  std::vector<double> per_pair;  // eval order
  std::string per_pair_path;     // set by callers that write the scores out
  std::uint64_t seed = 0;
  nlohmann::json to_json() const;
};

// Emergent message per caption row from the speaker, then the message -> caption
// translation score. rng.seed() drives the split and any sampled decoding.
TranslationMetricReport translation_metric(const num::Checkpoint& speaker, const corpora::FeatureSet& features,
                                           const corpora::CaptionSet& captions, const TranslationMetricConfig& config,
                                           num::Prng& rng);
// Same protocol for messages produced elsewhere; messages[i] pairs with captions.pairs[i].
TranslationMetricReport translation_metric_from_messages(const std::vector<corpora::Message>& messages,
                                                         int message_vocab, const corpora::CaptionSet& captions,
                                                         const TranslationMetricConfig& config, std::uint64_t seed);

// Feature-sequence sources paired with targets, one per row.
std::vector<Example> feature_examples(const std::vector<std::vector<std::vector<float>>>& sequences,
                                      const std::vector<corpora::Message>& targets);

// Row i of `features` cut into `segments` equal vectors, paired with targets[i].
std::vector<Example> segment_examples(const corpora::FeatureSet& features, std::size_t segments,
                                      const std::vector<corpora::Message>& targets);

struct CaptionPretrainResult {
  num::Checkpoint checkpoint;  // meta.tag = captioning-pretrain
  std::vector<double> epoch_loss;
};

CaptionPretrainResult caption_pretrain(const std::vector<Example>& pairs, const Seq2SeqConfig& config);

enum class Transfer { encoder_only, all, none };
const char* transfer_name(Transfer t);
Transfer transfer_from_name(const std::string& s);

struct CaptionEpoch {
  int epoch = 0;  // 0 = before fine-tuning
  std::optional<double> train_loss;
  double valid_loss = 0.0;
  double valid_bleu4 = 0.0;
  double valid_rouge_l = 0.0;
};

struct CaptionReport {
  std::vector<CaptionEpoch> epochs;
  int best_epoch = 0;
  double test_bleu4 = 0.0;
  double test_rouge_l = 0.0;
  num::Checkpoint best;
  nlohmann::json to_json() const;
};

// Initial weights for fine-tuning under the given transfer mode.
Seq2SeqModel caption_transfer_init(const std::optional<num::Checkpoint>& pretrain, const Seq2SeqConfig& config,
                                   Transfer transfer);

CaptionReport caption_finetune(const std::optional<num::Checkpoint>& pretrain, const std::vector<Example>& train,
                               const std::vector<Example>& valid, const std::vector<Example>& test,
                               const Seq2SeqConfig& config, Transfer transfer);

}  // namespace eclab::s2s
