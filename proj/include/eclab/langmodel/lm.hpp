#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "eclab/corpora/types.hpp"
#include "eclab/ecgame/game.hpp"
#include "eclab/numcore/checkpoint.hpp"
#include "eclab/numcore/nn.hpp"

namespace eclab::lm {

using num::Tensor;

enum class Arch { transformer, gru };
const char* arch_name(Arch a);
Arch arch_from_name(const std::string& s);

struct LMConfig {
  Arch architecture = Arch::transformer;
  int layers = 2;
  int heads = 2;
  int model_dim = 64;
  int ffn_dim = 256;
  int context = 128;
  int vocab_size = 0;
  double learning_rate = 1e-3;
  double clip_norm = 1.0;
  int batch_size = 16;
  int steps = 1000;
  int eval_interval = 100;
  std::uint64_t seed = 0;
  num::DType dtype = num::DType::f32;

  void validate() const;
  nlohmann::json to_json() const;
  static LMConfig from_json(const nlohmann::json& j);
};

struct Block {
  num::LayerNorm ln1;
  num::Linear wq, wk, wv, wo;
  num::LayerNorm ln2;
  num::Linear ff1, ff2;
};

struct LanguageModel {
  LMConfig config;
  Tensor tok_embed;  // (V, d)
  Tensor pos_embed;  // (context, d), transformer only
  std::vector<Block> blocks;
  num::LayerNorm final_ln;
  num::GruParams gru;  // gru only
  num::Linear head;    // d -> V

  num::ParamList params() const;
  num::Checkpoint to_checkpoint(std::int64_t step, nlohmann::json meta = nlohmann::json::object()) const;
  static LanguageModel from_checkpoint(const num::Checkpoint& ckpt);
};

// Parameter names that depend on the vocabulary (replaced on vocab change).
bool is_vocab_param(const std::string& name);

LanguageModel lm_init(const LMConfig& config);
std::size_t parameter_count(const LanguageModel& m);
std::size_t expected_parameter_count(const LMConfig& c);

// Messages joined into one stream, each followed by separator token 0.
std::vector<int> pack_corpus(const corpora::Corpus& corpus);

// Mean next-token NLL over windows (B, T+1) given as row-major token ids.
Tensor lm_loss(const LanguageModel& m, const std::vector<int>& windows, std::size_t batch, std::size_t length);

struct EvalNll {
  double total = 0.0;  // nats
  std::size_t tokens = 0;
  std::vector<double> per_token;  // filled when requested
  double mean() const { return tokens ? total / static_cast<double>(tokens) : 0.0; }
  double perplexity() const;
};

// Scores every token of the stream after the first, in context-length windows.
EvalNll evaluate_stream(const LanguageModel& m, const std::vector<int>& stream, bool per_token = false);

struct Splits {
  corpora::Corpus train, valid, test;
};
// Seeded shuffle of message indices, then contiguous train/valid/test shares.
Splits split_corpus(const corpora::Corpus& corpus, double train_frac, double valid_frac, std::uint64_t seed);

struct LMLogEntry {
  std::int64_t step;
  double train_nll;
  std::optional<double> valid_nll;
};

struct LMTrainResult {
  num::Checkpoint best;
  double best_valid_nll = 0.0;
  std::int64_t best_step = 0;
  std::vector<LMLogEntry> log;
  std::optional<double> test_ppl;
  nlohmann::json log_json() const;
};

// Trains from `init`, evaluating validation NLL every eval_interval steps
// (and at step 0); returns the checkpoint with minimal validation NLL.
LMTrainResult lm_train(const LanguageModel& init, const corpora::Corpus& train, const corpora::Corpus& valid,
                       const LMConfig& config);

// New model at config.vocab_size that copies every source tensor except, when
// the vocabulary changes, the token embedding and output head.
LanguageModel transplant(const LanguageModel& source, const LMConfig& target_config);

// Full protocol: transplant, fine-tune, report test perplexity at the best validation loss.
LMTrainResult lm_finetune(const num::Checkpoint& source, const Splits& target, const LMConfig& config);
LMTrainResult lm_scratch(const Splits& target, const LMConfig& config);

// GRU LM built from a speaker: embedding, recurrent weights and head.
LanguageModel lm_from_speaker(const num::Checkpoint& speaker, const LMConfig& config);
LMTrainResult model_transfer_gru(const num::Checkpoint& speaker, const Splits& target, const LMConfig& config);

struct SourceSpec {
  std::string name;
  corpora::Corpus corpus;
};

struct TransferPlan {
  std::vector<SourceSpec> sources;    // corpus-transfer rows (ec, permuted, random-speaker, paren-zipf, ...)
  bool scratch = true;
  // Model-transfer baseline plus its same-architecture corpus-transfer twin.
  std::optional<num::Checkpoint> speaker;
  std::optional<corpora::Corpus> gru_source;
  Splits target;
  LMConfig pretrain;   // vocab_size taken from each source
  LMConfig finetune;   // vocab_size taken from the target
  LMConfig gru_pretrain;  // architecture gru
  LMConfig gru_finetune;
  std::vector<std::uint64_t> seeds{0, 1, 2};
};

struct TransferCell {
  std::string row;
  std::uint64_t seed;
  std::optional<double> test_ppl;
  std::string error;
};

struct TransferReport {
  std::vector<TransferCell> cells;
  std::optional<double> median(const std::string& row) const;
  std::vector<std::string> rows() const;
  nlohmann::json to_json() const;
  std::string table() const;  // tab-separated
};

TransferReport transfer_experiment(const TransferPlan& plan);

}  // namespace eclab::lm
