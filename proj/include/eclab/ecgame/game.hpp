#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "eclab/corpora/types.hpp"
#include "eclab/numcore/checkpoint.hpp"
#include "eclab/numcore/nn.hpp"

namespace eclab::game {

using corpora::Message;
using num::Tensor;

// Reserved token ids. 1 only ever seeds the speaker and is never emitted.
inline constexpr int kNullToken = 0;
inline constexpr int kClsToken = 1;
inline constexpr double kScoreEps = 1e-10;

struct GameConfig {
  int vocab_size = 64;
  int seq_len = 8;
  int distractors = 15;
  int hidden_dim = 64;
  int feature_dim = 24;
  int embed_dim = 0;  // 0 means hidden_dim
  double temperature = 1.0;
  int batch_size = 64;
  int pool_size = 512;
  double learning_rate = 1e-3;
  double clip_norm = 0.0;
  int steps = 3000;
  int checkpoint_interval = 200;
  int log_interval = 50;
  std::uint64_t seed = 0;
  num::DType dtype = num::DType::f32;

  std::size_t embed() const { return static_cast<std::size_t>(embed_dim > 0 ? embed_dim : hidden_dim); }
  void validate() const;
  nlohmann::json to_json() const;
  // Unknown keys are rejected; missing keys keep their defaults.
  static GameConfig from_json(const nlohmann::json& j);
};

struct SpeakerParams {
  Tensor embed;           // (V, E)
  num::GruParams gru;     // input E, hidden H
  num::Linear head;       // H -> V
  num::Linear project;    // D -> H, undefined when D == H
  bool has_projection() const { return project.weight.defined(); }
  void collect(num::ParamList& out, const std::string& prefix = "speaker") const;
};

struct ListenerParams {
  Tensor embed;        // (V, E)
  num::GruParams gru;  // input E, hidden H
  num::Linear image;   // D -> H
  void collect(num::ParamList& out, const std::string& prefix = "listener") const;
};

SpeakerParams init_speaker(const GameConfig& c, num::Prng& rng);
ListenerParams init_listener(const GameConfig& c, num::Prng& rng);

struct GameModel {
  GameConfig config;
  SpeakerParams speaker;
  ListenerParams listener;

  static GameModel init(const GameConfig& config);
  static GameModel from_checkpoint(const num::Checkpoint& ckpt);
  num::ParamList params() const;
  num::Checkpoint to_checkpoint(std::int64_t step) const;
};

SpeakerParams speaker_from_checkpoint(const num::Checkpoint& ckpt, const GameConfig& c);
nlohmann::json game_meta();

enum class Decode { soft, sample, greedy };
const char* decode_name(Decode d);
Decode decode_from_name(const std::string& s);

struct SpeakerOutput {
  std::vector<Message> messages;  // B messages of exactly T tokens
  // Per step (B,V): gumbel-softmax output in soft mode, softmax(logits) otherwise.
  std::vector<Tensor> distributions;
};

// features (B,D). In soft mode gradients flow through the relaxed tokens.
SpeakerOutput speaker_forward(const Tensor& features, const SpeakerParams& p, const GameConfig& c,
                              Decode mode, num::Prng& rng);

// Final listener state hl_T (B,H) from relaxed per-step distributions or hard tokens.
Tensor listener_encode_soft(const std::vector<Tensor>& steps, const ListenerParams& p);
Tensor listener_encode_tokens(const std::vector<Message>& messages, const ListenerParams& p, num::DType dt);

// Inverse-square scores (B, C) for candidate features (B*C, D), candidates of item b in rows b*C..b*C+C-1.
Tensor listener_scores(const Tensor& hl, const Tensor& candidates, std::size_t per_item, const ListenerParams& p);

struct SelectionDistribution {
  std::vector<std::size_t> candidates;  // feature row ids
  std::size_t correct = 0;              // position of the target in `candidates`
  std::vector<double> scores;
  std::vector<double> probabilities;
  std::size_t guess() const;            // argmax, lowest index on ties
};

// One referential round per item: target row plus distractor rows.
struct GameBatch {
  std::vector<std::size_t> targets;
  std::vector<std::vector<std::size_t>> candidates;  // each of size K+1
  std::vector<std::size_t> correct;                  // target position per item
  // Throws ContractError when a target reappears among its distractors.
  void validate() const;
};

// Pool-then-batch sampling: a pool of rows, then targets and per-target
// distractors drawn without replacement from the pool.
GameBatch sample_batch(std::size_t rows, std::size_t pool, std::size_t batch, std::size_t distractors,
                       num::Prng& rng);

Tensor gather_rows(const corpora::FeatureSet& f, std::span<const std::size_t> rows, num::DType dt);

struct LossOutput {
  Tensor loss;
  std::size_t correct = 0;
};

LossOutput game_loss(const GameModel& m, const corpora::FeatureSet& features, const GameBatch& batch,
                     num::Prng& gumbel_rng);

struct LogEntry {
  std::int64_t step;
  double loss;
  double train_accuracy;
};

struct TrainResult {
  std::vector<num::Checkpoint> checkpoints;
  std::vector<LogEntry> log;
  bool diverged = false;
  std::string divergence;
};

struct TrainOptions {
  // When set, each checkpoint is written to <dir>/step_NNNNNN as it is taken
  // and the log to <dir>/train_log.json.
  std::optional<std::filesystem::path> out_dir;
  // Keep checkpoints in memory (the result) as well.
  bool keep_in_memory = true;
  std::function<void(const LogEntry&)> on_log;
};

TrainResult train_game(const GameConfig& config, const corpora::FeatureSet& features, const TrainOptions& opts = {});
nlohmann::json log_to_json(const std::vector<LogEntry>& log);
std::string checkpoint_dir_name(std::int64_t step);

struct EvalOptions {
  int distractors = 15;
  int trials = 1000;
  Decode decode = Decode::sample;
  std::uint64_t seed = 0;
  std::size_t chunk = 256;
  bool dump = false;
};

struct EvalResult {
  double accuracy = 0.0;
  std::size_t trials = 0;
  std::size_t correct = 0;
  std::vector<SelectionDistribution> dumped;
};

// Hooks for evaluating arbitrary speaker/listener pairs (stubs in tests).
using SpeakFn = std::function<std::vector<Message>(std::span<const std::size_t> target_rows, num::Prng& rng)>;
using ListenFn = std::function<std::vector<SelectionDistribution>(const std::vector<Message>& messages,
                                                                  const GameBatch& batch)>;

EvalResult eval_accuracy(const GameModel& model, const corpora::FeatureSet& features, const EvalOptions& opts);
EvalResult eval_accuracy_with(const corpora::FeatureSet& features, const EvalOptions& opts, const SpeakFn& speak,
                              const ListenFn& listen);

// Scores hard messages against every candidate set of `batch`.
std::vector<SelectionDistribution> listen(const GameModel& model, const corpora::FeatureSet& features,
                                          const std::vector<Message>& messages, const GameBatch& batch);

}  // namespace eclab::game
