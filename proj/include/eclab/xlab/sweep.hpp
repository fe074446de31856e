#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "eclab/corpora/generators.hpp"
#include "eclab/ecgame/game.hpp"
#include "eclab/langmodel/lm.hpp"
#include "eclab/metrics/metrics.hpp"
#include "eclab/seq2seq/seq2seq.hpp"

namespace eclab::xlab {

// Caption sentences of a world as a plain corpus (the synthetic natural side).
corpora::Corpus captions_corpus(const corpora::CaptionSet& captions);

// Emergent corpus -> LM pretrain -> fine-tune on the target -> test perplexity.
struct DownstreamSpec {
  lm::LMConfig pretrain;
  lm::LMConfig finetune;
  double target_train = 0.8;
  double target_valid = 0.1;
};
double downstream_ppl(const corpora::Corpus& source, const lm::Splits& target, const DownstreamSpec& spec,
                      std::uint64_t seed);

struct SetupSpec {
  int vocab_size = 64;
  int seq_len = 8;
  std::string id() const;  // "V64-T8"
};

struct SweepSpec {
  std::vector<SetupSpec> setups{{64, 8}};
  int trials = 1;
  int steps = 1000;
  int checkpoint_interval = 200;
  std::vector<std::string> metrics{"accuracy", "toposim", "translation"};
  // "captions" is the built-in synthetic natural target; anything else is a corpus file path.
  std::vector<std::string> targets{"captions"};
  game::GameConfig game;  // vocab_size, seq_len, steps, interval and seed are set per cell
  corpora::SyntheticWorldSpec world;
  std::size_t grounded_objects = 4000;  // translation metric set, drawn apart from the game set
  std::size_t source_objects = 2500;    // inputs whose messages form the pretraining corpus
  std::size_t target_objects = 5000;    // caption sentences of the built-in target
  std::size_t toposim_objects = 500;
  int eval_trials = 1000;
  DownstreamSpec downstream;
  s2s::TranslationMetricConfig translation;
  std::uint64_t seed = 0;
  int threads = 1;

  SweepSpec();
  void validate() const;
  nlohmann::json to_json() const;
  static SweepSpec from_json(const nlohmann::json& j);
  // Game seed of one (setup, trial) cell.
  std::uint64_t cell_seed(std::size_t setup, int trial) const;
};

struct SweepPoint {
  std::string setup;
  int vocab_size = 0;
  int seq_len = 0;
  int trial = 0;
  std::int64_t step = 0;
  std::uint64_t seed = 0;
  std::optional<double> accuracy;
  std::optional<double> toposim;
  std::string toposim_reason;  // why toposim is undefined
  std::optional<double> translation;
  std::map<std::string, std::optional<double>> neg_ppl;  // per target
  std::string error;

  std::optional<double> metric(const std::string& name) const;
};

// CSV with a fixed header; rows are appended one point at a time.
std::string points_header(const std::vector<std::string>& targets);
std::string point_row(const SweepPoint& p, const std::vector<std::string>& targets);
std::vector<SweepPoint> read_points(const std::filesystem::path& csv);

struct SweepOptions {
  std::filesystem::path out_dir;
  // Stop after this many newly computed points (simulates an interruption).
  std::optional<std::size_t> max_new_points;
  std::function<void(const SweepPoint&)> on_point;
};

// Resumable: points already in <out>/points.csv are kept and skipped.
std::vector<SweepPoint> run_sweep(const SweepSpec& spec, const SweepOptions& opts);

enum class Exclusion { drop_undefined };

struct CorrelationReport {
  std::string metric;
  std::string target;
  std::size_t total = 0;
  std::size_t used = 0;
  std::map<std::string, std::size_t> excluded;  // reason -> count
  metrics::Correlation pearson;
  metrics::Correlation spearman;
  std::vector<std::pair<double, double>> scatter;  // (metric, -ppl)
  nlohmann::json to_json() const;
  std::string scatter_csv() const;
};

CorrelationReport correlate(const std::vector<SweepPoint>& points, const std::string& metric,
                            const std::string& target, Exclusion policy = Exclusion::drop_undefined);

enum class Axis { vocab, seqlen };
Axis axis_from_name(const std::string& s);
const char* axis_name(Axis a);

struct GroupStats {
  std::size_t n = 0;
  std::optional<double> mean;
  std::optional<double> variance;  // unbiased; unset below two values
};

struct SetupGroup {
  int value = 0;
  std::vector<std::uint64_t> seeds;
  std::map<std::string, GroupStats> stats;  // accuracy, toposim, translation, neg_ppl:<target>
};

struct SetupSweepReport {
  Axis axis = Axis::vocab;
  std::vector<SetupGroup> groups;
  nlohmann::json to_json() const;
};

GroupStats group_stats(const std::vector<double>& values);

// Groups final-step points by the swept value.
SetupSweepReport group_setup_points(Axis axis, const std::vector<SweepPoint>& points, std::int64_t final_step,
                                    const std::vector<std::string>& targets);
SetupSweepReport setup_sweep(Axis axis, const std::vector<int>& values, const SweepSpec& fixed,
                             const SweepOptions& opts);

}  // namespace eclab::xlab
