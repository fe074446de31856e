#include "eclab/corpora/emergent.hpp"

#include "eclab/corpora/generators.hpp"

namespace eclab::corpora {

Corpus generate_corpus(const game::GameModel& model, const FeatureSet& features, num::Prng& rng,
                       const GenerateOptions& opts) {
  if (opts.decode == game::Decode::soft) throw ContractError("generate_corpus: soft decoding is for training only");
  if (features.d != static_cast<std::size_t>(model.config.feature_dim)) {
    throw ShapeError("generate_corpus: features have D=" + std::to_string(features.d) + " but the speaker expects " +
                     std::to_string(model.config.feature_dim));
  }
  num::NoGradGuard ng;
  Corpus c;
  c.vocab_size = model.config.vocab_size;
  std::vector<std::size_t> rows;
  for (std::size_t start = 0; start < features.n; start += opts.chunk) {
    rows.clear();
    for (std::size_t i = start; i < std::min(features.n, start + opts.chunk); ++i) rows.push_back(i);
    auto out = game::speaker_forward(game::gather_rows(features, rows, model.config.dtype), model.speaker,
                                     model.config, opts.decode, rng);
    for (auto& m : out.messages) c.messages.push_back(opts.truncate_at_zero ? truncate_at_zero(m) : std::move(m));
  }
  c.provenance.set("generator", "emergent");
  c.provenance.set("source_checkpoint", opts.source);
  c.provenance.set("decode", game::decode_name(opts.decode));
  c.provenance.set("truncate_at_zero", opts.truncate_at_zero ? "true" : "false");
  c.provenance.set("seed", std::to_string(rng.seed()));
  c.provenance.set("game_seed", std::to_string(model.config.seed));
  return c;
}

Corpus generate_corpus(const num::Checkpoint& speaker, const FeatureSet& features, num::Prng& rng,
                       const GenerateOptions& opts) {
  auto model = game::GameModel::from_checkpoint(speaker);
  Corpus c = generate_corpus(model, features, rng, opts);
  c.provenance.set("checkpoint_step", std::to_string(speaker.step));
  return c;
}

Corpus random_speaker_corpus(const game::GameConfig& config, const FeatureSet& features, num::Prng& rng) {
  game::GameConfig c = config;
  c.seed = rng.seed();
  auto model = game::GameModel::init(c);
  Corpus out = generate_corpus(model, features, rng, {.decode = game::Decode::sample, .source = "random-init"});
  out.provenance.set("ablation", "random-speaker");
  return out;
}

}  // namespace eclab::corpora
