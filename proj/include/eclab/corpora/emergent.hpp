#pragma once

#include <string>

#include "eclab/corpora/types.hpp"
#include "eclab/ecgame/game.hpp"

namespace eclab::corpora {

struct GenerateOptions {
  game::Decode decode = game::Decode::sample;
  bool truncate_at_zero = false;
  // Recorded in provenance only.
  std::string source = "<memory>";
  std::size_t chunk = 512;
};

// One message per feature row, in row order.
Corpus generate_corpus(const num::Checkpoint& speaker, const FeatureSet& features, num::Prng& rng,
                       const GenerateOptions& opts = {});
Corpus generate_corpus(const game::GameModel& model, const FeatureSet& features, num::Prng& rng,
                       const GenerateOptions& opts = {});

// Freshly initialized speaker (init stream of rng's seed) decoded in sample mode.
Corpus random_speaker_corpus(const game::GameConfig& config, const FeatureSet& features, num::Prng& rng);

}  // namespace eclab::corpora
