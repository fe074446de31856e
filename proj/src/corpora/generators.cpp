#include "eclab/corpora/generators.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "eclab/errors.hpp"

namespace eclab::corpora {

ZipfSampler::ZipfSampler(int n, double s) {
  if (n < 1) throw ContractError("ZipfSampler: vocabulary must be >= 1");
  cdf_.resize(static_cast<std::size_t>(n));
  double acc = 0.0;
  for (int r = 1; r <= n; ++r) {
    acc += std::pow(static_cast<double>(r), -s);
    cdf_[static_cast<std::size_t>(r - 1)] = acc;
  }
  for (auto& c : cdf_) c /= acc;
}

int ZipfSampler::sample(num::Prng& rng) const {
  const double u = rng.uniform();
  auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
  if (it == cdf_.end()) --it;
  return static_cast<int>(it - cdf_.begin()) + 1;
}

double ZipfSampler::probability(int rank) const {
  const auto i = static_cast<std::size_t>(rank - 1);
  return i == 0 ? cdf_[0] : cdf_[i] - cdf_[i - 1];
}

Corpus gen_paren_zipf(const ParenZipfConfig& config, num::Prng& rng) {
  if (config.vocab_size < 1) throw ContractError("gen_paren_zipf: vocab_size must be >= 1");
  if (config.token_count % 2 != 0) {
    throw ContractError("gen_paren_zipf: token_count must be even, got " + std::to_string(config.token_count));
  }
  if (!(config.open_prob > 0.0 && config.open_prob < 1.0)) {
    throw ContractError("gen_paren_zipf: open_prob must lie in (0, 1)");
  }
  if (config.line_length < 2 || config.line_length % 2 != 0) {
    throw ContractError("gen_paren_zipf: line_length must be even and >= 2");
  }
  ZipfSampler zipf(config.vocab_size, config.zipf_exponent);
  Corpus c;
  c.vocab_size = config.vocab_size;
  std::size_t remaining_total = config.token_count;
  std::vector<int> stack;
  while (remaining_total > 0) {
    const std::size_t budget = std::min(config.line_length, remaining_total);
    Message line;
    line.reserve(budget);
    stack.clear();
    std::size_t remaining = budget;
    while (remaining > 0) {
      bool open;
      if (stack.empty()) {
        open = true;
      } else if (remaining == stack.size()) {
        open = false;
      } else {
        open = rng.uniform() < config.open_prob;
      }
      if (open) {
        const int w = zipf.sample(rng) - 1;
        stack.push_back(w);
        line.push_back(w);
      } else {
        line.push_back(stack.back());
        stack.pop_back();
      }
      --remaining;
    }
    remaining_total -= budget;
    c.messages.push_back(std::move(line));
  }
  std::ostringstream s, p;
  s << config.zipf_exponent;
  p << config.open_prob;
  c.provenance.set("generator", "paren-zipf");
  c.provenance.set("seed", std::to_string(rng.seed()));
  c.provenance.set("zipf_exponent", s.str());
  c.provenance.set("open_prob", p.str());
  c.provenance.set("line_length", std::to_string(config.line_length));
  c.provenance.set("token_count", std::to_string(config.token_count));
  return c;
}

bool is_balanced(const Message& line) {
  std::vector<int> stack;
  for (int t : line) {
    if (!stack.empty() && stack.back() == t) {
      stack.pop_back();
    } else {
      stack.push_back(t);
    }
  }
  return stack.empty();
}

FeatureStats feature_stats(const FeatureSet& features) {
  features.validate();
  FeatureStats s;
  s.mean.assign(features.d, 0.0);
  s.stddev.assign(features.d, 0.0);
  for (std::size_t i = 0; i < features.n; ++i)
    for (std::size_t j = 0; j < features.d; ++j) s.mean[j] += features.row(i)[j];
  for (auto& m : s.mean) m /= static_cast<double>(features.n);
  for (std::size_t i = 0; i < features.n; ++i)
    for (std::size_t j = 0; j < features.d; ++j) {
      const double c = features.row(i)[j] - s.mean[j];
      s.stddev[j] += c * c;
    }
  for (auto& v : s.stddev) v = std::sqrt(v / static_cast<double>(features.n));
  return s;
}

FeatureSet random_inputs(const FeatureStats& stats, std::size_t n, num::Prng& rng) {
  if (n == 0) throw ContractError("random_inputs: N must be positive");
  if (stats.mean.empty() || stats.mean.size() != stats.stddev.size()) {
    throw ContractError("random_inputs: malformed feature statistics");
  }
  FeatureSet f;
  f.n = n;
  f.d = stats.mean.size();
  f.values.resize(n * f.d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < f.d; ++j)
      f.values[i * f.d + j] = static_cast<float>(rng.normal(stats.mean[j], stats.stddev[j]));
  f.provenance.set("generator", "random-input");
  f.provenance.set("seed", std::to_string(rng.seed()));
  return f;
}

Corpus permute_corpus(const Corpus& corpus, num::Prng& rng) {
  Corpus out = corpus;
  for (auto& m : out.messages) rng.shuffle(m);
  out.provenance.set("ablation", "permute");
  out.provenance.set("permute_seed", std::to_string(rng.seed()));
  return out;
}

Message truncate_at_zero(const Message& m) {
  auto it = std::find(m.begin(), m.end(), 0);
  return Message(m.begin(), it);
}

void SyntheticWorldSpec::validate() const {
  if (attributes < 1) throw ContractError("synthetic world needs at least one attribute");
  if (values < 2) throw ContractError("synthetic world needs at least two values per attribute");
  if (!(noise >= 0.0)) throw ContractError("synthetic world noise must be non-negative");
}

int attribute_word(const SyntheticWorldSpec& spec, int attribute, int value) {
  return natural::kFirstAttributeWord + attribute * spec.values + value;
}

Message render_caption(const SyntheticWorldSpec& spec, const std::vector<int>& tuple) {
  // "the <adj...> thing with <x> and <y> ..."; the first ceil(A/2)
  // attributes precede the noun.
  const int pre = (spec.attributes + 1) / 2;
  Message m{natural::kThe};
  for (int a = 0; a < pre; ++a) m.push_back(attribute_word(spec, a, tuple[static_cast<std::size_t>(a)]));
  m.push_back(natural::kThing);
  for (int a = pre; a < spec.attributes; ++a) {
    m.push_back(a == pre ? natural::kWith : natural::kAnd);
    m.push_back(attribute_word(spec, a, tuple[static_cast<std::size_t>(a)]));
  }
  return m;
}

std::vector<std::string> natural_vocab(const SyntheticWorldSpec& spec) {
  static const std::vector<std::vector<std::string>> names = {
      {"red", "blue", "green", "yellow", "purple", "orange", "black", "white", "gray", "pink"},
      {"tiny", "small", "medium", "large", "huge", "giant", "narrow", "wide", "short", "tall"},
      {"metal", "rubber", "wooden", "glass", "paper", "stone", "cloth", "plastic", "golden", "icy"},
      {"cubes", "spheres", "cones", "rings", "pyramids", "disks", "rods", "stars", "arches", "shells"},
  };
  std::vector<std::string> vocab{".", "the", "thing", "with", "and"};
  for (int a = 0; a < spec.attributes; ++a) {
    for (int v = 0; v < spec.values; ++v) {
      const auto ua = static_cast<std::size_t>(a), uv = static_cast<std::size_t>(v);
      if (ua < names.size() && uv < names[ua].size()) {
        vocab.push_back(names[ua][uv]);
      } else {
        vocab.push_back("attr" + std::to_string(a) + "_" + std::to_string(v));
      }
    }
  }
  return vocab;
}

std::vector<std::vector<float>> World::feature_sequence(std::size_t i) const {
  std::vector<std::vector<float>> seq;
  auto r = features.row(i);
  const auto v = static_cast<std::size_t>(spec.values);
  for (int a = 0; a < spec.attributes; ++a) {
    const auto off = static_cast<std::size_t>(a) * v;
    seq.emplace_back(r.begin() + static_cast<std::ptrdiff_t>(off), r.begin() + static_cast<std::ptrdiff_t>(off + v));
  }
  return seq;
}

World World::subset(std::span<const std::size_t> rows) const {
  World w;
  w.spec = spec;
  w.vocab = vocab;
  w.features = features.subset(rows);
  w.captions = captions.subset(rows);
  for (std::size_t r : rows) w.tuples.push_back(tuples.at(r));
  return w;
}

World synthetic_world(const SyntheticWorldSpec& spec) {
  spec.validate();
  num::Prng rng(spec.seed, num::stream::data);
  World w;
  w.spec = spec;
  const auto a_count = static_cast<std::size_t>(spec.attributes);
  if (spec.objects == 0) {
    double total = std::pow(static_cast<double>(spec.values), spec.attributes);
    if (total > 5e6) throw ContractError("synthetic world too large to enumerate; set objects");
    std::vector<int> t(a_count, 0);
    for (std::size_t k = 0; k < static_cast<std::size_t>(total); ++k) {
      w.tuples.push_back(t);
      for (std::size_t a = a_count; a-- > 0;) {
        if (++t[a] < spec.values) break;
        t[a] = 0;
      }
    }
  } else {
    for (std::size_t k = 0; k < spec.objects; ++k) {
      std::vector<int> t(a_count);
      for (auto& x : t) x = static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.values)));
      w.tuples.push_back(std::move(t));
    }
  }
  const std::size_t d = a_count * static_cast<std::size_t>(spec.values);
  w.features.n = w.tuples.size();
  w.features.d = d;
  w.features.values.assign(w.features.n * d, 0.0f);
  for (std::size_t i = 0; i < w.tuples.size(); ++i) {
    auto row = w.features.row(i);
    for (std::size_t a = 0; a < a_count; ++a) row[a * static_cast<std::size_t>(spec.values) + static_cast<std::size_t>(w.tuples[i][a])] = 1.0f;
    if (spec.noise > 0.0) {
      for (auto& x : row) x += static_cast<float>(rng.normal(0.0, spec.noise));
    }
  }
  w.vocab = natural_vocab(spec);
  w.captions.vocab_size = static_cast<int>(w.vocab.size());
  for (std::size_t i = 0; i < w.tuples.size(); ++i) w.captions.pairs.emplace_back(i, render_caption(spec, w.tuples[i]));
  std::ostringstream ns;
  ns << spec.noise;
  w.features.provenance.set("generator", "synthetic-world");
  w.features.provenance.set("attributes", std::to_string(spec.attributes));
  w.features.provenance.set("values", std::to_string(spec.values));
  w.features.provenance.set("noise", ns.str());
  w.features.provenance.set("seed", std::to_string(spec.seed));
  return w;
}

}  // namespace eclab::corpora
