#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace eclab::corpora {

using Message = std::vector<int>;

// Ordered key=value lineage record; survives file handoff as header comments.
class Provenance {
 public:
  void set(const std::string& key, const std::string& value);
  const std::string* find(const std::string& key) const;
  std::string get_or(const std::string& key, const std::string& fallback) const;
  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }
  bool empty() const { return entries_.empty(); }

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

struct Corpus {
  std::vector<Message> messages;
  int vocab_size = 0;
  Provenance provenance;

  std::size_t token_count() const;
  // Throws DataError when a token falls outside [0, vocab_size).
  void validate() const;
};

// N x D row-major feature matrix stored in f32 (the on-disk precision).
struct FeatureSet {
  std::size_t n = 0;
  std::size_t d = 0;
  std::vector<float> values;
  Provenance provenance;

  std::span<const float> row(std::size_t i) const { return {values.data() + i * d, d}; }
  std::span<float> row(std::size_t i) { return {values.data() + i * d, d}; }
  void validate() const;
  FeatureSet subset(std::span<const std::size_t> rows) const;
};

struct FeatureStats {
  std::vector<double> mean;
  std::vector<double> stddev;
};

// Feature-row index paired with a caption over the natural-side vocabulary.
struct CaptionSet {
  std::vector<std::pair<std::size_t, Message>> pairs;
  int vocab_size = 0;

  void validate(std::size_t feature_rows) const;
  CaptionSet subset(std::span<const std::size_t> rows) const;
};

}  // namespace eclab::corpora
