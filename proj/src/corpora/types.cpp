#include "eclab/corpora/types.hpp"

#include <cmath>

#include "eclab/errors.hpp"

namespace eclab::corpora {

void Provenance::set(const std::string& key, const std::string& value) {
  std::string clean = value;
  for (auto& ch : clean)
    if (ch == '\n' || ch == '\r') ch = ' ';
  for (auto& e : entries_) {
    if (e.first == key) {
      e.second = clean;
      return;
    }
  }
  entries_.emplace_back(key, clean);
}

const std::string* Provenance::find(const std::string& key) const {
  for (const auto& e : entries_)
    if (e.first == key) return &e.second;
  return nullptr;
}

std::string Provenance::get_or(const std::string& key, const std::string& fallback) const {
  const std::string* v = find(key);
  return v ? *v : fallback;
}

std::size_t Corpus::token_count() const {
  std::size_t n = 0;
  for (const auto& m : messages) n += m.size();
  return n;
}

void Corpus::validate() const {
  if (vocab_size <= 0) throw DataError("corpus vocab_size must be positive");
  for (std::size_t i = 0; i < messages.size(); ++i) {
    for (int t : messages[i]) {
      if (t < 0 || t >= vocab_size) {
        throw DataError("message " + std::to_string(i) + ": token " + std::to_string(t) +
                        " outside vocabulary of size " + std::to_string(vocab_size));
      }
    }
  }
}

void FeatureSet::validate() const {
  if (n == 0 || d == 0) throw DataError("feature set must have N >= 1 and D >= 1");
  if (values.size() != n * d) throw DataError("feature set holds " + std::to_string(values.size()) + " values, expected N*D");
  for (float v : values)
    if (!std::isfinite(v)) throw DataError("feature set contains a non-finite value");
}

FeatureSet FeatureSet::subset(std::span<const std::size_t> rows) const {
  FeatureSet out;
  out.n = rows.size();
  out.d = d;
  out.provenance = provenance;
  out.values.reserve(rows.size() * d);
  for (std::size_t r : rows) {
    if (r >= n) throw ContractError("feature subset row " + std::to_string(r) + " out of range");
    auto src = row(r);
    out.values.insert(out.values.end(), src.begin(), src.end());
  }
  return out;
}

void CaptionSet::validate(std::size_t feature_rows) const {
  for (const auto& [idx, cap] : pairs) {
    if (idx >= feature_rows) throw DataError("caption refers to feature row " + std::to_string(idx));
    if (cap.empty()) throw DataError("empty caption for feature row " + std::to_string(idx));
    for (int t : cap)
      if (t < 0 || t >= vocab_size) throw DataError("caption token " + std::to_string(t) + " outside vocabulary");
  }
}

CaptionSet CaptionSet::subset(std::span<const std::size_t> rows) const {
  // Result is re-indexed 0..rows.size()-1 so it stays aligned with
  // FeatureSet::subset on the same feature rows.
  std::vector<const Message*> by_row;
  for (const auto& [idx, cap] : pairs) {
    if (idx >= by_row.size()) by_row.resize(idx + 1, nullptr);
    by_row[idx] = &cap;
  }
  CaptionSet out;
  out.vocab_size = vocab_size;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= by_row.size() || by_row[rows[i]] == nullptr) {
      throw ContractError("no caption for feature row " + std::to_string(rows[i]));
    }
    out.pairs.emplace_back(i, *by_row[rows[i]]);
  }
  return out;
}

}  // namespace eclab::corpora
