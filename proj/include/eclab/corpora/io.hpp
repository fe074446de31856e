#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "eclab/corpora/types.hpp"

// File formats:
//   corpus   UTF-8 text; optional "# key=value" header lines (vocab_size first),
//            then one message per line as space-separated decimal token ids.
//   vocab    UTF-8 text, one surface token per line; line number = id.
//   features binary "EMF1", u32 N, u32 D (little-endian), N*D f32 row-major.
namespace eclab::corpora {

std::string format_corpus(const Corpus& corpus);
// `vocab_size` overrides the header; without either it is inferred as max+1.
Corpus parse_corpus(const std::string& text, const std::string& source_name,
                    std::optional<int> vocab_size = std::nullopt);

void write_corpus(const Corpus& corpus, const std::filesystem::path& path);
Corpus read_corpus(const std::filesystem::path& path, std::optional<int> vocab_size = std::nullopt);

void write_vocab(const std::vector<std::string>& vocab, const std::filesystem::path& path);
std::vector<std::string> read_vocab(const std::filesystem::path& path);

void write_features(const FeatureSet& features, const std::filesystem::path& path);
FeatureSet read_features(const std::filesystem::path& path);

// Captions aligned to feature rows 0..N-1 are stored as a corpus file.
void write_captions(const CaptionSet& captions, const std::filesystem::path& path);
CaptionSet read_captions(const std::filesystem::path& path);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace eclab::corpora
