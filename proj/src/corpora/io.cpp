#include "eclab/corpora/io.hpp"

#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "eclab/errors.hpp"

namespace eclab::corpora {

namespace {

static_assert(std::endian::native == std::endian::little, "feature IO assumes a little-endian host");

constexpr char kFeatureMagic[4] = {'E', 'M', 'F', '1'};

std::string at_line(const std::string& source, std::size_t line) {
  return source + ":" + std::to_string(line);
}

}  // namespace

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

std::string format_corpus(const Corpus& corpus) {
  std::string out;
  out += "# vocab_size=" + std::to_string(corpus.vocab_size) + "\n";
  for (const auto& [k, v] : corpus.provenance.entries()) out += "# " + k + "=" + v + "\n";
  for (const auto& m : corpus.messages) {
    for (std::size_t i = 0; i < m.size(); ++i) {
      if (i) out += ' ';
      out += std::to_string(m[i]);
    }
    out += '\n';
  }
  return out;
}

Corpus parse_corpus(const std::string& text, const std::string& source_name, std::optional<int> vocab_size) {
  Corpus c;
  std::optional<int> header_vocab;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  bool in_header = true;
  std::vector<std::size_t> message_lines;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    std::string_view line(text.data() + pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (in_header && !line.empty() && line.front() == '#') {
      std::string_view body = line.substr(1);
      while (!body.empty() && body.front() == ' ') body.remove_prefix(1);
      const auto eq = body.find('=');
      if (eq == std::string_view::npos) continue;
      std::string key(body.substr(0, eq)), value(body.substr(eq + 1));
      if (key == "vocab_size") {
        int v = 0;
        auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
        if (ec != std::errc() || p != value.data() + value.size() || v <= 0) {
          throw ParseError(at_line(source_name, line_no), "bad vocab_size '" + value + "'");
        }
        header_vocab = v;
      } else {
        c.provenance.set(key, value);
      }
      continue;
    }
    in_header = false;
    Message m;
    std::size_t i = 0;
    while (i < line.size()) {
      if (line[i] == ' ' || line[i] == '\t') {
        ++i;
        continue;
      }
      long long v = 0;
      auto [p, ec] = std::from_chars(line.data() + i, line.data() + line.size(), v);
      if (ec != std::errc() || (p != line.data() + line.size() && *p != ' ' && *p != '\t')) {
        throw ParseError(at_line(source_name, line_no),
                         "expected a decimal token id at column " + std::to_string(i + 1));
      }
      if (v < 0 || v > INT32_MAX) {
        throw ParseError(at_line(source_name, line_no), "token " + std::to_string(v) + " out of range");
      }
      m.push_back(static_cast<int>(v));
      i = static_cast<std::size_t>(p - line.data());
    }
    c.messages.push_back(std::move(m));
    message_lines.push_back(line_no);
  }
  if (vocab_size) {
    c.vocab_size = *vocab_size;
  } else if (header_vocab) {
    c.vocab_size = *header_vocab;
  } else {
    int mx = -1;
    for (const auto& m : c.messages)
      for (int t : m) mx = std::max(mx, t);
    c.vocab_size = mx + 1;
    c.provenance.set("vocab_size_inferred", "true");
  }
  if (c.vocab_size <= 0) throw ParseError(source_name, "empty corpus without a vocab_size");
  for (std::size_t i = 0; i < c.messages.size(); ++i) {
    for (int t : c.messages[i]) {
      if (t >= c.vocab_size) {
        throw ParseError(at_line(source_name, message_lines[i]),
                         "token " + std::to_string(t) + " >= vocab_size " + std::to_string(c.vocab_size) +
                             " (line " + std::to_string(message_lines[i]) + ")");
      }
    }
  }
  return c;
}

void write_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  corpus.validate();
  write_text_file(path, format_corpus(corpus));
}

Corpus read_corpus(const std::filesystem::path& path, std::optional<int> vocab_size) {
  return parse_corpus(read_text_file(path), path.string(), vocab_size);
}

void write_vocab(const std::vector<std::string>& vocab, const std::filesystem::path& path) {
  std::string out;
  for (const auto& w : vocab) {
    if (w.find('\n') != std::string::npos) throw DataError("vocab entry contains a newline");
    out += w + "\n";
  }
  write_text_file(path, out);
}

std::vector<std::string> read_vocab(const std::filesystem::path& path) {
  std::string text = read_text_file(path);
  std::vector<std::string> vocab;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    vocab.push_back(line);
  }
  return vocab;
}

void write_features(const FeatureSet& features, const std::filesystem::path& path) {
  features.validate();
  if (features.n > UINT32_MAX || features.d > UINT32_MAX) throw DataError("feature set too large for EMF1");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  const std::uint32_t n = static_cast<std::uint32_t>(features.n), d = static_cast<std::uint32_t>(features.d);
  out.write(kFeatureMagic, 4);
  out.write(reinterpret_cast<const char*>(&n), 4);
  out.write(reinterpret_cast<const char*>(&d), 4);
  out.write(reinterpret_cast<const char*>(features.values.data()),
            static_cast<std::streamsize>(features.values.size() * sizeof(float)));
  if (!out) throw DataError("short write to " + path.string());
}

FeatureSet read_features(const std::filesystem::path& path) {
  const std::string bytes = read_text_file(path);
  const std::string name = path.string();
  if (bytes.size() < 12) throw ParseError(name + "@0", "truncated header (" + std::to_string(bytes.size()) + " bytes)");
  if (std::memcmp(bytes.data(), kFeatureMagic, 4) != 0) throw ParseError(name + "@0", "magic mismatch, expected EMF1");
  std::uint32_t n = 0, d = 0;
  std::memcpy(&n, bytes.data() + 4, 4);
  std::memcpy(&d, bytes.data() + 8, 4);
  const std::size_t expected = 12 + static_cast<std::size_t>(n) * d * sizeof(float);
  if (bytes.size() != expected) {
    throw ParseError(name + "@" + std::to_string(std::min(bytes.size(), expected)),
                     "payload holds " + std::to_string(bytes.size() - 12) + " bytes, header declares " +
                         std::to_string(expected - 12));
  }
  FeatureSet f;
  f.n = n;
  f.d = d;
  f.values.resize(static_cast<std::size_t>(n) * d);
  std::memcpy(f.values.data(), bytes.data() + 12, f.values.size() * sizeof(float));
  f.provenance.set("source", name);
  f.validate();
  return f;
}

void write_captions(const CaptionSet& captions, const std::filesystem::path& path) {
  Corpus c;
  c.vocab_size = captions.vocab_size;
  c.provenance.set("kind", "captions");
  for (std::size_t i = 0; i < captions.pairs.size(); ++i) {
    if (captions.pairs[i].first != i) throw DataError("captions must be aligned to feature rows 0..N-1 to be written");
    c.messages.push_back(captions.pairs[i].second);
  }
  write_corpus(c, path);
}

CaptionSet read_captions(const std::filesystem::path& path) {
  Corpus c = read_corpus(path);
  CaptionSet out;
  out.vocab_size = c.vocab_size;
  for (std::size_t i = 0; i < c.messages.size(); ++i) out.pairs.emplace_back(i, std::move(c.messages[i]));
  return out;
}

}  // namespace eclab::corpora
