#include "knowmri/model/tokenizer.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "knowmri/error.hpp"

namespace knowmri::model {
namespace {

enum class ByteClass { kLetter, kDigit, kSpace, kOther };

ByteClass classify(unsigned char c) {
  if ((c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c >= 0x80) return ByteClass::kLetter;
  if (c >= '0' && c <= '9') return ByteClass::kDigit;
  if (c == ' ') return ByteClass::kSpace;
  return ByteClass::kOther;
}

long long pack(int a, int b) { return static_cast<long long>(a) << 32 | static_cast<unsigned>(b); }

}  // namespace

Tokenizer::Tokenizer(int vocab_size, std::vector<Merge> merges)
    : vocab_size_(vocab_size), merges_(std::move(merges)) {
  require(vocab_size >= 2, ErrorCode::kInvalidArgument, "tokenizer vocab_size must be >= 2");
  const int n_bytes = vocab_size >= 256 ? 256 : vocab_size - 1;
  if (vocab_size < 256) {
    unk_id_ = vocab_size - 1;
    require(merges_.empty(), ErrorCode::kInvalidArgument,
            "merges require a vocabulary of at least 256 tokens");
  }
  require(static_cast<int>(merges_.size()) <= std::max(0, vocab_size - 256),
          ErrorCode::kInvalidArgument, "more merges than vocabulary slots");
  bytes_.reserve(vocab_size);
  for (int b = 0; b < n_bytes; ++b) bytes_.emplace_back(1, static_cast<char>(b));
  if (unk_id_ >= 0) bytes_.emplace_back("\xEF\xBF\xBD");
  for (const auto& [a, b] : merges_) {
    const int id = static_cast<int>(bytes_.size());
    require(a >= 0 && b >= 0 && a < id && b < id, ErrorCode::kInvalidArgument,
            "merge references an undefined token");
    rank_.emplace(pack(a, b), id);
    bytes_.push_back(bytes_[a] + bytes_[b]);
  }
  // Unused slots decode to nothing; they can still be produced by a model.
  while (static_cast<int>(bytes_.size()) < vocab_size) bytes_.emplace_back();
}

std::vector<std::pair<std::size_t, std::size_t>> Tokenizer::chunk(std::string_view text) {
  std::vector<std::pair<std::size_t, std::size_t>> chunks;
  std::size_t i = 0;
  const std::size_t n = text.size();
  while (i < n) {
    std::size_t start = i;
    auto cls = classify(static_cast<unsigned char>(text[i]));
    if (cls == ByteClass::kSpace && i + 1 < n &&
        classify(static_cast<unsigned char>(text[i + 1])) != ByteClass::kSpace) {
      ++i;
      cls = classify(static_cast<unsigned char>(text[i]));
    }
    if (cls == ByteClass::kLetter) {
      while (i < n && classify(static_cast<unsigned char>(text[i])) == ByteClass::kLetter) ++i;
    } else {
      ++i;
    }
    chunks.emplace_back(start, i);
  }
  return chunks;
}

void Tokenizer::encode_chunk(std::string_view text, std::size_t base, TokenSeq& out) const {
  struct Piece {
    int id;
    std::size_t begin, end;
  };
  std::vector<Piece> pieces;
  pieces.reserve(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    const int byte = static_cast<unsigned char>(text[i]);
    const int id = (unk_id_ >= 0 && byte >= unk_id_) ? unk_id_ : byte;
    pieces.push_back({id, i, i + 1});
  }
  while (pieces.size() > 1 && !rank_.empty()) {
    int best = -1;
    std::size_t best_at = 0;
    for (std::size_t i = 0; i + 1 < pieces.size(); ++i) {
      auto it = rank_.find(pack(pieces[i].id, pieces[i + 1].id));
      if (it != rank_.end() && (best < 0 || it->second < best)) {
        best = it->second;
        best_at = i;
      }
    }
    if (best < 0) break;
    pieces[best_at] = {best, pieces[best_at].begin, pieces[best_at + 1].end};
    pieces.erase(pieces.begin() + static_cast<std::ptrdiff_t>(best_at) + 1);
  }
  for (const auto& p : pieces) {
    out.ids.push_back(p.id);
    out.surface.emplace_back(text.substr(p.begin, p.end - p.begin));
    out.offsets.emplace_back(base + p.begin, base + p.end);
  }
}

TokenSeq Tokenizer::encode(std::string_view text) const {
  TokenSeq out;
  for (const auto& [b, e] : chunk(text)) encode_chunk(text.substr(b, e - b), b, out);
  return out;
}

std::string Tokenizer::decode(std::span<const int> ids) const {
  std::string out;
  for (int id : ids) out += token_bytes(id);
  return out;
}

const std::string& Tokenizer::token_bytes(int id) const {
  require(id >= 0 && id < vocab_size_, ErrorCode::kOutOfRange,
          "token id " + std::to_string(id) + " outside vocabulary");
  return bytes_[id];
}

Tokenizer Tokenizer::train(const std::vector<std::string>& corpus, int vocab_size) {
  require(vocab_size >= 256, ErrorCode::kInvalidArgument, "BPE training needs vocab_size >= 256");
  // Unique chunks with their frequencies; merges never cross chunk borders.
  std::map<std::string, long long> freq;
  for (const auto& line : corpus) {
    for (const auto& [b, e] : chunk(line)) ++freq[line.substr(b, e - b)];
  }
  std::vector<std::vector<int>> words;
  std::vector<long long> counts;
  for (const auto& [w, c] : freq) {
    std::vector<int> ids;
    for (unsigned char ch : w) ids.push_back(ch);
    words.push_back(std::move(ids));
    counts.push_back(c);
  }
  std::vector<Merge> merges;
  int next_id = 256;
  while (next_id < vocab_size) {
    std::map<Merge, long long> pairs;
    for (std::size_t w = 0; w < words.size(); ++w) {
      const auto& ids = words[w];
      for (std::size_t i = 0; i + 1 < ids.size(); ++i) pairs[{ids[i], ids[i + 1]}] += counts[w];
    }
    // Ties resolve to the lexicographically smallest pair (std::map order).
    auto best = pairs.end();
    for (auto it = pairs.begin(); it != pairs.end(); ++it) {
      if (best == pairs.end() || it->second > best->second) best = it;
    }
    if (best == pairs.end() || best->second < 2) break;
    const Merge m = best->first;
    merges.push_back(m);
    for (auto& ids : words) {
      std::vector<int> merged;
      merged.reserve(ids.size());
      for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i + 1 < ids.size() && ids[i] == m.first && ids[i + 1] == m.second) {
          merged.push_back(next_id);
          ++i;
        } else {
          merged.push_back(ids[i]);
        }
      }
      ids = std::move(merged);
    }
    ++next_id;
  }
  return Tokenizer(vocab_size, std::move(merges));
}

Tokenizer Tokenizer::load(const std::filesystem::path& path, int vocab_size) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open tokenizer file " + path.string());
  std::vector<Merge> merges;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string tag;
    int a = -1, b = -1;
    ls >> tag >> a >> b;
    require(tag == "merge" && !ls.fail(), ErrorCode::kValidation,
            path.string() + ":" + std::to_string(lineno) + ": malformed merge line");
    merges.emplace_back(a, b);
  }
  return Tokenizer(vocab_size, std::move(merges));
}

void Tokenizer::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot write tokenizer file " + path.string());
  out << "# byte-level BPE merges, rank order; token 256+i = merge i\n";
  for (const auto& [a, b] : merges_) out << "merge " << a << ' ' << b << '\n';
}

}  // namespace knowmri::model
