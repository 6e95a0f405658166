#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace knowmri::model {

struct TokenSeq {
  std::vector<int> ids;
  std::vector<std::string> surface;
  // Byte spans [first, second) into the source string.
  std::vector<std::pair<std::size_t, std::size_t>> offsets;

  std::size_t size() const { return ids.size(); }
  bool empty() const { return ids.empty(); }
};

// Byte-level BPE. Ids 0..255 are raw bytes, ids from 256 are merges in rank
// order. A vocabulary smaller than 256 keeps bytes [0, V-1) and reserves
// V-1 as the unknown token.
class Tokenizer {
 public:
  using Merge = std::pair<int, int>;

  explicit Tokenizer(int vocab_size, std::vector<Merge> merges = {});

  // Learns vocab_size - 256 merges from the corpus.
  static Tokenizer train(const std::vector<std::string>& corpus, int vocab_size);

  static Tokenizer load(const std::filesystem::path& path, int vocab_size);
  void save(const std::filesystem::path& path) const;

  TokenSeq encode(std::string_view text) const;
  std::string decode(std::span<const int> ids) const;

  const std::string& token_bytes(int id) const;
  int vocab_size() const { return vocab_size_; }
  // -1 when every byte is representable.
  int unk_id() const { return unk_id_; }
  const std::vector<Merge>& merges() const { return merges_; }

  // Splits text into pre-tokenization chunks; a single leading space attaches
  // to the following word, digits always stand alone.
  static std::vector<std::pair<std::size_t, std::size_t>> chunk(std::string_view text);

 private:
  void encode_chunk(std::string_view text, std::size_t base, TokenSeq& out) const;

  int vocab_size_;
  int unk_id_ = -1;
  std::vector<Merge> merges_;
  std::vector<std::string> bytes_;
  std::unordered_map<long long, int> rank_;  // packed pair -> merged id
};

}  // namespace knowmri::model
