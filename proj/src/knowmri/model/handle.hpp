#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "knowmri/model/checkpoint.hpp"
#include "knowmri/model/sites.hpp"
#include "knowmri/model/tokenizer.hpp"
#include "knowmri/model/transformer.hpp"

namespace knowmri::model {

struct SiteGrad {
  SiteRef site;
  RowVec grad;  // length 1 for neuron sites, hidden_dim otherwise
};

struct GradResult {
  int target_token = 0;
  double probability = 0.0;  // P(target) at the final position
  std::vector<SiteGrad> site_grads;
};

struct Decoding {
  enum class Kind { kGreedy, kTopK } kind = Kind::kGreedy;
  int k = 1;
  std::uint64_t seed = 0;

  static Decoding greedy() { return {}; }
  static Decoding top_k(int k, std::uint64_t seed) { return {Kind::kTopK, k, seed}; }
};

// Instrumented access to one model. A handle is exclusive: callers serialize
// operations on it, and use clone() to work on several threads.
class ModelHandle {
 public:
  ModelHandle(Transformer transformer, Tokenizer tokenizer, Metadata meta = {});

  static ModelHandle load(const std::filesystem::path& checkpoint_dir);

  ModelHandle(ModelHandle&&) noexcept = default;
  ModelHandle& operator=(ModelHandle&&) noexcept = default;
  ModelHandle(const ModelHandle&) = delete;
  ModelHandle& operator=(const ModelHandle&) = delete;

  ModelHandle clone() const;
  void save(const std::filesystem::path& dir) const;

  const ModelSpec& spec() const { return transformer_.spec(); }
  const Tokenizer& tokenizer() const { return tokenizer_; }
  const Metadata& metadata() const { return meta_; }
  const Transformer& transformer() const { return transformer_; }
  Transformer& mutable_transformer() { return transformer_; }
  const Weights& weights() const { return transformer_.weights(); }

  TokenSeq tokenize(std::string_view text) const;
  std::string detokenize(std::span<const int> ids) const;
  // Tokens of `continuation` as it follows `prompt`: a separating space is
  // inserted unless either side already supplies whitespace.
  std::vector<int> continuation_ids(std::string_view prompt, std::string_view continuation) const;

  ForwardTrace forward_trace(std::span<const int> ids, std::span<const Intervention> interventions = {}) const;

  // d P(target at the next position) / d site, for each requested site.
  GradResult grad_wrt_sites(std::span<const int> ids, int target_token, std::span<const SiteRef> sites,
                            std::span<const Intervention> interventions = {}) const;

  RowVec apply_unembedding(const RowVec& vec, bool apply_final_norm) const;

  // Returns the prompt followed by max_new generated ids.
  std::vector<int> generate(std::span<const int> ids, int max_new, const Decoding& decoding = {}) const;

 private:
  Transformer transformer_;
  Tokenizer tokenizer_;
  Metadata meta_;
};

RowVec softmax(const RowVec& logits);

// Softmax of the final-position logits.
RowVec next_token_distribution(const ForwardTrace& trace);

// Indices of the k largest entries; ties broken by ascending index.
std::vector<int> top_k_indices(const RowVec& values, int k);

}  // namespace knowmri::model
