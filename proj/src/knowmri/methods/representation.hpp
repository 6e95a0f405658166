#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "knowmri/methods/results.hpp"
#include "knowmri/model/handle.hpp"

namespace knowmri::methods {

// Rows for l = 0..L: the last-position residual after l blocks, through the
// final norm and the output head.
LayerDecodeTable logit_lens(const model::ModelHandle& model, const std::string& prompt, int k = 5);

struct PatchscopeConfig {
  std::optional<std::string> target_prompt;  // default: identity scaffold
  std::optional<int> target_position;        // default: the scaffold placeholder
  int k = 5;
};

struct Scaffold {
  std::string text;
  int placeholder = 0;  // token index of the placeholder
};

// "a → a ; b → b ; ? →" built from word tokens of the vocabulary.
Scaffold identity_scaffold(const model::ModelHandle& model);

// Source layer l copies hidden[l] at the source's last token into the same
// site of the target prompt at target_position; row l lists the next-token
// distribution read there.
LayerDecodeTable patchscopes(const model::ModelHandle& model, const std::string& source_prompt,
                             const PatchscopeConfig& cfg = {});

struct SpineConfig {
  int hidden_dim = 64;
  double l1_weight = 0.05;
  int epochs = 200;
  double lr = 1e-2;
  std::uint64_t seed = 0;
  int top_k = 5;
  int report_dims = 8;
};

struct SpineFit {
  SparseCodeReport report;
  Mat codes;  // [n_tokens x hidden_dim]
};

// Non-negative sparse autoencoder over standardised embedding rows of
// `token_ids`. Dimensions in the report are ranked by the mean code of
// `focus_ids` when given, else by peak activation.
SpineFit spine_probe(const model::ModelHandle& model, const std::vector<int>& token_ids, const SpineConfig& cfg,
                     const std::vector<int>& focus_ids = {});

// Merged word-piece tokens, the default probing set.
std::vector<int> word_tokens(const model::ModelHandle& model);

}  // namespace knowmri::methods
