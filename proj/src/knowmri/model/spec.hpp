#pragma once

#include <string>

namespace knowmri::model {

enum class LayerNormStyle { kPre, kPost };

const char* layernorm_style_name(LayerNormStyle style);
LayerNormStyle parse_layernorm_style(const std::string& name);

// Architecture descriptor for a decoder-only model.
struct ModelSpec {
  std::string model_id;
  int n_layers = 0;
  int hidden_dim = 0;
  int mlp_dim = 0;
  int n_heads = 0;
  int vocab_size = 0;
  int max_seq_len = 0;
  LayerNormStyle layernorm_style = LayerNormStyle::kPre;
  bool tied_embeddings = true;

  int head_dim() const { return hidden_dim / n_heads; }
  int total_neurons() const { return n_layers * mlp_dim; }

  // Throws kValidation when an invariant is broken.
  void validate() const;

  bool operator==(const ModelSpec&) const = default;
};

}  // namespace knowmri::model
