#include "knowmri/model/spec.hpp"

#include "knowmri/error.hpp"

namespace knowmri::model {

const char* layernorm_style_name(LayerNormStyle style) {
  return style == LayerNormStyle::kPre ? "pre" : "post";
}

LayerNormStyle parse_layernorm_style(const std::string& name) {
  if (name == "pre") return LayerNormStyle::kPre;
  if (name == "post") return LayerNormStyle::kPost;
  fail(ErrorCode::kUnsupported, "unknown layernorm_style '" + name + "'");
}

void ModelSpec::validate() const {
  auto check = [](bool ok, const std::string& msg) {
    require(ok, ErrorCode::kValidation, "model spec: " + msg);
  };
  check(n_layers >= 1, "n_layers must be >= 1");
  check(hidden_dim >= 1 && n_heads >= 1, "hidden_dim and n_heads must be positive");
  check(hidden_dim % n_heads == 0, "hidden_dim must be divisible by n_heads");
  check(mlp_dim >= hidden_dim, "mlp_dim must be >= hidden_dim");
  check(vocab_size >= 2, "vocab_size must be >= 2");
  check(max_seq_len >= 1, "max_seq_len must be >= 1");
}

}  // namespace knowmri::model
