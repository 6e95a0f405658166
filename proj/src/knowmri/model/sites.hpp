#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace knowmri::model {

enum class SiteKind { kHiddenState, kAttnOutput, kMlpOutput, kMlpNeuron, kEmbedding };

const char* site_kind_name(SiteKind kind);
SiteKind parse_site_kind(const std::string& name);

// Addresses one activation. hidden_state(l) is the output of block l; the
// embedding site is the token+position sum and always uses layer 0.
struct SiteRef {
  SiteKind kind = SiteKind::kHiddenState;
  int layer = 0;
  int token = 0;
  std::optional<int> unit;

  static SiteRef hidden(int layer, int token) { return {SiteKind::kHiddenState, layer, token, {}}; }
  static SiteRef attn_output(int layer, int token) { return {SiteKind::kAttnOutput, layer, token, {}}; }
  static SiteRef mlp_output(int layer, int token) { return {SiteKind::kMlpOutput, layer, token, {}}; }
  static SiteRef neuron(int layer, int token, int unit) { return {SiteKind::kMlpNeuron, layer, token, unit}; }
  static SiteRef embedding(int token) { return {SiteKind::kEmbedding, 0, token, {}}; }

  bool is_scalar() const { return kind == SiteKind::kMlpNeuron; }
  std::string to_string() const;

  auto operator<=>(const SiteRef&) const = default;
};

struct SetValue {
  std::vector<double> value;
};
struct Scale {
  double factor = 1.0;
};
// Gaussian noise, drawn deterministically from the seed.
struct AddNoise {
  double std = 0.0;
  std::uint64_t seed = 0;
};

struct Intervention {
  SiteRef site;
  std::variant<SetValue, Scale, AddNoise> action;
};

}  // namespace knowmri::model
