#include "knowmri/model/sites.hpp"

#include "knowmri/error.hpp"

namespace knowmri::model {

const char* site_kind_name(SiteKind kind) {
  switch (kind) {
    case SiteKind::kHiddenState: return "hidden_state";
    case SiteKind::kAttnOutput: return "attn_output";
    case SiteKind::kMlpOutput: return "mlp_output";
    case SiteKind::kMlpNeuron: return "mlp_neuron";
    case SiteKind::kEmbedding: return "embedding";
  }
  return "unknown";
}

SiteKind parse_site_kind(const std::string& name) {
  for (auto k : {SiteKind::kHiddenState, SiteKind::kAttnOutput, SiteKind::kMlpOutput, SiteKind::kMlpNeuron,
                 SiteKind::kEmbedding}) {
    if (name == site_kind_name(k)) return k;
  }
  fail(ErrorCode::kInvalidArgument, "unknown site kind '" + name + "'");
}

std::string SiteRef::to_string() const {
  std::string s = std::string(site_kind_name(kind)) + "(l=" + std::to_string(layer) + ",t=" + std::to_string(token);
  if (unit) s += ",u=" + std::to_string(*unit);
  return s + ")";
}

}  // namespace knowmri::model
