#pragma once

#include <cstdint>
#include <string>

#include "knowmri/model/handle.hpp"

namespace knowmri::model {

// A weak random decoder with one hand-set MLP neuron: its key fires when the
// last token is `trigger_token`, its value vector is alpha * E[target_token].
struct PlantedConfig {
  ModelSpec spec;
  int layer = 2;
  int unit = 7;
  int trigger_token = 0;
  int target_token = 0;
  std::uint64_t seed = 1;
  double alpha = 1.0;
  double key_gain = 16.0;  // key norm is key_gain / sqrt(d)
  std::string probe_text;  // context used to fit the key; must end in the trigger token
};

ModelSpec planted_default_spec(int vocab_size);

ModelHandle build_planted_model(const PlantedConfig& cfg, Tokenizer tokenizer);

struct PlantedInfo {
  int layer, unit, trigger_token, target_token;
};

// Reads the planted coordinates back from checkpoint metadata.
PlantedInfo planted_info(const ModelHandle& model);

}  // namespace knowmri::model
