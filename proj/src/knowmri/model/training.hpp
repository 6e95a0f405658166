#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "knowmri/model/transformer.hpp"

namespace knowmri::model {

struct InitScales {
  double embedding = 0.02;
  double position = 0.01;
  double projection = 0.02;
  double output = 0.02;  // wo and w_down
};

// Gaussian initialisation with unit layer-norm gains.
Weights random_weights(const ModelSpec& spec, std::uint64_t seed, const InitScales& scales = {});

void set_zero(Weights& w);

// Next-token example: positions t >= loss_start are predicted from ids[0..t).
struct LmExample {
  std::vector<int> ids;
  int loss_start = 1;
};

struct LossStats {
  double loss_sum = 0.0;
  int count = 0;
};

// Adds d(sum of cross-entropies)/d(params) into grads.
LossStats accumulate_lm_gradients(const Transformer& model, const LmExample& ex, Weights& grads, double weight = 1.0);

// Cross-entropy without gradients.
LossStats lm_loss(const Transformer& model, const LmExample& ex);

// Element mask over all parameters: 1 = trainable, 0 = frozen.
using ParameterMask = std::vector<std::vector<unsigned char>>;

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  double grad_clip = 1.0;  // global norm; <= 0 disables
};

class Adam {
 public:
  Adam(const Weights& like, AdamConfig cfg = {});

  // Frozen elements are left bit-identical.
  void step(Weights& params, const Weights& grads, double lr, const ParameterMask* mask = nullptr);

 private:
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  long step_ = 0;
};

// FNV-1a over the raw bytes of every parameter element not marked trainable.
std::uint64_t frozen_checksum(const Weights& w, const ParameterMask* mask);

}  // namespace knowmri::model
