#pragma once

#include "knowmri/model/transformer.hpp"

namespace knowmri::model {

// Re-evaluates only the final position after replacing the MLP activations of
// one layer there. Earlier positions cannot see the change, so their cached
// keys and values from the clean pass stay valid and the result is exact.
// The clean state must outlive the probe and carry no interventions.
class LastTokenProbe {
 public:
  LastTokenProbe(const Transformer& model, const ForwardState& clean, int layer);

  const RowVec& clean_activation() const { return clean_act_; }

  // P(target) with the layer's last-token activations set to `act`; when
  // grad is given it receives dP/d(act).
  double eval(const RowVec& act, int target, RowVec* grad = nullptr) const;

 private:
  const Transformer& model_;
  const ForwardState& clean_;
  int layer_;
  int last_;
  RowVec resid_;  // residual stream entering the MLP of `layer_`
  RowVec clean_act_;
};

}  // namespace knowmri::model
