#pragma once

#include <span>
#include <string>
#include <vector>

#include "knowmri/linalg.hpp"
#include "knowmri/model/sites.hpp"
#include "knowmri/model/spec.hpp"

namespace knowmri::model {

// Weight layout uses the x * W convention: projections are [in x out].
// The value vector of neuron j in layer l is row j of w_down; its key is
// column j of w_up.
struct BlockWeights {
  RowVec ln1_g, ln1_b;
  Mat wq, wk, wv, wo;
  RowVec ln2_g, ln2_b;
  Mat w_up;
  RowVec b_up;
  Mat w_down;
  RowVec b_down;
};

struct TensorView {
  std::string name;
  double* data;
  Eigen::Index rows;
  Eigen::Index cols;
  bool is_vector;

  Eigen::Index size() const { return rows * cols; }
};

struct Weights {
  Mat tok_emb;
  Mat pos_emb;
  Mat lm_head;  // empty when embeddings are tied
  RowVec lnf_g, lnf_b;
  std::vector<BlockWeights> blocks;

  static Weights zeros(const ModelSpec& spec);

  const Mat& unembedding() const { return lm_head.size() > 0 ? lm_head : tok_emb; }

  // Every parameter tensor in a fixed order with its checkpoint name.
  std::vector<TensorView> tensors();
  std::vector<TensorView> tensors() const;
};

struct ForwardTrace {
  std::vector<Mat> hidden;                 // [L+1] x [T x d]
  std::vector<std::vector<Mat>> attn;      // [L][H] x [T x T]
  std::vector<Mat> mlp_act;                // [L] x [T x m], post-nonlinearity
  std::vector<Mat> attn_out;               // [L] x [T x d]
  std::vector<Mat> mlp_out;                // [L] x [T x d]
  Mat logits;                              // [T x V]

  int length() const { return static_cast<int>(logits.rows()); }
};

// Forward activations kept for the backward pass.
struct ForwardState {
  struct LayerCache {
    Mat ln1_xhat, a, q, k, v, ctx, ln2_xhat, b, pre;
    Vec ln1_rstd, ln2_rstd;
  };
  std::vector<int> ids;
  std::vector<Intervention> interventions;
  std::vector<LayerCache> layers;
  Mat lnf_xhat, f;
  Vec lnf_rstd;
  ForwardTrace trace;
};

struct SiteGradients {
  std::vector<Mat> d_hidden;    // [L+1]; entry 0 is the embedding site
  std::vector<Mat> d_attn_out;  // [L]
  std::vector<Mat> d_mlp_out;   // [L]
  std::vector<Mat> d_mlp_act;   // [L]
  int lowest_layer = 0;         // blocks below this were not visited
};

struct BackwardOptions {
  // Lowest block to visit; gradients below are left empty. Parameter
  // gradients force a full pass.
  int stop_layer = 0;
  Weights* param_grads = nullptr;
};

class Transformer {
 public:
  static constexpr double kLayerNormEps = 1e-5;

  Transformer(ModelSpec spec, Weights weights);

  const ModelSpec& spec() const { return spec_; }
  const Weights& weights() const { return weights_; }
  Weights& mutable_weights() { return weights_; }

  void validate_site(const SiteRef& site, int seq_len) const;
  void validate_intervention(const Intervention& iv, int seq_len) const;

  ForwardState forward(std::span<const int> ids, std::span<const Intervention> interventions) const;

  // Propagates d(objective)/d(logits) back through the recorded pass.
  SiteGradients backward(const ForwardState& state, const Mat& dlogits,
                         const BackwardOptions& options = {}) const;

  // Output head on a single residual vector, optionally after the final norm.
  RowVec unembed(const RowVec& vec, bool apply_final_norm) const;

 private:
  ModelSpec spec_;
  Weights weights_;
};

double gelu(double x);
double gelu_grad(double x);

// Site value as a row vector (length 1 for neuron sites).
RowVec read_site(const ForwardTrace& trace, const SiteRef& site);
RowVec read_site_grad(const SiteGradients& grads, const SiteRef& site);

}  // namespace knowmri::model
