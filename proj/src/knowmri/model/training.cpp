#include "knowmri/model/training.hpp"

#include <cmath>
#include <cstring>
#include <random>

#include "knowmri/error.hpp"
#include "knowmri/model/handle.hpp"

namespace knowmri::model {
namespace {

Mat gaussian(Eigen::Index rows, Eigen::Index cols, double std, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std);
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

}  // namespace

Weights random_weights(const ModelSpec& spec, std::uint64_t seed, const InitScales& s) {
  spec.validate();
  std::mt19937_64 rng(seed);
  Weights w = Weights::zeros(spec);
  const int d = spec.hidden_dim, m = spec.mlp_dim;
  w.tok_emb = gaussian(spec.vocab_size, d, s.embedding, rng);
  w.pos_emb = gaussian(spec.max_seq_len, d, s.position, rng);
  if (!spec.tied_embeddings) w.lm_head = gaussian(spec.vocab_size, d, s.embedding, rng);
  w.lnf_g.setOnes();
  for (auto& b : w.blocks) {
    b.ln1_g.setOnes();
    b.ln2_g.setOnes();
    b.wq = gaussian(d, d, s.projection, rng);
    b.wk = gaussian(d, d, s.projection, rng);
    b.wv = gaussian(d, d, s.projection, rng);
    b.wo = gaussian(d, d, s.output, rng);
    b.w_up = gaussian(d, m, s.projection, rng);
    b.w_down = gaussian(m, d, s.output, rng);
  }
  return w;
}

void set_zero(Weights& w) {
  for (auto& t : w.tensors()) std::fill(t.data, t.data + t.size(), 0.0);
}

LossStats accumulate_lm_gradients(const Transformer& model, const LmExample& ex, Weights& grads, double weight) {
  const int T = static_cast<int>(ex.ids.size());
  require(T >= 2 && ex.loss_start >= 1 && ex.loss_start < T, ErrorCode::kInvalidArgument,
          "language-model example needs a target position");
  const std::span<const int> input(ex.ids.data(), static_cast<std::size_t>(T - 1));
  ForwardState st = model.forward(input, {});
  Mat dlogits = Mat::Zero(T - 1, model.spec().vocab_size);
  LossStats stats;
  for (int t = ex.loss_start; t < T; ++t) {
    const RowVec p = softmax(st.trace.logits.row(t - 1));
    const int y = ex.ids[t];
    stats.loss_sum -= std::log(std::max(p(y), 1e-300));
    ++stats.count;
    dlogits.row(t - 1) = weight * p;
    dlogits(t - 1, y) -= weight;
  }
  model.backward(st, dlogits, {.stop_layer = 0, .param_grads = &grads});
  return stats;
}

LossStats lm_loss(const Transformer& model, const LmExample& ex) {
  const int T = static_cast<int>(ex.ids.size());
  require(T >= 2 && ex.loss_start >= 1 && ex.loss_start < T, ErrorCode::kInvalidArgument,
          "language-model example needs a target position");
  const std::span<const int> input(ex.ids.data(), static_cast<std::size_t>(T - 1));
  const ForwardState st = model.forward(input, {});
  LossStats stats;
  for (int t = ex.loss_start; t < T; ++t) {
    const RowVec p = softmax(st.trace.logits.row(t - 1));
    stats.loss_sum -= std::log(std::max(p(ex.ids[t]), 1e-300));
    ++stats.count;
  }
  return stats;
}

Adam::Adam(const Weights& like, AdamConfig cfg) : cfg_(cfg) {
  for (const auto& t : like.tensors()) {
    m_.emplace_back(static_cast<std::size_t>(t.size()), 0.0);
    v_.emplace_back(static_cast<std::size_t>(t.size()), 0.0);
  }
}

void Adam::step(Weights& params, const Weights& grads, double lr, const ParameterMask* mask) {
  auto pv = params.tensors();
  const auto gv = grads.tensors();
  require(pv.size() == m_.size() && gv.size() == m_.size(), ErrorCode::kShapeMismatch,
          "optimizer state does not match parameters");
  double clip = 1.0;
  if (cfg_.grad_clip > 0.0) {
    double sq = 0.0;
    for (std::size_t i = 0; i < gv.size(); ++i) {
      for (Eigen::Index j = 0; j < gv[i].size(); ++j) {
        if (mask != nullptr && !(*mask)[i][static_cast<std::size_t>(j)]) continue;
        sq += gv[i].data[j] * gv[i].data[j];
      }
    }
    const double norm = std::sqrt(sq);
    if (norm > cfg_.grad_clip) clip = cfg_.grad_clip / norm;
  }
  ++step_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
  for (std::size_t i = 0; i < pv.size(); ++i) {
    auto& m = m_[i];
    auto& v = v_[i];
    for (Eigen::Index j = 0; j < pv[i].size(); ++j) {
      const auto k = static_cast<std::size_t>(j);
      if (mask != nullptr && !(*mask)[i][k]) continue;
      const double g = gv[i].data[j] * clip;
      m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g;
      v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g * g;
      double update = (m[k] / bc1) / (std::sqrt(v[k] / bc2) + cfg_.eps);
      if (cfg_.weight_decay > 0.0 && !pv[i].is_vector) update += cfg_.weight_decay * pv[i].data[j];
      pv[i].data[j] -= lr * update;
    }
  }
}

std::uint64_t frozen_checksum(const Weights& w, const ParameterMask* mask) {
  std::uint64_t h = 1469598103934665603ull;
  const auto views = w.tensors();
  for (std::size_t i = 0; i < views.size(); ++i) {
    for (Eigen::Index j = 0; j < views[i].size(); ++j) {
      if (mask != nullptr && (*mask)[i][static_cast<std::size_t>(j)]) continue;
      unsigned char bytes[sizeof(double)];
      std::memcpy(bytes, &views[i].data[j], sizeof(double));
      for (unsigned char b : bytes) {
        h ^= b;
        h *= 1099511628211ull;
      }
    }
  }
  return h;
}

}  // namespace knowmri::model
