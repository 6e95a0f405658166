#include "knowmri/model/last_token.hpp"

#include <cmath>
#include <vector>

#include "knowmri/error.hpp"
#include "knowmri/model/handle.hpp"

namespace knowmri::model {
namespace {

struct RowNorm {
  RowVec xhat;
  double rstd = 0.0;
};

RowVec norm_row(const RowVec& x, const RowVec& g, const RowVec& b, RowNorm& cache) {
  const double d = static_cast<double>(x.size());
  const double mu = x.sum() / d;
  const double var = (x.array() - mu).square().sum() / d;
  cache.rstd = 1.0 / std::sqrt(var + Transformer::kLayerNormEps);
  cache.xhat = (x.array() - mu) * cache.rstd;
  return cache.xhat.cwiseProduct(g) + b;
}

RowVec norm_row_back(const RowVec& dy, const RowVec& g, const RowNorm& cache) {
  const double d = static_cast<double>(dy.size());
  const RowVec dxhat = dy.cwiseProduct(g);
  const double m1 = dxhat.sum() / d;
  const double m2 = dxhat.dot(cache.xhat) / d;
  return cache.rstd * (dxhat.array() - m1 - cache.xhat.array() * m2);
}

struct BlockRow {
  RowNorm n1, n2;
  RowVec q, k, v, ctx, pre;
  std::vector<RowVec> p;  // per head, over all T keys
};

}  // namespace

LastTokenProbe::LastTokenProbe(const Transformer& model, const ForwardState& clean, int layer)
    : model_(model), clean_(clean), layer_(layer) {
  const auto& spec = model.spec();
  require(layer >= 0 && layer < spec.n_layers, ErrorCode::kOutOfRange, "probe layer out of range");
  require(clean.interventions.empty(), ErrorCode::kInvalidArgument, "probe needs a clean forward state");
  last_ = static_cast<int>(clean.ids.size()) - 1;
  resid_ = clean.trace.hidden[layer].row(last_) + clean.trace.attn_out[layer].row(last_);
  clean_act_ = clean.trace.mlp_act[layer].row(last_);
}

double LastTokenProbe::eval(const RowVec& act, int target, RowVec* grad) const {
  const auto& spec = model_.spec();
  const auto& w = model_.weights();
  require(act.size() == spec.mlp_dim, ErrorCode::kShapeMismatch, "activation row has the wrong size");
  const int L = spec.n_layers, H = spec.n_heads, dh = spec.head_dim(), T = last_ + 1;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  const auto& b0 = w.blocks[layer_];
  RowVec x = resid_ + act * b0.w_down + b0.b_down;
  std::vector<BlockRow> rows(L);
  for (int l = layer_ + 1; l < L; ++l) {
    const auto& bw = w.blocks[l];
    const auto& c = clean_.layers[l];
    auto& r = rows[l];
    const RowVec a = norm_row(x, bw.ln1_g, bw.ln1_b, r.n1);
    r.q = a * bw.wq;
    r.k = a * bw.wk;
    r.v = a * bw.wv;
    r.ctx.resize(spec.hidden_dim);
    r.p.resize(H);
    for (int h = 0; h < H; ++h) {
      const auto qh = r.q.segment(h * dh, dh);
      RowVec s(T);
      for (int j = 0; j < last_; ++j) s(j) = qh.dot(c.k.row(j).segment(h * dh, dh)) * scale;
      s(last_) = qh.dot(r.k.segment(h * dh, dh)) * scale;
      s = (s.array() - s.maxCoeff()).exp();
      s /= s.sum();
      RowVec ctx = s(last_) * r.v.segment(h * dh, dh);
      for (int j = 0; j < last_; ++j) ctx += s(j) * c.v.row(j).segment(h * dh, dh);
      r.ctx.segment(h * dh, dh) = ctx;
      r.p[h] = std::move(s);
    }
    x += r.ctx * bw.wo;
    const RowVec b = norm_row(x, bw.ln2_g, bw.ln2_b, r.n2);
    r.pre = b * bw.w_up + bw.b_up;
    x += r.pre.unaryExpr([](double v) { return gelu(v); }) * bw.w_down + bw.b_down;
  }
  RowNorm nf;
  const RowVec f = norm_row(x, w.lnf_g, w.lnf_b, nf);
  const RowVec p = softmax(f * w.unembedding().transpose());
  const double pt = p(target);
  if (grad == nullptr) return pt;

  RowVec dlogits = -pt * p;
  dlogits(target) += pt;
  RowVec dx = norm_row_back(dlogits * w.unembedding(), w.lnf_g, nf);
  for (int l = L - 1; l > layer_; --l) {
    const auto& bw = w.blocks[l];
    const auto& c = clean_.layers[l];
    const auto& r = rows[l];
    const RowVec dpre = (dx * bw.w_down.transpose()).cwiseProduct(r.pre.unaryExpr([](double v) { return gelu_grad(v); }));
    dx += norm_row_back(dpre * bw.w_up.transpose(), bw.ln2_g, r.n2);
    const RowVec dctx = dx * bw.wo.transpose();
    RowVec dq(spec.hidden_dim), dk(spec.hidden_dim), dv(spec.hidden_dim);
    for (int h = 0; h < H; ++h) {
      const auto g = dctx.segment(h * dh, dh);
      const RowVec& s = r.p[h];
      RowVec dp(T);
      for (int j = 0; j < last_; ++j) dp(j) = g.dot(c.v.row(j).segment(h * dh, dh));
      dp(last_) = g.dot(r.v.segment(h * dh, dh));
      const double mean = s.dot(dp);
      const RowVec ds = (s.array() * (dp.array() - mean)).matrix() * scale;
      RowVec dqh = ds(last_) * r.k.segment(h * dh, dh);
      for (int j = 0; j < last_; ++j) dqh += ds(j) * c.k.row(j).segment(h * dh, dh);
      dq.segment(h * dh, dh) = dqh;
      dk.segment(h * dh, dh) = ds(last_) * r.q.segment(h * dh, dh);
      dv.segment(h * dh, dh) = s(last_) * g;
    }
    const RowVec da = dq * bw.wq.transpose() + dk * bw.wk.transpose() + dv * bw.wv.transpose();
    dx += norm_row_back(da, bw.ln1_g, r.n1);
  }
  *grad = dx * b0.w_down.transpose();
  return pt;
}

}  // namespace knowmri::model
