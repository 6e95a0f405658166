#include "knowmri/model/transformer.hpp"

#include <cmath>
#include <limits>
#include <random>

#include "knowmri/error.hpp"

namespace knowmri::model {
namespace {

constexpr double kSqrt2OverPi = 0.7978845608028654;
constexpr double kGeluCoef = 0.044715;

void layer_norm_forward(const Mat& x, const RowVec& g, const RowVec& b, Mat& xhat, Vec& rstd, Mat& y) {
  const auto T = x.rows();
  const double d = static_cast<double>(x.cols());
  xhat.resize(T, x.cols());
  rstd.resize(T);
  for (Eigen::Index t = 0; t < T; ++t) {
    const double mu = x.row(t).sum() / d;
    const double var = (x.row(t).array() - mu).square().sum() / d;
    rstd(t) = 1.0 / std::sqrt(var + Transformer::kLayerNormEps);
    xhat.row(t) = (x.row(t).array() - mu) * rstd(t);
  }
  y = (xhat.array().rowwise() * g.array()).rowwise() + b.array();
}

// Returns d(input); accumulates gain/bias gradients when requested.
Mat layer_norm_backward(const Mat& dy, const Mat& xhat, const Vec& rstd, const RowVec& g, RowVec* dg,
                        RowVec* db) {
  if (dg != nullptr) {
    *dg += (dy.array() * xhat.array()).colwise().sum().matrix();
    *db += dy.colwise().sum();
  }
  const Mat dxhat = dy.array().rowwise() * g.array();
  const double d = static_cast<double>(dy.cols());
  Mat dx(dy.rows(), dy.cols());
  for (Eigen::Index t = 0; t < dy.rows(); ++t) {
    const double mean_dxhat = dxhat.row(t).sum() / d;
    const double mean_dxhat_xhat = dxhat.row(t).dot(xhat.row(t)) / d;
    dx.row(t) = rstd(t) * (dxhat.row(t).array() - mean_dxhat - xhat.row(t).array() * mean_dxhat_xhat);
  }
  return dx;
}

RowVec noise_vector(const AddNoise& noise, Eigen::Index n) {
  RowVec out(n);
  std::mt19937_64 rng(noise.seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  for (Eigen::Index i = 0; i < n; ++i) out(i) = noise.std * dist(rng);
  return out;
}

bool targets(const Intervention& iv, SiteKind kind, int layer) {
  return iv.site.kind == kind && (kind == SiteKind::kEmbedding || iv.site.layer == layer);
}

void apply_forward(std::span<const Intervention> ivs, SiteKind kind, int layer, Mat& m) {
  for (const auto& iv : ivs) {
    if (!targets(iv, kind, layer)) continue;
    const int t = iv.site.token;
    if (kind == SiteKind::kMlpNeuron) {
      double& cell = m(t, *iv.site.unit);
      if (auto* set = std::get_if<SetValue>(&iv.action)) {
        cell = set->value[0];
      } else if (auto* sc = std::get_if<Scale>(&iv.action)) {
        cell *= sc->factor;
      } else {
        cell += noise_vector(std::get<AddNoise>(iv.action), 1)(0);
      }
      continue;
    }
    if (auto* set = std::get_if<SetValue>(&iv.action)) {
      m.row(t) = Eigen::Map<const RowVec>(set->value.data(), static_cast<Eigen::Index>(set->value.size()));
    } else if (auto* sc = std::get_if<Scale>(&iv.action)) {
      m.row(t) *= sc->factor;
    } else {
      m.row(t) += noise_vector(std::get<AddNoise>(iv.action), m.cols());
    }
  }
}

// Maps the gradient w.r.t. a site's post-intervention value back to its
// pre-intervention value: set_value cuts the path, scale rescales it.
void apply_backward(std::span<const Intervention> ivs, SiteKind kind, int layer, Mat& dm) {
  for (auto it = ivs.rbegin(); it != ivs.rend(); ++it) {
    const auto& iv = *it;
    if (!targets(iv, kind, layer)) continue;
    const int t = iv.site.token;
    if (kind == SiteKind::kMlpNeuron) {
      double& cell = dm(t, *iv.site.unit);
      if (std::holds_alternative<SetValue>(iv.action)) cell = 0.0;
      else if (auto* sc = std::get_if<Scale>(&iv.action)) cell *= sc->factor;
      continue;
    }
    if (std::holds_alternative<SetValue>(iv.action)) dm.row(t).setZero();
    else if (auto* sc = std::get_if<Scale>(&iv.action)) dm.row(t) *= sc->factor;
  }
}

}  // namespace

double gelu(double x) {
  return 0.5 * x * (1.0 + std::tanh(kSqrt2OverPi * (x + kGeluCoef * x * x * x)));
}

double gelu_grad(double x) {
  const double u = kSqrt2OverPi * (x + kGeluCoef * x * x * x);
  const double th = std::tanh(u);
  const double du = kSqrt2OverPi * (1.0 + 3.0 * kGeluCoef * x * x);
  return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du;
}

Weights Weights::zeros(const ModelSpec& spec) {
  const int d = spec.hidden_dim, m = spec.mlp_dim;
  Weights w;
  w.tok_emb = Mat::Zero(spec.vocab_size, d);
  w.pos_emb = Mat::Zero(spec.max_seq_len, d);
  if (!spec.tied_embeddings) w.lm_head = Mat::Zero(spec.vocab_size, d);
  w.lnf_g = RowVec::Zero(d);
  w.lnf_b = RowVec::Zero(d);
  w.blocks.resize(spec.n_layers);
  for (auto& b : w.blocks) {
    b.ln1_g = RowVec::Zero(d);
    b.ln1_b = RowVec::Zero(d);
    b.wq = Mat::Zero(d, d);
    b.wk = Mat::Zero(d, d);
    b.wv = Mat::Zero(d, d);
    b.wo = Mat::Zero(d, d);
    b.ln2_g = RowVec::Zero(d);
    b.ln2_b = RowVec::Zero(d);
    b.w_up = Mat::Zero(d, m);
    b.b_up = RowVec::Zero(m);
    b.w_down = Mat::Zero(m, d);
    b.b_down = RowVec::Zero(d);
  }
  return w;
}

std::vector<TensorView> Weights::tensors() {
  std::vector<TensorView> out;
  auto mat = [&out](const std::string& name, Mat& m) {
    out.push_back({name, m.data(), m.rows(), m.cols(), false});
  };
  auto vec = [&out](const std::string& name, RowVec& v) {
    out.push_back({name, v.data(), 1, v.size(), true});
  };
  mat("tok_emb", tok_emb);
  mat("pos_emb", pos_emb);
  if (lm_head.size() > 0) mat("lm_head", lm_head);
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    auto& b = blocks[l];
    const std::string p = "blocks." + std::to_string(l) + ".";
    vec(p + "ln1.g", b.ln1_g);
    vec(p + "ln1.b", b.ln1_b);
    mat(p + "attn.wq", b.wq);
    mat(p + "attn.wk", b.wk);
    mat(p + "attn.wv", b.wv);
    mat(p + "attn.wo", b.wo);
    vec(p + "ln2.g", b.ln2_g);
    vec(p + "ln2.b", b.ln2_b);
    mat(p + "mlp.w_up", b.w_up);
    vec(p + "mlp.b_up", b.b_up);
    mat(p + "mlp.w_down", b.w_down);
    vec(p + "mlp.b_down", b.b_down);
  }
  vec("lnf.g", lnf_g);
  vec("lnf.b", lnf_b);
  return out;
}

std::vector<TensorView> Weights::tensors() const {
  return const_cast<Weights*>(this)->tensors();
}

Transformer::Transformer(ModelSpec spec, Weights weights) : spec_(std::move(spec)), weights_(std::move(weights)) {
  spec_.validate();
  require(spec_.layernorm_style == LayerNormStyle::kPre, ErrorCode::kUnsupported,
          "layernorm_style 'post' is not supported by this backend");
  require(static_cast<int>(weights_.blocks.size()) == spec_.n_layers, ErrorCode::kShapeMismatch,
          "weights have a different number of blocks than the spec");
  require(weights_.tok_emb.rows() == spec_.vocab_size && weights_.tok_emb.cols() == spec_.hidden_dim,
          ErrorCode::kShapeMismatch, "tok_emb shape does not match spec");
  require(spec_.tied_embeddings == (weights_.lm_head.size() == 0), ErrorCode::kShapeMismatch,
          "lm_head presence does not match tied_embeddings");
}

void Transformer::validate_site(const SiteRef& site, int seq_len) const {
  const std::string where = "site " + site.to_string();
  require(site.layer >= 0 && site.layer < spec_.n_layers, ErrorCode::kOutOfRange, where + ": layer out of range");
  require(site.kind != SiteKind::kEmbedding || site.layer == 0, ErrorCode::kOutOfRange,
          where + ": embedding sites use layer 0");
  require(site.token >= 0 && site.token < seq_len, ErrorCode::kOutOfRange, where + ": token out of range");
  require(site.unit.has_value() == (site.kind == SiteKind::kMlpNeuron), ErrorCode::kInvalidArgument,
          where + ": unit is required exactly for mlp_neuron sites");
  if (site.unit) {
    require(*site.unit >= 0 && *site.unit < spec_.mlp_dim, ErrorCode::kOutOfRange, where + ": unit out of range");
  }
}

void Transformer::validate_intervention(const Intervention& iv, int seq_len) const {
  validate_site(iv.site, seq_len);
  if (auto* set = std::get_if<SetValue>(&iv.action)) {
    const std::size_t want = iv.site.is_scalar() ? 1 : static_cast<std::size_t>(spec_.hidden_dim);
    require(set->value.size() == want, ErrorCode::kShapeMismatch,
            "set_value on " + iv.site.to_string() + " needs " + std::to_string(want) + " values");
  } else if (auto* noise = std::get_if<AddNoise>(&iv.action)) {
    require(noise->std >= 0.0, ErrorCode::kInvalidArgument, "noise std must be >= 0");
  }
}

ForwardState Transformer::forward(std::span<const int> ids, std::span<const Intervention> interventions) const {
  const int T = static_cast<int>(ids.size());
  require(T >= 1, ErrorCode::kInvalidArgument, "forward needs at least one token");
  require(T <= spec_.max_seq_len, ErrorCode::kOutOfRange,
          "sequence of " + std::to_string(T) + " tokens exceeds max_seq_len " + std::to_string(spec_.max_seq_len));
  for (int id : ids) {
    require(id >= 0 && id < spec_.vocab_size, ErrorCode::kOutOfRange, "token id " + std::to_string(id) + " out of range");
  }
  for (const auto& iv : interventions) validate_intervention(iv, T);

  const int L = spec_.n_layers, H = spec_.n_heads, dh = spec_.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const auto& w = weights_;

  ForwardState st;
  st.ids.assign(ids.begin(), ids.end());
  st.interventions.assign(interventions.begin(), interventions.end());
  st.layers.resize(L);
  auto& tr = st.trace;
  tr.attn.resize(L);
  tr.mlp_act.resize(L);
  tr.attn_out.resize(L);
  tr.mlp_out.resize(L);

  Mat x(T, spec_.hidden_dim);
  for (int t = 0; t < T; ++t) x.row(t) = w.tok_emb.row(ids[t]) + w.pos_emb.row(t);
  apply_forward(interventions, SiteKind::kEmbedding, 0, x);
  tr.hidden.push_back(x);

  for (int l = 0; l < L; ++l) {
    const auto& bw = w.blocks[l];
    auto& c = st.layers[l];
    layer_norm_forward(x, bw.ln1_g, bw.ln1_b, c.ln1_xhat, c.ln1_rstd, c.a);
    c.q.noalias() = c.a * bw.wq;
    c.k.noalias() = c.a * bw.wk;
    c.v.noalias() = c.a * bw.wv;
    c.ctx.resize(T, spec_.hidden_dim);
    tr.attn[l].resize(H);
    for (int h = 0; h < H; ++h) {
      Mat s = (c.q.middleCols(h * dh, dh) * c.k.middleCols(h * dh, dh).transpose()) * scale;
      Mat& p = tr.attn[l][h];
      p = Mat::Zero(T, T);
      for (int i = 0; i < T; ++i) {
        const double mx = s.row(i).head(i + 1).maxCoeff();
        double sum = 0.0;
        for (int j = 0; j <= i; ++j) {
          p(i, j) = std::exp(s(i, j) - mx);
          sum += p(i, j);
        }
        p.row(i).head(i + 1) /= sum;
      }
      c.ctx.middleCols(h * dh, dh).noalias() = p * c.v.middleCols(h * dh, dh);
    }
    Mat ao = c.ctx * bw.wo;
    apply_forward(interventions, SiteKind::kAttnOutput, l, ao);
    x += ao;
    tr.attn_out[l] = std::move(ao);

    layer_norm_forward(x, bw.ln2_g, bw.ln2_b, c.ln2_xhat, c.ln2_rstd, c.b);
    c.pre.noalias() = c.b * bw.w_up;
    c.pre.rowwise() += bw.b_up;
    Mat act = c.pre.unaryExpr([](double v) { return gelu(v); });
    apply_forward(interventions, SiteKind::kMlpNeuron, l, act);
    Mat mo = act * bw.w_down;
    mo.rowwise() += bw.b_down;
    apply_forward(interventions, SiteKind::kMlpOutput, l, mo);
    x += mo;
    apply_forward(interventions, SiteKind::kHiddenState, l, x);
    tr.mlp_act[l] = std::move(act);
    tr.mlp_out[l] = std::move(mo);
    tr.hidden.push_back(x);
  }

  layer_norm_forward(x, w.lnf_g, w.lnf_b, st.lnf_xhat, st.lnf_rstd, st.f);
  tr.logits.noalias() = st.f * w.unembedding().transpose();
  return st;
}

SiteGradients Transformer::backward(const ForwardState& st, const Mat& dlogits, const BackwardOptions& opt) const {
  const int L = spec_.n_layers, H = spec_.n_heads, dh = spec_.head_dim();
  const int T = static_cast<int>(st.ids.size());
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  require(dlogits.rows() == T && dlogits.cols() == spec_.vocab_size, ErrorCode::kShapeMismatch,
          "dlogits shape does not match the forward pass");
  const auto& w = weights_;
  const auto& ivs = st.interventions;
  Weights* g = opt.param_grads;
  const int stop = g != nullptr ? 0 : std::clamp(opt.stop_layer, 0, L - 1);

  SiteGradients out;
  out.d_hidden.resize(L + 1);
  out.d_attn_out.resize(L);
  out.d_mlp_out.resize(L);
  out.d_mlp_act.resize(L);
  out.lowest_layer = stop;

  Mat df = dlogits * w.unembedding();
  if (g != nullptr) {
    Mat& head = g->lm_head.size() > 0 ? g->lm_head : g->tok_emb;
    head.noalias() += dlogits.transpose() * st.f;
  }
  Mat dx = layer_norm_backward(df, st.lnf_xhat, st.lnf_rstd, w.lnf_g, g ? &g->lnf_g : nullptr,
                               g ? &g->lnf_b : nullptr);

  for (int l = L - 1; l >= stop; --l) {
    const auto& bw = w.blocks[l];
    const auto& c = st.layers[l];
    BlockWeights* gb = g != nullptr ? &g->blocks[l] : nullptr;

    out.d_hidden[l + 1] = dx;
    apply_backward(ivs, SiteKind::kHiddenState, l, dx);

    Mat dmo = dx;
    out.d_mlp_out[l] = dmo;
    apply_backward(ivs, SiteKind::kMlpOutput, l, dmo);
    const Mat& act = st.trace.mlp_act[l];
    if (gb != nullptr) {
      gb->w_down.noalias() += act.transpose() * dmo;
      gb->b_down += dmo.colwise().sum();
    }
    Mat dact = dmo * bw.w_down.transpose();
    out.d_mlp_act[l] = dact;
    apply_backward(ivs, SiteKind::kMlpNeuron, l, dact);
    Mat dpre = dact.array() * c.pre.unaryExpr([](double v) { return gelu_grad(v); }).array();
    if (gb != nullptr) {
      gb->w_up.noalias() += c.b.transpose() * dpre;
      gb->b_up += dpre.colwise().sum();
    }
    const Mat db = dpre * bw.w_up.transpose();
    dx += layer_norm_backward(db, c.ln2_xhat, c.ln2_rstd, bw.ln2_g, gb ? &gb->ln2_g : nullptr,
                              gb ? &gb->ln2_b : nullptr);

    Mat dao = dx;
    out.d_attn_out[l] = dao;
    apply_backward(ivs, SiteKind::kAttnOutput, l, dao);
    if (gb != nullptr) gb->wo.noalias() += c.ctx.transpose() * dao;
    const Mat dctx = dao * bw.wo.transpose();
    Mat dq(T, spec_.hidden_dim), dk(T, spec_.hidden_dim), dv(T, spec_.hidden_dim);
    for (int h = 0; h < H; ++h) {
      const Mat& p = st.trace.attn[l][h];
      const auto dctx_h = dctx.middleCols(h * dh, dh);
      const Mat dp = dctx_h * c.v.middleCols(h * dh, dh).transpose();
      dv.middleCols(h * dh, dh).noalias() = p.transpose() * dctx_h;
      Mat ds = p.array() * dp.array();
      const Vec row_dot = ds.rowwise().sum();
      ds -= (p.array().colwise() * row_dot.array()).matrix();
      ds *= scale;
      dq.middleCols(h * dh, dh).noalias() = ds * c.k.middleCols(h * dh, dh);
      dk.middleCols(h * dh, dh).noalias() = ds.transpose() * c.q.middleCols(h * dh, dh);
    }
    if (gb != nullptr) {
      gb->wq.noalias() += c.a.transpose() * dq;
      gb->wk.noalias() += c.a.transpose() * dk;
      gb->wv.noalias() += c.a.transpose() * dv;
    }
    Mat da = dq * bw.wq.transpose();
    da.noalias() += dk * bw.wk.transpose();
    da.noalias() += dv * bw.wv.transpose();
    dx += layer_norm_backward(da, c.ln1_xhat, c.ln1_rstd, bw.ln1_g, gb ? &gb->ln1_g : nullptr,
                              gb ? &gb->ln1_b : nullptr);
  }

  if (stop == 0) {
    out.d_hidden[0] = dx;
    if (g != nullptr) {
      Mat demb = dx;
      apply_backward(ivs, SiteKind::kEmbedding, 0, demb);
      for (int t = 0; t < T; ++t) {
        g->tok_emb.row(st.ids[t]) += demb.row(t);
        g->pos_emb.row(t) += demb.row(t);
      }
    }
  }
  return out;
}

RowVec Transformer::unembed(const RowVec& vec, bool apply_final_norm) const {
  require(vec.size() == spec_.hidden_dim, ErrorCode::kShapeMismatch,
          "unembedding needs a vector of dimension " + std::to_string(spec_.hidden_dim));
  if (!apply_final_norm) return vec * weights_.unembedding().transpose();
  Mat x = vec, xhat, y;
  Vec rstd;
  layer_norm_forward(x, weights_.lnf_g, weights_.lnf_b, xhat, rstd, y);
  return y.row(0) * weights_.unembedding().transpose();
}

RowVec read_site(const ForwardTrace& trace, const SiteRef& site) {
  switch (site.kind) {
    case SiteKind::kEmbedding: return trace.hidden[0].row(site.token);
    case SiteKind::kHiddenState: return trace.hidden[site.layer + 1].row(site.token);
    case SiteKind::kAttnOutput: return trace.attn_out[site.layer].row(site.token);
    case SiteKind::kMlpOutput: return trace.mlp_out[site.layer].row(site.token);
    case SiteKind::kMlpNeuron: return RowVec::Constant(1, trace.mlp_act[site.layer](site.token, *site.unit));
  }
  fail(ErrorCode::kInternal, "unhandled site kind");
}

RowVec read_site_grad(const SiteGradients& grads, const SiteRef& site) {
  auto fetch = [&](const std::vector<Mat>& v, int idx) -> const Mat& {
    require(v[idx].size() > 0, ErrorCode::kInternal, "gradient for " + site.to_string() + " was not computed");
    return v[idx];
  };
  switch (site.kind) {
    case SiteKind::kEmbedding: return fetch(grads.d_hidden, 0).row(site.token);
    case SiteKind::kHiddenState: return fetch(grads.d_hidden, site.layer + 1).row(site.token);
    case SiteKind::kAttnOutput: return fetch(grads.d_attn_out, site.layer).row(site.token);
    case SiteKind::kMlpOutput: return fetch(grads.d_mlp_out, site.layer).row(site.token);
    case SiteKind::kMlpNeuron:
      return RowVec::Constant(1, fetch(grads.d_mlp_act, site.layer)(site.token, *site.unit));
  }
  fail(ErrorCode::kInternal, "unhandled site kind");
}

}  // namespace knowmri::model
