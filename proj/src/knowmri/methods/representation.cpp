#include "knowmri/methods/representation.hpp"

#include <algorithm>
#include <cctype>
#include <numeric>
#include <random>

#include "knowmri/error.hpp"

namespace knowmri::methods {

using namespace knowmri::model;

namespace {

std::vector<TokenScore> top_tokens(const ModelHandle& model, const RowVec& probs, int k) {
  std::vector<TokenScore> out;
  for (int id : top_k_indices(probs, k)) out.emplace_back(model.tokenizer().token_bytes(id), probs(id));
  return out;
}

int argmax(const RowVec& v) { return top_k_indices(v, 1).front(); }

}  // namespace

LayerDecodeTable logit_lens(const ModelHandle& model, const std::string& prompt, int k) {
  require(k >= 1, ErrorCode::kInvalidArgument, "logit lens needs k >= 1");
  const auto ids = model.tokenize(prompt).ids;
  const ForwardTrace tr = model.forward_trace(ids);
  const int L = model.spec().n_layers;
  const int last = tr.length() - 1;
  const RowVec final_logits = tr.logits.row(last);
  const int ref = argmax(final_logits);

  LayerDecodeTable out;
  out.mode = "logit_lens";
  out.k = k;
  out.reference_token = model.tokenizer().token_bytes(ref);
  for (int l = 0; l <= L; ++l) {
    // The top row is the model's own output, so take it from the pass itself.
    const RowVec logits = l == L ? final_logits : model.apply_unembedding(tr.hidden[l].row(last), true);
    const RowVec p = softmax(logits);
    out.rows.push_back({l, top_tokens(model, p, k)});
    if (!out.earliest_match_layer && argmax(p) == ref) out.earliest_match_layer = l;
  }
  return out;
}

Scaffold identity_scaffold(const ModelHandle& model) {
  const auto& tok = model.tokenizer();
  std::vector<std::string> words;
  for (int id = 256; id < tok.vocab_size() && words.size() < 2; ++id) {
    const std::string& b = tok.token_bytes(id);
    if (b.size() < 4 || b[0] != ' ') continue;
    if (!std::all_of(b.begin() + 1, b.end(), [](char c) { return std::islower(static_cast<unsigned char>(c)); }))
      continue;
    if (tok.encode(b).ids.size() != 1) continue;
    words.push_back(b);
  }
  for (const char* fallback : {" a", " b"}) {
    if (words.size() >= 2) break;
    words.push_back(fallback);
  }
  std::string text;
  for (const auto& w : words) text += w.substr(1) + " →" + w + " ; ";
  const std::size_t q = text.size();
  text += "? →";
  const TokenSeq seq = tok.encode(text);
  int placeholder = -1;
  for (std::size_t i = 0; i < seq.size(); ++i)
    if (seq.offsets[i].first <= q && q < seq.offsets[i].second) placeholder = static_cast<int>(i);
  require(placeholder >= 0, ErrorCode::kInternal, "scaffold placeholder not found");
  return {text, placeholder};
}

LayerDecodeTable patchscopes(const ModelHandle& model, const std::string& source_prompt,
                             const PatchscopeConfig& cfg) {
  require(cfg.k >= 1, ErrorCode::kInvalidArgument, "patchscopes needs k >= 1");
  Scaffold target;
  if (cfg.target_prompt) {
    target.text = *cfg.target_prompt;
    target.placeholder = -1;
  } else {
    target = identity_scaffold(model);
  }
  const auto src_ids = model.tokenize(source_prompt).ids;
  const auto tgt_ids = model.tokenize(target.text).ids;
  const int tt = static_cast<int>(tgt_ids.size());
  int pos = cfg.target_position.value_or(target.placeholder >= 0 ? target.placeholder : tt - 1);
  if (pos < 0) pos += tt;
  require(pos >= 0 && pos < tt, ErrorCode::kOutOfRange,
          "target position " + std::to_string(pos) + " outside target prompt of length " + std::to_string(tt));

  const ForwardTrace src = model.forward_trace(src_ids);
  const int last = src.length() - 1;
  const int ref = argmax(src.logits.row(last));
  const int L = model.spec().n_layers;

  LayerDecodeTable out;
  out.mode = "patchscopes";
  out.k = cfg.k;
  out.reference_token = model.tokenizer().token_bytes(ref);
  out.target_prompt = target.text;
  out.target_position = pos;
  for (int l = 0; l <= L; ++l) {
    const SiteRef site = l == 0 ? SiteRef::embedding(pos) : SiteRef::hidden(l - 1, pos);
    const RowVec h = src.hidden[l].row(last);
    const Intervention iv{site, SetValue{std::vector<double>(h.data(), h.data() + h.size())}};
    const ForwardTrace tr = model.forward_trace(tgt_ids, std::span<const Intervention>(&iv, 1));
    const RowVec p = softmax(tr.logits.row(pos));
    out.rows.push_back({l, top_tokens(model, p, cfg.k)});
    if (!out.earliest_match_layer && argmax(p) == ref) out.earliest_match_layer = l;
  }
  return out;
}

std::vector<int> word_tokens(const ModelHandle& model) {
  const auto& tok = model.tokenizer();
  std::vector<int> out;
  for (int id = 256; id < tok.vocab_size(); ++id) {
    const std::string& b = tok.token_bytes(id);
    const auto letters = std::count_if(b.begin(), b.end(), [](char c) { return std::isalpha(static_cast<unsigned char>(c)); });
    if (letters >= 2) out.push_back(id);
  }
  return out;
}

namespace {

struct AdamSlot {
  Mat m, v;
  explicit AdamSlot(const Mat& like) : m(Mat::Zero(like.rows(), like.cols())), v(Mat::Zero(like.rows(), like.cols())) {}
  void step(Mat& p, const Mat& g, double lr, int t) {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g.cwiseProduct(g);
    const double c1 = 1 - std::pow(b1, t), c2 = 1 - std::pow(b2, t);
    p.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  }
};

}  // namespace

SpineFit spine_probe(const ModelHandle& model, const std::vector<int>& token_ids, const SpineConfig& cfg,
                     const std::vector<int>& focus_ids) {
  require(token_ids.size() >= 2, ErrorCode::kInvalidArgument, "sparse probe needs at least two tokens");
  require(cfg.hidden_dim >= 1 && cfg.epochs >= 0 && cfg.l1_weight >= 0.0 && cfg.lr > 0.0,
          ErrorCode::kInvalidArgument, "invalid sparse probe configuration");
  const auto& emb = model.weights().tok_emb;
  const int n = static_cast<int>(token_ids.size());
  const int d = static_cast<int>(emb.cols());
  const int h = cfg.hidden_dim;
  Mat x(n, d);
  for (int i = 0; i < n; ++i) {
    require(token_ids[i] >= 0 && token_ids[i] < emb.rows(), ErrorCode::kOutOfRange, "token id outside vocabulary");
    x.row(i) = emb.row(token_ids[i]);
  }
  const RowVec mean = x.colwise().mean();
  x.rowwise() -= mean;
  RowVec sd = (x.cwiseProduct(x).colwise().sum() / n).cwiseSqrt();
  for (int j = 0; j < d; ++j)
    if (sd(j) < 1e-12) sd(j) = 1.0;
  x.array().rowwise() /= sd.array();

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  Mat w1(d, h), w2(h, d);
  for (int i = 0; i < w1.size(); ++i) w1.data()[i] = nd(rng) / std::sqrt(double(d));
  for (int i = 0; i < w2.size(); ++i) w2.data()[i] = nd(rng) / std::sqrt(double(h));
  Mat b1 = Mat::Constant(1, h, 0.1), b2 = Mat::Zero(1, d);
  AdamSlot s_w1(w1), s_w2(w2), s_b1(b1), s_b2(b2);

  const double scale_r = 2.0 / (double(n) * d);
  const double scale_c = cfg.l1_weight / (double(n) * h);
  Mat pre, codes, recon;
  auto encode = [&]() {
    pre = x * w1;
    pre.rowwise() += b1.row(0);
    codes = pre.cwiseMax(0.0);
    recon = codes * w2;
    recon.rowwise() += b2.row(0);
  };
  for (int t = 1; t <= cfg.epochs; ++t) {
    encode();
    const Mat d_recon = scale_r * (recon - x);
    const Mat g_w2 = codes.transpose() * d_recon;
    const Mat g_b2 = d_recon.colwise().sum();
    Mat d_codes = d_recon * w2.transpose();
    d_codes.array() += scale_c;
    const Mat d_pre = (pre.array() > 0.0).select(d_codes, 0.0);
    const Mat g_w1 = x.transpose() * d_pre;
    const Mat g_b1 = d_pre.colwise().sum();
    s_w1.step(w1, g_w1, cfg.lr, t);
    s_w2.step(w2, g_w2, cfg.lr, t);
    s_b1.step(b1, g_b1, cfg.lr, t);
    s_b2.step(b2, g_b2, cfg.lr, t);
  }
  encode();
  require(codes.allFinite() && recon.allFinite(), ErrorCode::kNumerical, "sparse probe diverged");

  SpineFit out;
  auto& rep = out.report;
  rep.hidden_dim = h;
  rep.l1_weight = cfg.l1_weight;
  rep.epochs = cfg.epochs;
  rep.n_tokens = n;
  rep.reconstruction_error = (recon - x).squaredNorm() / (double(n) * d);
  rep.sparsity = double((codes.array() < 1e-3).count()) / double(codes.size());

  RowVec rank_by(h);
  std::vector<int> focus_rows;
  for (int f : focus_ids) {
    const auto it = std::find(token_ids.begin(), token_ids.end(), f);
    if (it != token_ids.end()) focus_rows.push_back(static_cast<int>(it - token_ids.begin()));
  }
  if (!focus_rows.empty()) {
    rank_by.setZero();
    for (int r : focus_rows) rank_by += codes.row(r);
  } else {
    rank_by = codes.colwise().maxCoeff();
  }
  const auto& tok = model.tokenizer();
  for (int dim : top_k_indices(rank_by, std::min(cfg.report_dims, h))) {
    SparseCodeDim sd_out;
    sd_out.index = dim;
    const RowVec col = codes.col(dim).transpose();
    for (int r : top_k_indices(col, std::min(cfg.top_k, n))) sd_out.top.emplace_back(tok.token_bytes(token_ids[r]), col(r));
    rep.dimensions.push_back(std::move(sd_out));
  }
  out.codes = std::move(codes);
  return out;
}

}  // namespace knowmri::methods
