#include "knowmri/model/handle.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <random>

#include "knowmri/error.hpp"

namespace knowmri::model {

RowVec softmax(const RowVec& logits) {
  const double mx = logits.maxCoeff();
  RowVec p = (logits.array() - mx).exp();
  return p / p.sum();
}

RowVec next_token_distribution(const ForwardTrace& trace) {
  require(trace.length() >= 1, ErrorCode::kInvalidArgument, "trace has no positions");
  return softmax(trace.logits.row(trace.length() - 1));
}

std::vector<int> top_k_indices(const RowVec& values, int k) {
  const int n = static_cast<int>(values.size());
  k = std::clamp(k, 0, n);
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](int a, int b) {
    if (values(a) != values(b)) return values(a) > values(b);
    return a < b;
  });
  idx.resize(k);
  return idx;
}

ModelHandle::ModelHandle(Transformer transformer, Tokenizer tokenizer, Metadata meta)
    : transformer_(std::move(transformer)), tokenizer_(std::move(tokenizer)), meta_(std::move(meta)) {
  require(tokenizer_.vocab_size() == transformer_.spec().vocab_size, ErrorCode::kShapeMismatch,
          "tokenizer vocabulary does not match the model");
}

ModelHandle ModelHandle::load(const std::filesystem::path& checkpoint_dir) {
  Checkpoint ck = load_checkpoint(checkpoint_dir);
  return ModelHandle(Transformer(std::move(ck.spec), std::move(ck.weights)), std::move(ck.tokenizer),
                     std::move(ck.meta));
}

ModelHandle ModelHandle::clone() const {
  return ModelHandle(Transformer(transformer_.spec(), transformer_.weights()), tokenizer_, meta_);
}

void ModelHandle::save(const std::filesystem::path& dir) const {
  save_checkpoint(dir, spec(), weights(), tokenizer_, meta_);
}

TokenSeq ModelHandle::tokenize(std::string_view text) const {
  require(!text.empty(), ErrorCode::kInvalidArgument, "cannot tokenize empty text");
  return tokenizer_.encode(text);
}

std::string ModelHandle::detokenize(std::span<const int> ids) const { return tokenizer_.decode(ids); }

std::vector<int> ModelHandle::continuation_ids(std::string_view prompt, std::string_view continuation) const {
  require(!continuation.empty(), ErrorCode::kInvalidArgument, "empty continuation");
  const bool prompt_space = !prompt.empty() && std::isspace(static_cast<unsigned char>(prompt.back()));
  const bool cont_space = std::isspace(static_cast<unsigned char>(continuation.front()));
  const std::string text = (prompt_space || cont_space) ? std::string(continuation) : " " + std::string(continuation);
  return tokenizer_.encode(text).ids;
}

ForwardTrace ModelHandle::forward_trace(std::span<const int> ids, std::span<const Intervention> interventions) const {
  return transformer_.forward(ids, interventions).trace;
}

GradResult ModelHandle::grad_wrt_sites(std::span<const int> ids, int target_token, std::span<const SiteRef> sites,
                                       std::span<const Intervention> interventions) const {
  const auto& sp = spec();
  require(target_token >= 0 && target_token < sp.vocab_size, ErrorCode::kOutOfRange,
          "target token " + std::to_string(target_token) + " outside vocabulary");
  const int T = static_cast<int>(ids.size());
  int stop = sp.n_layers - 1;
  for (const auto& s : sites) {
    transformer_.validate_site(s, std::max(T, 1));
    stop = std::min(stop, s.layer);
  }
  ForwardState st = transformer_.forward(ids, interventions);
  const RowVec p = softmax(st.trace.logits.row(T - 1));
  // dP_t/dz_k = P_t (delta_tk - P_k)
  Mat dlogits = Mat::Zero(T, sp.vocab_size);
  dlogits.row(T - 1) = -p(target_token) * p;
  dlogits(T - 1, target_token) += p(target_token);
  const SiteGradients g = transformer_.backward(st, dlogits, {.stop_layer = stop});

  GradResult out;
  out.target_token = target_token;
  out.probability = p(target_token);
  out.site_grads.reserve(sites.size());
  for (const auto& s : sites) {
    RowVec grad = read_site_grad(g, s);
    require(grad.allFinite(), ErrorCode::kNumerical, "non-finite gradient at " + s.to_string());
    out.site_grads.push_back({s, std::move(grad)});
  }
  return out;
}

RowVec ModelHandle::apply_unembedding(const RowVec& vec, bool apply_final_norm) const {
  return transformer_.unembed(vec, apply_final_norm);
}

std::vector<int> ModelHandle::generate(std::span<const int> ids, int max_new, const Decoding& decoding) const {
  require(max_new >= 1, ErrorCode::kInvalidArgument, "max_new must be >= 1");
  require(!ids.empty(), ErrorCode::kInvalidArgument, "generation needs a non-empty prompt");
  const int limit = spec().max_seq_len;
  require(static_cast<int>(ids.size()) + max_new <= limit, ErrorCode::kOutOfRange,
          "prompt plus " + std::to_string(max_new) + " new tokens exceeds max_seq_len " + std::to_string(limit));
  require(decoding.kind == Decoding::Kind::kGreedy || decoding.k >= 1, ErrorCode::kInvalidArgument,
          "top_k needs k >= 1");
  std::vector<int> seq(ids.begin(), ids.end());
  std::mt19937_64 rng(decoding.seed);
  for (int step = 0; step < max_new; ++step) {
    const ForwardTrace tr = forward_trace(seq);
    const RowVec p = next_token_distribution(tr);
    if (decoding.kind == Decoding::Kind::kGreedy) {
      seq.push_back(top_k_indices(p, 1).front());
      continue;
    }
    const auto cand = top_k_indices(p, decoding.k);
    std::vector<double> w;
    for (int c : cand) w.push_back(p(c));
    std::discrete_distribution<int> pick(w.begin(), w.end());
    seq.push_back(cand[pick(rng)]);
  }
  return seq;
}

}  // namespace knowmri::model
