#include "knowmri/methods/module.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "knowmri/error.hpp"
#include "knowmri/methods/external.hpp"
#include "knowmri/model/last_token.hpp"

namespace knowmri::methods {

using namespace knowmri::model;

AttentionGrid attention_map(const ModelHandle& model, const std::string& prompt) {
  const TokenSeq seq = model.tokenize(prompt);
  const ForwardTrace tr = model.forward_trace(seq.ids);
  AttentionGrid out;
  out.tokens = seq.surface;
  const int T = tr.length();
  for (const auto& layer : tr.attn) {
    auto& lw = out.weights.emplace_back();
    for (const Mat& a : layer) {
      auto& hw = lw.emplace_back(T, std::vector<double>(T));
      for (int i = 0; i < T; ++i)
        for (int j = 0; j < T; ++j) hw[i][j] = a(i, j);
    }
  }
  return out;
}

ProjectionMap embedding_projection(const ModelHandle& model, const std::string& prompt, int n_neighbors) {
  require(n_neighbors >= 1, ErrorCode::kInvalidArgument, "n_neighbors must be >= 1");
  const TokenSeq seq = model.tokenize(prompt);
  require(std::set<int>(seq.ids.begin(), seq.ids.end()).size() >= 2, ErrorCode::kInvalidArgument,
          "projection needs at least two distinct tokens");
  const Mat& emb = model.weights().tok_emb;
  const int n = static_cast<int>(seq.size());
  Mat x(n, emb.cols());
  for (int i = 0; i < n; ++i) x.row(i) = emb.row(seq.ids[i]);
  Mat c = x.rowwise() - x.colwise().mean();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(Eigen::MatrixXd(c), Eigen::ComputeThinV);
  Eigen::MatrixXd v = svd.matrixV();
  const Vec s = svd.singularValues();
  const int comps = std::min<int>(2, static_cast<int>(v.cols()));
  for (int k = 0; k < comps; ++k) {
    Eigen::Index arg;
    v.col(k).cwiseAbs().maxCoeff(&arg);
    if (v(arg, k) < 0) v.col(k) *= -1.0;
  }
  ProjectionMap out;
  out.tokens = seq.surface;
  const double total = s.squaredNorm();
  if (total > 0) {
    out.explained_variance.first = s(0) * s(0) / total;
    if (s.size() > 1) out.explained_variance.second = s(1) * s(1) / total;
  }
  Vec norms = emb.rowwise().norm();
  for (int i = 0; i < n; ++i) {
    const double px = comps > 0 ? c.row(i).dot(v.col(0).transpose()) : 0.0;
    const double py = comps > 1 ? c.row(i).dot(v.col(1).transpose()) : 0.0;
    out.coords.emplace_back(px, py);
    RowVec cos = (emb * x.row(i).transpose()).transpose();
    const double xn = x.row(i).norm();
    for (Eigen::Index r = 0; r < cos.size(); ++r) cos(r) = (xn > 0 && norms(r) > 0) ? cos(r) / (xn * norms(r)) : 0.0;
    auto& nb = out.neighbors.emplace_back();
    for (int id : top_k_indices(cos, n_neighbors)) nb.emplace_back(model.tokenizer().token_bytes(id), cos(id));
  }
  return out;
}

namespace {

void check_neuron(const ModelHandle& model, int layer, int unit) {
  const auto& sp = model.spec();
  require(layer >= 0 && layer < sp.n_layers, ErrorCode::kOutOfRange, "layer " + std::to_string(layer) + " out of range");
  require(unit >= 0 && unit < sp.mlp_dim, ErrorCode::kOutOfRange, "unit " + std::to_string(unit) + " out of range");
}

std::vector<std::string> top_token_strings(const ModelHandle& model, int layer, int unit, int k) {
  std::vector<std::string> out;
  for (auto& [t, _] : neuron_top_tokens(model, layer, unit, k)) out.push_back(t);
  return out;
}

// Value vectors of one layer through the output head: [m x V].
Mat value_logits(const ModelHandle& model, int layer) {
  return model.weights().blocks[layer].w_down * model.weights().unembedding().transpose();
}

}  // namespace

std::vector<TokenScore> neuron_top_tokens(const ModelHandle& model, int layer, int unit, int k) {
  check_neuron(model, layer, unit);
  const RowVec logits = model.apply_unembedding(model.weights().blocks[layer].w_down.row(unit), false);
  std::vector<TokenScore> out;
  for (int id : top_k_indices(logits, k)) out.emplace_back(model.tokenizer().token_bytes(id), logits(id));
  return out;
}

KnOutput knowledge_neurons(const ModelHandle& model, const std::vector<std::string>& prompts,
                           const std::string& ground_truth, const KnConfig& cfg) {
  require(!prompts.empty(), ErrorCode::kInvalidArgument, "knowledge neurons need at least one prompt");
  require(cfg.steps >= 1, ErrorCode::kInvalidArgument, "steps must be >= 1");
  require(cfg.threshold >= 0 && cfg.threshold <= 1 && cfg.prompt_share >= 0 && cfg.prompt_share <= 1,
          ErrorCode::kInvalidArgument, "threshold and prompt share must lie in [0, 1]");
  const auto& sp = model.spec();
  const int L = sp.n_layers, m = sp.mlp_dim;
  std::vector<std::string> used = prompts;
  if (cfg.max_prompts > 0 && static_cast<int>(used.size()) > cfg.max_prompts) used.resize(cfg.max_prompts);

  Mat total = Mat::Zero(L, m);
  Eigen::MatrixXi kept = Eigen::MatrixXi::Zero(L, m);
  int target = -1;
  for (const auto& prompt : used) {
    const auto ids = model.tokenize(prompt).ids;
    target = first_target_token(model, prompt, ground_truth);
    const ForwardState clean = model.transformer().forward(ids, {});
    Mat attr(L, m);
    for (int l = 0; l < L; ++l) {
      const LastTokenProbe probe(model.transformer(), clean, l);
      const RowVec& w = probe.clean_activation();
      RowVec sum = RowVec::Zero(m), g(m);
      for (int n = 1; n <= cfg.steps; ++n) {
        probe.eval((static_cast<double>(n) / cfg.steps) * w, target, &g);
        sum += g;
      }
      attr.row(l) = w.cwiseProduct(sum) / cfg.steps;
    }
    require(attr.allFinite(), ErrorCode::kNumerical, "non-finite neuron attribution");
    const double cut = cfg.threshold * attr.maxCoeff();
    kept += (attr.array() >= cut).cast<int>().matrix();
    total += attr;
  }
  KnOutput out;
  out.mean_scores = total / static_cast<double>(used.size());
  const double need = cfg.prompt_share * static_cast<double>(used.size());
  for (int l = 0; l < L; ++l)
    for (int j = 0; j < m; ++j)
      if (kept(l, j) >= need) out.retained.emplace_back(l, j);
  auto ranked = out.retained;
  std::stable_sort(ranked.begin(), ranked.end(), [&](auto a, auto b) {
    return out.mean_scores(a.first, a.second) > out.mean_scores(b.first, b.second);
  });
  auto& rep = out.report;
  rep.retained = static_cast<int>(out.retained.size());
  rep.target_text = model.tokenizer().token_bytes(target);
  for (int i = 0; i < std::min<int>(cfg.top_k, static_cast<int>(ranked.size())); ++i) {
    const auto [l, j] = ranked[i];
    rep.top_neurons.push_back({l, j, out.mean_scores(l, j), top_token_strings(model, l, j, cfg.top_tokens)});
  }
  return out;
}

FineOutput fine_neurons(const ModelHandle& model, const std::string& prompt, const std::string& ground_truth,
                        const FineConfig& cfg) {
  const auto& sp = model.spec();
  const auto ids = model.tokenize(prompt).ids;
  const int target = first_target_token(model, prompt, ground_truth);
  const ForwardTrace tr = model.forward_trace(ids);
  const int last = tr.length() - 1;
  FineOutput out;
  out.scores.resize(sp.n_layers, sp.mlp_dim);
  for (int l = 0; l < sp.n_layers; ++l) {
    const Mat u = value_logits(model, l);
    for (int j = 0; j < sp.mlp_dim; ++j) {
      const double norm = u.row(j).norm();
      const double rel = norm > 0 ? u(j, target) / norm : 0.0;
      out.scores(l, j) = tr.mlp_act[l](last, j) * rel;
    }
  }
  require(out.scores.allFinite(), ErrorCode::kNumerical, "non-finite neuron score");
  const Eigen::Map<const RowVec> flat(out.scores.data(), out.scores.size());
  auto& rep = out.report;
  rep.target_text = model.tokenizer().token_bytes(target);
  rep.note = "reconstructed scoring rule";
  rep.retained = static_cast<int>(out.scores.size());
  for (int idx : top_k_indices(flat, cfg.top_k)) {
    const int l = idx / sp.mlp_dim, j = idx % sp.mlp_dim;
    rep.top_neurons.push_back({l, j, out.scores(l, j), top_token_strings(model, l, j, cfg.top_tokens)});
  }
  return out;
}

std::pair<int, int> subject_span(const TokenSeq& seq, const std::string& prompt, const std::string& subject) {
  require(!subject.empty(), ErrorCode::kInvalidArgument, "empty subject");
  const auto at = prompt.find(subject);
  require(at != std::string::npos, ErrorCode::kNotFound, "subject '" + subject + "' not found in prompt");
  const std::size_t end = at + subject.size();
  int b = -1, e = -1;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    const auto [s0, s1] = seq.offsets[i];
    if (s1 > at && s0 < end) {
      if (b < 0) b = static_cast<int>(i);
      e = static_cast<int>(i) + 1;
    }
  }
  require(b >= 0, ErrorCode::kNotFound, "subject '" + subject + "' covers no tokens");
  return {b, e};
}

double stable_mean(const std::vector<double>& xs) {
  require(!xs.empty(), ErrorCode::kInvalidArgument, "mean of nothing");
  double acc = 0.0;
  for (double x : xs) acc += x - xs.front();
  return xs.front() + acc / static_cast<double>(xs.size());
}

namespace {

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

TraceGridSet causal_trace(const ModelHandle& model, const std::string& prompt, const std::string& subject,
                          const std::string& ground_truth, const TraceConfig& cfg) {
  const auto& sp = model.spec();
  const int L = sp.n_layers;
  const int window = cfg.window.value_or(std::min(10, L));
  require(window >= 1 && window <= L, ErrorCode::kInvalidArgument,
          "window " + std::to_string(window) + " must lie in [1, " + std::to_string(L) + "]");
  require(cfg.noise_multiplier >= 0, ErrorCode::kInvalidArgument, "noise multiplier must be >= 0");
  std::vector<std::uint64_t> seeds = cfg.seeds;
  if (seeds.empty()) {
    require(cfg.n_seeds >= 1, ErrorCode::kInvalidArgument, "n_seeds must be >= 1");
    for (int i = 0; i < cfg.n_seeds; ++i) seeds.push_back(cfg.seed + static_cast<std::uint64_t>(i));
  }
  std::sort(seeds.begin(), seeds.end());

  const TokenSeq seq = model.tokenize(prompt);
  const auto [sb, se] = subject_span(seq, prompt, subject);
  const int target = first_target_token(model, prompt, ground_truth);
  const int T = static_cast<int>(seq.size());
  const ForwardTrace clean = model.forward_trace(seq.ids);
  const Mat& emb = model.weights().tok_emb;
  const double emb_mean = emb.mean();
  const double emb_std = std::sqrt((emb.array() - emb_mean).square().sum() / static_cast<double>(emb.size()));

  TraceGridSet out;
  out.tokens = seq.surface;
  out.subject_begin = sb;
  out.subject_end = se;
  out.target_text = model.tokenizer().token_bytes(target);
  out.noise_std = cfg.noise_multiplier * emb_std;
  out.n_seeds = static_cast<int>(seeds.size());
  out.clean_prob = softmax(clean.logits.row(T - 1))(target);

  auto prob = [&](const std::vector<Intervention>& ivs) {
    return softmax(model.forward_trace(seq.ids, ivs).logits.row(T - 1))(target);
  };
  std::vector<std::vector<Intervention>> noise(seeds.size());
  std::vector<double> corrupted;
  for (std::size_t s = 0; s < seeds.size(); ++s) {
    for (int t = sb; t < se; ++t)
      noise[s].push_back({SiteRef::embedding(t), AddNoise{out.noise_std, mix(seeds[s] * 0x10001ULL + t)}});
    corrupted.push_back(prob(noise[s]));
  }
  out.corrupted_prob = stable_mean(corrupted);

  auto set_clean = [](SiteRef site, const Mat& src, int t) {
    return Intervention{site, SetValue{std::vector<double>(src.row(t).data(), src.row(t).data() + src.cols())}};
  };
  for (const auto& kind_name : cfg.kinds) {
    const SiteKind kind = parse_site_kind(kind_name);
    require(kind == SiteKind::kHiddenState || kind == SiteKind::kMlpOutput || kind == SiteKind::kAttnOutput,
            ErrorCode::kInvalidArgument, "cannot trace site kind '" + kind_name + "'");
    TraceGrid grid;
    grid.site_kind = kind_name;
    grid.window = kind == SiteKind::kHiddenState ? 1 : window;
    grid.effect.assign(L, std::vector<double>(T, 0.0));
    for (int l = 0; l < L; ++l) {
      for (int t = 0; t < T; ++t) {
        std::vector<double> restored;
        for (std::size_t s = 0; s < seeds.size(); ++s) {
          auto ivs = noise[s];
          if (kind == SiteKind::kHiddenState) {
            ivs.push_back(set_clean(SiteRef::hidden(l, t), clean.hidden[l + 1], t));
          } else {
            const int lo = std::max(0, l - window / 2);
            const int hi = std::min(L, l + (window + 1) / 2);
            for (int k = lo; k < hi; ++k) {
              if (kind == SiteKind::kMlpOutput)
                ivs.push_back(set_clean(SiteRef::mlp_output(k, t), clean.mlp_out[k], t));
              else
                ivs.push_back(set_clean(SiteRef::attn_output(k, t), clean.attn_out[k], t));
            }
          }
          restored.push_back(prob(ivs));
        }
        grid.effect[l][t] = stable_mean(restored) - out.corrupted_prob;
      }
    }
    out.grids.push_back(std::move(grid));
  }
  return out;
}

}  // namespace knowmri::methods
