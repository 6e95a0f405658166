#include "knowmri/capability/lab.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "knowmri/data/sample.hpp"
#include "knowmri/error.hpp"
#include "knowmri/model/last_token.hpp"

namespace knowmri::capability {

using namespace knowmri::model;

std::vector<Example> examples_from(const data::Dataset& ds) {
  require(ds.descriptor.support_template_keys.count(data::kPrompt) &&
              ds.descriptor.support_template_keys.count(data::kGroundTruth),
          ErrorCode::kValidation, "dataset '" + ds.descriptor.id + "' lacks prompt and ground_truth");
  std::vector<Example> out;
  for (const auto& s : ds.samples) out.push_back({s.text(data::kPrompt), s.text(data::kGroundTruth)});
  return out;
}

namespace {

std::string cache_key(const Example& ex, int steps) {
  return ex.prompt + '\x1f' + ex.answer + '\x1f' + std::to_string(steps);
}

int first_answer_token(const ModelHandle& model, const Example& ex) {
  const auto ids = model.continuation_ids(ex.prompt, ex.answer);
  require(!ids.empty(), ErrorCode::kInvalidArgument, "answer produced no tokens");
  return ids.front();
}

}  // namespace

std::optional<Mat> ScoreCache::get(const Example& ex, int steps) const {
  std::lock_guard lock(mu_);
  const auto it = entries_.find(cache_key(ex, steps));
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

void ScoreCache::put(const Example& ex, int steps, const Mat& scores) {
  std::lock_guard lock(mu_);
  entries_[cache_key(ex, steps)] = scores;
}

std::size_t ScoreCache::size() const {
  std::lock_guard lock(mu_);
  return entries_.size();
}

Mat example_scores(const ModelHandle& model, const Example& ex, int steps) {
  require(steps >= 1, ErrorCode::kInvalidArgument, "steps must be >= 1");
  const auto& sp = model.spec();
  const auto ids = model.tokenize(ex.prompt).ids;
  const int target = first_answer_token(model, ex);
  const ForwardState clean = model.transformer().forward(ids, {});
  Mat out(sp.n_layers, sp.mlp_dim);
  RowVec g(sp.mlp_dim);
  for (int l = 0; l < sp.n_layers; ++l) {
    const LastTokenProbe probe(model.transformer(), clean, l);
    const RowVec& w = probe.clean_activation();
    RowVec sum = RowVec::Zero(sp.mlp_dim);
    for (int n = 0; n <= steps; ++n) {
      probe.eval((static_cast<double>(n) / steps) * w, target, &g);
      sum += g;
    }
    out.row(l) = w.cwiseProduct(sum) / steps;
  }
  require(out.allFinite(), ErrorCode::kNumerical, "non-finite capability score");
  return out;
}

Mat capability_scores(const ModelHandle& model, const std::vector<Example>& examples, const ScoreConfig& cfg,
                      ScoreCache* cache) {
  require(!examples.empty(), ErrorCode::kInvalidArgument, "no examples to score");
  const auto& sp = model.spec();
  Mat total = Mat::Zero(sp.n_layers, sp.mlp_dim);
  for (const auto& ex : examples) {
    std::optional<Mat> s = cache ? cache->get(ex, cfg.steps) : std::nullopt;
    if (!s) {
      s = example_scores(model, ex, cfg.steps);
      if (cache) cache->put(ex, cfg.steps, *s);
    }
    total += *s;
  }
  return total / static_cast<double>(examples.size());
}

std::vector<Neuron> locate(const Mat& scores, const LocateConfig& cfg) {
  require(scores.size() > 0, ErrorCode::kInvalidArgument, "empty score table");
  require(scores.allFinite(), ErrorCode::kNumerical, "non-finite scores");
  std::vector<Neuron> out;
  const int L = static_cast<int>(scores.rows()), m = static_cast<int>(scores.cols());
  if (cfg.mode == LocateConfig::Mode::kSigma) {
    require(cfg.sigma >= 0, ErrorCode::kInvalidArgument, "sigma must be >= 0");
    const double mean = scores.mean();
    const double sd = std::sqrt((scores.array() - mean).square().mean());
    for (int l = 0; l < L; ++l)
      for (int j = 0; j < m; ++j)
        if (std::abs(scores(l, j) - mean) > cfg.sigma * sd) out.emplace_back(l, j);
    return out;
  }
  require(cfg.k >= 0 && cfg.k <= L * m, ErrorCode::kInvalidArgument, "k outside [0, neurons]");
  std::vector<int> idx(static_cast<std::size_t>(L) * m);
  std::iota(idx.begin(), idx.end(), 0);
  std::partial_sort(idx.begin(), idx.begin() + cfg.k, idx.end(), [&](int a, int b) {
    const double sa = scores(a / m, a % m), sb = scores(b / m, b % m);
    return sa != sb ? sa > sb : a < b;
  });
  for (int i = 0; i < cfg.k; ++i) out.emplace_back(idx[i] / m, idx[i] % m);
  std::sort(out.begin(), out.end());
  return out;
}

Consistency consistency(const std::vector<Neuron>& a, const std::vector<Neuron>& b) {
  const std::set<Neuron> sa(a.begin(), a.end()), sb(b.begin(), b.end());
  require(!sa.empty() && !sb.empty(), ErrorCode::kInvalidArgument, "consistency of an empty neuron set");
  std::size_t inter = 0;
  for (const auto& n : sa) inter += sb.count(n);
  const double i = static_cast<double>(inter);
  return {(i / sa.size() + i / sb.size()) / 2.0, i / static_cast<double>(sa.size() + sb.size() - inter)};
}

namespace {

std::pair<double, double> mean_std(const std::vector<double>& xs) {
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / xs.size();
  double sq = 0.0;
  for (double x : xs) sq += (x - mean) * (x - mean);
  return {mean, std::sqrt(sq / xs.size())};
}

}  // namespace

std::vector<CurvePoint> consistency_curve(const ModelHandle& model, const std::vector<Example>& examples,
                                          const CurveConfig& cfg, ScoreCache* cache) {
  require(!cfg.sizes.empty(), ErrorCode::kInvalidArgument, "no subset sizes");
  require(cfg.n_splits >= 1, ErrorCode::kInvalidArgument, "n_splits must be >= 1");
  const int n = static_cast<int>(examples.size());
  for (int s : cfg.sizes) {
    require(s >= 1, ErrorCode::kInvalidArgument, "subset sizes must be >= 1");
    require(cfg.identical || 2 * s <= n, ErrorCode::kInvalidArgument,
            "size " + std::to_string(s) + " needs " + std::to_string(2 * s) + " examples, dataset has " +
                std::to_string(n));
    require(s <= n, ErrorCode::kInvalidArgument, "size exceeds dataset");
  }
  ScoreCache local;
  if (!cache) cache = &local;
  std::vector<CurvePoint> out;
  for (int size : cfg.sizes) {
    std::vector<double> ov, iou;
    CurvePoint pt;
    pt.size = size;
    pt.n_splits = cfg.n_splits;
    double located = 0.0;
    for (int split = 0; split < cfg.n_splits; ++split) {
      std::vector<int> idx(n);
      std::iota(idx.begin(), idx.end(), 0);
      std::mt19937_64 rng(cfg.seed * 1000003ULL + static_cast<std::uint64_t>(split) * 7919ULL + size);
      std::shuffle(idx.begin(), idx.end(), rng);
      std::vector<Example> a, b;
      for (int i = 0; i < size; ++i) a.push_back(examples[idx[i]]);
      if (cfg.identical)
        b = a;
      else
        for (int i = size; i < 2 * size; ++i) b.push_back(examples[idx[i]]);
      const auto la = locate(capability_scores(model, a, cfg.score, cache), cfg.locate);
      const auto lb = locate(capability_scores(model, b, cfg.score, cache), cfg.locate);
      located += 0.5 * static_cast<double>(la.size() + lb.size());
      if (la.empty() || lb.empty()) {
        ++pt.empty_splits;
        ov.push_back(0.0);
        iou.push_back(0.0);
        continue;
      }
      const auto c = consistency(la, lb);
      ov.push_back(c.overlap);
      iou.push_back(c.iou);
    }
    std::tie(pt.overlap_mean, pt.overlap_std) = mean_std(ov);
    std::tie(pt.iou_mean, pt.iou_std) = mean_std(iou);
    pt.mean_located = located / cfg.n_splits;
    out.push_back(pt);
  }
  return out;
}

std::string curve_csv(const std::vector<CurvePoint>& points) {
  std::ostringstream os;
  os << "size,n_splits,overlap_mean,overlap_std,iou_mean,iou_std,empty_splits,mean_located\n";
  os << std::setprecision(6);
  for (const auto& p : points)
    os << p.size << ',' << p.n_splits << ',' << p.overlap_mean << ',' << p.overlap_std << ',' << p.iou_mean << ','
       << p.iou_std << ',' << p.empty_splits << ',' << p.mean_located << '\n';
  return os.str();
}

bool exact_match(const ModelHandle& model, const Example& ex) {
  const auto prompt = model.tokenize(ex.prompt).ids;
  const auto answer = model.continuation_ids(ex.prompt, ex.answer);
  const auto out = model.generate(prompt, static_cast<int>(answer.size()));
  return std::equal(answer.begin(), answer.end(), out.begin() + static_cast<std::ptrdiff_t>(prompt.size()));
}

double exact_match_accuracy(const ModelHandle& model, const std::vector<Example>& examples) {
  require(!examples.empty(), ErrorCode::kInvalidArgument, "no examples to evaluate");
  int hits = 0;
  for (const auto& ex : examples) hits += exact_match(model, ex);
  return static_cast<double>(hits) / examples.size();
}

ParameterMask neuron_mask(const Weights& w, const std::vector<Neuron>& neurons) {
  const auto views = w.tensors();
  ParameterMask mask;
  std::map<std::string, std::size_t> at;
  for (std::size_t i = 0; i < views.size(); ++i) {
    mask.emplace_back(static_cast<std::size_t>(views[i].size()), 0);
    at[views[i].name] = i;
  }
  const int L = static_cast<int>(w.blocks.size());
  for (const auto& [l, j] : neurons) {
    require(l >= 0 && l < L && j >= 0 && j < w.blocks[l].w_up.cols(), ErrorCode::kOutOfRange,
            "neuron outside the model");
    const std::string p = "blocks." + std::to_string(l) + ".mlp.";
    const auto d = w.blocks[l].w_up.rows(), m = w.blocks[l].w_up.cols();
    auto& up = mask[at.at(p + "w_up")];
    for (Eigen::Index i = 0; i < d; ++i) up[static_cast<std::size_t>(i * m + j)] = 1;
    mask[at.at(p + "b_up")][static_cast<std::size_t>(j)] = 1;
    auto& down = mask[at.at(p + "w_down")];
    for (Eigen::Index k = 0; k < d; ++k) down[static_cast<std::size_t>(j * d + k)] = 1;
  }
  return mask;
}

std::vector<Neuron> complement(const ModelSpec& spec, const std::vector<Neuron>& set) {
  const std::set<Neuron> s(set.begin(), set.end());
  std::vector<Neuron> out;
  for (int l = 0; l < spec.n_layers; ++l)
    for (int j = 0; j < spec.mlp_dim; ++j)
      if (!s.count({l, j})) out.emplace_back(l, j);
  return out;
}

std::vector<Neuron> random_neurons(const ModelSpec& spec, int count, const std::vector<Neuron>& exclude,
                                   std::uint64_t seed) {
  auto pool = complement(spec, exclude);
  require(count >= 0 && count <= static_cast<int>(pool.size()), ErrorCode::kInvalidArgument,
          "not enough neurons to draw from");
  std::mt19937_64 rng(seed);
  std::shuffle(pool.begin(), pool.end(), rng);
  pool.resize(count);
  std::sort(pool.begin(), pool.end());
  return pool;
}

EnhanceArm enhance(const ModelHandle& model, const std::string& name, const std::vector<Neuron>& neurons,
                   const std::vector<Example>& train, const std::vector<Example>& eval, const EnhanceConfig& cfg) {
  require(!neurons.empty(), ErrorCode::kInvalidArgument, "no neurons to train");
  require(!train.empty(), ErrorCode::kInvalidArgument, "no training examples");
  require(cfg.epochs >= 0 && cfg.batch >= 1 && cfg.lr > 0, ErrorCode::kInvalidArgument, "invalid training setup");
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& ex : train) seen.emplace(ex.prompt, ex.answer);
  for (const auto& ex : eval)
    require(!seen.count({ex.prompt, ex.answer}), ErrorCode::kValidation,
            "evaluation example '" + ex.prompt + "' is also in the training set");
  const std::string echo = " (epochs " + std::to_string(cfg.epochs) + ", batch " + std::to_string(cfg.batch) +
                           ", lr " + std::to_string(cfg.lr) + ", seed " + std::to_string(cfg.seed) + ")";
  ModelHandle work = model.clone();
  auto& tf = work.mutable_transformer();
  const ParameterMask mask = neuron_mask(tf.weights(), neurons);
  const std::uint64_t before = frozen_checksum(tf.weights(), &mask);

  std::vector<LmExample> data;
  for (const auto& ex : train) {
    LmExample le;
    le.ids = work.tokenize(ex.prompt).ids;
    le.loss_start = static_cast<int>(le.ids.size());
    const auto ans = work.continuation_ids(ex.prompt, ex.answer);
    le.ids.insert(le.ids.end(), ans.begin(), ans.end());
    data.push_back(std::move(le));
  }

  EnhanceArm arm;
  arm.name = name;
  arm.n_neurons = static_cast<int>(neurons.size());
  arm.acc_before = exact_match_accuracy(model, eval);

  Adam opt(tf.weights(), AdamConfig{});
  std::mt19937_64 rng(cfg.seed);
  std::vector<int> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss = 0.0;
    int count = 0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch) {
      const std::size_t e = std::min(order.size(), b + cfg.batch);
      int tokens = 0;
      for (std::size_t i = b; i < e; ++i)
        tokens += static_cast<int>(data[order[i]].ids.size()) - data[order[i]].loss_start;
      Weights grads = Weights::zeros(tf.spec());
      for (std::size_t i = b; i < e; ++i) {
        const auto st = accumulate_lm_gradients(tf, data[order[i]], grads, 1.0 / tokens);
        loss += st.loss_sum;
        count += st.count;
      }
      opt.step(tf.mutable_weights(), grads, cfg.lr, &mask);
    }
    arm.final_loss = loss / std::max(count, 1);
    require(std::isfinite(arm.final_loss), ErrorCode::kNumerical, "training loss became non-finite" + echo);
  }
  for (const auto& t : tf.weights().tensors())
    for (Eigen::Index i = 0; i < t.size(); ++i)
      require(std::isfinite(t.data[i]), ErrorCode::kNumerical, "non-finite parameter after training" + echo);
  arm.frozen_intact = frozen_checksum(tf.weights(), &mask) == before;
  arm.acc_after = exact_match_accuracy(work, eval);
  return arm;
}

EnhanceTable enhancement_table(const ModelHandle& model, const std::vector<Neuron>& located,
                               const std::vector<Example>& train, const std::vector<Example>& eval,
                               const EnhanceConfig& cfg) {
  EnhanceTable t;
  t.base_accuracy = exact_match_accuracy(model, eval);
  const auto rnd = random_neurons(model.spec(), static_cast<int>(located.size()), located, cfg.seed + 1);
  t.arms.push_back(enhance(model, "located", located, train, eval, cfg));
  t.arms.push_back(enhance(model, "random", rnd, train, eval, cfg));
  t.arms.push_back(enhance(model, "w/o located", complement(model.spec(), located), train, eval, cfg));
  return t;
}

std::string enhancement_text(const EnhanceTable& t) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(3);
  os << "base accuracy " << t.base_accuracy << "\n";
  os << std::left << std::setw(14) << "neurons" << std::right << std::setw(8) << "count" << std::setw(10)
     << "before" << std::setw(10) << "after" << std::setw(10) << "loss" << std::setw(8) << "frozen" << "\n";
  for (const auto& a : t.arms)
    os << std::left << std::setw(14) << a.name << std::right << std::setw(8) << a.n_neurons << std::setw(10)
       << a.acc_before << std::setw(10) << a.acc_after << std::setw(10) << a.final_loss << std::setw(8)
       << (a.frozen_intact ? "ok" : "CHANGED") << "\n";
  return os.str();
}

}  // namespace knowmri::capability
