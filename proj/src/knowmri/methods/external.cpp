#include "knowmri/methods/external.hpp"

#include <algorithm>
#include <cmath>
#include <regex>
#include <sstream>

#include "knowmri/error.hpp"

namespace knowmri::methods {

using namespace knowmri::model;

IgOutput integrated_gradients_core(const Field& f, const Mat& input, const Mat& baseline, int steps) {
  require(steps >= 1, ErrorCode::kInvalidArgument, "integrated gradients needs steps >= 1");
  require(input.rows() == baseline.rows() && input.cols() == baseline.cols(), ErrorCode::kShapeMismatch,
          "baseline and input differ in shape");
  const Mat delta = input - baseline;
  Mat sum = Mat::Zero(input.rows(), input.cols());
  Mat grad(input.rows(), input.cols());
  IgOutput out;
  for (int n = 1; n <= steps; ++n) {
    const double a = static_cast<double>(n) / steps;
    const double v = f(baseline + a * delta, grad);
    require(grad.allFinite(), ErrorCode::kNumerical, "non-finite gradient on the attribution path");
    sum += grad;
    if (n == steps) out.f_input = v;
  }
  out.f_baseline = f(baseline, grad);
  out.scores = (delta.array() * sum.array()).rowwise().sum() / steps;
  return out;
}

int first_target_token(const ModelHandle& model, const std::string& prompt, const std::string& continuation) {
  const auto ids = model.continuation_ids(prompt, continuation);
  require(!ids.empty(), ErrorCode::kInvalidArgument, "ground truth produced no tokens");
  return ids.front();
}

AttributionSeries integrated_gradients(const ModelHandle& model, const std::vector<int>& ids, int target,
                                       const IgConfig& cfg) {
  const auto& spec = model.spec();
  require(target >= 0 && target < spec.vocab_size, ErrorCode::kOutOfRange, "target token outside vocabulary");
  const int T = static_cast<int>(ids.size());
  const auto& w = model.weights();
  Mat input(T, spec.hidden_dim), base(T, spec.hidden_dim);
  int pad = cfg.pad_token >= 0 ? cfg.pad_token : std::min(static_cast<int>(' '), spec.vocab_size - 1);
  require(pad < spec.vocab_size, ErrorCode::kOutOfRange, "pad token outside vocabulary");
  for (int t = 0; t < T; ++t) {
    input.row(t) = w.tok_emb.row(ids[t]) + w.pos_emb.row(t);
    base.row(t) = w.pos_emb.row(t);
    if (cfg.baseline == IgBaseline::kPadEmbedding) base.row(t) += w.tok_emb.row(pad);
  }
  std::vector<SiteRef> sites;
  for (int t = 0; t < T; ++t) sites.push_back(SiteRef::embedding(t));
  const Field f = [&](const Mat& x, Mat& grad) {
    std::vector<Intervention> ivs;
    ivs.reserve(T);
    for (int t = 0; t < T; ++t) ivs.push_back({sites[t], SetValue{std::vector<double>(x.row(t).data(), x.row(t).data() + x.cols())}});
    // Gradients are read at the post-intervention value, which is x itself.
    const GradResult g = model.grad_wrt_sites(ids, target, sites, ivs);
    grad.resize(T, spec.hidden_dim);
    for (int t = 0; t < T; ++t) grad.row(t) = g.site_grads[t].grad;
    return g.probability;
  };
  const IgOutput ig = integrated_gradients_core(f, input, base, cfg.steps);

  AttributionSeries out;
  const auto& tok = model.tokenizer();
  for (int id : ids) out.tokens.push_back(tok.token_bytes(id));
  out.scores.assign(ig.scores.data(), ig.scores.data() + ig.scores.size());
  out.target_token = target;
  out.target_text = tok.token_bytes(target);
  out.baseline = cfg.baseline == IgBaseline::kZeroEmbedding ? "zero_embedding" : "pad_embedding";
  out.steps = cfg.steps;
  out.p_input = ig.f_input;
  out.p_baseline = ig.f_baseline;
  double total = 0.0;
  for (double s : out.scores) total += s;
  out.completeness_gap = std::abs(total - (out.p_input - out.p_baseline));
  return out;
}

AttributionSeries integrated_gradients(const ModelHandle& model, const std::string& prompt,
                                       const std::string& ground_truth, const IgConfig& cfg) {
  const auto ids = model.tokenize(prompt).ids;
  return integrated_gradients(model, ids, first_target_token(model, prompt, ground_truth), cfg);
}

TextExplanation parse_self_explanation(const std::string& raw) {
  TextExplanation out;
  out.raw_text = raw;
  static const std::regex line_re(R"(^\s*[-*]?\s*(.*?\S)\s*[:=]\s*(\d+(?:\.\d+)?)\s*(?:/\s*10)?\s*$)");
  std::istringstream in(raw);
  std::string line;
  while (std::getline(in, line)) {
    std::smatch m;
    if (!std::regex_match(line, m, line_re)) continue;
    double v = 0.0;
    try {
      v = std::stod(m[2].str());
    } catch (...) {
      continue;
    }
    if (v < 0.0 || v > 10.0) continue;
    out.ratings.emplace_back(m[1].str(), v / 10.0);
  }
  out.parse_ok = !out.ratings.empty();
  return out;
}

TextExplanation self_explanation(const ModelHandle& model, const std::string& prompt, int max_new) {
  std::string instruction = kSelfExplanationTemplate;
  instruction.replace(instruction.find("{prompt}"), 8, prompt);
  const auto ids = model.tokenize(instruction).ids;
  const int room = model.spec().max_seq_len - static_cast<int>(ids.size());
  require(room >= 1, ErrorCode::kOutOfRange, "prompt too long for the self-explanation instruction");
  const auto out = model.generate(ids, std::min(max_new, room));
  const std::vector<int> fresh(out.begin() + static_cast<std::ptrdiff_t>(ids.size()), out.end());
  TextExplanation e = parse_self_explanation(model.detokenize(fresh));
  e.instruction = instruction;
  return e;
}

}  // namespace knowmri::methods
