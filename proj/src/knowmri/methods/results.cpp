#include "knowmri/methods/results.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "knowmri/error.hpp"

namespace knowmri::methods {
namespace {

constexpr const char* kKindNames[] = {"attribution_series", "layer_token_grid",  "neuron_report",
                                      "layer_decode_table", "attention_grid",    "projection_map",
                                      "text_explanation",   "sparse_code_report"};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

nlohmann::json pairs(const std::vector<TokenScore>& v) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& [t, s] : v) out.push_back({{"token", t}, {"score", s}});
  return out;
}

struct ToJson {
  nlohmann::json operator()(const AttributionSeries& a) const {
    return {{"tokens", a.tokens},          {"scores", a.scores},        {"target_token", a.target_token},
            {"target_text", a.target_text}, {"baseline", a.baseline},    {"steps", a.steps},
            {"p_input", a.p_input},        {"p_baseline", a.p_baseline}, {"completeness_gap", a.completeness_gap}};
  }
  nlohmann::json operator()(const TraceGridSet& g) const {
    nlohmann::json grids = nlohmann::json::array();
    for (const auto& t : g.grids) grids.push_back({{"site_kind", t.site_kind}, {"effect", t.effect}, {"window", t.window}});
    return {{"tokens", g.tokens},
            {"subject_span", {g.subject_begin, g.subject_end}},
            {"target_text", g.target_text},
            {"clean_prob", g.clean_prob},
            {"corrupted_prob", g.corrupted_prob},
            {"noise_std", g.noise_std},
            {"n_seeds", g.n_seeds},
            {"grids", grids}};
  }
  nlohmann::json operator()(const NeuronReport& r) const {
    nlohmann::json top = nlohmann::json::array();
    for (const auto& n : r.top_neurons)
      top.push_back({{"neuron", neuron_label(n.layer, n.unit)},
                     {"layer", n.layer},
                     {"unit", n.unit},
                     {"score", n.score},
                     {"top_tokens", n.top_tokens}});
    nlohmann::json j = {{"top_neurons", top}, {"normalization", r.normalization}, {"target_text", r.target_text},
                        {"retained", r.retained}};
    if (!r.note.empty()) j["note"] = r.note;
    return j;
  }
  nlohmann::json operator()(const LayerDecodeTable& t) const {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : t.rows) rows.push_back({{"layer", r.layer}, {"top", pairs(r.top)}});
    nlohmann::json j = {{"mode", t.mode}, {"k", t.k}, {"rows", rows}, {"reference_token", t.reference_token},
                        {"earliest_match_layer", nullptr}};
    if (t.earliest_match_layer) j["earliest_match_layer"] = *t.earliest_match_layer;
    if (t.mode == "patchscopes") {
      j["target_prompt"] = t.target_prompt;
      j["target_position"] = t.target_position;
    }
    return j;
  }
  nlohmann::json operator()(const AttentionGrid& a) const { return {{"tokens", a.tokens}, {"weights", a.weights}}; }
  nlohmann::json operator()(const ProjectionMap& p) const {
    nlohmann::json coords = nlohmann::json::array();
    for (const auto& [x, y] : p.coords) coords.push_back({x, y});
    nlohmann::json nb = nlohmann::json::array();
    for (const auto& n : p.neighbors) nb.push_back(pairs(n));
    return {{"tokens", p.tokens},
            {"coords", coords},
            {"neighbors", nb},
            {"explained_variance", {p.explained_variance.first, p.explained_variance.second}}};
  }
  nlohmann::json operator()(const TextExplanation& t) const {
    return {{"instruction", t.instruction}, {"raw_text", t.raw_text}, {"ratings", pairs(t.ratings)},
            {"parse_ok", t.parse_ok}};
  }
  nlohmann::json operator()(const SparseCodeReport& s) const {
    nlohmann::json dims = nlohmann::json::array();
    for (const auto& d : s.dimensions) dims.push_back({{"index", d.index}, {"top", pairs(d.top)}});
    return {{"dimensions", dims},         {"sparsity", s.sparsity},   {"reconstruction_error", s.reconstruction_error},
            {"hidden_dim", s.hidden_dim}, {"l1_weight", s.l1_weight}, {"epochs", s.epochs},
            {"n_tokens", s.n_tokens}};
  }
};

std::vector<std::string> top_by_score(const std::vector<std::string>& labels, const std::vector<double>& scores) {
  std::vector<std::size_t> idx(labels.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<std::string> out;
  for (std::size_t i = 0; i < std::min<std::size_t>(3, idx.size()); ++i) out.push_back(labels[idx[i]]);
  return out;
}

struct Highlights {
  std::vector<std::string> operator()(const AttributionSeries& a) const {
    std::vector<std::string> labels;
    for (const auto& t : a.tokens) labels.push_back("'" + t + "'");
    return top_by_score(labels, a.scores);
  }
  std::vector<std::string> operator()(const TraceGridSet& g) const {
    std::vector<std::string> out;
    for (const auto& grid : g.grids) {
      double best = -2.0;
      int bl = 0, bt = 0;
      for (std::size_t l = 0; l < grid.effect.size(); ++l)
        for (std::size_t t = 0; t < grid.effect[l].size(); ++t)
          if (grid.effect[l][t] > best) best = grid.effect[l][t], bl = static_cast<int>(l), bt = static_cast<int>(t);
      if (!grid.effect.empty())
        out.push_back(grid.site_kind + " L" + std::to_string(bl) + " at '" + g.tokens[bt] + "' (" + fmt(best) + ")");
    }
    return out;
  }
  std::vector<std::string> operator()(const NeuronReport& r) const {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < std::min<std::size_t>(3, r.top_neurons.size()); ++i) {
      const auto& n = r.top_neurons[i];
      std::string s = neuron_label(n.layer, n.unit);
      if (!n.top_tokens.empty()) s += " ('" + n.top_tokens.front() + "')";
      out.push_back(s);
    }
    return out;
  }
  std::vector<std::string> operator()(const LayerDecodeTable& t) const {
    std::vector<std::string> out;
    out.push_back("'" + t.reference_token + "'");
    out.push_back(t.earliest_match_layer ? "layer " + std::to_string(*t.earliest_match_layer) : "no layer");
    if (!t.rows.empty() && !t.rows.front().top.empty()) out.push_back("'" + t.rows.front().top.front().first + "'");
    return out;
  }
  std::vector<std::string> operator()(const AttentionGrid& a) const {
    // strongest non-trivial attention from the last token, averaged over heads
    std::vector<std::string> out;
    if (a.weights.empty() || a.tokens.empty()) return out;
    const std::size_t T = a.tokens.size();
    std::vector<double> mean(T, 0.0);
    for (const auto& layer : a.weights)
      for (const auto& head : layer)
        for (std::size_t k = 0; k < T; ++k) mean[k] += head[T - 1][k];
    std::vector<std::string> labels;
    for (const auto& t : a.tokens) labels.push_back("'" + t + "'");
    return top_by_score(labels, mean);
  }
  std::vector<std::string> operator()(const ProjectionMap& p) const {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < p.tokens.size() && out.size() < 3; ++i) {
      if (p.neighbors[i].size() > 1) out.push_back("'" + p.tokens[i] + "'~'" + p.neighbors[i][1].first + "'");
    }
    return out;
  }
  std::vector<std::string> operator()(const TextExplanation& t) const {
    std::vector<std::string> labels;
    std::vector<double> scores;
    for (const auto& [w, s] : t.ratings) labels.push_back("'" + w + "'"), scores.push_back(s);
    return top_by_score(labels, scores);
  }
  std::vector<std::string> operator()(const SparseCodeReport& s) const {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < std::min<std::size_t>(3, s.dimensions.size()); ++i) {
      const auto& d = s.dimensions[i];
      std::string label = "dim " + std::to_string(d.index);
      if (!d.top.empty()) label += " ('" + d.top.front().first + "')";
      out.push_back(label);
    }
    return out;
  }
};

}  // namespace

const char* result_kind_name(ResultKind kind) { return kKindNames[static_cast<int>(kind)]; }

ResultKind parse_result_kind(const std::string& name) {
  for (int i = 0; i < 8; ++i)
    if (name == kKindNames[i]) return static_cast<ResultKind>(i);
  fail(ErrorCode::kInvalidArgument, "unknown result kind '" + name + "'");
}

std::string neuron_label(int layer, int unit) { return "L" + std::to_string(layer) + ".U" + std::to_string(unit); }

ResultKind result_kind(const Result& r) {
  static constexpr ResultKind order[] = {ResultKind::kAttributionSeries, ResultKind::kLayerTokenGrid,
                                         ResultKind::kNeuronReport,      ResultKind::kLayerDecodeTable,
                                         ResultKind::kAttentionGrid,     ResultKind::kProjectionMap,
                                         ResultKind::kTextExplanation,   ResultKind::kSparseCodeReport};
  return order[r.index()];
}

nlohmann::json result_to_json(const Result& r) { return std::visit(ToJson{}, r); }

std::vector<std::string> highlights(const Result& r) { return std::visit(Highlights{}, r); }

}  // namespace knowmri::methods
