#include <doctest.h>

#include <algorithm>
#include <random>

#include "fixtures.hpp"
#include "knowmri/error.hpp"
#include "knowmri/methods/external.hpp"
#include "knowmri/methods/module.hpp"
#include "knowmri/methods/representation.hpp"
#include "knowmri/model/last_token.hpp"

using namespace knowmri;
using namespace knowmri::methods;
using namespace knowmri::model;

namespace {

double target_prob(const ModelHandle& m, const std::string& prompt, int target) {
  return next_token_distribution(m.forward_trace(m.tokenize(prompt).ids))(target);
}

}  // namespace

TEST_CASE("integrated gradients are exact on a linear field") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n;
  Mat w(5, 4), x(5, 4), b(5, 4);
  for (auto* m : {&w, &x, &b})
    for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = n(rng);
  const Field f = [&](const Mat& at, Mat& g) {
    g = w;
    return (w.array() * at.array()).sum();
  };
  for (int steps : {1, 7, 300}) {
    const auto out = integrated_gradients_core(f, x, b, steps);
    for (int i = 0; i < 5; ++i) CHECK(out.scores(i) == doctest::Approx(((x - b).row(i).array() * w.row(i).array()).sum()).epsilon(1e-9));
    CHECK(std::abs(out.scores.sum() - (out.f_input - out.f_baseline)) < 1e-6);
  }
  CHECK_THROWS_AS(integrated_gradients_core(f, x, b, 0), Error);
}

TEST_CASE("integrated gradients on the model satisfy completeness") {
  auto m = fixtures::tiny_model();
  for (const std::string prompt : {"abc", "hello w"}) {
    const auto a = integrated_gradients(m, prompt, "z", {.steps = 300});
    CHECK(a.tokens.size() == a.scores.size());
    CHECK(a.p_input == doctest::Approx(target_prob(m, prompt, a.target_token)).epsilon(1e-12));
    CHECK(a.completeness_gap <= 0.02);
  }
  const auto pad = integrated_gradients(m, "abc", "z", {.steps = 20, .baseline = IgBaseline::kPadEmbedding});
  CHECK(pad.baseline == "pad_embedding");
}

TEST_CASE("self-explanation parsing is total") {
  const auto e = parse_self_explanation("MacApp: 9\n- product = 3/10\nnoise line\ncreated: 42\nby:1.5\n");
  REQUIRE(e.ratings.size() == 3);
  CHECK(e.ratings[0] == TokenScore{"MacApp", 0.9});
  CHECK(e.ratings[1].first == "product");
  CHECK(e.ratings[2].second == doctest::Approx(0.15));
  CHECK(e.parse_ok);
  std::mt19937_64 rng(1);
  for (int i = 0; i < 300; ++i) {
    std::string s(rng() % 40, ' ');
    for (auto& c : s) c = static_cast<char>(rng() % 256);
    CHECK_NOTHROW(parse_self_explanation(s));
  }
  CHECK_FALSE(parse_self_explanation("").parse_ok);
  auto m = fixtures::tiny_model();
  const auto out = self_explanation(m, "abc", 5);
  CHECK(out.instruction.find("abc") == 0);
}

TEST_CASE("logit lens ends on the model's own prediction") {
  auto m = fixtures::tiny_model();
  const auto t = logit_lens(m, "hello there", 4);
  REQUIRE(t.rows.size() == static_cast<std::size_t>(m.spec().n_layers + 1));
  const RowVec p = next_token_distribution(m.forward_trace(m.tokenize("hello there").ids));
  const auto top = top_k_indices(p, 4);
  for (int i = 0; i < 4; ++i) {
    CHECK(t.rows.back().top[i].first == m.tokenizer().token_bytes(top[i]));
    CHECK(t.rows.back().top[i].second == p(top[i]));
  }
  REQUIRE(t.earliest_match_layer);
  CHECK(*t.earliest_match_layer <= m.spec().n_layers);
  // intermediate rows use the same head on the residual stream
  const auto tr = m.forward_trace(m.tokenize("hello there").ids);
  const RowVec p1 = softmax(m.apply_unembedding(tr.hidden[1].row(tr.length() - 1), true));
  CHECK(t.rows[1].top[0].second == doctest::Approx(p1.maxCoeff()).epsilon(1e-12));
}

TEST_CASE("patching the top hidden state reproduces the source prediction") {
  auto m = fixtures::tiny_model();
  const std::string src = "quick fox";
  const int L = m.spec().n_layers;
  const auto same = patchscopes(m, src, {.target_prompt = src, .target_position = -1});
  REQUIRE(same.rows.size() == static_cast<std::size_t>(L + 1));
  CHECK(same.rows[L].top[0].first == same.reference_token);
  const auto scaff = patchscopes(m, src);
  CHECK(scaff.rows[L].top[0].first == scaff.reference_token);
  REQUIRE(scaff.earliest_match_layer);
  CHECK(*scaff.earliest_match_layer <= L);
  const auto sc = identity_scaffold(m);
  CHECK(sc.text.find("? →") != std::string::npos);
  CHECK(m.tokenize(sc.text).surface[sc.placeholder] == "?");
  CHECK_THROWS_AS(patchscopes(m, src, {.target_prompt = src, .target_position = 99}), Error);
}

TEST_CASE("sparse probe codes are non-negative and deterministic") {
  auto m = fixtures::tiny_model();
  std::vector<int> ids = {97, 98, 99, 100, 101, 102, 103, 104};
  const auto a = spine_probe(m, ids, {.hidden_dim = 12, .epochs = 50, .seed = 4});
  const auto b = spine_probe(m, ids, {.hidden_dim = 12, .epochs = 50, .seed = 4});
  CHECK((a.codes.array() >= 0).all());
  CHECK(a.codes == b.codes);
  CHECK(a.report.sparsity >= 0);
  CHECK(a.report.sparsity <= 1);
  CHECK(a.report.dimensions.size() == 8);
  const auto exact = spine_probe(m, ids, {.hidden_dim = 32, .l1_weight = 0.0, .epochs = 3000, .lr = 1e-2, .seed = 1});
  CHECK(exact.report.reconstruction_error <= 1e-3);
  const auto mid = spine_probe(m, ids, {.hidden_dim = 32, .l1_weight = 0.1, .epochs = 3000, .lr = 1e-2, .seed = 1});
  const auto sparse = spine_probe(m, ids, {.hidden_dim = 32, .l1_weight = 1.0, .epochs = 3000, .lr = 1e-2, .seed = 1});
  CHECK(mid.report.sparsity >= exact.report.sparsity);
  CHECK(sparse.report.sparsity >= mid.report.sparsity);
  CHECK_THROWS_AS(spine_probe(m, {97}, {}), Error);
}

TEST_CASE("neuron top tokens follow the value vector logits") {
  auto m = fixtures::tiny_model();
  const auto top = neuron_top_tokens(m, 1, 3, 6);
  const RowVec logits = m.weights().blocks[1].w_down.row(3) * m.weights().tok_emb.transpose();
  std::vector<int> order(logits.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return logits(a) > logits(b); });
  for (int i = 0; i < 6; ++i) CHECK(top[i].first == m.tokenizer().token_bytes(order[i]));
  CHECK_THROWS_AS(neuron_top_tokens(m, 5, 0, 3), Error);
  CHECK_THROWS_AS(neuron_top_tokens(m, 0, 999, 3), Error);
}

TEST_CASE("knowledge neuron attributions sum to the layer's probability change") {
  auto m = fixtures::tiny_model();
  const std::string prompt = "abcd";
  const auto kn = knowledge_neurons(m, {prompt}, "e", {.steps = 400, .threshold = 0.0, .prompt_share = 0.0});
  CHECK(kn.retained.size() == static_cast<std::size_t>(m.spec().total_neurons()));
  const auto ids = m.tokenize(prompt).ids;
  const int target = first_target_token(m, prompt, "e");
  const auto clean = m.transformer().forward(ids, {});
  for (int l = 0; l < m.spec().n_layers; ++l) {
    const LastTokenProbe probe(m.transformer(), clean, l);
    const double delta = probe.eval(probe.clean_activation(), target) -
                         probe.eval(RowVec::Zero(m.spec().mlp_dim), target);
    CHECK(kn.mean_scores.row(l).sum() == doctest::Approx(delta).epsilon(0.02).scale(1e-3));
  }
  const auto strict = knowledge_neurons(m, {prompt, "xbcd"}, "e", {.steps = 10});
  CHECK(strict.retained.size() < kn.retained.size());
  CHECK(strict.report.top_neurons.size() <= 4);
  CHECK_THROWS_AS(knowledge_neurons(m, {}, "e"), Error);
}

TEST_CASE("fine scores match a direct computation") {
  auto m = fixtures::tiny_model();
  const std::string prompt = "abcd";
  const auto f = fine_neurons(m, prompt, "e", {.top_k = 3});
  const int target = first_target_token(m, prompt, "e");
  const auto tr = m.forward_trace(m.tokenize(prompt).ids);
  for (auto [l, j] : {std::pair{0, 0}, {1, 5}, {1, 23}}) {
    const RowVec u = m.apply_unembedding(m.weights().blocks[l].w_down.row(j), false);
    CHECK(f.scores(l, j) == doctest::Approx(tr.mlp_act[l](3, j) * u(target) / u.norm()).epsilon(1e-10));
  }
  REQUIRE(f.report.top_neurons.size() == 3);
  CHECK(f.report.top_neurons[0].score == f.scores.maxCoeff());
  CHECK(f.report.top_neurons[0].score >= f.report.top_neurons[1].score);
}

TEST_CASE("causal tracing identities") {
  auto m = fixtures::tiny_model();
  const std::string prompt = "the cat sat";
  const int L = m.spec().n_layers;
  const auto zero = causal_trace(m, prompt, "cat", "x", {.noise_multiplier = 0.0, .n_seeds = 2});
  for (const auto& g : zero.grids)
    for (const auto& row : g.effect)
      for (double e : row) CHECK(e == 0.0);
  const auto t = causal_trace(m, prompt, "cat", "x", {.seeds = {11, 3, 7}});
  CHECK(t.subject_begin == 4);
  CHECK(t.subject_end == 7);
  const auto& hidden = t.grids[0];
  CHECK(hidden.site_kind == "hidden_state");
  const int T = static_cast<int>(t.tokens.size());
  CHECK(hidden.effect[L - 1][T - 1] == t.clean_prob - t.corrupted_prob);
  // tokens before the subject never see the noise
  for (int l = 0; l < L; ++l) CHECK(hidden.effect[l][0] == 0.0);
  const auto perm = causal_trace(m, prompt, "cat", "x", {.seeds = {7, 11, 3}});
  CHECK(perm.grids[1].effect == t.grids[1].effect);
  CHECK_THROWS_AS(causal_trace(m, prompt, "dog", "x"), Error);
  CHECK_THROWS_AS(causal_trace(m, prompt, "cat", "x", {.window = L + 1}), Error);
  CHECK(stable_mean({0.1, 0.1, 0.1}) == 0.1);
}

TEST_CASE("embedding projection and attention map") {
  auto m = fixtures::tiny_model();
  const auto p = embedding_projection(m, "abca", 3);
  REQUIRE(p.coords.size() == 4);
  CHECK(p.coords[0] == p.coords[3]);
  double sx = 0, sy = 0;
  for (auto [x, y] : p.coords) sx += x, sy += y;
  CHECK(std::abs(sx) < 1e-9);
  CHECK(std::abs(sy) < 1e-9);
  CHECK(p.neighbors[1][0].first == "b");
  CHECK(p.neighbors[1][0].second == doctest::Approx(1.0));
  CHECK(p.explained_variance.first >= p.explained_variance.second);
  CHECK_THROWS_AS(embedding_projection(m, "aaa"), Error);

  const auto a = attention_map(m, "abcd");
  REQUIRE(a.weights.size() == static_cast<std::size_t>(m.spec().n_layers));
  for (const auto& layer : a.weights)
    for (const auto& head : layer)
      for (std::size_t i = 0; i < head.size(); ++i) {
        double s = 0;
        for (std::size_t j = 0; j < head.size(); ++j) {
          if (j > i) CHECK(head[i][j] == 0.0);
          s += head[i][j];
        }
        CHECK(s == doctest::Approx(1.0));
      }
}
