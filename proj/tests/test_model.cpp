#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "fixtures.hpp"
#include "knowmri/error.hpp"
#include "knowmri/model/last_token.hpp"

using namespace knowmri;
using namespace knowmri::model;

namespace {

std::vector<int> some_ids(int n, std::uint64_t seed, int vocab) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> u(0, vocab - 1);
  std::vector<int> ids(n);
  for (auto& x : ids) x = u(rng);
  return ids;
}

double target_prob(const ModelHandle& h, const std::vector<int>& ids, int target, const std::vector<Intervention>& ivs) {
  return next_token_distribution(h.forward_trace(ids, ivs))(target);
}

// Directional finite difference of P(target) along the analytic gradient.
void check_gradient(const ModelHandle& h, const std::vector<int>& ids, int target, const SiteRef& site) {
  const auto clean = h.forward_trace(ids);
  const RowVec x = read_site(clean, site);
  const SiteRef sites[] = {site};
  const GradResult g = h.grad_wrt_sites(ids, target, sites);
  const RowVec grad = g.site_grads.at(0).grad;
  const double gnorm = grad.norm();
  if (site.layer == h.spec().n_layers - 1 && site.token != static_cast<int>(ids.size()) - 1 &&
      site.kind != SiteKind::kEmbedding) {
    // the top block at earlier positions cannot reach the final logits
    CHECK(gnorm == 0.0);
    return;
  }
  REQUIRE(gnorm > 1e-9);
  const RowVec u = grad / gnorm;
  const double eps = 1e-5;
  auto at = [&](double s) {
    RowVec v = x + s * u;
    std::vector<Intervention> ivs{{site, SetValue{std::vector<double>(v.data(), v.data() + v.size())}}};
    return target_prob(h, ids, target, ivs);
  };
  const double fd = (at(eps) - at(-eps)) / (2 * eps);
  INFO(site.to_string(), " analytic=", gnorm, " fd=", fd);
  CHECK(std::abs(fd - gnorm) / std::max(std::abs(fd), 1e-12) < 1e-2);
}

}  // namespace

TEST_CASE("byte tokenizer round-trips arbitrary text") {
  Tokenizer tok(300);
  auto seq = tok.encode("abc");
  CHECK(seq.ids == std::vector<int>{'a', 'b', 'c'});
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> byte(1, 255);
  for (int trial = 0; trial < 50; ++trial) {
    std::string s;
    for (int i = 0; i < 1 + trial; ++i) s.push_back(static_cast<char>(byte(rng)));
    CHECK(tok.decode(tok.encode(s).ids) == s);
  }
}

TEST_CASE("trained tokenizer round-trips and reports offsets") {
  std::vector<std::string> corpus = {"the cat sat on the mat", "the dog sat on the log", "cats and dogs"};
  auto tok = Tokenizer::train(corpus, 280);
  CHECK(tok.merges().size() <= 24);
  const std::string s = "the cat and the dog, 42 times!";
  const auto seq = tok.encode(s);
  CHECK(tok.decode(seq.ids) == s);
  CHECK(seq.ids.size() < s.size());
  REQUIRE(seq.offsets.size() == seq.ids.size());
  for (std::size_t i = 0; i < seq.size(); ++i) CHECK(s.substr(seq.offsets[i].first, seq.offsets[i].second - seq.offsets[i].first) == seq.surface[i]);
  // digits never merge
  for (const auto& piece : tok.encode("12345").surface) CHECK(piece.size() == 1);
}

TEST_CASE("small vocabulary maps unseen bytes to unk") {
  Tokenizer tok(100);
  const auto seq = tok.encode("a\x7f");
  CHECK(seq.ids[0] == 'a');
  CHECK(seq.ids[1] == 99);
}

TEST_CASE("tokenizer save and load") {
  fixtures::TempDir dir("tok");
  auto tok = Tokenizer::train({"hello hello world world wide web"}, 270);
  tok.save(dir.path / "t.txt");
  auto back = Tokenizer::load(dir.path / "t.txt", 270);
  CHECK(back.merges() == tok.merges());
  CHECK(back.encode("hello world").ids == tok.encode("hello world").ids);
}

TEST_CASE("spec validation") {
  auto s = fixtures::tiny_spec();
  CHECK_NOTHROW(s.validate());
  s.n_heads = 5;
  CHECK_THROWS_AS(s.validate(), Error);
  s = fixtures::tiny_spec();
  s.layernorm_style = LayerNormStyle::kPost;
  CHECK_THROWS_AS(Transformer(s, Weights::zeros(s)), Error);
}

TEST_CASE("checkpoint round trip and corruption") {
  auto h = fixtures::tiny_model();
  fixtures::TempDir dir("ckpt");
  h.save(dir.path / "m");
  auto back = ModelHandle::load(dir.path / "m");
  CHECK(back.spec() == h.spec());
  const auto a = h.weights().tensors();
  const auto b = back.weights().tensors();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    for (Eigen::Index j = 0; j < a[i].size(); ++j)
      REQUIRE(b[i].data[j] == static_cast<double>(static_cast<float>(a[i].data[j])));

  std::filesystem::resize_file(dir.path / "m" / "blocks.1.mlp.w_up.bin", 12);
  try {
    (void)ModelHandle::load(dir.path / "m");
    FAIL("truncated tensor accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kShapeMismatch);
  }
  try {
    (void)ModelHandle::load(dir.path / "missing");
    FAIL("missing checkpoint accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kIo);
  }
}

TEST_CASE("forward is deterministic and attention is causal") {
  auto h = fixtures::tiny_model();
  const auto ids = some_ids(9, 1, h.spec().vocab_size);
  const auto t1 = h.forward_trace(ids);
  const auto t2 = h.forward_trace(ids);
  CHECK((t1.logits.array() == t2.logits.array()).all());
  for (const auto& layer : t1.attn) {
    for (const auto& a : layer) {
      for (int q = 0; q < a.rows(); ++q) {
        CHECK(std::abs(a.row(q).sum() - 1.0) < 1e-12);
        for (int k = q + 1; k < a.cols(); ++k) CHECK(a(q, k) == 0.0);
      }
    }
  }
  // a prefix sees the same logits as the full sequence at shared positions
  const std::vector<int> prefix(ids.begin(), ids.begin() + 5);
  const auto tp = h.forward_trace(prefix);
  CHECK((tp.logits - t1.logits.topRows(5)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("identity interventions leave the pass unchanged") {
  auto h = fixtures::tiny_model();
  const auto ids = some_ids(7, 2, h.spec().vocab_size);
  const auto clean = h.forward_trace(ids);
  const std::vector<SiteRef> sites = {SiteRef::hidden(0, 3), SiteRef::attn_output(1, 6), SiteRef::mlp_output(0, 0),
                                      SiteRef::neuron(1, 4, 5), SiteRef::embedding(2)};
  for (const auto& s : sites) {
    const RowVec v = read_site(clean, s);
    std::vector<Intervention> set{{s, SetValue{std::vector<double>(v.data(), v.data() + v.size())}}};
    CHECK((h.forward_trace(ids, set).logits.array() == clean.logits.array()).all());
    std::vector<Intervention> zero{{s, AddNoise{0.0, 11}}};
    CHECK((h.forward_trace(ids, zero).logits.array() == clean.logits.array()).all());
    std::vector<Intervention> one{{s, Scale{1.0}}};
    CHECK((h.forward_trace(ids, one).logits.array() == clean.logits.array()).all());
  }
}

TEST_CASE("interventions apply in order and noise is seeded") {
  auto h = fixtures::tiny_model();
  const auto ids = some_ids(6, 3, h.spec().vocab_size);
  const auto s = SiteRef::hidden(0, 2);
  std::vector<Intervention> a{{s, AddNoise{0.5, 9}}};
  std::vector<Intervention> b{{s, AddNoise{0.5, 9}}};
  std::vector<Intervention> c{{s, AddNoise{0.5, 10}}};
  CHECK((h.forward_trace(ids, a).logits.array() == h.forward_trace(ids, b).logits.array()).all());
  CHECK((h.forward_trace(ids, a).logits.array() != h.forward_trace(ids, c).logits.array()).any());
  // scale by 2 then set: set wins
  const RowVec v = read_site(h.forward_trace(ids), s);
  std::vector<Intervention> scale_then_set{{s, Scale{2.0}}, {s, SetValue{std::vector<double>(v.data(), v.data() + v.size())}}};
  CHECK((h.forward_trace(ids, scale_then_set).logits.array() == h.forward_trace(ids).logits.array()).all());
}

TEST_CASE("invalid sites are rejected") {
  auto h = fixtures::tiny_model();
  const auto ids = some_ids(4, 4, h.spec().vocab_size);
  auto expect = [&](const SiteRef& s, ErrorCode code) {
    std::vector<Intervention> iv{{s, Scale{0.0}}};
    try {
      (void)h.forward_trace(ids, iv);
      FAIL("accepted ", s.to_string());
    } catch (const Error& e) {
      CHECK(e.code() == code);
    }
  };
  expect(SiteRef::hidden(2, 0), ErrorCode::kOutOfRange);
  expect(SiteRef::hidden(0, 4), ErrorCode::kOutOfRange);
  expect(SiteRef::neuron(0, 0, 24), ErrorCode::kOutOfRange);
  std::vector<Intervention> bad{{SiteRef::hidden(0, 0), SetValue{{1.0, 2.0}}}};
  CHECK_THROWS_AS(h.forward_trace(ids, bad), Error);
  CHECK_THROWS_AS(h.tokenize(""), Error);
}

TEST_CASE("site gradients match finite differences") {
  auto h = fixtures::tiny_model();
  const auto ids = some_ids(6, 5, h.spec().vocab_size);
  const int target = top_k_indices(next_token_distribution(h.forward_trace(ids)), 3)[2];
  for (int l = 0; l < h.spec().n_layers; ++l) {
    for (int t : {1, 5}) {
      check_gradient(h, ids, target, SiteRef::hidden(l, t));
      check_gradient(h, ids, target, SiteRef::attn_output(l, t));
      check_gradient(h, ids, target, SiteRef::mlp_output(l, t));
      for (int j : {0, 11}) check_gradient(h, ids, target, SiteRef::neuron(l, t, j));
    }
  }
  check_gradient(h, ids, target, SiteRef::embedding(0));
  check_gradient(h, ids, target, SiteRef::embedding(5));
}

TEST_CASE("gradients see through upstream interventions") {
  auto h = fixtures::tiny_model();
  const auto ids = some_ids(6, 6, h.spec().vocab_size);
  const auto site = SiteRef::neuron(1, 5, 3);
  std::vector<Intervention> cut{{SiteRef::hidden(0, 5), Scale{0.0}}};
  const SiteRef sites[] = {site, SiteRef::hidden(0, 5), SiteRef::mlp_output(0, 5)};
  const auto g = h.grad_wrt_sites(ids, 1, sites, cut);
  CHECK(g.site_grads[1].grad.norm() > 0.0);
  CHECK(g.site_grads[2].grad.norm() == 0.0);
  CHECK(g.site_grads[0].grad.norm() > 0.0);
  CHECK(g.probability == doctest::Approx(target_prob(h, ids, 1, cut)).epsilon(1e-12));
}

TEST_CASE("parameter gradients match finite differences") {
  auto h = fixtures::tiny_model(8, fixtures::tiny_spec(1, 8, 12, 2, 40));
  const LmExample ex{some_ids(6, 7, 40), 2};
  Weights grads = Weights::zeros(h.spec());
  accumulate_lm_gradients(h.transformer(), ex, grads);
  auto views = h.mutable_transformer().mutable_weights().tensors();
  const auto gviews = grads.tensors();
  for (std::size_t i = 0; i < views.size(); ++i) {
    for (Eigen::Index j : {Eigen::Index{0}, views[i].size() - 1}) {
      const double orig = views[i].data[j];
      const double eps = 1e-6;
      views[i].data[j] = orig + eps;
      const double up = lm_loss(h.transformer(), ex).loss_sum;
      views[i].data[j] = orig - eps;
      const double dn = lm_loss(h.transformer(), ex).loss_sum;
      views[i].data[j] = orig;
      const double fd = (up - dn) / (2 * eps);
      INFO(views[i].name, "[", j, "] analytic=", gviews[i].data[j], " fd=", fd);
      CHECK(std::abs(fd - gviews[i].data[j]) <= 1e-6 + 1e-4 * std::abs(fd));
    }
  }
}

TEST_CASE("masked Adam leaves frozen parameters bit-identical") {
  auto h = fixtures::tiny_model();
  auto& w = h.mutable_transformer().mutable_weights();
  ParameterMask mask;
  for (const auto& t : w.tensors()) mask.emplace_back(static_cast<std::size_t>(t.size()), t.name == "blocks.0.mlp.b_up");
  const auto before = frozen_checksum(w, &mask);
  const RowVec bup = w.blocks[0].b_up;
  Adam opt(w);
  Weights grads = Weights::zeros(h.spec());
  accumulate_lm_gradients(h.transformer(), {some_ids(8, 8, 300), 1}, grads);
  opt.step(w, grads, 1e-2, &mask);
  CHECK(frozen_checksum(w, &mask) == before);
  CHECK((w.blocks[0].b_up - bup).norm() > 0.0);
}

TEST_CASE("unembedding the last hidden state reproduces the logits") {
  auto h = fixtures::tiny_model();
  const auto ids = some_ids(5, 9, h.spec().vocab_size);
  const auto tr = h.forward_trace(ids);
  const RowVec last = tr.hidden.back().row(4);
  CHECK((h.apply_unembedding(last, true) - tr.logits.row(4)).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("generation") {
  auto h = fixtures::tiny_model();
  const auto ids = some_ids(4, 10, h.spec().vocab_size);
  const auto g1 = h.generate(ids, 5);
  CHECK(g1.size() == 9);
  CHECK(std::equal(ids.begin(), ids.end(), g1.begin()));
  CHECK(g1 == h.generate(ids, 5));
  CHECK(g1[4] == top_k_indices(next_token_distribution(h.forward_trace(ids)), 1)[0]);
  CHECK(h.generate(ids, 5, Decoding::top_k(5, 42)) == h.generate(ids, 5, Decoding::top_k(5, 42)));
  CHECK_THROWS_AS(h.generate(ids, 0), Error);
  CHECK_THROWS_AS(h.generate(ids, 40), Error);
}

TEST_CASE("last-token probe matches the full pass") {
  auto h = fixtures::tiny_model(12, fixtures::tiny_spec(3, 16, 24, 2, 300));
  const auto ids = some_ids(7, 12, 300);
  const ForwardState clean = h.transformer().forward(ids, {});
  for (int l = 0; l < 3; ++l) {
    LastTokenProbe probe(h.transformer(), clean, l);
    for (double alpha : {0.0, 0.35, 1.0}) {
      std::vector<Intervention> ivs;
      std::vector<SiteRef> sites;
      for (int j = 0; j < 24; ++j) {
        ivs.push_back({SiteRef::neuron(l, 6, j), Scale{alpha}});
        sites.push_back(SiteRef::neuron(l, 6, j));
      }
      const auto full = h.grad_wrt_sites(ids, 5, sites, ivs);
      RowVec g;
      const double p = probe.eval(alpha * probe.clean_activation(), 5, &g);
      CHECK(p == doctest::Approx(full.probability).epsilon(1e-12));
      for (int j = 0; j < 24; ++j) CHECK(std::abs(g(j) - full.site_grads[j].grad(0)) < 1e-12);
    }
  }
}

TEST_CASE("disconnected neuron has zero gradient") {
  auto h = fixtures::tiny_model();
  h.mutable_transformer().mutable_weights().blocks[0].w_down.row(4).setZero();
  const auto ids = some_ids(5, 13, 300);
  const SiteRef sites[] = {SiteRef::neuron(0, 4, 4)};
  CHECK(std::abs(h.grad_wrt_sites(ids, 3, sites).site_grads[0].grad(0)) <= 1e-8);
}

TEST_CASE("zero vector unembeds to zero logits and restoring the top state restores the output") {
  auto h = fixtures::tiny_model();
  CHECK(h.apply_unembedding(RowVec::Zero(16), false).cwiseAbs().maxCoeff() == 0.0);
  const auto ids = some_ids(6, 14, 300);
  const auto clean = h.forward_trace(ids);
  std::vector<Intervention> noisy{{SiteRef::embedding(1), AddNoise{2.0, 5}}, {SiteRef::embedding(3), AddNoise{2.0, 6}}};
  const RowVec top = clean.hidden.back().row(5);
  noisy.push_back({SiteRef::hidden(1, 5), SetValue{std::vector<double>(top.data(), top.data() + top.size())}});
  CHECK((h.forward_trace(ids, noisy).logits.row(5) - clean.logits.row(5)).cwiseAbs().maxCoeff() == 0.0);
}
