// Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any FAIL.
//
//   knowmri_acceptance            all criteria
//   knowmri_acceptance 4 9 10     a subset

#include <algorithm>
#include <bitset>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "../fixtures.hpp"
#include "knowmri/capability/lab.hpp"
#include "knowmri/data/dataset.hpp"
#include "knowmri/error.hpp"
#include "knowmri/methods/builtin.hpp"
#include "knowmri/methods/external.hpp"
#include "knowmri/methods/module.hpp"
#include "knowmri/methods/registry.hpp"
#include "knowmri/methods/representation.hpp"
#include "knowmri/model/planted.hpp"
#include "knowmri/service/service.hpp"

// after Eigen: <resolv.h> defines a `_res` macro
#include <httplib.h>

using namespace knowmri;
using namespace knowmri::model;
using nlohmann::json;
namespace cap = knowmri::capability;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

fs::path root() { return fixtures::source_root(); }

data::Dataset dataset(const std::string& id) { return data::load_dataset(root() / "data" / id / "manifest.json"); }

const ModelHandle& reference() {
  static const ModelHandle m = ModelHandle::load(root() / "models/reference");
  return m;
}

// ---------------------------------------------------------------- 1

Outcome matching() {
  const std::vector<std::string> keys = {"prompt", "prompts", "ground_truth", "triple_subject", "triple_relation",
                                         "triple_object"};
  std::mt19937_64 rng(2024);
  auto subset = [&] {
    data::KeySet s;
    for (const auto& k : keys)
      if (rng() % 2) s.insert(k);
    return s;
  };
  methods::MethodRegistry reg;
  methods::register_builtin_methods(reg);
  for (int i = 0; i < 30; ++i) {
    auto req = subset();
    if (req.empty()) req.insert("prompt");
    reg.register_method({"extra_" + std::to_string(i), methods::Perspective::kExternal, req,
                         {methods::ResultKind::kTextExplanation}, "{top1}", "", ""},
                        [](auto&, auto&, auto&) -> methods::Result { return methods::TextExplanation{}; });
  }
  const auto all = reg.all();
  int bad = 0;
  const auto t0 = std::chrono::steady_clock::now();
  for (int pair = 0; pair < 1000; ++pair) {
    const auto avail = subset();
    std::set<std::string> expect;
    for (const auto& d : all)
      if (std::includes(avail.begin(), avail.end(), d.requires_input_keys.begin(), d.requires_input_keys.end()))
        expect.insert(d.id);
    std::set<std::string> got;
    for (const auto& d : reg.match(avail)) got.insert(d.id);
    auto more = avail;
    more.insert(keys[rng() % keys.size()]);
    std::set<std::string> wider;
    for (const auto& d : reg.match(more)) wider.insert(d.id);
    if (got != expect || !std::includes(wider.begin(), wider.end(), got.begin(), got.end())) ++bad;
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {bad == 0 && secs < 5.0,
          std::to_string(1000 - bad) + "/1000 key sets match the subset oracle and stay monotone under key addition, over " + std::to_string(all.size()) +
              " methods in " + fmt("%.3fs", secs)};
}

// ---------------------------------------------------------------- 2

Outcome finite_differences() {
  const auto& m = reference();
  const auto ds = dataset("known_mini");
  const auto& sp = m.spec();
  std::mt19937_64 rng(77);
  const double eps = 1e-3;
  int ok = 0, total = 0;
  double worst = 0.0;
  for (int c = 0; c < 50; ++c) {
    const auto ids = m.tokenize(ds.at(c * 3).text("prompt")).ids;
    const int T = static_cast<int>(ids.size());
    const int target = top_k_indices(next_token_distribution(m.forward_trace(ids)), 1).front();
    const int layer = static_cast<int>(rng() % sp.n_layers);
    const int token = static_cast<int>(rng() % T);
    SiteRef site;
    switch (c % 5) {
      case 0: site = SiteRef::hidden(layer, token); break;
      case 1: site = SiteRef::attn_output(layer, token); break;
      case 2: site = SiteRef::mlp_output(layer, token); break;
      case 3: site = SiteRef::neuron(layer, T - 1, static_cast<int>(rng() % sp.mlp_dim)); break;
      default: site = SiteRef::embedding(token); break;
    }
    const std::vector<SiteRef> sites{site};
    const RowVec g = m.grad_wrt_sites(ids, target, sites).site_grads.front().grad;
    const RowVec clean = read_site(m.forward_trace(ids), site);
    RowVec dir = g;
    if (dir.norm() < 1e-12) {
      std::normal_distribution<double> n(0, 1);
      for (Eigen::Index i = 0; i < dir.size(); ++i) dir(i) = n(rng);
    }
    dir /= dir.norm();
    auto prob = [&](double h) {
      RowVec v = clean + h * dir;
      const std::vector<Intervention> iv{{site, SetValue{std::vector<double>(v.data(), v.data() + v.size())}}};
      return next_token_distribution(m.forward_trace(ids, iv))(target);
    };
    const double fd = (prob(eps) - prob(-eps)) / (2 * eps);
    const double an = g.dot(dir);
    ++total;
    const double scale = std::max(std::abs(fd), std::abs(an));
    const double rel = scale < 1e-9 ? 0.0 : std::abs(fd - an) / scale;
    worst = std::max(worst, rel);
    if (rel <= 1e-2) ++ok;
  }
  return {ok == total, std::to_string(ok) + "/" + std::to_string(total) +
                           " sites within 1e-2 relative error at eps 1e-3, worst " + fmt("%.2e", worst)};
}

// ---------------------------------------------------------------- 3

Outcome ig_completeness() {
  const Mat w = Mat::Random(4, 6);
  const Mat x = Mat::Random(4, 6), b = Mat::Random(4, 6);
  methods::Field lin = [&](const Mat& z, Mat& grad) {
    grad = w;
    return (w.array() * z.array()).sum();
  };
  const auto core = methods::integrated_gradients_core(lin, x, b, 7);
  double lin_err = 0.0;
  for (int i = 0; i < 4; ++i)
    lin_err = std::max(lin_err, std::abs(core.scores(i) - (w.row(i).array() * (x - b).row(i).array()).sum()));

  const auto& m = reference();
  const auto ds = dataset("known_mini");
  double worst = 0.0;
  int ok = 0;
  for (int i = 0; i < 20; ++i) {
    const auto& s = ds.at(i * 10);
    const auto a = methods::integrated_gradients(m, s.text("prompt"), s.text("ground_truth"), {.steps = 300});
    const double total = std::accumulate(a.scores.begin(), a.scores.end(), 0.0);
    const double gap = std::abs(total - (a.p_input - a.p_baseline));
    worst = std::max(worst, gap);
    if (gap <= 0.02) ++ok;
  }
  return {ok == 20 && lin_err <= 1e-6, std::to_string(ok) + "/20 prompts with |sum - dP| <= 0.02 at S=300 (worst " +
                                           fmt("%.2e", worst) + "), linear surrogate error " + fmt("%.1e", lin_err)};
}

// ---------------------------------------------------------------- 4, 9, 10

struct PlantedCase {
  ModelHandle model;
  std::string prompt, answer;
  int layer, unit;
  bool predicts_target;
};

std::vector<PlantedCase>& planted_cases() {
  static std::vector<PlantedCase> cases = [] {
    std::vector<PlantedCase> out;
    const auto ds = dataset("known_mini");
    const Tokenizer& tok = reference().tokenizer();
    for (int i = 0; i < 10; ++i) {
      const auto& s = ds.at(i * 7);
      PlantedConfig cfg;
      cfg.spec = planted_default_spec(tok.vocab_size());
      cfg.layer = i % cfg.spec.n_layers;
      cfg.unit = (37 * i + 5) % cfg.spec.mlp_dim;
      cfg.seed = 100 + i;
      cfg.probe_text = s.text("prompt");
      cfg.trigger_token = tok.encode(cfg.probe_text).ids.back();
      cfg.target_token = reference().continuation_ids(cfg.probe_text, s.text("ground_truth")).front();
      ModelHandle h = build_planted_model(cfg, tok);
      const auto ids = h.tokenize(cfg.probe_text).ids;
      const bool hit = top_k_indices(next_token_distribution(h.forward_trace(ids)), 1).front() == cfg.target_token;
      out.push_back({std::move(h), cfg.probe_text, s.text("ground_truth"), cfg.layer, cfg.unit, hit});
    }
    return out;
  }();
  return cases;
}

Outcome planted_recovery() {
  int fine = 0, kn = 0, capability = 0, predicts = 0;
  std::string misses;
  for (const auto& c : planted_cases()) {
    predicts += c.predicts_target;
    const auto f = methods::fine_neurons(c.model, c.prompt, c.answer);
    const bool f_ok = !f.report.top_neurons.empty() && f.report.top_neurons[0].layer == c.layer &&
                      f.report.top_neurons[0].unit == c.unit;
    const auto k = methods::knowledge_neurons(c.model, {c.prompt}, c.answer);
    const bool k_ok = !k.report.top_neurons.empty() && k.report.top_neurons[0].layer == c.layer &&
                      k.report.top_neurons[0].unit == c.unit;
    const Mat s = cap::example_scores(c.model, {c.prompt, c.answer}, 20);
    Eigen::Index r = 0, col = 0;
    s.maxCoeff(&r, &col);
    const bool c_ok = r == c.layer && col == c.unit;
    fine += f_ok;
    kn += k_ok;
    capability += c_ok;
    if (!(f_ok && k_ok && c_ok))
      misses += " " + methods::neuron_label(c.layer, c.unit) + (f_ok ? "" : ":fine") + (k_ok ? "" : ":kn") +
                (c_ok ? "" : ":cap");
  }
  return {fine == 10 && kn >= 9 && capability == 10,
          "top-1 recovers the planted neuron: FINE " + std::to_string(fine) + "/10, KN " + std::to_string(kn) +
              "/10, capability " + std::to_string(capability) + "/10 (" + std::to_string(predicts) +
              "/10 checkpoints emit the target)" + (misses.empty() ? "" : "; misses" + misses)};
}

Outcome tracing() {
  const auto& m = reference();
  const std::string prompt = "MacApp, a product created by";
  methods::TraceConfig quiet;
  quiet.noise_multiplier = 0.0;
  quiet.n_seeds = 2;
  const auto z = methods::causal_trace(m, prompt, "MacApp", "Apple", quiet);
  double zmax = 0.0;
  for (const auto& g : z.grids)
    for (const auto& row : g.effect)
      for (double e : row) zmax = std::max(zmax, std::abs(e));
  const bool zero_ok = zmax == 0.0 && z.corrupted_prob == z.clean_prob;

  methods::TraceConfig one;
  one.window = 1;
  one.kinds = {"hidden_state"};
  const auto h = methods::causal_trace(m, prompt, "MacApp", "Apple", one);
  const int L = m.spec().n_layers;
  const double top = h.grids[0].effect[L - 1].back();
  const bool top_ok = std::abs(top - (h.clean_prob - h.corrupted_prob)) <= 1e-12;

  int at_trigger = 0, at_layer = 0;
  for (const auto& c : planted_cases()) {
    const auto words = c.prompt.substr(c.prompt.rfind(' ', c.prompt.rfind(' ') - 1) + 1);
    methods::TraceConfig mc;
    mc.window = 1;
    mc.kinds = {"mlp_output"};
    const auto t = methods::causal_trace(c.model, c.prompt, words, c.answer, mc);
    const auto& e = t.grids[0].effect;
    int bl = 0, bt = 0;
    for (int l = 0; l < static_cast<int>(e.size()); ++l)
      for (int k = 0; k < static_cast<int>(e[l].size()); ++k)
        if (e[l][k] > e[bl][bt]) bl = l, bt = k;
    at_trigger += bt == static_cast<int>(t.tokens.size()) - 1;
    at_layer += bl == c.layer;
  }
  return {zero_ok && top_ok && at_trigger == 10,
          std::string("zero noise gives zero effects: ") + (zero_ok ? "yes" : "no") +
              "; top-layer restore recovers clean: " + (top_ok ? "yes" : "no") + "; planted MLP grid peaks at the trigger token " +
              std::to_string(at_trigger) + "/10 (planted layer " + std::to_string(at_layer) + "/10)"};
}

Outcome lens_and_patch() {
  const auto ds = dataset("known_mini");
  int rows_ok = 0;
  auto terminal_ok = [](const ModelHandle& m, const std::string& prompt) {
    const auto t = methods::logit_lens(m, prompt, 5);
    const RowVec p = next_token_distribution(m.forward_trace(m.tokenize(prompt).ids));
    const auto top = top_k_indices(p, 5);
    const auto& row = t.rows.back();
    if (row.layer != m.spec().n_layers || row.top.size() != 5) return false;
    for (int i = 0; i < 5; ++i)
      if (row.top[i].first != m.tokenizer().token_bytes(top[i]) || row.top[i].second != p(top[i])) return false;
    return true;
  };
  for (int i = 0; i < 10; ++i) rows_ok += terminal_ok(reference(), ds.at(i * 13).text("prompt"));
  int patch_ok = 0;
  std::string pairs;
  for (const auto& c : planted_cases()) {
    rows_ok += terminal_ok(c.model, c.prompt);
    const auto ll = methods::logit_lens(c.model, c.prompt);
    const auto ps = methods::patchscopes(c.model, c.prompt);
    const bool ok = ll.earliest_match_layer && ps.earliest_match_layer &&
                    *ps.earliest_match_layer <= *ll.earliest_match_layer;
    patch_ok += ok;
    pairs += " " + (ps.earliest_match_layer ? std::to_string(*ps.earliest_match_layer) : std::string("-")) + "/" +
             (ll.earliest_match_layer ? std::to_string(*ll.earliest_match_layer) : std::string("-"));
  }
  return {rows_ok == 20 && patch_ok == 10, std::to_string(rows_ok) + "/20 terminal rows equal the output top-5; " +
                                               "patchscopes earliest <= logit lens earliest on " +
                                               std::to_string(patch_ok) + "/10 planted (patch/lens:" + pairs + ")"};
}

// ---------------------------------------------------------------- 5

Outcome capability_oracle() {
  const auto m = fixtures::tiny_model(31, fixtures::tiny_spec(1, 16, 24, 2, 300));
  const cap::Example ex{"ab cd e", "f"};
  const Mat s = cap::example_scores(m, ex, 400);
  const auto ids = m.tokenize(ex.prompt).ids;
  const int T = static_cast<int>(ids.size());
  const int target = methods::first_target_token(m, ex.prompt, ex.answer);
  const int units = m.spec().mlp_dim;
  const RowVec act = m.forward_trace(ids).mlp_act[0].row(T - 1);
  std::vector<SiteRef> sites;
  for (int j = 0; j < units; ++j) sites.push_back(SiteRef::neuron(0, T - 1, j));
  auto grad_at = [&](double alpha) {
    std::vector<Intervention> iv;
    for (const auto& st : sites) iv.push_back({st, Scale{alpha}});
    const auto g = m.grad_wrt_sites(ids, target, sites, iv);
    RowVec out(units);
    for (int j = 0; j < units; ++j) out(j) = g.site_grads[j].grad(0);
    return out;
  };
  const int n = 4000;
  RowVec integral = RowVec::Zero(units);
  for (int i = 0; i <= n; ++i) integral += (i == 0 || i == n ? 0.5 : 1.0) * grad_at(static_cast<double>(i) / n);
  const RowVec oracle = act.cwiseProduct(integral / n);
  // The score sums n = 0..S over S, i.e. the S-panel trapezoid plus (f(0) + f(1)) / 2S.
  const RowVec endpoint = act.cwiseProduct(grad_at(0.0) + grad_at(1.0)) / (2.0 * 400);
  double worst = 0.0, worst_share = 0.0, worst_mag = 0.0;
  int ok = 0, worst_j = 0;
  for (int j = 0; j < units; ++j) {
    const double rel = std::abs(s(0, j) - oracle(j)) / std::max(std::abs(oracle(j)), 1e-300);
    if (rel > worst) worst = rel, worst_j = j;
    ok += rel <= 1e-2;
  }
  worst_share = endpoint(worst_j) / (s(0, worst_j) - oracle(worst_j));
  worst_mag = std::abs(oracle(worst_j)) / oracle.cwiseAbs().maxCoeff();
  return {ok == units, std::to_string(ok) + "/" + std::to_string(units) +
                           " neurons of a 1-layer model within 1e-2 of a 4000-panel trapezoid integral at S=400; "
                           "worst " + methods::neuron_label(0, worst_j) + " relative error " + fmt("%.2e", worst) +
                           ", |integral| " + fmt("%.2e", worst_mag) + " of the largest, endpoint term (f(0)+f(1))/2S " +
                           "explains " + fmt("%.4f", worst_share) + " of its error"};
}

// ---------------------------------------------------------------- 6

Outcome consistency_suite() {
  using N = cap::Neuron;
  int fails = 0;
  auto near = [&](double a, double b) {
    if (std::abs(a - b) > 1e-12) ++fails;
  };
  const std::vector<N> a{{0, 1}, {0, 2}, {1, 3}, {2, 0}};
  const std::vector<N> b{{0, 2}, {1, 3}, {3, 3}};
  auto c = cap::consistency(a, b);
  near(c.overlap, (2.0 / 4 + 2.0 / 3) / 2);
  near(c.iou, 2.0 / 5);
  c = cap::consistency(a, a);
  near(c.overlap, 1.0);
  near(c.iou, 1.0);
  c = cap::consistency({{0, 1}, {0, 2}, {0, 3}}, {{0, 2}, {0, 3}, {0, 4}});
  if (c.overlap != 2.0 / 3 || c.iou != 0.5) ++fails;
  c = cap::consistency({{0, 0}}, {{1, 1}});
  near(c.overlap, 0.0);
  near(c.iou, 0.0);
  bool threw = false;
  try {
    cap::consistency({}, a);
  } catch (const Error&) {
    threw = true;
  }
  fails += !threw;

  std::mt19937_64 rng(5);
  constexpr int kUnits = 64;
  for (int i = 0; i < 1000; ++i) {
    std::bitset<kUnits> x, y;
    std::vector<N> xa, ya;
    for (int u = 0; u < kUnits; ++u) {
      if (rng() % 4 == 0) x.set(u), xa.push_back({u / 16, u % 16});
      if (rng() % 3 == 0) y.set(u), ya.push_back({u / 16, u % 16});
    }
    if (xa.empty() || ya.empty()) {
      --i;
      continue;
    }
    std::shuffle(ya.begin(), ya.end(), rng);
    const double inter = static_cast<double>((x & y).count());
    const auto got = cap::consistency(xa, ya);
    near(got.overlap, (inter / x.count() + inter / y.count()) / 2);
    near(got.iou, inter / static_cast<double>((x | y).count()));
    const auto sym = cap::consistency(ya, xa);
    near(sym.overlap, got.overlap);
    if (got.iou > got.overlap + 1e-12) ++fails;
  }
  return {fails == 0, "hand cases and 1000 random pairs against a bitset oracle: " + std::to_string(fails) +
                          " mismatches"};
}

// ---------------------------------------------------------------- 7, 8

std::vector<cap::Example> arithmetic() {
  static const auto ex = cap::examples_from(dataset("arithmetic_toy"));
  return ex;
}

cap::ScoreCache& arith_cache() {
  static cap::ScoreCache c;
  return c;
}

Outcome curve() {
  const auto t0 = std::chrono::steady_clock::now();
  cap::CurveConfig cfg;
  cfg.sizes = {4, 16, 64};
  cfg.n_splits = 5;
  const auto pts = cap::consistency_curve(reference(), arithmetic(), cfg, &arith_cache());
  cfg.identical = true;
  const auto same = cap::consistency_curve(reference(), arithmetic(), cfg, &arith_cache());
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  bool mono = true, ident = true;
  std::string vals;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (i > 0 && pts[i].overlap_mean < pts[i - 1].overlap_mean - 0.05) mono = false;
    if (same[i].overlap_mean != 1.0 || same[i].iou_mean != 1.0) ident = false;
    vals += " " + std::to_string(pts[i].size) + ":" + fmt("%.3f", pts[i].overlap_mean) + "(empty " +
            std::to_string(pts[i].empty_splits) + ")";
  }
  return {mono && ident && secs < 1800,
          "overlap by size" + vals + "; non-decreasing within 0.05: " + (mono ? "yes" : "no") +
              "; identical control exactly 1: " + (ident ? "yes" : "no") + "; " + fmt("%.0fs", secs)};
}

Outcome enhancement() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto all = arithmetic();
  const auto& m = reference();
  int wins = 0, intact = 0, seeds = 5;
  std::string rows;
  for (int seed = 0; seed < seeds; ++seed) {
    std::vector<std::size_t> idx(all.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    std::vector<cap::Example> train, eval;
    for (std::size_t i = 0; i < idx.size(); ++i) (i < idx.size() / 2 ? train : eval).push_back(all[idx[i]]);
    const auto located = cap::locate(cap::capability_scores(m, train, {}, &arith_cache()), {});
    cap::EnhanceConfig ec;
    ec.seed = seed;
    ec.lr = 3e-2;
    const auto loc = cap::enhance(m, "located", located, train, eval, ec);
    const auto rnd = cap::enhance(m, "random", cap::random_neurons(m.spec(), static_cast<int>(located.size()), located,
                                                                   seed + 1),
                                  train, eval, ec);
    wins += loc.acc_after > rnd.acc_after;
    intact += loc.frozen_intact && rnd.frozen_intact;
    rows += " [" + std::to_string(seed) + ": n=" + std::to_string(located.size()) + " base " +
            fmt("%.3f", loc.acc_before) + " located " + fmt("%.3f", loc.acc_after) + " random " +
            fmt("%.3f", rnd.acc_after) + "]";
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {wins >= 4 && intact == seeds && secs < 1800,
          "located beats random in " + std::to_string(wins) + "/5 seeds, frozen weights intact " +
              std::to_string(intact) + "/5, " + fmt("%.0fs", secs) + ";" + rows};
}

// ---------------------------------------------------------------- 11

struct Server {
  httplib::Server server;
  std::thread thread;
  int port = 0;
  explicit Server(service::Service& svc) {
    service::install_routes(server, svc);
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~Server() {
    server.stop();
    thread.join();
  }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome cli_and_service() {
  fixtures::TempDir dir("accept");
  const fs::path config = root() / "config/knowmri.json";
  const std::string cmd = std::string("'") + KNOWMRI_CLI_PATH + "' --config '" + config.string() +
                          "' diagnose --model reference --dataset known_mini --index 0 --out '" +
                          (dir.path / "cli").string() + "' > '" + (dir.path / "cli.log").string() + "' 2>&1";
  if (std::system(cmd.c_str()) != 0) return {false, "CLI diagnose failed: " + slurp(dir.path / "cli.log")};
  const std::string cli_bytes = slurp(dir.path / "cli/report.json");
  const json rep = json::parse(cli_bytes);
  const auto errs = methods::validate_report_json(rep);
  const auto n_cards = rep["cards"].size();
  std::string kn_group, fine_group;
  for (const auto& c : rep["cards"]) {
    if (c["method_id"] == "knowledge_neurons") kn_group = c["compare_group"];
    if (c["method_id"] == "fine") fine_group = c["compare_group"];
  }
  const bool grouped = !kn_group.empty() && kn_group == fine_group;

  auto cfg = service::load_workspace_config(config);
  cfg.runs_dir = dir.path / "runs";
  service::Workspace ws(cfg);
  service::Service svc(ws);
  Server srv(svc);
  httplib::Client cli("127.0.0.1", srv.port);
  const json body = {{"model_id", "reference"}, {"dataset", "known_mini"}, {"index", 0}};
  auto res = cli.Post("/diagnose", body.dump(), "application/json");
  if (!res || res->status != 202) return {false, "POST /diagnose did not return 202"};
  const std::string id = json::parse(res->body)["run_id"];
  const json st = svc.wait(id);
  res = cli.Get("/runs/" + id + "/report");
  const bool same = res && res->status == 200 && res->body == cli_bytes;
  return {errs.empty() && n_cards >= 8 && grouped && same,
          std::to_string(n_cards) + " cards, schema " + (errs.empty() ? "valid" : "INVALID: " + errs.front()) +
              ", KN and FINE share group '" + kn_group + "': " + (grouped ? "yes" : "no") +
              ", CLI and service bytes identical: " + (same ? "yes" : "no (" + st.dump() + ")")};
}

}  // namespace

int main(int argc, char** argv) {
  struct Criterion {
    const char* name;
    std::function<Outcome()> run;
    double limit_s;
  };
  const std::vector<Criterion> criteria = {
      {"method matching", matching, 5},
      {"site gradients vs finite differences", finite_differences, 120},
      {"integrated gradients completeness", ig_completeness, 300},
      {"planted neuron recovery", planted_recovery, 600},
      {"capability score vs integral oracle", capability_oracle, 180},
      {"consistency metrics", consistency_suite, 5},
      {"consistency curve", curve, 1800},
      {"located-neuron enhancement", enhancement, 1800},
      {"causal tracing", tracing, 600},
      {"logit lens and patchscopes", lens_and_patch, 300},
      {"CLI report and service parity", cli_and_service, 600},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int n = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(n)) continue;
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      o = criteria[i].run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (secs >= criteria[i].limit_s) {
      o.pass = false;
      o.detail += "; over the " + fmt("%.0fs", criteria[i].limit_s) + " budget";
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << n << " (" << criteria[i].name << ", "
              << fmt("%.1fs", secs) << "): " << o.detail << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
