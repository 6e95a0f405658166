#include <doctest.h>

#include <random>

#include "fixtures.hpp"
#include "knowmri/error.hpp"
#include "knowmri/methods/builtin.hpp"
#include "knowmri/methods/registry.hpp"

using namespace knowmri;
using namespace knowmri::methods;

namespace {

const std::vector<std::string> kKeys = {"prompt", "prompts", "ground_truth", "triple_subject", "triple_relation",
                                        "triple_object"};

data::KeySet random_subset(std::mt19937_64& rng) {
  data::KeySet s;
  for (const auto& k : kKeys)
    if (rng() % 2) s.insert(k);
  return s;
}

MethodDescriptor stub(const std::string& id, data::KeySet keys, Perspective p = Perspective::kExternal) {
  return {id, p, std::move(keys), {ResultKind::kTextExplanation}, "says {top1}", "", ""};
}

Result text_result(const std::string& word) {
  TextExplanation t;
  t.raw_text = word;
  t.ratings = {{word, 1.0}};
  t.parse_ok = true;
  return t;
}

data::Sample sample_with(const data::KeySet& keys) {
  data::Sample s;
  for (const auto& k : keys) {
    if (k == "prompts")
      s.values[k] = std::vector<std::string>{"a b"};
    else
      s.values[k] = std::string("a b");
  }
  if (keys.count("prompt") && keys.count("prompts")) s.values["prompts"] = std::vector<std::string>{"a b"};
  return s;
}

}  // namespace

TEST_CASE("match returns exactly the methods whose requirements are covered") {
  std::mt19937_64 rng(99);
  MethodRegistry reg;
  std::vector<MethodDescriptor> methods;
  for (int i = 0; i < 24; ++i) {
    auto d = stub("m" + std::to_string(100 + i), random_subset(rng), static_cast<Perspective>(i % 3));
    if (d.requires_input_keys.empty()) d.requires_input_keys.insert("prompt");
    reg.register_method(d, [](auto&, auto&, auto&) { return text_result("x"); });
    methods.push_back(d);
  }
  for (int trial = 0; trial < 1000; ++trial) {
    const auto avail = random_subset(rng);
    std::set<std::string> expect;
    for (const auto& m : methods) {
      bool ok = true;
      for (const auto& k : m.requires_input_keys) ok = ok && avail.count(k);
      if (ok) expect.insert(m.id);
    }
    std::set<std::string> got;
    const auto matched = reg.match(avail);
    for (std::size_t i = 0; i < matched.size(); ++i) {
      got.insert(matched[i].id);
      if (i > 0) {
        const auto a = matched[i - 1], b = matched[i];
        CHECK(std::tie(a.perspective, a.id) < std::tie(b.perspective, b.id));
      }
    }
    CHECK(got == expect);
    // adding a key never removes a method
    auto bigger = avail;
    bigger.insert(kKeys[rng() % kKeys.size()]);
    std::set<std::string> more;
    for (const auto& d : reg.match(bigger)) more.insert(d.id);
    CHECK(std::includes(more.begin(), more.end(), got.begin(), got.end()));
  }
}

TEST_CASE("registration rejects duplicates, empty kinds and unknown keys") {
  MethodRegistry reg;
  auto fn = [](auto&, auto&, auto&) { return text_result("x"); };
  reg.register_method(stub("a", {"prompt"}), fn);
  CHECK_THROWS_AS(reg.register_method(stub("a", {"prompt"}), fn), Error);
  auto no_kinds = stub("b", {"prompt"});
  no_kinds.result_kinds.clear();
  CHECK_THROWS_AS(reg.register_method(no_kinds, fn), Error);
  CHECK_THROWS_AS(reg.register_method(stub("c", {"no_such_key"}), fn), Error);
  CHECK(reg.all().size() == 1);
  CHECK_THROWS_AS(reg.descriptor("zzz"), Error);
}

TEST_CASE("a registered method is matched and runs through diagnose") {
  MethodRegistry reg;
  reg.register_method(stub("sentinel", {"prompt", "triple_relation"}),
                      [](auto&, const data::Sample& s, auto&) { return text_result(s.text("triple_relation")); });
  auto model = fixtures::tiny_model();
  DiagnoseRequest req;
  req.model_id = "tiny";
  req.sample.values = {{"prompt", std::string("hi there")}, {"triple_relation", std::string("rel")}};
  CHECK(reg.match(req.sample.keys()).size() == 1);
  const auto rep = diagnose(reg, model, req);
  REQUIRE(rep.cards.size() == 1);
  CHECK(rep.cards[0].method_id == "sentinel");
  CHECK(rep.cards[0].rendered_description == "says 'rel'");
  CHECK(rep.groups.at("text_explanation") == std::vector<std::string>{"sentinel"});

  req.sample.values.erase("triple_relation");
  CHECK(diagnose(reg, model, req).cards.empty());
  req.method_ids = std::vector<std::string>{"sentinel"};
  try {
    diagnose(reg, model, req);
    FAIL("ran a method with missing keys");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kValidation);
    CHECK(std::string(e.what()).find("triple_relation") != std::string::npos);
  }
  req.method_ids = std::vector<std::string>{"nope"};
  CHECK_THROWS_AS(diagnose(reg, model, req), Error);
}

TEST_CASE("a failing method does not take down the others") {
  MethodRegistry reg;
  reg.register_method(stub("good", {"prompt"}), [](auto&, auto&, auto&) { return text_result("fine"); });
  reg.register_method(stub("bad", {"prompt"}), [](auto&, auto&, auto&) -> Result {
    fail(ErrorCode::kNumerical, "boom");
  });
  reg.register_method(stub("worse", {"prompt"}), [](auto&, auto&, auto&) -> Result {
    throw std::runtime_error("raw");
  });
  auto model = fixtures::tiny_model();
  DiagnoseRequest req;
  req.model_id = "tiny";
  req.sample.values = {{"prompt", std::string("hello")}};
  const auto rep = diagnose(reg, model, req);
  REQUIRE(rep.cards.size() == 1);
  CHECK(rep.failures.size() == 2);
  CHECK(rep.failures.at("bad").code == "numerical");
  CHECK(rep.failures.at("bad").message.find("boom") != std::string::npos);
  CHECK(rep.failures.at("worse").code == "internal");
  CHECK(validate_report_json(report_to_json(rep)).empty());
}

TEST_CASE("consolidate groups cards of the same kind") {
  DiagnoseReport rep;
  NeuronReport n;
  n.top_neurons = {{1, 2, 0.5, {"x"}}};
  rep.cards.push_back({"zeta", n, "d", "", 0});
  rep.cards.push_back({"alpha", text_result("w"), "d", "", 0});
  rep.cards.push_back({"beta", n, "d", "", 0});
  consolidate(rep);
  CHECK(rep.groups.size() == 2);
  CHECK(rep.groups.at("neuron_report") == std::vector<std::string>{"beta", "zeta"});
  CHECK(rep.cards[0].compare_group == "neuron_report");
  CHECK(rep.cards[2].method_id == "alpha");
}

TEST_CASE("templates fill missing highlights with a dash") {
  CHECK(fill_template("{top1}/{top2}/{top3}", {"a"}) == "a/-/-");
  CHECK(fill_template("none", {"a"}) == "none");
}

TEST_CASE("report validator catches structural problems") {
  DiagnoseReport rep;
  rep.request.model_id = "m";
  rep.request.sample.values = {{"prompt", std::string("p")}};
  rep.cards.push_back({"alpha", text_result("w"), "d", "", 0});
  consolidate(rep);
  auto j = report_to_json(rep);
  CHECK(validate_report_json(j).empty());
  auto bad = j;
  bad["schema_version"] = 9;
  CHECK(!validate_report_json(bad).empty());
  bad = j;
  bad["cards"][0].erase("result");
  CHECK(!validate_report_json(bad).empty());
  bad = j;
  bad["groups"]["text_explanation"].push_back("ghost");
  CHECK(!validate_report_json(bad).empty());
  bad = j;
  bad["failures"]["alpha"] = {{"code", "x"}, {"message", "y"}};
  CHECK(!validate_report_json(bad).empty());
  CHECK(report_to_string(rep) == report_to_string(rep));
  CHECK(report_to_string(rep).back() == '\n');
}

TEST_CASE("request json round-trips") {
  DiagnoseRequest req;
  req.model_id = "m";
  req.sample.values = {{"prompt", std::string("p")}, {"prompts", std::vector<std::string>{"p", "q"}}};
  req.method_ids = std::vector<std::string>{"a"};
  req.config["a"] = {{"steps", 3}};
  req.seed = 5;
  const auto back = request_from_json(request_to_json(req));
  CHECK(request_to_json(back) == request_to_json(req));
}

TEST_CASE("builtin registry matches known-style samples to every method") {
  auto& reg = default_registry();
  CHECK(reg.all().size() >= 10);
  const auto all_keys = data::KeySet(kKeys.begin(), kKeys.end());
  CHECK(reg.match(all_keys).size() == reg.all().size());
  const auto prompt_only = reg.match({"prompt"});
  for (const auto& d : prompt_only) CHECK(d.requires_input_keys == data::KeySet{"prompt"});
  CHECK(reg.descriptor("knowledge_neurons").requires_input_keys == data::KeySet{"prompts", "ground_truth"});
}
