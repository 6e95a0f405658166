#include "knowmri/service/workspace.hpp"

#include <cstdlib>
#include <fstream>
#include <numeric>
#include <random>

#include "knowmri/capability/lab.hpp"
#include "knowmri/error.hpp"
#include "knowmri/methods/builtin.hpp"

#ifndef KNOWMRI_DEFAULT_CONFIG
#define KNOWMRI_DEFAULT_CONFIG "config/knowmri.json"
#endif

namespace knowmri::service {

namespace fs = std::filesystem;
using nlohmann::json;

WorkspaceConfig load_workspace_config(const fs::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::kIo, "cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorCode::kValidation, path.string() + ": " + e.what());
  }
  const fs::path base = path.parent_path();
  auto rel = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };
  WorkspaceConfig cfg;
  try {
    for (const auto& m : j.value("models", json::array()))
      cfg.models.push_back({m.at("id").get<std::string>(), rel(m.at("path").get<std::string>())});
    for (const auto& d : j.value("datasets", json::array())) cfg.datasets.push_back(rel(d.get<std::string>()));
    cfg.runs_dir = rel(j.value("runs_dir", "runs"));
    cfg.max_pending = j.value("max_pending", cfg.max_pending);
    if (j.contains("server")) {
      cfg.host = j["server"].value("host", cfg.host);
      cfg.port = j["server"].value("port", cfg.port);
    }
    if (j.contains("providers")) {
      const auto& p = j["providers"];
      if (p.contains("rewrite")) cfg.rewrite = data::provider_config_from_json(p["rewrite"]);
      if (p.contains("embed")) cfg.embed = data::provider_config_from_json(p["embed"]);
    }
    cfg.reference_dataset = j.value("reference_dataset", cfg.reference_dataset);
    const json defaults = j.value("method_defaults", json::object());
    for (const auto& [k, v] : defaults.items()) cfg.method_defaults[k] = v;
  } catch (const json::exception& e) {
    fail(ErrorCode::kValidation, path.string() + ": " + e.what());
  }
  require(cfg.max_pending >= 1, ErrorCode::kValidation, "max_pending must be >= 1");
  return cfg;
}

fs::path resolve_config_path(const std::optional<std::string>& flag) {
  if (flag && !flag->empty()) return *flag;
  if (const char* env = std::getenv("KNOWMRI_CONFIG"); env && *env) return env;
  return KNOWMRI_DEFAULT_CONFIG;
}

Workspace::Workspace(WorkspaceConfig cfg) : cfg_(std::move(cfg)) {
  for (const auto& m : cfg_.models) {
    require(!models_.count(m.id), ErrorCode::kValidation, "duplicate model id '" + m.id + "'");
    auto s = std::make_unique<ModelSlot>();
    s->ref = m;
    models_[m.id] = std::move(s);
  }
  for (const auto& p : cfg_.datasets) {
    data::Dataset ds = data::load_dataset(p);
    const std::string id = ds.descriptor.id;
    require(!datasets_.count(id), ErrorCode::kValidation, "duplicate dataset id '" + id + "'");
    datasets_.emplace(id, std::move(ds));
  }
  rewrite_ = data::make_rewrite_provider(cfg_.rewrite);
  embed_ = data::make_embed_provider(cfg_.embed);
}

Workspace::ModelSlot& Workspace::slot(const std::string& id) {
  const auto it = models_.find(id);
  require(it != models_.end(), ErrorCode::kNotFound, "unknown model '" + id + "'");
  return *it->second;
}

const Workspace::ModelSlot& Workspace::slot(const std::string& id) const {
  const auto it = models_.find(id);
  require(it != models_.end(), ErrorCode::kNotFound, "unknown model '" + id + "'");
  return *it->second;
}

bool Workspace::has_model(const std::string& id) const { return models_.count(id) != 0; }

const model::ModelHandle& Workspace::model(const std::string& id) {
  auto& s = slot(id);
  std::lock_guard lock(s.load_mu);
  if (!s.handle) s.handle = std::make_unique<model::ModelHandle>(model::ModelHandle::load(s.ref.path));
  return *s.handle;
}

std::mutex& Workspace::model_mutex(const std::string& id) { return slot(id).use_mu; }

const data::Dataset& Workspace::dataset(const std::string& id) const {
  const auto it = datasets_.find(id);
  require(it != datasets_.end(), ErrorCode::kNotFound, "unknown dataset '" + id + "'");
  return it->second;
}

json Workspace::list_models() {
  json out = json::array();
  for (const auto& [id, s] : models_) {
    const auto& m = model(id);
    const auto& sp = m.spec();
    out.push_back({{"id", id},
                   {"n_layers", sp.n_layers},
                   {"hidden_dim", sp.hidden_dim},
                   {"mlp_dim", sp.mlp_dim},
                   {"n_heads", sp.n_heads},
                   {"vocab_size", sp.vocab_size},
                   {"max_seq_len", sp.max_seq_len},
                   {"metadata", m.metadata()}});
  }
  return out;
}

json Workspace::list_datasets() const {
  json out = json::array();
  for (const auto& [id, ds] : datasets_) {
    out.push_back({{"id", id},
                   {"description", ds.descriptor.description},
                   {"support_template_keys", ds.descriptor.support_template_keys},
                   {"size", ds.descriptor.size}});
  }
  return out;
}

json Workspace::list_methods(const std::optional<std::string>& keys_csv) const {
  const auto& reg = methods::default_registry();
  const auto ds = keys_csv ? reg.match(data::parse_key_list(*keys_csv)) : reg.all();
  json out = json::array();
  for (const auto& d : ds) out.push_back(methods::descriptor_to_json(d));
  return out;
}

json Workspace::search(const std::string& dataset_id, const std::string& query, int k) const {
  require(k >= 1, ErrorCode::kInvalidArgument, "k must be >= 1");
  require(!query.empty(), ErrorCode::kInvalidArgument, "empty query");
  const auto& ds = dataset(dataset_id);
  std::string note;
  const auto hits = data::search(ds, query, k, embed_.get(), &note);
  json out = {{"dataset", dataset_id}, {"hits", json::array()}};
  for (const auto& h : hits)
    out["hits"].push_back({{"index", h.index}, {"score", h.score}, {"sample", data::sample_to_json(ds.at(h.index))}});
  if (!note.empty()) out["note"] = note;
  return out;
}

json Workspace::normalize(const std::string& text) const {
  const data::Dataset* ref = datasets_.count(cfg_.reference_dataset) ? &datasets_.at(cfg_.reference_dataset) : nullptr;
  return data::sample_to_json(data::normalize_custom_input(text, *rewrite_, ref, embed_.get()));
}

data::Sample Workspace::resolve_sample(const json& body) const {
  require(body.is_object(), ErrorCode::kValidation, "request body must be an object");
  try {
    if (body.contains("sample")) {
      const auto& s = body["sample"];
      data::Sample out = data::sample_from_json(s.contains("values") ? s["values"] : s);
      if (s.contains("metadata")) out.metadata = s["metadata"].get<std::map<std::string, std::string>>();
      return out;
    }
    if (body.contains("dataset")) {
      const auto& ds = dataset(body["dataset"].get<std::string>());
      const int index = body.value("index", 0);
      require(index >= 0 && static_cast<std::size_t>(index) < ds.samples.size(), ErrorCode::kOutOfRange,
              "index " + std::to_string(index) + " outside dataset '" + ds.descriptor.id + "'");
      return ds.at(static_cast<std::size_t>(index));
    }
    if (body.contains("text")) {
      const data::Dataset* ref =
          datasets_.count(cfg_.reference_dataset) ? &datasets_.at(cfg_.reference_dataset) : nullptr;
      return data::normalize_custom_input(body["text"].get<std::string>(), *rewrite_, ref, embed_.get());
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::kValidation, std::string("malformed request: ") + e.what());
  }
  fail(ErrorCode::kValidation, "request needs one of 'sample', 'dataset' or 'text'");
}

methods::DiagnoseRequest Workspace::make_request(const json& body) const {
  require(body.is_object(), ErrorCode::kValidation, "request body must be an object");
  methods::DiagnoseRequest r;
  try {
    r.model_id = body.at("model_id").get<std::string>();
    if (body.contains("method_ids") && !body["method_ids"].is_null())
      r.method_ids = body["method_ids"].get<std::vector<std::string>>();
    r.seed = body.value("seed", std::uint64_t{0});
    for (const auto& [id, v] : cfg_.method_defaults) r.config[id] = v;
    const json overrides = body.value("config", json::object());
    for (const auto& [id, v] : overrides.items()) {
      require(v.is_object(), ErrorCode::kValidation, "config for '" + id + "' must be an object");
      auto& slot = r.config[id];
      if (slot.is_null()) slot = json::object();
      slot.update(v);
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::kValidation, std::string("malformed diagnose request: ") + e.what());
  }
  require(has_model(r.model_id), ErrorCode::kNotFound, "unknown model '" + r.model_id + "'");
  r.sample = resolve_sample(body);
  const auto v = data::validate_sample(r.sample, r.sample.keys());
  if (!v.empty()) fail(ErrorCode::kValidation, "invalid sample: '" + v.front().key + "' " + v.front().reason);
  methods::plan_methods(methods::default_registry(), r);
  return r;
}

methods::DiagnoseReport Workspace::diagnose(const methods::DiagnoseRequest& request) {
  return methods::diagnose(methods::default_registry(), model(request.model_id), request);
}

namespace {

json neurons_json(const std::vector<capability::Neuron>& ns) {
  json out = json::array();
  for (const auto& [l, j] : ns) out.push_back(methods::neuron_label(l, j));
  return out;
}

capability::LocateConfig locate_from(const json& j) {
  capability::LocateConfig c;
  if (j.is_null()) return c;
  const std::string mode = j.value("mode", "sigma");
  require(mode == "sigma" || mode == "top_k", ErrorCode::kValidation, "locate mode must be sigma or top_k");
  c.mode = mode == "sigma" ? capability::LocateConfig::Mode::kSigma : capability::LocateConfig::Mode::kTopK;
  c.sigma = j.value("sigma", c.sigma);
  c.k = j.value("k", c.k);
  return c;
}

}  // namespace

json Workspace::capability(const json& body) {
  require(body.is_object(), ErrorCode::kValidation, "request body must be an object");
  std::string model_id, dataset_id, kind;
  try {
    model_id = body.at("model_id").get<std::string>();
    dataset_id = body.at("dataset").get<std::string>();
    kind = body.at("kind").get<std::string>();
  } catch (const json::exception& e) {
    fail(ErrorCode::kValidation, std::string("malformed capability request: ") + e.what());
  }
  const auto& m = model(model_id);
  auto examples = capability::examples_from(dataset(dataset_id));
  const int limit = body.value("limit", 0);
  if (limit > 0 && static_cast<int>(examples.size()) > limit) examples.resize(limit);
  const capability::ScoreConfig score{body.value("steps", 20)};
  const auto loc = locate_from(body.value("locate", json()));
  const std::uint64_t seed = body.value("seed", std::uint64_t{0});
  json out = {{"kind", kind}, {"model_id", model_id}, {"dataset", dataset_id}, {"n_examples", examples.size()}};

  if (kind == "score") {
    const Mat s = capability::capability_scores(m, examples, score);
    const auto located = capability::locate(s, loc);
    out["located"] = neurons_json(located);
    json top = json::array();
    const auto best = capability::locate(s, {.mode = capability::LocateConfig::Mode::kTopK,
                                             .k = std::min<int>(body.value("top", 20), static_cast<int>(s.size()))});
    std::vector<capability::Neuron> ranked = best;
    std::stable_sort(ranked.begin(), ranked.end(),
                     [&](auto a, auto b) { return s(a.first, a.second) > s(b.first, b.second); });
    for (const auto& [l, j] : ranked) top.push_back({{"neuron", methods::neuron_label(l, j)}, {"score", s(l, j)}});
    out["top"] = top;
    out["mean"] = s.mean();
    return out;
  }
  if (kind == "curve") {
    capability::CurveConfig cfg;
    cfg.sizes = body.value("sizes", std::vector<int>{4, 16, 64});
    cfg.n_splits = body.value("n_splits", 5);
    cfg.seed = seed;
    cfg.score = score;
    cfg.locate = loc;
    cfg.identical = body.value("identical", false);
    const auto pts = capability::consistency_curve(m, examples, cfg);
    json arr = json::array();
    for (const auto& p : pts)
      arr.push_back({{"size", p.size},
                     {"n_splits", p.n_splits},
                     {"overlap_mean", p.overlap_mean},
                     {"overlap_std", p.overlap_std},
                     {"iou_mean", p.iou_mean},
                     {"iou_std", p.iou_std},
                     {"empty_splits", p.empty_splits},
                     {"mean_located", p.mean_located}});
    out["points"] = arr;
    out["csv"] = capability::curve_csv(pts);
    return out;
  }
  if (kind == "enhance") {
    const double frac = body.value("train_fraction", 0.5);
    require(frac > 0 && frac < 1, ErrorCode::kValidation, "train_fraction must lie in (0, 1)");
    std::vector<std::size_t> idx(examples.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n_train = static_cast<std::size_t>(frac * static_cast<double>(examples.size()));
    std::vector<capability::Example> train, eval;
    for (std::size_t i = 0; i < idx.size(); ++i) (i < n_train ? train : eval).push_back(examples[idx[i]]);
    require(!train.empty() && !eval.empty(), ErrorCode::kValidation, "split leaves an empty side");
    const auto located = capability::locate(capability::capability_scores(m, train, score), loc);
    require(!located.empty(), ErrorCode::kValidation, "no neurons located; lower sigma or use top_k");
    capability::EnhanceConfig ec;
    ec.epochs = body.value("epochs", ec.epochs);
    ec.batch = body.value("batch", ec.batch);
    ec.lr = body.value("lr", ec.lr);
    ec.seed = seed;
    const auto table = capability::enhancement_table(m, located, train, eval, ec);
    out["located"] = neurons_json(located);
    out["base_accuracy"] = table.base_accuracy;
    json arms = json::array();
    for (const auto& a : table.arms)
      arms.push_back({{"name", a.name},
                      {"n_neurons", a.n_neurons},
                      {"acc_before", a.acc_before},
                      {"acc_after", a.acc_after},
                      {"final_loss", a.final_loss},
                      {"frozen_intact", a.frozen_intact}});
    out["arms"] = arms;
    out["table"] = capability::enhancement_text(table);
    return out;
  }
  fail(ErrorCode::kValidation, "unknown capability kind '" + kind + "' (score, curve, enhance)");
}

}  // namespace knowmri::service
