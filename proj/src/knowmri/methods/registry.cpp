#include "knowmri/methods/registry.hpp"

#include <algorithm>
#include <chrono>
#include <mutex>

#include "knowmri/error.hpp"
#include "knowmri/json_text.hpp"

namespace knowmri::methods {

const char* perspective_name(Perspective p) {
  switch (p) {
    case Perspective::kExternal: return "external";
    case Perspective::kInternalModule: return "internal_module";
    case Perspective::kInternalRepresentation: return "internal_representation";
  }
  return "external";
}

nlohmann::json descriptor_to_json(const MethodDescriptor& d) {
  nlohmann::json kinds = nlohmann::json::array();
  for (auto k : d.result_kinds) kinds.push_back(result_kind_name(k));
  nlohmann::json j = {{"id", d.id},
                      {"perspective", perspective_name(d.perspective)},
                      {"requires_input_keys", d.requires_input_keys},
                      {"result_kinds", kinds},
                      {"description_template", d.description_template},
                      {"citation", d.citation}};
  if (!d.note.empty()) j["note"] = d.note;
  return j;
}

void MethodRegistry::register_method(MethodDescriptor descriptor, DiagnoseFn fn) {
  require(!descriptor.id.empty(), ErrorCode::kInvalidArgument, "method id is empty");
  require(!descriptor.result_kinds.empty(), ErrorCode::kInvalidArgument,
          "method '" + descriptor.id + "' declares no result kinds");
  require(static_cast<bool>(fn), ErrorCode::kInvalidArgument, "method '" + descriptor.id + "' has no function");
  for (const auto& k : descriptor.requires_input_keys) {
    require(data::template_keys().contains(k), ErrorCode::kInvalidArgument,
            "method '" + descriptor.id + "' requires unknown key '" + k + "'");
  }
  std::unique_lock lock(mu_);
  const std::string id = descriptor.id;
  const bool inserted = entries_.emplace(id, Entry{std::move(descriptor), std::move(fn)}).second;
  require(inserted, ErrorCode::kInvalidArgument, "method '" + id + "' is already registered");
}

std::vector<MethodDescriptor> MethodRegistry::match(const data::KeySet& available) const {
  std::vector<MethodDescriptor> out;
  {
    std::shared_lock lock(mu_);
    for (const auto& [id, e] : entries_) {
      const auto& need = e.descriptor.requires_input_keys;
      if (std::includes(available.begin(), available.end(), need.begin(), need.end())) out.push_back(e.descriptor);
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const MethodDescriptor& a, const MethodDescriptor& b) {
    return a.perspective < b.perspective;
  });
  return out;
}

std::vector<MethodDescriptor> MethodRegistry::all() const {
  std::vector<MethodDescriptor> out;
  {
    std::shared_lock lock(mu_);
    for (const auto& [id, e] : entries_) out.push_back(e.descriptor);
  }
  std::stable_sort(out.begin(), out.end(), [](const MethodDescriptor& a, const MethodDescriptor& b) {
    return a.perspective < b.perspective;
  });
  return out;
}

bool MethodRegistry::contains(const std::string& id) const {
  std::shared_lock lock(mu_);
  return entries_.count(id) != 0;
}

MethodDescriptor MethodRegistry::descriptor(const std::string& id) const {
  std::shared_lock lock(mu_);
  auto it = entries_.find(id);
  require(it != entries_.end(), ErrorCode::kNotFound, "unknown method '" + id + "'");
  return it->second.descriptor;
}

DiagnoseFn MethodRegistry::function(const std::string& id) const {
  std::shared_lock lock(mu_);
  auto it = entries_.find(id);
  require(it != entries_.end(), ErrorCode::kNotFound, "unknown method '" + id + "'");
  return it->second.fn;
}

nlohmann::json request_to_json(const DiagnoseRequest& r) {
  nlohmann::json j = {{"model_id", r.model_id},
                      {"sample", data::sample_to_json(r.sample)},
                      {"method_ids", nullptr},
                      {"config", nlohmann::json::object()},
                      {"seed", r.seed}};
  if (r.method_ids) j["method_ids"] = *r.method_ids;
  for (const auto& [k, v] : r.config) j["config"][k] = v;
  return j;
}

DiagnoseRequest request_from_json(const nlohmann::json& j) {
  require(j.is_object(), ErrorCode::kValidation, "request must be an object");
  DiagnoseRequest r;
  try {
    r.model_id = j.at("model_id").get<std::string>();
    const auto& s = j.at("sample");
    if (s.contains("values")) {
      r.sample = data::sample_from_json(s.at("values"));
      if (s.contains("source") && s["source"].value("kind", "custom") == "dataset") {
        r.sample.source = {data::SampleSource::Kind::kDataset, s["source"].at("dataset").get<std::string>(),
                           s["source"].at("index").get<int>()};
      }
      if (s.contains("metadata")) r.sample.metadata = s.at("metadata").get<std::map<std::string, std::string>>();
    } else {
      r.sample = data::sample_from_json(s);
    }
    if (j.contains("method_ids") && !j["method_ids"].is_null())
      r.method_ids = j["method_ids"].get<std::vector<std::string>>();
    if (j.contains("config")) {
      for (const auto& [k, v] : j["config"].items()) {
        require(v.is_object(), ErrorCode::kValidation, "config for '" + k + "' must be an object");
        r.config[k] = v;
      }
    }
    r.seed = j.value("seed", std::uint64_t{0});
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kValidation, std::string("malformed diagnose request: ") + e.what());
  }
  return r;
}

std::string fill_template(const std::string& tmpl, const std::vector<std::string>& items) {
  std::string out = tmpl;
  for (int i = 0; i < 3; ++i) {
    const std::string ph = "{top" + std::to_string(i + 1) + "}";
    const std::string val = i < static_cast<int>(items.size()) ? items[i] : "-";
    for (auto pos = out.find(ph); pos != std::string::npos; pos = out.find(ph, pos + val.size()))
      out.replace(pos, ph.size(), val);
  }
  return out;
}

void consolidate(DiagnoseReport& report) {
  report.groups.clear();
  for (auto& c : report.cards) {
    c.compare_group = result_kind_name(result_kind(c.result));
  }
  std::stable_sort(report.cards.begin(), report.cards.end(), [](const Card& a, const Card& b) {
    return std::tie(a.compare_group, a.method_id) < std::tie(b.compare_group, b.method_id);
  });
  for (const auto& c : report.cards) report.groups[c.compare_group].push_back(c.method_id);
}

std::vector<MethodDescriptor> plan_methods(const MethodRegistry& registry, const DiagnoseRequest& request) {
  const auto keys = request.sample.keys();
  if (!request.method_ids) return registry.match(keys);
  std::vector<MethodDescriptor> out;
  for (const auto& id : *request.method_ids) {
    const auto d = registry.descriptor(id);
    std::vector<std::string> missing;
    for (const auto& k : d.requires_input_keys)
      if (!keys.count(k)) missing.push_back(k);
    if (!missing.empty()) {
      std::string list;
      for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
      fail(ErrorCode::kValidation, "method '" + id + "' needs missing keys: " + list);
    }
    if (std::none_of(out.begin(), out.end(), [&](const MethodDescriptor& x) { return x.id == id; })) out.push_back(d);
  }
  return out;
}

DiagnoseReport diagnose(const MethodRegistry& registry, const model::ModelHandle& model,
                        const DiagnoseRequest& request) {
  const auto violations = data::validate_sample(request.sample, request.sample.keys());
  if (!violations.empty()) {
    fail(ErrorCode::kValidation, "invalid sample: '" + violations.front().key + "' " + violations.front().reason);
  }
  const auto plan = plan_methods(registry, request);
  DiagnoseReport report;
  report.request = request;
  for (const auto& d : plan) {
    MethodConfig cfg;
    cfg.seed = request.seed;
    if (auto it = request.config.find(d.id); it != request.config.end()) cfg.values = it->second;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      Result r = registry.function(d.id)(model, request.sample, cfg);
      require(d.result_kinds.count(result_kind(r)) != 0, ErrorCode::kInternal,
              std::string("method returned undeclared kind ") + result_kind_name(result_kind(r)));
      Card c;
      c.method_id = d.id;
      c.rendered_description = fill_template(d.description_template, highlights(r));
      if (c.rendered_description.empty()) c.rendered_description = d.id;
      c.result = std::move(r);
      c.timing_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      report.cards.push_back(std::move(c));
    } catch (const Error& e) {
      report.failures[d.id] = {error_code_name(e.code()), e.what()};
    } catch (const std::exception& e) {
      report.failures[d.id] = {"internal", e.what()};
    }
  }
  consolidate(report);
  return report;
}

nlohmann::json report_to_json(const DiagnoseReport& report) {
  nlohmann::json cards = nlohmann::json::array();
  for (const auto& c : report.cards) {
    cards.push_back({{"method_id", c.method_id},
                     {"kind", result_kind_name(result_kind(c.result))},
                     {"result", result_to_json(c.result)},
                     {"rendered_description", c.rendered_description},
                     {"compare_group", c.compare_group}});
  }
  nlohmann::json failures = nlohmann::json::object();
  for (const auto& [id, f] : report.failures) failures[id] = {{"code", f.code}, {"message", f.message}};
  return {{"schema", kReportSchema},
          {"schema_version", kReportSchemaVersion},
          {"request", request_to_json(report.request)},
          {"cards", cards},
          {"groups", report.groups},
          {"failures", failures}};
}

std::string report_to_string(const DiagnoseReport& report) { return json_text(report_to_json(report)); }

namespace {

void need(std::vector<std::string>& errs, const nlohmann::json& j, const std::string& where, const char* key,
          nlohmann::json::value_t type) {
  if (!j.contains(key)) {
    errs.push_back(where + ": missing '" + key + "'");
    return;
  }
  const auto t = j.at(key).type();
  const bool number_ok = type == nlohmann::json::value_t::number_float && j.at(key).is_number();
  const bool int_ok = type == nlohmann::json::value_t::number_integer && j.at(key).is_number_integer();
  if (t != type && !number_ok && !int_ok) errs.push_back(where + ": '" + key + "' has the wrong type");
}

}  // namespace

std::vector<std::string> validate_report_json(const nlohmann::json& j) {
  using T = nlohmann::json::value_t;
  std::vector<std::string> errs;
  if (!j.is_object()) return {"report is not an object"};
  if (j.value("schema", "") != kReportSchema) errs.push_back("schema tag is not " + std::string(kReportSchema));
  if (j.value("schema_version", -1) != kReportSchemaVersion) errs.push_back("unsupported schema_version");
  need(errs, j, "report", "request", T::object);
  need(errs, j, "report", "cards", T::array);
  need(errs, j, "report", "groups", T::object);
  need(errs, j, "report", "failures", T::object);
  if (!errs.empty()) return errs;
  need(errs, j["request"], "request", "model_id", T::string);
  need(errs, j["request"], "request", "sample", T::object);
  std::set<std::string> card_ids;
  for (std::size_t i = 0; i < j["cards"].size(); ++i) {
    const auto& c = j["cards"][i];
    const std::string where = "cards[" + std::to_string(i) + "]";
    need(errs, c, where, "method_id", T::string);
    need(errs, c, where, "kind", T::string);
    need(errs, c, where, "result", T::object);
    need(errs, c, where, "rendered_description", T::string);
    need(errs, c, where, "compare_group", T::string);
    if (!errs.empty()) continue;
    if (c["rendered_description"].get<std::string>().empty()) errs.push_back(where + ": empty description");
    const std::string id = c["method_id"];
    if (!card_ids.insert(id).second) errs.push_back(where + ": duplicate card for '" + id + "'");
    if (j["failures"].contains(id)) errs.push_back(where + ": '" + id + "' is both a card and a failure");
    const auto& r = c["result"];
    try {
      switch (parse_result_kind(c["kind"])) {
        case ResultKind::kAttributionSeries:
          need(errs, r, where, "tokens", T::array);
          need(errs, r, where, "scores", T::array);
          if (r.contains("tokens") && r.contains("scores") && r["tokens"].size() != r["scores"].size())
            errs.push_back(where + ": tokens and scores differ in length");
          break;
        case ResultKind::kLayerTokenGrid:
          need(errs, r, where, "tokens", T::array);
          need(errs, r, where, "grids", T::array);
          break;
        case ResultKind::kNeuronReport:
          need(errs, r, where, "top_neurons", T::array);
          if (r.contains("top_neurons"))
            for (const auto& n : r["top_neurons"]) need(errs, n, where + ".top_neurons", "neuron", T::string);
          break;
        case ResultKind::kLayerDecodeTable:
          need(errs, r, where, "rows", T::array);
          need(errs, r, where, "mode", T::string);
          break;
        case ResultKind::kAttentionGrid:
          need(errs, r, where, "tokens", T::array);
          need(errs, r, where, "weights", T::array);
          break;
        case ResultKind::kProjectionMap:
          need(errs, r, where, "tokens", T::array);
          need(errs, r, where, "coords", T::array);
          break;
        case ResultKind::kTextExplanation:
          need(errs, r, where, "raw_text", T::string);
          need(errs, r, where, "parse_ok", T::boolean);
          break;
        case ResultKind::kSparseCodeReport:
          need(errs, r, where, "dimensions", T::array);
          need(errs, r, where, "sparsity", T::number_float);
          break;
      }
    } catch (const Error&) {
      errs.push_back(where + ": unknown kind '" + c["kind"].get<std::string>() + "'");
    }
    const std::string group = c["compare_group"];
    if (!j["groups"].contains(group)) errs.push_back(where + ": compare_group '" + group + "' not listed in groups");
  }
  for (const auto& [g, members] : j["groups"].items()) {
    for (const auto& m : members)
      if (!card_ids.count(m.get<std::string>())) errs.push_back("groups." + g + ": unknown card '" + m.get<std::string>() + "'");
  }
  for (const auto& [id, f] : j["failures"].items()) {
    need(errs, f, "failures." + id, "code", T::string);
    need(errs, f, "failures." + id, "message", T::string);
  }
  return errs;
}

}  // namespace knowmri::methods
