#include "knowmri/data/sample.hpp"

#include <algorithm>
#include <cctype>
#include <mutex>
#include <sstream>

#include "knowmri/error.hpp"

namespace knowmri::data {

TemplateKeyRegistry::TemplateKeyRegistry()
    : keys_{{kPrompt, "Input text for the model to complete."},
            {kPrompts, "Paraphrases expressing the same query; includes prompt."},
            {kGroundTruth, "Expected continuation of the prompt."},
            {kTripleSubject, "Subject entity of the underlying fact."},
            {kTripleRelation, "Relation linking subject and object."},
            {kTripleObject, "Object entity of the underlying fact."}} {}

void TemplateKeyRegistry::add(const std::string& name, const std::string& description) {
  require(!name.empty() && std::all_of(name.begin(), name.end(),
                                       [](char c) { return std::islower(static_cast<unsigned char>(c)) || c == '_' ||
                                                           std::isdigit(static_cast<unsigned char>(c)); }),
          ErrorCode::kInvalidArgument, "template key '" + name + "' must be lower_snake_case");
  require(!description.empty() && description.find('\n') == std::string::npos, ErrorCode::kInvalidArgument,
          "template key '" + name + "' needs a one-line description");
  std::unique_lock lock(mu_);
  auto [it, inserted] = keys_.emplace(name, description);
  require(inserted || it->second == description, ErrorCode::kInvalidArgument,
          "template key '" + name + "' is already registered with a different description");
}

bool TemplateKeyRegistry::contains(const std::string& name) const {
  std::shared_lock lock(mu_);
  return keys_.count(name) != 0;
}

std::string TemplateKeyRegistry::describe(const std::string& name) const {
  std::shared_lock lock(mu_);
  auto it = keys_.find(name);
  require(it != keys_.end(), ErrorCode::kNotFound, "unknown template key '" + name + "'");
  return it->second;
}

std::vector<std::string> TemplateKeyRegistry::names() const {
  std::shared_lock lock(mu_);
  std::vector<std::string> out;
  for (const auto& [k, v] : keys_) out.push_back(k);
  return out;
}

TemplateKeyRegistry& template_keys() {
  static TemplateKeyRegistry registry;
  return registry;
}

KeySet parse_key_list(const std::string& csv, const TemplateKeyRegistry& registry) {
  KeySet out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    if (b == std::string::npos) continue;
    item = item.substr(b, item.find_last_not_of(" \t") - b + 1);
    require(registry.contains(item), ErrorCode::kValidation, "unknown template key '" + item + "'");
    out.insert(item);
  }
  return out;
}

KeySet Sample::keys() const {
  KeySet out;
  for (const auto& [k, v] : values) out.insert(k);
  return out;
}

const std::string& Sample::text(const std::string& key) const {
  auto it = values.find(key);
  require(it != values.end(), ErrorCode::kValidation, "sample has no '" + key + "'");
  const auto* s = std::get_if<std::string>(&it->second);
  require(s != nullptr, ErrorCode::kValidation, "'" + key + "' is a list, expected text");
  return *s;
}

const std::vector<std::string>& Sample::list(const std::string& key) const {
  auto it = values.find(key);
  require(it != values.end(), ErrorCode::kValidation, "sample has no '" + key + "'");
  const auto* l = std::get_if<std::vector<std::string>>(&it->second);
  require(l != nullptr, ErrorCode::kValidation, "'" + key + "' is text, expected a list");
  return *l;
}

std::vector<std::string> Sample::all_prompts() const {
  if (has(kPrompts)) return list(kPrompts);
  return {text(kPrompt)};
}

std::vector<Violation> validate_sample(const Sample& sample, const KeySet& declared) {
  std::vector<Violation> out;
  for (const auto& [key, value] : sample.values) {
    if (!declared.count(key)) out.push_back({key, "key is not declared by the dataset"});
    if (const auto* s = std::get_if<std::string>(&value)) {
      if (key == kPrompts) out.push_back({key, "must be a list of strings"});
      else if (s->empty()) out.push_back({key, "value is empty"});
    } else {
      const auto& l = std::get<std::vector<std::string>>(value);
      if (key == kPrompt || key == kGroundTruth || key.rfind("triple_", 0) == 0) {
        out.push_back({key, "must be a string"});
      } else if (l.empty()) {
        out.push_back({key, "list is empty"});
      } else if (std::any_of(l.begin(), l.end(), [](const std::string& x) { return x.empty(); })) {
        out.push_back({key, "list contains an empty string"});
      }
    }
  }
  if (sample.values.empty()) out.push_back({"", "sample has no values"});
  if (sample.has(kPrompt) && sample.has(kPrompts)) {
    const auto* p = std::get_if<std::string>(&sample.values.at(kPrompt));
    const auto* ps = std::get_if<std::vector<std::string>>(&sample.values.at(kPrompts));
    if (p && ps && std::find(ps->begin(), ps->end(), *p) == ps->end())
      out.push_back({kPrompt, "prompt ∉ prompts"});
  }
  return out;
}

nlohmann::json sample_values_to_json(const Sample& sample) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : sample.values) {
    if (const auto* s = std::get_if<std::string>(&v)) j[k] = *s;
    else j[k] = std::get<std::vector<std::string>>(v);
  }
  return j;
}

nlohmann::json sample_to_json(const Sample& sample) {
  nlohmann::json src;
  if (sample.source.kind == SampleSource::Kind::kDataset) {
    src = {{"kind", "dataset"}, {"dataset", sample.source.dataset_id}, {"index", sample.source.index}};
  } else {
    src = {{"kind", "custom"}};
  }
  nlohmann::json j = {{"values", sample_values_to_json(sample)}, {"source", src}};
  if (!sample.metadata.empty()) j["metadata"] = sample.metadata;
  return j;
}

Sample sample_from_json(const nlohmann::json& j) {
  require(j.is_object(), ErrorCode::kValidation, "sample must be an object");
  Sample s;
  for (const auto& [k, v] : j.items()) {
    if (v.is_string()) {
      s.values[k] = v.get<std::string>();
    } else if (v.is_array()) {
      std::vector<std::string> list;
      for (const auto& e : v) {
        require(e.is_string(), ErrorCode::kValidation, "key '" + k + "' must hold strings");
        list.push_back(e.get<std::string>());
      }
      s.values[k] = std::move(list);
    } else {
      fail(ErrorCode::kValidation, "key '" + k + "' must be a string or a list of strings");
    }
  }
  return s;
}

}  // namespace knowmri::data
