#pragma once

#include <map>
#include <set>
#include <shared_mutex>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

namespace knowmri::data {

using KeySet = std::set<std::string>;

inline constexpr const char* kPrompt = "prompt";
inline constexpr const char* kPrompts = "prompts";
inline constexpr const char* kGroundTruth = "ground_truth";
inline constexpr const char* kTripleSubject = "triple_subject";
inline constexpr const char* kTripleRelation = "triple_relation";
inline constexpr const char* kTripleObject = "triple_object";

// Vocabulary of template keys. The six built-in keys are always present;
// extensions need a one-line description.
class TemplateKeyRegistry {
 public:
  TemplateKeyRegistry();

  void add(const std::string& name, const std::string& description);
  bool contains(const std::string& name) const;
  std::string describe(const std::string& name) const;
  std::vector<std::string> names() const;
  bool is_list(const std::string& name) const { return name == kPrompts; }

 private:
  mutable std::shared_mutex mu_;
  std::map<std::string, std::string> keys_;
};

// Process-wide registry used by datasets, matching, and the service.
TemplateKeyRegistry& template_keys();

// Parses "a,b,c"; unknown names raise kValidation naming the key.
KeySet parse_key_list(const std::string& csv, const TemplateKeyRegistry& registry = template_keys());

using Value = std::variant<std::string, std::vector<std::string>>;

struct SampleSource {
  enum class Kind { kDataset, kCustom } kind = Kind::kCustom;
  std::string dataset_id;
  int index = -1;
};

struct Sample {
  std::map<std::string, Value> values;
  SampleSource source;
  std::map<std::string, std::string> metadata;

  bool has(const std::string& key) const { return values.count(key) != 0; }
  KeySet keys() const;
  // Throw kValidation when the key is absent or has the other shape.
  const std::string& text(const std::string& key) const;
  const std::vector<std::string>& list(const std::string& key) const;

  // `prompts` if present, else the single `prompt`.
  std::vector<std::string> all_prompts() const;
};

struct Violation {
  std::string key;
  std::string reason;
};

// Checks the sample against a declared key set; never throws.
std::vector<Violation> validate_sample(const Sample& sample, const KeySet& declared);

nlohmann::json sample_values_to_json(const Sample& sample);
nlohmann::json sample_to_json(const Sample& sample);
// Reads a flat key/value object; shape errors raise kValidation.
Sample sample_from_json(const nlohmann::json& j);

}  // namespace knowmri::data
