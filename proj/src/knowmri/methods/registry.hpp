#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "knowmri/data/sample.hpp"
#include "knowmri/methods/results.hpp"
#include "knowmri/model/handle.hpp"

namespace knowmri::methods {

enum class Perspective { kExternal, kInternalModule, kInternalRepresentation };

const char* perspective_name(Perspective p);

struct MethodDescriptor {
  std::string id;
  Perspective perspective = Perspective::kExternal;
  data::KeySet requires_input_keys;
  std::set<ResultKind> result_kinds;
  // "{top1}", "{top2}", "{top3}" are replaced by the result's salient items.
  std::string description_template;
  std::string citation;
  std::string note;
};

nlohmann::json descriptor_to_json(const MethodDescriptor& d);

// Per-method overrides from the request, plus the request seed.
struct MethodConfig {
  nlohmann::json values = nlohmann::json::object();
  std::uint64_t seed = 0;

  template <typename T>
  T get(const char* key, T fallback) const {
    return values.contains(key) ? values.at(key).get<T>() : fallback;
  }
};

using DiagnoseFn = std::function<Result(const model::ModelHandle&, const data::Sample&, const MethodConfig&)>;

// Read-mostly: registration takes a write lock, lookups a read lock.
class MethodRegistry {
 public:
  void register_method(MethodDescriptor descriptor, DiagnoseFn fn);

  // Descriptors whose requirements are a subset of `available`, ordered by
  // perspective then id.
  std::vector<MethodDescriptor> match(const data::KeySet& available) const;
  std::vector<MethodDescriptor> all() const;
  bool contains(const std::string& id) const;
  MethodDescriptor descriptor(const std::string& id) const;
  DiagnoseFn function(const std::string& id) const;

 private:
  struct Entry {
    MethodDescriptor descriptor;
    DiagnoseFn fn;
  };
  mutable std::shared_mutex mu_;
  std::map<std::string, Entry> entries_;
};

struct Card {
  std::string method_id;
  Result result;
  std::string rendered_description;
  std::string compare_group;
  double timing_ms = 0.0;  // kept out of the serialized report
};

struct DiagnoseRequest {
  std::string model_id;
  data::Sample sample;
  std::optional<std::vector<std::string>> method_ids;
  std::map<std::string, nlohmann::json> config;  // method id -> overrides
  std::uint64_t seed = 0;
};

nlohmann::json request_to_json(const DiagnoseRequest& r);
DiagnoseRequest request_from_json(const nlohmann::json& j);

struct Failure {
  std::string code;
  std::string message;
};

struct DiagnoseReport {
  DiagnoseRequest request;
  std::vector<Card> cards;
  std::map<std::string, std::vector<std::string>> groups;  // group id -> method ids
  std::map<std::string, Failure> failures;
};

std::string fill_template(const std::string& tmpl, const std::vector<std::string>& items);

// Groups cards by result kind (group id = kind name); cards are reordered by
// (group, method id).
void consolidate(DiagnoseReport& report);

// Methods that will run for the request. Explicit ids that are unknown or
// whose keys are missing raise before anything executes.
std::vector<MethodDescriptor> plan_methods(const MethodRegistry& registry, const DiagnoseRequest& request);

// Runs every planned method in isolation; a throwing method lands in
// `failures` and the others still produce cards.
DiagnoseReport diagnose(const MethodRegistry& registry, const model::ModelHandle& model,
                        const DiagnoseRequest& request);

inline constexpr const char* kReportSchema = "knowmri.report";
inline constexpr int kReportSchemaVersion = 1;

nlohmann::json report_to_json(const DiagnoseReport& report);
// Canonical text form: the bytes written by the CLI and served over HTTP.
std::string report_to_string(const DiagnoseReport& report);

// Structural check mirroring schema/report.schema.json; empty when valid.
std::vector<std::string> validate_report_json(const nlohmann::json& j);

}  // namespace knowmri::methods
