#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "knowmri/data/dataset.hpp"
#include "knowmri/data/providers.hpp"
#include "knowmri/methods/registry.hpp"
#include "knowmri/model/handle.hpp"

namespace knowmri::service {

struct ModelRef {
  std::string id;
  std::filesystem::path path;
};

struct WorkspaceConfig {
  std::vector<ModelRef> models;
  std::vector<std::filesystem::path> datasets;
  std::filesystem::path runs_dir = "runs";
  int max_pending = 16;
  std::string host = "127.0.0.1";
  int port = 8088;
  data::ProviderConfig rewrite;
  data::ProviderConfig embed;
  std::string reference_dataset = "known_mini";
  std::map<std::string, nlohmann::json> method_defaults;
};

// Relative paths resolve against the config file's directory.
WorkspaceConfig load_workspace_config(const std::filesystem::path& path);

// --config flag, else $KNOWMRI_CONFIG, else the build-time default.
std::filesystem::path resolve_config_path(const std::optional<std::string>& flag);

// Models, datasets and providers named by a config. Models load on first use.
class Workspace {
 public:
  explicit Workspace(WorkspaceConfig cfg);

  const WorkspaceConfig& config() const { return cfg_; }

  nlohmann::json list_models();
  nlohmann::json list_datasets() const;
  nlohmann::json list_methods(const std::optional<std::string>& keys_csv) const;
  nlohmann::json search(const std::string& dataset_id, const std::string& query, int k) const;
  nlohmann::json normalize(const std::string& text) const;

  bool has_model(const std::string& id) const;
  // Callers hold model_mutex(id) while using the handle.
  const model::ModelHandle& model(const std::string& id);
  std::mutex& model_mutex(const std::string& id);
  const data::Dataset& dataset(const std::string& id) const;

  // Accepts {"sample": {...}}, {"dataset": id, "index": i} or {"text": "..."}.
  data::Sample resolve_sample(const nlohmann::json& body) const;
  // Diagnose body -> request, with the configured method defaults folded in.
  // Checks the model and the method plan; throws before anything runs.
  methods::DiagnoseRequest make_request(const nlohmann::json& body) const;

  // Caller holds model_mutex(request.model_id).
  methods::DiagnoseReport diagnose(const methods::DiagnoseRequest& request);
  nlohmann::json capability(const nlohmann::json& body);

 private:
  struct ModelSlot {
    ModelRef ref;
    std::unique_ptr<model::ModelHandle> handle;
    std::mutex load_mu;
    std::mutex use_mu;
  };
  ModelSlot& slot(const std::string& id);
  const ModelSlot& slot(const std::string& id) const;

  WorkspaceConfig cfg_;
  std::map<std::string, std::unique_ptr<ModelSlot>> models_;
  std::map<std::string, data::Dataset> datasets_;
  std::unique_ptr<data::RewriteProvider> rewrite_;
  std::unique_ptr<data::EmbedProvider> embed_;
};

}  // namespace knowmri::service
