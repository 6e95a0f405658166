#pragma once

#include <atomic>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>

#include <json.hpp>

#include "knowmri/error.hpp"
#include "knowmri/service/workspace.hpp"

namespace httplib {
class Server;
}

namespace knowmri::service {

// One directory per run: request.json, status.json, report.json, log.txt.
class RunStore {
 public:
  explicit RunStore(std::filesystem::path root);

  std::string create(const std::string& kind, const nlohmann::json& request);
  void set_state(const std::string& id, const std::string& state, const nlohmann::json& extra = {});
  void log(const std::string& id, const std::string& line);
  void write_report(const std::string& id, const std::string& bytes);

  bool exists(const std::string& id) const;
  nlohmann::json status(const std::string& id) const;
  std::string report(const std::string& id) const;
  std::filesystem::path dir(const std::string& id) const;

 private:
  std::filesystem::path root_;
  mutable std::mutex mu_;
  std::uint64_t counter_ = 0;
};

// Runs jobs through one FIFO worker per model, so a model only ever serves
// one job at a time. Submissions beyond max_pending raise kOverloaded.
class Service {
 public:
  explicit Service(Workspace& ws);
  ~Service();

  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  Workspace& workspace() { return ws_; }
  RunStore& runs() { return runs_; }

  std::string submit_diagnose(const nlohmann::json& body);
  std::string submit_capability(const nlohmann::json& body);

  // Blocks until the run leaves the queue; returns its final status.
  nlohmann::json wait(const std::string& run_id);
  int pending() const { return pending_.load(); }

 private:
  struct Worker {
    std::thread thread;
    std::deque<std::function<void()>> jobs;
    std::mutex mu;
    std::condition_variable cv;
    bool stop = false;
  };
  std::string enqueue(const std::string& model_id, const std::string& kind, const nlohmann::json& request,
                      std::function<std::string(const std::string&)> work);
  Worker& worker(const std::string& model_id);

  Workspace& ws_;
  RunStore runs_;
  std::atomic<int> pending_{0};
  std::mutex workers_mu_;
  std::map<std::string, std::unique_ptr<Worker>> workers_;
  std::mutex done_mu_;
  std::condition_variable done_cv_;
};

int http_status(ErrorCode code);

// Installs the REST routes on `server`.
void install_routes(httplib::Server& server, Service& service);

// Blocking; returns when the server stops.
void serve(Service& service, const std::string& host, int port);

}  // namespace knowmri::service
