#include "knowmri/service/service.hpp"

#include <httplib.h>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "knowmri/error.hpp"
#include "knowmri/json_text.hpp"

namespace knowmri::service {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_file(const fs::path& p, const std::string& bytes) {
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    require(out.good(), ErrorCode::kIo, "cannot write " + tmp.string());
    out << bytes;
  }
  fs::rename(tmp, p);
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  require(in.good(), ErrorCode::kIo, "cannot read " + p.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::string now_iso() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

bool valid_run_id(const std::string& id) {
  if (id.rfind("run-", 0) != 0 || id.size() < 5) return false;
  return std::all_of(id.begin() + 4, id.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); });
}

}  // namespace

RunStore::RunStore(fs::path root) : root_(std::move(root)) {
  fs::create_directories(root_);
  for (const auto& e : fs::directory_iterator(root_)) {
    const std::string name = e.path().filename().string();
    if (e.is_directory() && valid_run_id(name)) counter_ = std::max<std::uint64_t>(counter_, std::stoull(name.substr(4)));
  }
}

fs::path RunStore::dir(const std::string& id) const { return root_ / id; }

bool RunStore::exists(const std::string& id) const { return valid_run_id(id) && fs::exists(dir(id) / "status.json"); }

std::string RunStore::create(const std::string& kind, const json& request) {
  std::lock_guard lock(mu_);
  std::ostringstream os;
  os << "run-" << std::setw(6) << std::setfill('0') << ++counter_;
  const std::string id = os.str();
  fs::create_directories(dir(id));
  write_file(dir(id) / "request.json", json_text(request));
  write_file(dir(id) / "status.json",
             json_text(json{{"run_id", id}, {"kind", kind}, {"state", "queued"}, {"created", now_iso()}}));
  write_file(dir(id) / "log.txt", "");
  return id;
}

void RunStore::set_state(const std::string& id, const std::string& state, const json& extra) {
  std::lock_guard lock(mu_);
  json s = json::parse(read_file(dir(id) / "status.json"));
  s["state"] = state;
  s["updated"] = now_iso();
  if (extra.is_object()) s.update(extra);
  write_file(dir(id) / "status.json", json_text(s));
}

void RunStore::log(const std::string& id, const std::string& line) {
  std::lock_guard lock(mu_);
  std::ofstream(dir(id) / "log.txt", std::ios::app) << now_iso() << " " << line << "\n";
}

void RunStore::write_report(const std::string& id, const std::string& bytes) {
  std::lock_guard lock(mu_);
  write_file(dir(id) / "report.json", bytes);
}

json RunStore::status(const std::string& id) const {
  require(exists(id), ErrorCode::kNotFound, "unknown run '" + id + "'");
  std::lock_guard lock(mu_);
  return json::parse(read_file(dir(id) / "status.json"));
}

std::string RunStore::report(const std::string& id) const {
  const json s = status(id);
  require(s.value("state", "") == "done", ErrorCode::kUnavailable,
          "run '" + id + "' is " + s.value("state", "unknown") + "; no report");
  std::lock_guard lock(mu_);
  return read_file(dir(id) / "report.json");
}

Service::Service(Workspace& ws) : ws_(ws), runs_(ws.config().runs_dir) {}

Service::~Service() {
  std::lock_guard lock(workers_mu_);
  for (auto& [_, w] : workers_) {
    {
      std::lock_guard wl(w->mu);
      w->stop = true;
    }
    w->cv.notify_all();
  }
  for (auto& [_, w] : workers_)
    if (w->thread.joinable()) w->thread.join();
}

Service::Worker& Service::worker(const std::string& model_id) {
  std::lock_guard lock(workers_mu_);
  auto& slot = workers_[model_id];
  if (!slot) {
    slot = std::make_unique<Worker>();
    Worker* w = slot.get();
    w->thread = std::thread([w] {
      for (;;) {
        std::function<void()> job;
        {
          std::unique_lock lk(w->mu);
          w->cv.wait(lk, [&] { return w->stop || !w->jobs.empty(); });
          if (w->jobs.empty()) return;
          job = std::move(w->jobs.front());
          w->jobs.pop_front();
        }
        job();
      }
    });
  }
  return *slot;
}

std::string Service::enqueue(const std::string& model_id, const std::string& kind, const json& request,
                             std::function<std::string(const std::string&)> work) {
  require(ws_.has_model(model_id), ErrorCode::kNotFound, "unknown model '" + model_id + "'");
  int cur = pending_.load();
  do {
    require(cur < ws_.config().max_pending, ErrorCode::kOverloaded,
            "queue full (" + std::to_string(cur) + " pending runs)");
  } while (!pending_.compare_exchange_weak(cur, cur + 1));
  std::string id;
  try {
    id = runs_.create(kind, request);
    runs_.set_state(id, "queued", {{"model_id", model_id}});
  } catch (...) {
    --pending_;
    throw;
  }
  Worker& w = worker(model_id);
  {
    std::lock_guard lk(w.mu);
    w.jobs.push_back([this, id, model_id, work = std::move(work)] {
      runs_.set_state(id, "running");
      runs_.log(id, "started");
      try {
        std::string bytes;
        {
          std::lock_guard use(ws_.model_mutex(model_id));
          bytes = work(id);
        }
        runs_.write_report(id, bytes);
        runs_.set_state(id, "done");
        runs_.log(id, "done");
      } catch (const Error& e) {
        runs_.set_state(id, "failed", {{"error", {{"code", error_code_name(e.code())}, {"message", e.what()}}}});
        runs_.log(id, std::string("failed: ") + e.what());
      } catch (const std::exception& e) {
        runs_.set_state(id, "failed", {{"error", {{"code", "internal"}, {"message", e.what()}}}});
        runs_.log(id, std::string("failed: ") + e.what());
      }
      --pending_;
      std::lock_guard dl(done_mu_);
      done_cv_.notify_all();
    });
  }
  w.cv.notify_one();
  return id;
}

std::string Service::submit_diagnose(const json& body) {
  const methods::DiagnoseRequest req = ws_.make_request(body);
  return enqueue(req.model_id, "diagnose", methods::request_to_json(req), [this, req](const std::string& id) {
    const auto report = ws_.diagnose(req);
    for (const auto& c : report.cards) runs_.log(id, "card " + c.method_id);
    for (const auto& [m, f] : report.failures) runs_.log(id, "method " + m + " failed: " + f.message);
    return methods::report_to_string(report);
  });
}

std::string Service::submit_capability(const json& body) {
  require(body.is_object() && body.contains("model_id") && body["model_id"].is_string(), ErrorCode::kValidation,
          "capability request needs model_id");
  require(body.contains("dataset") && body["dataset"].is_string(), ErrorCode::kValidation,
          "capability request needs dataset");
  ws_.dataset(body["dataset"].get<std::string>());
  return enqueue(body["model_id"].get<std::string>(), "capability", body,
                 [this, body](const std::string&) { return json_text(ws_.capability(body)); });
}

json Service::wait(const std::string& run_id) {
  std::unique_lock lk(done_mu_);
  for (;;) {
    json s = runs_.status(run_id);
    const std::string st = s.value("state", "");
    if (st == "done" || st == "failed") return s;
    done_cv_.wait_for(lk, std::chrono::milliseconds(50));
  }
}

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument:
    case ErrorCode::kValidation:
    case ErrorCode::kOutOfRange:
    case ErrorCode::kShapeMismatch:
      return 400;
    case ErrorCode::kNotFound:
      return 404;
    case ErrorCode::kUnsupported:
      return 422;
    case ErrorCode::kOverloaded:
      return 429;
    case ErrorCode::kUnavailable:
      return 503;
    default:
      return 500;
  }
}

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(json_text(body), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& code, const std::string& message) {
  send_json(res, status, {{"error", {{"code", code}, {"message", message}}}});
}

template <typename F>
httplib::Server::Handler guarded(F f) {
  return [f](const httplib::Request& req, httplib::Response& res) {
    try {
      f(req, res);
    } catch (const Error& e) {
      send_error(res, http_status(e.code()), error_code_name(e.code()), e.what());
    } catch (const json::exception& e) {
      send_error(res, 400, "validation", e.what());
    } catch (const std::exception& e) {
      send_error(res, 500, "internal", e.what());
    }
  };
}

json parse_body(const httplib::Request& req) {
  try {
    return json::parse(req.body);
  } catch (const json::exception& e) {
    fail(ErrorCode::kValidation, std::string("body is not JSON: ") + e.what());
  }
}

int parse_int(const std::string& s, const char* name) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(s, &used);
    if (used == s.size()) return v;
  } catch (...) {
  }
  fail(ErrorCode::kInvalidArgument, std::string("parameter '") + name + "' must be an integer");
}

}  // namespace

void install_routes(httplib::Server& server, Service& svc) {
  server.Get("/models", guarded([&svc](const httplib::Request&, httplib::Response& res) {
               send_json(res, 200, svc.workspace().list_models());
             }));
  server.Get("/datasets", guarded([&svc](const httplib::Request&, httplib::Response& res) {
               send_json(res, 200, svc.workspace().list_datasets());
             }));
  server.Get("/methods", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
               std::optional<std::string> keys;
               if (req.has_param("keys")) keys = req.get_param_value("keys");
               send_json(res, 200, svc.workspace().list_methods(keys));
             }));
  server.Get(R"(/datasets/([^/]+)/search)", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
               const std::string id = req.matches[1];
               svc.workspace().dataset(id);
               require(req.has_param("q"), ErrorCode::kInvalidArgument, "missing query parameter 'q'");
               const int k = req.has_param("k") ? parse_int(req.get_param_value("k"), "k") : 5;
               send_json(res, 200, svc.workspace().search(id, req.get_param_value("q"), k));
             }));
  server.Post("/normalize", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
                const json body = parse_body(req);
                require(body.contains("text") && body["text"].is_string(), ErrorCode::kValidation,
                        "body needs 'text'");
                send_json(res, 200, svc.workspace().normalize(body["text"]));
              }));
  server.Post("/diagnose", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
                send_json(res, 202, {{"run_id", svc.submit_diagnose(parse_body(req))}});
              }));
  server.Post("/experiments/capability", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
                send_json(res, 202, {{"run_id", svc.submit_capability(parse_body(req))}});
              }));
  server.Get(R"(/runs/([^/]+))", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
               send_json(res, 200, svc.runs().status(req.matches[1]));
             }));
  server.Get(R"(/runs/([^/]+)/report)", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
               const std::string id = req.matches[1];
               const json s = svc.runs().status(id);
               if (s.value("state", "") != "done") {
                 send_error(res, 409, "not_ready", "run '" + id + "' is " + s.value("state", "unknown"));
                 return;
               }
               res.status = 200;
               res.set_content(svc.runs().report(id), "application/json");
             }));
}

void serve(Service& svc, const std::string& host, int port) {
  httplib::Server server;
  install_routes(server, svc);
  require(server.bind_to_port(host, port), ErrorCode::kUnavailable,
          "cannot bind " + host + ":" + std::to_string(port));
  std::fprintf(stderr, "listening on http://%s:%d\n", host.c_str(), port);
  server.listen_after_bind();
}

}  // namespace knowmri::service
