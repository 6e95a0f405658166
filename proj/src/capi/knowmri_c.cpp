#include "knowmri/knowmri.h"

#include <cstdlib>
#include <cstring>
#include <memory>
#include <string>

#include <json.hpp>

#include "knowmri/error.hpp"
#include "knowmri/json_text.hpp"
#include "knowmri/methods/registry.hpp"
#include "knowmri/service/service.hpp"
#include "knowmri/service/workspace.hpp"

struct km_workspace {
  std::unique_ptr<knowmri::service::Workspace> ws;
};

namespace {

thread_local std::string g_last_error;

km_status to_status(knowmri::ErrorCode c) { return static_cast<km_status>(static_cast<int>(c) + 1); }

char* dup(const std::string& s) {
  char* p = static_cast<char*>(std::malloc(s.size() + 1));
  if (p) std::memcpy(p, s.c_str(), s.size() + 1);
  return p;
}

template <typename F>
km_status guarded(char** out, F f) {
  if (out) *out = nullptr;
  g_last_error.clear();
  try {
    std::string s = f();
    if (out) {
      *out = dup(s);
      if (!*out) {
        g_last_error = "out of memory";
        return KM_INTERNAL;
      }
    }
    return KM_OK;
  } catch (const knowmri::Error& e) {
    g_last_error = e.what();
    return to_status(e.code());
  } catch (const nlohmann::json::exception& e) {
    g_last_error = e.what();
    return KM_VALIDATION;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return KM_INTERNAL;
  }
}

knowmri::service::Workspace& need(km_workspace* ws) {
  knowmri::require(ws != nullptr && ws->ws != nullptr, knowmri::ErrorCode::kInvalidArgument, "null workspace");
  return *ws->ws;
}

std::string need_str(const char* s, const char* what) {
  knowmri::require(s != nullptr, knowmri::ErrorCode::kInvalidArgument, std::string(what) + " is null");
  return s;
}

nlohmann::json parse(const char* s) {
  try {
    return nlohmann::json::parse(need_str(s, "body"));
  } catch (const nlohmann::json::exception& e) {
    knowmri::fail(knowmri::ErrorCode::kValidation, std::string("body is not JSON: ") + e.what());
  }
}

}  // namespace

extern "C" {

km_status km_open(const char* config_path, km_workspace** out) {
  if (out) *out = nullptr;
  char* unused = nullptr;
  km_workspace* made = nullptr;
  const km_status st = guarded(&unused, [&] {
    knowmri::require(out != nullptr, knowmri::ErrorCode::kInvalidArgument, "null output handle");
    const auto path = knowmri::service::resolve_config_path(
        config_path ? std::optional<std::string>(config_path) : std::nullopt);
    auto ws = std::make_unique<knowmri::service::Workspace>(knowmri::service::load_workspace_config(path));
    made = new km_workspace{std::move(ws)};
    return std::string();
  });
  std::free(unused);
  if (st == KM_OK) *out = made;
  return st;
}

void km_close(km_workspace* ws) { delete ws; }

using knowmri::json_text;

km_status km_list_models(km_workspace* ws, char** out) {
  return guarded(out, [&] { return json_text(need(ws).list_models()); });
}

km_status km_list_datasets(km_workspace* ws, char** out) {
  return guarded(out, [&] { return json_text(need(ws).list_datasets()); });
}

km_status km_list_methods(km_workspace* ws, const char* keys_csv, char** out) {
  return guarded(out, [&] {
    return json_text(need(ws).list_methods(keys_csv ? std::optional<std::string>(keys_csv) : std::nullopt));
  });
}

km_status km_search(km_workspace* ws, const char* dataset_id, const char* query, int k, char** out) {
  return guarded(out, [&] {
    return json_text(need(ws).search(need_str(dataset_id, "dataset id"), need_str(query, "query"), k));
  });
}

km_status km_normalize(km_workspace* ws, const char* text, char** out) {
  return guarded(out, [&] { return json_text(need(ws).normalize(need_str(text, "text"))); });
}

km_status km_prepare(km_workspace* ws, const char* body, char** out) {
  return guarded(out, [&] {
    return json_text(knowmri::methods::request_to_json(need(ws).make_request(parse(body))));
  });
}

km_status km_diagnose(km_workspace* ws, const char* body, char** out) {
  return guarded(out, [&] {
    auto& w = need(ws);
    const auto req = w.make_request(parse(body));
    std::lock_guard lock(w.model_mutex(req.model_id));
    return knowmri::methods::report_to_string(w.diagnose(req));
  });
}

km_status km_capability(km_workspace* ws, const char* body, char** out) {
  return guarded(out, [&] {
    auto& w = need(ws);
    const auto j = parse(body);
    knowmri::require(j.is_object() && j.contains("model_id") && j["model_id"].is_string(),
                     knowmri::ErrorCode::kValidation, "capability request needs model_id");
    std::lock_guard lock(w.model_mutex(j["model_id"].get<std::string>()));
    return json_text(w.capability(j));
  });
}

km_status km_serve(km_workspace* ws, const char* host, int port) {
  char* unused = nullptr;
  const km_status st = guarded(&unused, [&] {
    auto& w = need(ws);
    knowmri::service::Service svc(w);
    knowmri::service::serve(svc, host ? host : w.config().host, port > 0 ? port : w.config().port);
    return std::string();
  });
  std::free(unused);
  return st;
}

const char* km_last_error(void) { return g_last_error.c_str(); }

const char* km_status_name(km_status s) {
  if (s == KM_OK) return "ok";
  if (s < KM_OK || s > KM_INTERNAL) return "unknown";
  return knowmri::error_code_name(static_cast<knowmri::ErrorCode>(static_cast<int>(s) - 1));
}

void km_free_string(char* s) { std::free(s); }

}  // extern "C"
