#include "knowmri/data/providers.hpp"

#include <httplib.h>

#include <cstdlib>
#include <regex>

#include "knowmri/error.hpp"

namespace knowmri::data {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

std::string strip_framing(std::string s) {
  static const std::regex framing(
      R"(^(i'?m curious about|i am curious about|i wonder about|i want to know about|tell me about|what do you know about|can you explain|please explain|explain|who made|who created)\s*[:,]?\s*)",
      std::regex::icase);
  s = std::regex_replace(s, framing, "");
  while (!s.empty() && (s.back() == '?' || s.back() == '!')) s.pop_back();
  return trim(s);
}

std::string quoted_clause(const std::string& s) {
  static const std::regex ascii(R"((?:^|\s)['"](.+)['"]\s*\.?$)");
  std::smatch m;
  if (std::regex_search(s, m, ascii)) return trim(m[1].str());
  const std::string open = "\xE2\x80\x9C", close = "\xE2\x80\x9D";
  const auto a = s.find(open);
  const auto b = s.rfind(close);
  if (a != std::string::npos && b != std::string::npos && b > a) return trim(s.substr(a + open.size(), b - a - open.size()));
  return "";
}

}  // namespace

ProviderConfig provider_config_from_json(const nlohmann::json& j) {
  ProviderConfig c;
  const std::string mode = j.value("mode", "local");
  require(mode == "local" || mode == "remote", ErrorCode::kValidation, "provider mode must be local or remote");
  c.mode = mode == "remote" ? ProviderConfig::Mode::kRemote : ProviderConfig::Mode::kLocal;
  c.endpoint = j.value("endpoint", "");
  c.auth_env = j.value("auth_env", "");
  c.timeout_ms = j.value("timeout_ms", 2000);
  c.retries = j.value("retries", 0);
  require(c.mode == ProviderConfig::Mode::kLocal || !c.endpoint.empty(), ErrorCode::kValidation,
          "remote provider needs an endpoint");
  require(c.timeout_ms > 0 && c.retries >= 0, ErrorCode::kValidation, "provider timeout/retries out of range");
  return c;
}

Sample LocalRewriteProvider::rewrite(const std::string& raw) const {
  std::string text = trim(raw);
  require(!text.empty(), ErrorCode::kInvalidArgument, "cannot normalize empty input");
  std::string body = strip_framing(text);
  if (const auto q = quoted_clause(body); !q.empty()) body = q;
  while (!body.empty() && body.back() == '.') body.pop_back();
  body = trim(body);
  if (body.empty()) body = text;

  Sample s;
  static const std::regex triple(R"(^(.+?),\s+(a|an|the)\s+(.+\s(?:by|of|in|from))\s+(.+)$)", std::regex::icase);
  std::smatch m;
  if (std::regex_match(body, m, triple)) {
    const std::string subject = trim(m[1].str());
    const std::string relation = trim(m[3].str());
    const std::string object = trim(m[4].str());
    s.values[kPrompt] = subject + ", " + m[2].str() + " " + relation;
    s.values[kGroundTruth] = object;
    s.values[kTripleSubject] = subject;
    s.values[kTripleRelation] = relation;
    s.values[kTripleObject] = object;
  } else {
    s.values[kPrompt] = body;
  }
  return s;
}

nlohmann::json post_json(const ProviderConfig& cfg, const nlohmann::json& body) {
  static const std::regex url(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  require(std::regex_match(cfg.endpoint, m, url), ErrorCode::kInvalidArgument,
          "malformed provider endpoint '" + cfg.endpoint + "'");
  const std::string base = m[1].str();
  const std::string path = m[2].matched ? m[2].str() : "/";
  httplib::Client cli(base);
  const auto sec = cfg.timeout_ms / 1000;
  const auto usec = (cfg.timeout_ms % 1000) * 1000;
  cli.set_connection_timeout(sec, usec);
  cli.set_read_timeout(sec, usec);
  cli.set_write_timeout(sec, usec);
  httplib::Headers headers;
  if (!cfg.auth_env.empty()) {
    if (const char* tok = std::getenv(cfg.auth_env.c_str())) headers.emplace("Authorization", std::string("Bearer ") + tok);
  }
  std::string last_error = "no attempt made";
  for (int attempt = 0; attempt <= cfg.retries; ++attempt) {
    auto res = cli.Post(path, headers, body.dump(), "application/json");
    if (!res) {
      last_error = httplib::to_string(res.error());
      continue;
    }
    if (res->status != 200) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    try {
      return nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception& e) {
      last_error = std::string("bad reply: ") + e.what();
    }
  }
  fail(ErrorCode::kUnavailable, "provider " + cfg.endpoint + " failed: " + last_error);
}

RemoteRewriteProvider::RemoteRewriteProvider(ProviderConfig cfg) : cfg_(std::move(cfg)) {}

Sample RemoteRewriteProvider::rewrite(const std::string& text) const {
  const auto reply = post_json(cfg_, {{"text", text}});
  require(reply.contains("sample"), ErrorCode::kUnavailable, "provider reply has no 'sample'");
  try {
    return sample_from_json(reply.at("sample"));
  } catch (const Error& e) {
    fail(ErrorCode::kUnavailable, std::string("provider returned an invalid sample: ") + e.what());
  }
}

RemoteEmbedProvider::RemoteEmbedProvider(ProviderConfig cfg) : cfg_(std::move(cfg)) {}

std::vector<std::vector<double>> RemoteEmbedProvider::embed(const std::vector<std::string>& texts) const {
  const auto reply = post_json(cfg_, {{"texts", texts}});
  try {
    auto out = reply.at("embeddings").get<std::vector<std::vector<double>>>();
    require(out.size() == texts.size(), ErrorCode::kUnavailable, "provider returned the wrong number of vectors");
    return out;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kUnavailable, std::string("bad embedding reply: ") + e.what());
  }
}

std::unique_ptr<RewriteProvider> make_rewrite_provider(const ProviderConfig& cfg) {
  if (cfg.mode == ProviderConfig::Mode::kRemote) return std::make_unique<RemoteRewriteProvider>(cfg);
  return std::make_unique<LocalRewriteProvider>();
}

std::unique_ptr<EmbedProvider> make_embed_provider(const ProviderConfig& cfg) {
  if (cfg.mode == ProviderConfig::Mode::kRemote) return std::make_unique<RemoteEmbedProvider>(cfg);
  return nullptr;
}

}  // namespace knowmri::data
