#pragma once

#include <memory>
#include <string>
#include <vector>

#include "knowmri/data/sample.hpp"

namespace knowmri::data {

struct ProviderConfig {
  enum class Mode { kLocal, kRemote } mode = Mode::kLocal;
  std::string endpoint;  // http://host:port/path
  std::string auth_env;  // name of the env var holding a bearer token
  int timeout_ms = 2000;
  int retries = 0;
};

ProviderConfig provider_config_from_json(const nlohmann::json& j);

// Text -> draft sample. Implementations must be safe for concurrent calls.
class RewriteProvider {
 public:
  virtual ~RewriteProvider() = default;
  virtual std::string name() const = 0;
  virtual Sample rewrite(const std::string& text) const = 0;
};

// Texts -> vectors for similarity search.
class EmbedProvider {
 public:
  virtual ~EmbedProvider() = default;
  virtual std::string name() const = 0;
  virtual std::vector<std::vector<double>> embed(const std::vector<std::string>& texts) const = 0;
};

// Rule-based rewriting: drops "I'm curious about"-style framings, keeps a
// quoted clause, and splits "X, a Y by Z" into prompt/ground truth/subject.
class LocalRewriteProvider final : public RewriteProvider {
 public:
  std::string name() const override { return "local"; }
  Sample rewrite(const std::string& text) const override;
};

// POST {"text": ...} -> {"sample": {key: value}}. Failures throw kUnavailable.
class RemoteRewriteProvider final : public RewriteProvider {
 public:
  explicit RemoteRewriteProvider(ProviderConfig cfg);
  std::string name() const override { return "remote"; }
  Sample rewrite(const std::string& text) const override;

 private:
  ProviderConfig cfg_;
};

// POST {"texts": [...]} -> {"embeddings": [[...], ...]}. Failures throw kUnavailable.
class RemoteEmbedProvider final : public EmbedProvider {
 public:
  explicit RemoteEmbedProvider(ProviderConfig cfg);
  std::string name() const override { return "remote"; }
  std::vector<std::vector<double>> embed(const std::vector<std::string>& texts) const override;

 private:
  ProviderConfig cfg_;
};

std::unique_ptr<RewriteProvider> make_rewrite_provider(const ProviderConfig& cfg);
// Null for local mode: search then uses the lexical scorer.
std::unique_ptr<EmbedProvider> make_embed_provider(const ProviderConfig& cfg);

// Posts a JSON body and returns the parsed JSON reply, honouring timeout and
// retries. Any transport or status failure throws kUnavailable.
nlohmann::json post_json(const ProviderConfig& cfg, const nlohmann::json& body);

}  // namespace knowmri::data
