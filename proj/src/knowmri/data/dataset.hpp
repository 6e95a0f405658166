#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "knowmri/data/providers.hpp"
#include "knowmri/data/sample.hpp"

namespace knowmri::data {

struct DatasetDescriptor {
  std::string id;
  std::string description;
  KeySet support_template_keys;
  std::size_t size = 0;
};

// Immutable after load; safe for concurrent reads.
struct Dataset {
  DatasetDescriptor descriptor;
  std::vector<Sample> samples;  // file order

  const Sample& at(std::size_t index) const;
};

// Manifest: {"id", "description", "support_template_keys": [...], "records": "<file>",
// optional "key_extensions": {name: description}}. Extensions are registered
// in `registry` before records are checked.
Dataset load_dataset(const std::filesystem::path& manifest, TemplateKeyRegistry& registry = template_keys());

struct SearchHit {
  std::size_t index;
  double score;  // in [0, 1]
};

// Token-set cosine between lower-cased alphanumeric words.
double lexical_similarity(const std::string& a, const std::string& b);

// Ranked by descending score, ties by dataset index. Uses the embed provider
// when given; if it fails the lexical scorer is used and `fallback_note`
// (when non-null) receives the reason.
std::vector<SearchHit> search(const Dataset& dataset, const std::string& query, int k,
                              const EmbedProvider* embed = nullptr, std::string* fallback_note = nullptr);

inline constexpr double kMergeThreshold = 0.6;

// Free text -> sample with at least `prompt`. Remote failures fall back to
// the local rules and are noted in sample.metadata["normalization_fallback"].
// With a reference dataset, a hit scoring >= threshold contributes every key
// the draft lacks.
Sample normalize_custom_input(const std::string& text, const RewriteProvider& provider,
                              const Dataset* reference = nullptr, const EmbedProvider* embed = nullptr,
                              double threshold = kMergeThreshold);

}  // namespace knowmri::data
