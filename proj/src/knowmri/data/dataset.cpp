#include "knowmri/data/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "knowmri/error.hpp"

namespace knowmri::data {
namespace {

std::set<std::string> word_set(const std::string& s) {
  std::set<std::string> out;
  std::string cur;
  for (unsigned char c : s) {
    if (std::isalnum(c) || c >= 0x80) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.insert(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.insert(std::move(cur));
  return out;
}

std::vector<std::string> search_texts(const Sample& s) {
  std::vector<std::string> out;
  if (s.has(kPrompts)) {
    for (const auto& p : s.list(kPrompts)) out.push_back(p);
  }
  if (s.has(kPrompt)) {
    const auto& p = s.text(kPrompt);
    out.push_back(p);
    if (s.has(kGroundTruth)) out.push_back(p + " " + s.text(kGroundTruth));
  }
  return out;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  require(a.size() == b.size() && !a.empty(), ErrorCode::kUnavailable, "embedding dimensions differ");
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0 || bb == 0) return 0.0;
  return std::clamp(ab / std::sqrt(aa * bb), 0.0, 1.0);
}

}  // namespace

const Sample& Dataset::at(std::size_t index) const {
  require(index < samples.size(), ErrorCode::kOutOfRange,
          "index " + std::to_string(index) + " outside dataset '" + descriptor.id + "' of size " +
              std::to_string(samples.size()));
  return samples[index];
}

Dataset load_dataset(const std::filesystem::path& manifest_path, TemplateKeyRegistry& registry) {
  std::ifstream in(manifest_path);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open dataset manifest " + manifest_path.string());
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kValidation, manifest_path.string() + ": " + e.what());
  }
  for (const char* field : {"id", "support_template_keys", "records"}) {
    require(m.contains(field), ErrorCode::kValidation,
            manifest_path.string() + ": manifest is missing '" + field + "'");
  }
  Dataset ds;
  ds.descriptor.id = m.at("id").get<std::string>();
  ds.descriptor.description = m.value("description", "");
  if (m.contains("key_extensions")) {
    for (const auto& [name, desc] : m.at("key_extensions").items()) registry.add(name, desc.get<std::string>());
  }
  for (const auto& k : m.at("support_template_keys")) {
    const auto key = k.get<std::string>();
    require(registry.contains(key), ErrorCode::kValidation,
            manifest_path.string() + ": unknown template key '" + key + "'");
    ds.descriptor.support_template_keys.insert(key);
  }
  require(!ds.descriptor.support_template_keys.empty(), ErrorCode::kValidation,
          manifest_path.string() + ": support_template_keys is empty");

  const auto records = manifest_path.parent_path() / m.at("records").get<std::string>();
  std::ifstream rin(records);
  require(static_cast<bool>(rin), ErrorCode::kIo, "cannot open records file " + records.string());
  std::string line;
  int lineno = 0;
  while (std::getline(rin, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = records.filename().string() + ":" + std::to_string(lineno);
    Sample s;
    try {
      s = sample_from_json(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::kValidation, where + ": malformed record: " + e.what());
    } catch (const Error& e) {
      fail(ErrorCode::kValidation, where + ": " + e.what());
    }
    const auto violations = validate_sample(s, ds.descriptor.support_template_keys);
    if (!violations.empty()) {
      const auto& v = violations.front();
      fail(ErrorCode::kValidation, where + ": key '" + v.key + "': " + v.reason);
    }
    s.source = {SampleSource::Kind::kDataset, ds.descriptor.id, static_cast<int>(ds.samples.size())};
    ds.samples.push_back(std::move(s));
  }
  ds.descriptor.size = ds.samples.size();
  require(ds.descriptor.size >= 1, ErrorCode::kValidation, records.string() + ": dataset has no records");
  return ds;
}

double lexical_similarity(const std::string& a, const std::string& b) {
  const auto wa = word_set(a), wb = word_set(b);
  if (wa.empty() || wb.empty()) return 0.0;
  std::size_t common = 0;
  for (const auto& w : wa) common += wb.count(w);
  return static_cast<double>(common) / std::sqrt(static_cast<double>(wa.size() * wb.size()));
}

std::vector<SearchHit> search(const Dataset& ds, const std::string& query, int k, const EmbedProvider* embed,
                              std::string* fallback_note) {
  require(k >= 1, ErrorCode::kInvalidArgument, "k must be >= 1");
  require(query.find_first_not_of(" \t\r\n") != std::string::npos, ErrorCode::kInvalidArgument,
          "search query is empty");
  std::vector<SearchHit> hits(ds.samples.size());
  bool scored = false;
  if (embed != nullptr) {
    try {
      std::vector<std::string> texts{query};
      std::vector<std::size_t> owner;
      for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        for (auto& t : search_texts(ds.samples[i])) {
          texts.push_back(std::move(t));
          owner.push_back(i);
        }
      }
      const auto vecs = embed->embed(texts);
      for (std::size_t i = 0; i < hits.size(); ++i) hits[i] = {i, 0.0};
      for (std::size_t t = 0; t < owner.size(); ++t)
        hits[owner[t]].score = std::max(hits[owner[t]].score, cosine(vecs[0], vecs[t + 1]));
      scored = true;
    } catch (const Error& e) {
      if (fallback_note != nullptr) *fallback_note = e.what();
    }
  }
  if (!scored) {
    for (std::size_t i = 0; i < hits.size(); ++i) {
      double best = 0.0;
      for (const auto& t : search_texts(ds.samples[i])) best = std::max(best, lexical_similarity(query, t));
      hits[i] = {i, best};
    }
  }
  std::stable_sort(hits.begin(), hits.end(), [](const SearchHit& a, const SearchHit& b) { return a.score > b.score; });
  hits.resize(std::min<std::size_t>(hits.size(), static_cast<std::size_t>(k)));
  return hits;
}

Sample normalize_custom_input(const std::string& text, const RewriteProvider& provider, const Dataset* reference,
                              const EmbedProvider* embed, double threshold) {
  require(text.find_first_not_of(" \t\r\n") != std::string::npos, ErrorCode::kInvalidArgument,
          "custom input is empty");
  Sample s;
  std::string used = provider.name();
  try {
    s = provider.rewrite(text);
    require(s.has(kPrompt), ErrorCode::kUnavailable, "rewrite produced no prompt");
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kUnavailable) throw;
    s = LocalRewriteProvider().rewrite(text);
    s.metadata["normalization_fallback"] = e.what();
    used = "local";
  }
  s.metadata["normalization_provider"] = used;
  s.source = {};

  if (reference != nullptr) {
    std::string note;
    const auto hits = search(*reference, s.text(kPrompt) + (s.has(kGroundTruth) ? " " + s.text(kGroundTruth) : ""), 1,
                             embed, &note);
    if (!note.empty()) s.metadata["search_fallback"] = note;
    if (!hits.empty() && hits.front().score >= threshold) {
      const Sample& match = reference->samples[hits.front().index];
      for (const auto& [k, v] : match.values) s.values.try_emplace(k, v);
      if (s.has(kPrompts)) {
        auto prompts = s.list(kPrompts);
        const auto& p = s.text(kPrompt);
        if (std::find(prompts.begin(), prompts.end(), p) == prompts.end()) {
          prompts.insert(prompts.begin(), p);
          s.values[kPrompts] = std::move(prompts);
        }
      }
      s.metadata["matched_dataset"] = reference->descriptor.id;
      s.metadata["matched_index"] = std::to_string(hits.front().index);
      s.metadata["matched_score"] = std::to_string(hits.front().score);
    }
  }
  return s;
}

}  // namespace knowmri::data
