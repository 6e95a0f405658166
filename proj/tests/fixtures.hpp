#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include "knowmri/model/handle.hpp"
#include "knowmri/model/training.hpp"

namespace fixtures {

inline knowmri::model::ModelSpec tiny_spec(int layers = 2, int d = 16, int m = 24, int heads = 2, int vocab = 300) {
  knowmri::model::ModelSpec s;
  s.model_id = "tiny";
  s.n_layers = layers;
  s.hidden_dim = d;
  s.mlp_dim = m;
  s.n_heads = heads;
  s.vocab_size = vocab;
  s.max_seq_len = 32;
  return s;
}

// Random weights large enough that every sublayer matters.
inline knowmri::model::ModelHandle tiny_model(std::uint64_t seed = 7, knowmri::model::ModelSpec spec = tiny_spec()) {
  knowmri::model::InitScales sc{.embedding = 0.5, .position = 0.2, .projection = 0.4, .output = 0.3};
  auto w = knowmri::model::random_weights(spec, seed, sc);
  std::mt19937_64 rng(seed + 1);
  std::normal_distribution<double> n(0.0, 0.1);
  for (auto& t : w.tensors()) {
    if (t.name.find(".b") != std::string::npos || t.name == "lnf.b")
      for (Eigen::Index i = 0; i < t.size(); ++i) t.data[i] += n(rng);
  }
  knowmri::model::Tokenizer tok(spec.vocab_size);
  return {knowmri::model::Transformer(spec, std::move(w)), std::move(tok)};
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path = std::filesystem::temp_directory_path() / ("knowmri_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
};

inline std::filesystem::path source_root() { return KNOWMRI_SOURCE_DIR; }

}  // namespace fixtures
