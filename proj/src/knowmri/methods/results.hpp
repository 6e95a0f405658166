#pragma once

#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <json.hpp>

namespace knowmri::methods {

enum class ResultKind {
  kAttributionSeries,
  kLayerTokenGrid,
  kNeuronReport,
  kLayerDecodeTable,
  kAttentionGrid,
  kProjectionMap,
  kTextExplanation,
  kSparseCodeReport,
};

const char* result_kind_name(ResultKind kind);
ResultKind parse_result_kind(const std::string& name);

using TokenScore = std::pair<std::string, double>;

struct AttributionSeries {
  std::vector<std::string> tokens;
  std::vector<double> scores;
  int target_token = 0;
  std::string target_text;
  std::string baseline = "zero_embedding";
  int steps = 0;
  double p_input = 0.0;
  double p_baseline = 0.0;
  double completeness_gap = 0.0;
};

struct TraceGrid {
  std::string site_kind;                  // hidden_state | attn_output | mlp_output
  std::vector<std::vector<double>> effect;  // [layer][token]
  int window = 1;
};

// Causal tracing: one grid per restored site kind.
struct TraceGridSet {
  std::vector<std::string> tokens;
  int subject_begin = 0, subject_end = 0;  // token span [begin, end)
  std::string target_text;
  double clean_prob = 0.0;
  double corrupted_prob = 0.0;
  double noise_std = 0.0;
  int n_seeds = 0;
  std::vector<TraceGrid> grids;
};

struct NeuronEntry {
  int layer = 0;
  int unit = 0;
  double score = 0.0;
  std::vector<std::string> top_tokens;
};

std::string neuron_label(int layer, int unit);

struct NeuronReport {
  std::vector<NeuronEntry> top_neurons;
  std::string normalization = "raw";
  std::string target_text;
  std::string note;
  int retained = 0;  // neurons surviving the method's thresholds
};

struct LayerDecodeRow {
  int layer = 0;
  std::vector<TokenScore> top;
};

// Logit lens rows or Patchscopes rows (one per source layer).
struct LayerDecodeTable {
  std::string mode;  // logit_lens | patchscopes
  int k = 0;
  std::vector<LayerDecodeRow> rows;
  std::string reference_token;  // the model's own prediction
  std::optional<int> earliest_match_layer;
  std::string target_prompt;  // patchscopes only
  int target_position = -1;
};

struct AttentionGrid {
  std::vector<std::string> tokens;
  std::vector<std::vector<std::vector<std::vector<double>>>> weights;  // [L][H][T][T]
};

struct ProjectionMap {
  std::vector<std::string> tokens;
  std::vector<std::pair<double, double>> coords;
  std::vector<std::vector<TokenScore>> neighbors;
  std::pair<double, double> explained_variance{0.0, 0.0};
};

struct TextExplanation {
  std::string instruction;
  std::string raw_text;
  std::vector<TokenScore> ratings;  // importance in [0, 1]
  bool parse_ok = false;
};

struct SparseCodeDim {
  int index = 0;
  std::vector<TokenScore> top;
};

struct SparseCodeReport {
  std::vector<SparseCodeDim> dimensions;
  double sparsity = 0.0;
  double reconstruction_error = 0.0;
  int hidden_dim = 0;
  double l1_weight = 0.0;
  int epochs = 0;
  int n_tokens = 0;
};

using Result = std::variant<AttributionSeries, TraceGridSet, NeuronReport, LayerDecodeTable, AttentionGrid,
                            ProjectionMap, TextExplanation, SparseCodeReport>;

ResultKind result_kind(const Result& r);
nlohmann::json result_to_json(const Result& r);
// The most salient items, used to fill {top1}..{top3}.
std::vector<std::string> highlights(const Result& r);

}  // namespace knowmri::methods
