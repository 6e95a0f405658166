#pragma once

#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "knowmri/data/dataset.hpp"
#include "knowmri/linalg.hpp"
#include "knowmri/model/handle.hpp"
#include "knowmri/model/training.hpp"

namespace knowmri::capability {

struct Example {
  std::string prompt;
  std::string answer;
};

// prompt + ground_truth of every record.
std::vector<Example> examples_from(const data::Dataset& ds);

struct ScoreConfig {
  int steps = 20;  // S
};

// Per-example score tables keyed by (prompt, answer, S).
class ScoreCache {
 public:
  std::optional<Mat> get(const Example& ex, int steps) const;
  void put(const Example& ex, int steps, const Mat& scores);
  std::size_t size() const;

 private:
  mutable std::mutex mu_;
  std::map<std::string, Mat> entries_;
};

// [L x m] contribution of each neuron at the prompt's last token to
// P(first answer token). All activations of a layer are scaled by the same
// alpha; the score is w_j * (1/S) sum_{n=0..S} dP/dact_j at alpha = n/S.
Mat example_scores(const model::ModelHandle& model, const Example& ex, int steps);

// Uniform mean of example_scores.
Mat capability_scores(const model::ModelHandle& model, const std::vector<Example>& examples,
                      const ScoreConfig& cfg = {}, ScoreCache* cache = nullptr);

using Neuron = std::pair<int, int>;  // (layer, unit)

struct LocateConfig {
  enum class Mode { kSigma, kTopK } mode = Mode::kSigma;
  double sigma = 3.0;
  int k = 0;
};

// Neurons sorted by (layer, unit). Sigma mode keeps |s - mean| > sigma * std
// over all scores; top-k keeps the k largest, ties to the lower (layer, unit).
std::vector<Neuron> locate(const Mat& scores, const LocateConfig& cfg);

struct Consistency {
  double overlap = 0.0;  // (|A&B|/|A| + |A&B|/|B|) / 2
  double iou = 0.0;
};

Consistency consistency(const std::vector<Neuron>& a, const std::vector<Neuron>& b);

struct CurveConfig {
  std::vector<int> sizes;
  int n_splits = 5;
  std::uint64_t seed = 0;
  ScoreConfig score;
  LocateConfig locate;
  bool identical = false;  // control: both halves are the same subset
};

struct CurvePoint {
  int size = 0;
  int n_splits = 0;
  double overlap_mean = 0.0, overlap_std = 0.0;
  double iou_mean = 0.0, iou_std = 0.0;
  int empty_splits = 0;  // splits where one side located nothing (scored 0)
  double mean_located = 0.0;
};

// For each size, n_splits draws of two disjoint subsets of that size.
std::vector<CurvePoint> consistency_curve(const model::ModelHandle& model, const std::vector<Example>& examples,
                                          const CurveConfig& cfg, ScoreCache* cache = nullptr);

std::string curve_csv(const std::vector<CurvePoint>& points);

// Greedy decoding must reproduce every answer token.
bool exact_match(const model::ModelHandle& model, const Example& ex);
double exact_match_accuracy(const model::ModelHandle& model, const std::vector<Example>& examples);

struct EnhanceConfig {
  int epochs = 10;
  int batch = 8;
  double lr = 1e-3;
  std::uint64_t seed = 0;
};

struct EnhanceArm {
  std::string name;
  int n_neurons = 0;
  double acc_before = 0.0;
  double acc_after = 0.0;
  double final_loss = 0.0;
  bool frozen_intact = false;
};

// Trains only the parameters owned by `neurons` (key column of w_up, its
// bias and value row of w_down) on answer-token cross-entropy, then measures
// exact-match accuracy on `eval`, which must not share examples with `train`.
// The model passed in is not modified.
EnhanceArm enhance(const model::ModelHandle& model, const std::string& name, const std::vector<Neuron>& neurons,
                   const std::vector<Example>& train, const std::vector<Example>& eval, const EnhanceConfig& cfg);

model::ParameterMask neuron_mask(const model::Weights& w, const std::vector<Neuron>& neurons);

// `count` neurons drawn uniformly from those not in `exclude`.
std::vector<Neuron> random_neurons(const model::ModelSpec& spec, int count, const std::vector<Neuron>& exclude,
                                   std::uint64_t seed);
std::vector<Neuron> complement(const model::ModelSpec& spec, const std::vector<Neuron>& set);

struct EnhanceTable {
  double base_accuracy = 0.0;
  std::vector<EnhanceArm> arms;  // located, random, w/o located
};

EnhanceTable enhancement_table(const model::ModelHandle& model, const std::vector<Neuron>& located,
                               const std::vector<Example>& train, const std::vector<Example>& eval,
                               const EnhanceConfig& cfg);

std::string enhancement_text(const EnhanceTable& t);

}  // namespace knowmri::capability
