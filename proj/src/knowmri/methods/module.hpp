#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "knowmri/methods/results.hpp"
#include "knowmri/model/handle.hpp"

namespace knowmri::methods {

AttentionGrid attention_map(const model::ModelHandle& model, const std::string& prompt);

// Prompt tokens placed on the top two principal components of their
// embedding rows, each with its nearest vocabulary neighbours by cosine.
ProjectionMap embedding_projection(const model::ModelHandle& model, const std::string& prompt, int n_neighbors = 5);

// Highest-logit tokens of neuron (layer, unit)'s value vector, read through
// the output head without the final norm. Ties go to the lower id.
std::vector<TokenScore> neuron_top_tokens(const model::ModelHandle& model, int layer, int unit, int k);

struct KnConfig {
  int steps = 20;            // S
  double threshold = 0.2;    // tau, relative to the prompt's top attribution
  double prompt_share = 0.7; // p
  int top_k = 4;
  int top_tokens = 5;
  int max_prompts = 0;       // 0 keeps every prompt
};

struct KnOutput {
  NeuronReport report;
  Mat mean_scores;  // [L x m], attribution averaged over prompts
  std::vector<std::pair<int, int>> retained;
};

// Knowledge-neuron attribution at the last prompt token: the activations of
// one layer are scaled together from 0 to their observed value and the
// gradient of P(target) is summed at alpha = n/S, n = 1..S.
KnOutput knowledge_neurons(const model::ModelHandle& model, const std::vector<std::string>& prompts,
                           const std::string& ground_truth, const KnConfig& cfg = {});

struct FineConfig {
  int top_k = 4;
  int top_tokens = 5;
};

struct FineOutput {
  NeuronReport report;
  Mat scores;  // [L x m]
};

// activation * (target logit / logit norm) of each neuron's value vector.
FineOutput fine_neurons(const model::ModelHandle& model, const std::string& prompt, const std::string& ground_truth,
                        const FineConfig& cfg = {});

struct TraceConfig {
  double noise_multiplier = 3.0;  // times the std of the token embeddings
  std::optional<int> window;      // default min(10, L)
  int n_seeds = 5;
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> seeds;  // overrides n_seeds/seed when non-empty
  std::vector<std::string> kinds{"hidden_state", "mlp_output", "attn_output"};
};

// [begin, end) of the tokens overlapping the first occurrence of `subject`.
std::pair<int, int> subject_span(const model::TokenSeq& seq, const std::string& prompt, const std::string& subject);

TraceGridSet causal_trace(const model::ModelHandle& model, const std::string& prompt, const std::string& subject,
                          const std::string& ground_truth, const TraceConfig& cfg = {});

// Mean that is exact when every value is equal.
double stable_mean(const std::vector<double>& xs);

}  // namespace knowmri::methods
