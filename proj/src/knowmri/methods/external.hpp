#pragma once

#include <functional>
#include <string>

#include "knowmri/linalg.hpp"
#include "knowmri/methods/results.hpp"
#include "knowmri/model/handle.hpp"

namespace knowmri::methods {

// f(x, grad) returns the objective at x ([rows x dim]) and writes df/dx.
using Field = std::function<double(const Mat& x, Mat& grad)>;

struct IgOutput {
  Vec scores;  // one per row of x
  double f_input = 0.0;
  double f_baseline = 0.0;
};

// Right-endpoint Riemann approximation of integrated gradients along the
// straight path from `baseline` to `input`:
//   score_i = sum_k (x_ik - b_ik) * (1/S) sum_{n=1..S} df/dx_ik (b + n/S (x - b))
IgOutput integrated_gradients_core(const Field& f, const Mat& input, const Mat& baseline, int steps);

enum class IgBaseline { kZeroEmbedding, kPadEmbedding };

struct IgConfig {
  int steps = 50;
  IgBaseline baseline = IgBaseline::kZeroEmbedding;
  int pad_token = -1;  // pad baseline token; -1 picks the space byte
};

// Attribution of P(first token of ground_truth) to each prompt token. The
// path scales the token embedding; position embeddings stay in place.
AttributionSeries integrated_gradients(const model::ModelHandle& model, const std::string& prompt,
                                       const std::string& ground_truth, const IgConfig& cfg = {});
AttributionSeries integrated_gradients(const model::ModelHandle& model, const std::vector<int>& ids, int target,
                                       const IgConfig& cfg = {});

// Repo-defined instruction; the source method leaves the wording open.
inline constexpr const char* kSelfExplanationTemplate = "{prompt}\nRate each word 0-10:\n";

// "word: rating" lines with ratings on a 0-10 scale, normalised to [0, 1].
// Never throws; unparseable lines are skipped.
TextExplanation parse_self_explanation(const std::string& raw);

TextExplanation self_explanation(const model::ModelHandle& model, const std::string& prompt, int max_new = 24);

// First token of `continuation` as it follows `prompt`.
int first_target_token(const model::ModelHandle& model, const std::string& prompt, const std::string& continuation);

}  // namespace knowmri::methods
