#include "knowmri/methods/builtin.hpp"

#include "knowmri/error.hpp"
#include "knowmri/methods/external.hpp"
#include "knowmri/methods/module.hpp"
#include "knowmri/methods/representation.hpp"

namespace knowmri::methods {

using data::Sample;
using model::ModelHandle;

namespace {

MethodDescriptor make(std::string id, Perspective p, data::KeySet keys, ResultKind kind, std::string tmpl,
                      std::string citation, std::string note = {}) {
  return {std::move(id), p, std::move(keys), {kind}, std::move(tmpl), std::move(citation), std::move(note)};
}

}  // namespace

void register_builtin_methods(MethodRegistry& r) {
  using P = Perspective;
  using K = ResultKind;

  r.register_method(
      make("integrated_gradients", P::kExternal, {data::kPrompt, data::kGroundTruth}, K::kAttributionSeries,
           "Integrated gradients credit {top1} most for the answer, then {top2} and {top3}.",
           "Sundararajan et al., Axiomatic Attribution for Deep Networks"),
      [](const ModelHandle& m, const Sample& s, const MethodConfig& c) -> Result {
        IgConfig cfg;
        cfg.steps = c.get("steps", 50);
        const auto base = c.get<std::string>("baseline", "zero_embedding");
        require(base == "zero_embedding" || base == "pad_embedding", ErrorCode::kInvalidArgument,
                "unknown baseline '" + base + "'");
        cfg.baseline = base == "zero_embedding" ? IgBaseline::kZeroEmbedding : IgBaseline::kPadEmbedding;
        cfg.pad_token = c.get("pad_token", -1);
        return integrated_gradients(m, s.text(data::kPrompt), s.text(data::kGroundTruth), cfg);
      });

  r.register_method(
      make("self_explanation", P::kExternal, {data::kPrompt}, K::kTextExplanation,
           "Asked to rate its own input, the model ranked {top1} first, then {top2} and {top3}.",
           "LLM self-explanation of input word contributions",
           "rating instruction is fixed by this tool"),
      [](const ModelHandle& m, const Sample& s, const MethodConfig& c) -> Result {
        return self_explanation(m, s.text(data::kPrompt), c.get("max_new", 24));
      });

  r.register_method(
      make("attention_weights", P::kInternalModule, {data::kPrompt}, K::kAttentionGrid,
           "The strongest attention from the last token goes to {top1}, then {top2} and {top3}.",
           "Vaswani et al., Attention Is All You Need"),
      [](const ModelHandle& m, const Sample& s, const MethodConfig&) -> Result {
        return attention_map(m, s.text(data::kPrompt));
      });

  r.register_method(
      make("embedding_projection", P::kInternalModule, {data::kPrompt}, K::kProjectionMap,
           "Nearest embedding neighbours: {top1}, {top2}, {top3}.",
           "Language Interpretability Tool (LIT)"),
      [](const ModelHandle& m, const Sample& s, const MethodConfig& c) -> Result {
        return embedding_projection(m, s.text(data::kPrompt), c.get("n_neighbors", 5));
      });

  r.register_method(
      make("knowledge_neurons", P::kInternalModule, {data::kPrompts, data::kGroundTruth}, K::kNeuronReport,
           "The fact is attributed to neurons {top1}, {top2} and {top3}.",
           "Dai et al., Knowledge Neurons in Pretrained Transformers"),
      [](const ModelHandle& m, const Sample& s, const MethodConfig& c) -> Result {
        KnConfig cfg;
        cfg.steps = c.get("steps", cfg.steps);
        cfg.threshold = c.get("threshold", cfg.threshold);
        cfg.prompt_share = c.get("prompt_share", cfg.prompt_share);
        cfg.top_k = c.get("top_k", cfg.top_k);
        cfg.max_prompts = c.get("max_prompts", cfg.max_prompts);
        return knowledge_neurons(m, s.all_prompts(), s.text(data::kGroundTruth), cfg).report;
      });

  r.register_method(
      make("fine", P::kInternalModule, {data::kPrompt, data::kGroundTruth}, K::kNeuronReport,
           "Neurons {top1}, {top2} and {top3} push hardest toward the answer.",
           "FINE", "reconstructed scoring rule"),
      [](const ModelHandle& m, const Sample& s, const MethodConfig& c) -> Result {
        FineConfig cfg;
        cfg.top_k = c.get("top_k", cfg.top_k);
        return fine_neurons(m, s.text(data::kPrompt), s.text(data::kGroundTruth), cfg).report;
      });

  r.register_method(
      make("causal_tracing", P::kInternalModule, {data::kPrompt, data::kGroundTruth, data::kTripleSubject},
           K::kLayerTokenGrid, "Largest recovery of the answer when restoring {top1}; {top2}; {top3}.",
           "Meng et al., Locating and Editing Factual Associations in GPT"),
      [](const ModelHandle& m, const Sample& s, const MethodConfig& c) -> Result {
        TraceConfig cfg;
        cfg.noise_multiplier = c.get("noise_multiplier", cfg.noise_multiplier);
        if (c.values.contains("window")) cfg.window = c.values.at("window").get<int>();
        cfg.n_seeds = c.get("n_seeds", cfg.n_seeds);
        cfg.seed = c.get<std::uint64_t>("seed", c.seed);
        return causal_trace(m, s.text(data::kPrompt), s.text(data::kTripleSubject), s.text(data::kGroundTruth),
                            cfg);
      });

  r.register_method(
      make("logit_lens", P::kInternalRepresentation, {data::kPrompt}, K::kLayerDecodeTable,
           "The model predicts {top1}; read through the output head it first appears at {top2}. The embedding row reads {top3}.",
           "nostalgebraist, interpreting GPT: the logit lens"),
      [](const ModelHandle& m, const Sample& s, const MethodConfig& c) -> Result {
        return logit_lens(m, s.text(data::kPrompt), c.get("k", 5));
      });

  r.register_method(
      make("patchscopes", P::kInternalRepresentation, {data::kPrompt}, K::kLayerDecodeTable,
           "Patched into an identity prompt, hidden states first decode the prediction {top1} at {top2}. The embedding row decodes as {top3}.",
           "Ghandeharioun et al., Patchscopes"),
      [](const ModelHandle& m, const Sample& s, const MethodConfig& c) -> Result {
        PatchscopeConfig cfg;
        cfg.k = c.get("k", cfg.k);
        if (c.values.contains("target_prompt")) cfg.target_prompt = c.values.at("target_prompt").get<std::string>();
        if (c.values.contains("target_position")) cfg.target_position = c.values.at("target_position").get<int>();
        return patchscopes(m, s.text(data::kPrompt), cfg);
      });

  r.register_method(
      make("spine", P::kInternalRepresentation, {data::kPrompt}, K::kSparseCodeReport,
           "The sparse dimensions most active on this prompt center on {top1}, {top2} and {top3}.",
           "Subramanian et al., SPINE: SParse Interpretable Neural Embeddings", "SPINE-style sparse probe"),
      [](const ModelHandle& m, const Sample& s, const MethodConfig& c) -> Result {
        SpineConfig cfg;
        cfg.hidden_dim = c.get("hidden_dim", cfg.hidden_dim);
        cfg.l1_weight = c.get("l1_weight", cfg.l1_weight);
        cfg.epochs = c.get("epochs", cfg.epochs);
        cfg.seed = c.get<std::uint64_t>("seed", c.seed);
        auto tokens = word_tokens(m);
        const auto focus = m.tokenize(s.text(data::kPrompt)).ids;
        for (int id : focus)
          if (std::find(tokens.begin(), tokens.end(), id) == tokens.end()) tokens.push_back(id);
        return spine_probe(m, tokens, cfg, focus).report;
      });
}

MethodRegistry& default_registry() {
  static MethodRegistry* reg = [] {
    auto* r = new MethodRegistry;
    register_builtin_methods(*r);
    return r;
  }();
  return *reg;
}

}  // namespace knowmri::methods
