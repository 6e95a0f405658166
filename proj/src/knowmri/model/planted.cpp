#include "knowmri/model/planted.hpp"

#include <cmath>

#include "knowmri/error.hpp"
#include "knowmri/model/training.hpp"

namespace knowmri::model {

ModelSpec planted_default_spec(int vocab_size) {
  ModelSpec s;
  s.model_id = "planted";
  s.n_layers = 4;
  s.hidden_dim = 128;
  s.mlp_dim = 512;
  s.n_heads = 4;
  s.vocab_size = vocab_size;
  s.max_seq_len = 64;
  return s;
}

ModelHandle build_planted_model(const PlantedConfig& cfg, Tokenizer tokenizer) {
  const ModelSpec& spec = cfg.spec;
  spec.validate();
  require(cfg.layer >= 0 && cfg.layer < spec.n_layers && cfg.unit >= 0 && cfg.unit < spec.mlp_dim,
          ErrorCode::kOutOfRange, "planted neuron outside the model");
  require(cfg.trigger_token >= 0 && cfg.trigger_token < spec.vocab_size && cfg.target_token >= 0 &&
              cfg.target_token < spec.vocab_size,
          ErrorCode::kOutOfRange, "planted tokens outside the vocabulary");

  const InitScales weak{.embedding = 0.1, .position = 0.01, .projection = 0.1, .output = 0.002};
  Weights w = random_weights(spec, cfg.seed, weak);
  const int d = spec.hidden_dim;
  auto& blk = w.blocks[cfg.layer];
  blk.w_up.col(cfg.unit).setZero();
  blk.b_up(cfg.unit) = -50.0;  // silent while the key is fitted
  blk.w_down.row(cfg.unit).setZero();

  // Fit the key to the normalised MLP input at the trigger position.
  std::vector<int> ids;
  if (!cfg.probe_text.empty()) ids = tokenizer.encode(cfg.probe_text).ids;
  if (ids.empty() || ids.back() != cfg.trigger_token) ids.push_back(cfg.trigger_token);
  Transformer probe(spec, w);
  const ForwardTrace tr = probe.forward(ids, {}).trace;
  const int last = static_cast<int>(ids.size()) - 1;
  RowVec x = tr.hidden[cfg.layer].row(last) + tr.attn_out[cfg.layer].row(last);
  x.array() -= x.mean();
  x /= std::sqrt(x.squaredNorm() / d + Transformer::kLayerNormEps);
  const double kappa = cfg.key_gain / std::sqrt(static_cast<double>(d));
  blk.w_up.col(cfg.unit) = (kappa / x.norm()) * x.transpose();
  blk.b_up(cfg.unit) = -0.5 * kappa * x.norm();
  blk.w_down.row(cfg.unit) = cfg.alpha * w.tok_emb.row(cfg.target_token);

  Metadata meta{{"kind", "planted"},
                {"planted_layer", std::to_string(cfg.layer)},
                {"planted_unit", std::to_string(cfg.unit)},
                {"trigger_token", std::to_string(cfg.trigger_token)},
                {"target_token", std::to_string(cfg.target_token)},
                {"seed", std::to_string(cfg.seed)}};
  return ModelHandle(Transformer(spec, std::move(w)), std::move(tokenizer), std::move(meta));
}

PlantedInfo planted_info(const ModelHandle& model) {
  const auto& m = model.metadata();
  auto get = [&](const char* key) {
    auto it = m.find(key);
    require(it != m.end(), ErrorCode::kNotFound, std::string("model has no planted metadata '") + key + "'");
    return std::stoi(it->second);
  };
  return {get("planted_layer"), get("planted_unit"), get("trigger_token"), get("target_token")};
}

}  // namespace knowmri::model
