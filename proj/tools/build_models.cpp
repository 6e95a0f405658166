// Builds the bundled reference and planted checkpoints.
//
//   build_models reference --corpus data/corpus/train.txt --out models/reference
//   build_models planted --tokenizer models/reference --out models/planted

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "knowmri/capability/lab.hpp"
#include "knowmri/data/dataset.hpp"
#include "knowmri/error.hpp"
#include "knowmri/model/checkpoint.hpp"
#include "knowmri/model/handle.hpp"
#include "knowmri/model/planted.hpp"
#include "knowmri/model/training.hpp"

using namespace knowmri;
using namespace knowmri::model;

namespace {

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open " + path);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

struct ReferenceArgs {
  std::string corpus = "data/corpus/train.txt";
  std::string out = "models/reference";
  int steps = 3000;
  int batch = 16;
  double lr = 3e-3;
  int warmup = 100;
  std::uint64_t seed = 1234;
  int arithmetic_limit = -1;
};

int build_reference(const ReferenceArgs& a) {
  auto lines = read_lines(a.corpus);
  if (a.arithmetic_limit >= 0) {
    int kept = 0;
    std::erase_if(lines, [&](const std::string& s) {
      if (s.find("Answer:") == std::string::npos) return false;
      return kept++ >= a.arithmetic_limit;
    });
  }
  std::cout << "corpus lines: " << lines.size() << "\n";
  const auto t0 = std::chrono::steady_clock::now();
  Tokenizer tok = Tokenizer::train(lines, 1024);
  std::cout << "tokenizer merges: " << tok.merges().size() << "\n";

  ModelSpec spec;
  spec.model_id = "reference";
  spec.n_layers = 4;
  spec.hidden_dim = 128;
  spec.mlp_dim = 512;
  spec.n_heads = 4;
  spec.vocab_size = 1024;
  spec.max_seq_len = 64;

  std::vector<LmExample> data;
  for (const auto& l : lines) {
    auto ids = tok.encode(l).ids;
    if (ids.size() > static_cast<std::size_t>(spec.max_seq_len) + 1) ids.resize(spec.max_seq_len + 1);
    if (ids.size() >= 2) data.push_back({std::move(ids), 1});
  }

  Transformer model(spec, random_weights(spec, a.seed));
  Adam opt(model.weights(), {.weight_decay = 0.01});
  std::mt19937_64 rng(a.seed + 1);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  double running = 0.0;
  for (int step = 1; step <= a.steps; ++step) {
    Weights grads = Weights::zeros(spec);
    LossStats total;
    for (int b = 0; b < a.batch; ++b) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const auto& ex = data[order[cursor++]];
      const auto s = accumulate_lm_gradients(model, ex, grads, 1.0);
      total.loss_sum += s.loss_sum;
      total.count += s.count;
    }
    for (auto& t : grads.tensors()) {
      for (Eigen::Index i = 0; i < t.size(); ++i) t.data[i] /= total.count;
    }
    const double progress = static_cast<double>(step) / a.steps;
    double lr = a.lr * 0.5 * (1.0 + std::cos(M_PI * progress));
    if (step <= a.warmup) lr = a.lr * step / a.warmup;
    opt.step(model.mutable_weights(), grads, lr);
    const double loss = total.loss_sum / total.count;
    require(std::isfinite(loss), ErrorCode::kNumerical, "training loss diverged");
    running = step == 1 ? loss : 0.98 * running + 0.02 * loss;
    if (step % 100 == 0 || step == a.steps) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::cout << "step " << step << " loss " << std::fixed << std::setprecision(4) << running << " ("
                << std::setprecision(0) << secs << "s)\n" << std::flush;
    }
  }

  Metadata meta{{"kind", "reference"},
                {"train_steps", std::to_string(a.steps)},
                {"train_seed", std::to_string(a.seed)},
                {"train_loss", std::to_string(running)}};
  save_checkpoint(a.out, spec, model.weights(), tok, meta);
  std::cout << "wrote " << a.out << "\n";
  return 0;
}

struct PlantedArgs {
  std::string tokenizer_from = "models/reference";
  std::string out = "models/planted";
  int layer = 2;
  int unit = 7;
  std::string trigger = " by";
  std::string target = " Apple";
  std::string probe = "MacApp, a product created by";
  std::uint64_t seed = 7;
};

int build_planted(const PlantedArgs& a) {
  Tokenizer tok = load_checkpoint(a.tokenizer_from).tokenizer;
  const auto trig = tok.encode(a.trigger).ids;
  const auto targ = tok.encode(a.target).ids;
  require(trig.size() == 1, ErrorCode::kInvalidArgument, "trigger '" + a.trigger + "' is not a single token");
  PlantedConfig cfg;
  cfg.spec = planted_default_spec(tok.vocab_size());
  cfg.layer = a.layer;
  cfg.unit = a.unit;
  cfg.trigger_token = trig.front();
  cfg.target_token = targ.front();
  cfg.seed = a.seed;
  cfg.probe_text = a.probe;
  const ModelHandle h = build_planted_model(cfg, std::move(tok));
  const auto ids = h.tokenize(a.probe).ids;
  const int top = top_k_indices(next_token_distribution(h.forward_trace(ids)), 1).front();
  std::cout << "probe '" << a.probe << "' -> '" << h.detokenize(std::vector<int>{top}) << "'\n";
  h.save(a.out);
  std::cout << "wrote " << a.out << "\n";
  return 0;
}

int evaluate(const std::string& model_dir, const std::vector<std::string>& manifests, int limit) {
  const ModelHandle m = ModelHandle::load(model_dir);
  for (const auto& path : manifests) {
    auto ex = capability::examples_from(data::load_dataset(path));
    if (limit > 0 && static_cast<int>(ex.size()) > limit) ex.resize(limit);
    std::cout << path << ": exact match " << capability::exact_match_accuracy(m, ex) << " over " << ex.size() << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Builds the bundled model checkpoints"};
  app.require_subcommand(1);

  ReferenceArgs ra;
  auto* ref = app.add_subcommand("reference", "Train the reference model on the bundled corpus");
  ref->add_option("--corpus", ra.corpus);
  ref->add_option("--out", ra.out);
  ref->add_option("--steps", ra.steps);
  ref->add_option("--batch", ra.batch);
  ref->add_option("--lr", ra.lr);
  ref->add_option("--seed", ra.seed);
  ref->add_option("--arithmetic-limit", ra.arithmetic_limit, "Keep at most this many arithmetic lines");

  PlantedArgs pa;
  auto* pl = app.add_subcommand("planted", "Build the planted-neuron model");
  pl->add_option("--tokenizer-from", pa.tokenizer_from, "Checkpoint whose tokenizer is reused");
  pl->add_option("--out", pa.out);
  pl->add_option("--layer", pa.layer);
  pl->add_option("--unit", pa.unit);
  pl->add_option("--trigger", pa.trigger);
  pl->add_option("--target", pa.target);
  pl->add_option("--probe", pa.probe);
  pl->add_option("--seed", pa.seed);

  std::string eval_model;
  std::vector<std::string> eval_sets;
  int eval_limit = 0;
  auto* ev = app.add_subcommand("evaluate", "Greedy exact-match accuracy on dataset manifests");
  ev->add_option("--model", eval_model)->required();
  ev->add_option("--dataset", eval_sets)->required();
  ev->add_option("--limit", eval_limit);

  CLI11_PARSE(app, argc, argv);
  try {
    if (*ref) return build_reference(ra);
    if (*ev) return evaluate(eval_model, eval_sets, eval_limit);
    return build_planted(pa);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
