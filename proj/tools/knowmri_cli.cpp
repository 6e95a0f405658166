// knowmri: command-line front end over the C API.
//
// Exit codes: 0 success, 1 usage error, 2 runtime failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "knowmri/knowmri.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Failure {
  km_status status;
  std::string message;
};

std::string take(char* s) {
  std::string out = s ? s : "";
  km_free_string(s);
  return out;
}

void check(km_status st) {
  if (st != KM_OK) throw Failure{st, km_last_error()};
}

struct Session {
  km_workspace* ws = nullptr;
  explicit Session(const std::string& config) {
    check(km_open(config.empty() ? nullptr : config.c_str(), &ws));
  }
  ~Session() { km_close(ws); }

  template <typename F>
  std::string call(F f) {
    char* out = nullptr;
    check(f(ws, &out));
    return take(out);
  }
};

void write_text(const fs::path& p, const std::string& s) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Failure{KM_IO, "cannot write " + p.string()};
  out << s;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Failure{KM_IO, "cannot read " + p.string()};
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

struct SampleArgs {
  std::string dataset;
  int index = 0;
  std::string text;
  std::string sample_file;

  void add(CLI::App* c) {
    auto* d = c->add_option("--dataset", dataset, "Dataset id");
    c->add_option("--index", index, "Record index in --dataset")->needs(d);
    auto* t = c->add_option("--text", text, "Custom input text");
    auto* f = c->add_option("--sample", sample_file, "JSON file with template keys");
    d->excludes(t)->excludes(f);
    t->excludes(f);
  }

  void fill(json& body) const {
    if (!dataset.empty()) {
      body["dataset"] = dataset;
      body["index"] = index;
    } else if (!text.empty()) {
      body["text"] = text;
    } else if (!sample_file.empty()) {
      body["sample"] = json::parse(read_text(sample_file));
    } else {
      throw CLI::ValidationError("one of --dataset, --text or --sample is required");
    }
  }
};

std::string card_file(const std::string& id) {
  std::string out;
  for (char c : id) out += std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' ? c : '_';
  return out + ".json";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Knowledge-interpretation toolkit"};
  app.require_subcommand(1);
  std::string config;
  std::uint64_t seed = 0;
  app.add_option("--config", config, "Workspace config (default: $KNOWMRI_CONFIG or the bundled one)");
  app.add_option("--seed", seed, "Seed for stochastic methods")->capture_default_str();

  auto* models = app.add_subcommand("models", "List models");
  auto* datasets = app.add_subcommand("datasets", "List datasets");

  std::optional<std::string> keys;
  auto* methods = app.add_subcommand("methods", "List methods, optionally only those a key set supports");
  methods->add_option("--keys", keys, "Comma-separated template keys");

  SampleArgs match_args;
  auto* match = app.add_subcommand("match", "Resolve an input and list the methods it supports");
  match_args.add(match);

  SampleArgs diag_args;
  std::string model_id, out_dir = "knowmri_out", method_list, method_config;
  auto* diagnose = app.add_subcommand("diagnose", "Run every matching method and write a report");
  diagnose->add_option("--model", model_id)->required();
  diag_args.add(diagnose);
  diagnose->add_option("--methods", method_list, "Comma-separated method ids (default: all that match)");
  diagnose->add_option("--method-config", method_config, "JSON file: {method_id: {option: value}}");
  diagnose->add_option("--out", out_dir, "Output directory")->capture_default_str();

  std::string cap_model, cap_dataset, cap_out;
  int steps = 20, limit = 0, top_k = 0, splits = 5, epochs = 10, batch = 8;
  double sigma = 3.0, lr = 1e-3, train_fraction = 0.5;
  std::vector<int> sizes{4, 16, 64};
  bool identical = false;
  auto add_cap = [&](CLI::App* c) {
    c->add_option("--model", cap_model)->required();
    c->add_option("--dataset", cap_dataset)->required();
    c->add_option("--steps", steps, "Integration steps")->capture_default_str();
    c->add_option("--limit", limit, "Use only the first N examples");
    c->add_option("--sigma", sigma, "Locate neurons beyond sigma standard deviations")->capture_default_str();
    c->add_option("--top-k", top_k, "Locate the k highest-scoring neurons instead");
    c->add_option("--out", cap_out, "Write the result here");
  };
  auto* cap_score = app.add_subcommand("cap-score", "Score neurons for a capability dataset");
  add_cap(cap_score);
  auto* cap_curve = app.add_subcommand("cap-curve", "Location consistency against subset size");
  add_cap(cap_curve);
  cap_curve->add_option("--sizes", sizes)->delimiter(',')->capture_default_str();
  cap_curve->add_option("--splits", splits)->capture_default_str();
  cap_curve->add_flag("--identical", identical, "Control: compare each subset with itself");
  auto* cap_enhance = app.add_subcommand("cap-enhance", "Fine-tune located, random and remaining neurons");
  add_cap(cap_enhance);
  cap_enhance->add_option("--epochs", epochs)->capture_default_str();
  cap_enhance->add_option("--batch", batch)->capture_default_str();
  cap_enhance->add_option("--lr", lr)->capture_default_str();
  cap_enhance->add_option("--train-fraction", train_fraction)->capture_default_str();

  std::string exp_file, exp_out;
  auto* experiment = app.add_subcommand("experiment", "Run a capability experiment file, once per listed seed");
  experiment->add_option("file", exp_file, "JSON: model_id, dataset, kind and options; optional seeds list")
      ->required();
  experiment->add_option("--out", exp_out, "Directory for results.json and the per-seed text outputs");

  std::string host;
  int port = 0;
  auto* serve = app.add_subcommand("serve", "Start the HTTP service");
  serve->add_option("--host", host);
  serve->add_option("--port", port);

  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e) == 0 ? 0 : 1;
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e) == 0 ? 0 : 1;
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    Session s(config);
    if (*models) {
      std::cout << s.call([](auto* ws, char** o) { return km_list_models(ws, o); });
    } else if (*datasets) {
      std::cout << s.call([](auto* ws, char** o) { return km_list_datasets(ws, o); });
    } else if (*methods) {
      std::cout << s.call([&](auto* ws, char** o) { return km_list_methods(ws, keys ? keys->c_str() : nullptr, o); });
    } else if (*match) {
      json body = {{"model_id", ""}};
      match_args.fill(body);
      // Resolution only: any configured model id satisfies the request check.
      const json models_j = json::parse(s.call([](auto* ws, char** o) { return km_list_models(ws, o); }));
      if (models_j.empty()) throw Failure{KM_NOT_FOUND, "no models configured"};
      body["model_id"] = models_j[0]["id"];
      const json req = json::parse(s.call([&](auto* ws, char** o) { return km_prepare(ws, body.dump().c_str(), o); }));
      std::string csv;
      for (const auto& [k, _] : req["sample"]["values"].items()) csv += (csv.empty() ? "" : ",") + k;
      const json ms = json::parse(s.call([&](auto* ws, char** o) { return km_list_methods(ws, csv.c_str(), o); }));
      json out = {{"sample", req["sample"]}, {"methods", json::array()}};
      for (const auto& m : ms) out["methods"].push_back(m["id"]);
      std::cout << out.dump(2) << "\n";
    } else if (*diagnose) {
      json body = {{"model_id", model_id}, {"seed", seed}};
      diag_args.fill(body);
      if (!method_list.empty()) {
        json ids = json::array();
        std::stringstream ss(method_list);
        for (std::string id; std::getline(ss, id, ',');)
          if (!id.empty()) ids.push_back(id);
        body["method_ids"] = ids;
      }
      if (!method_config.empty()) body["config"] = json::parse(read_text(method_config));
      const std::string report = s.call([&](auto* ws, char** o) { return km_diagnose(ws, body.dump().c_str(), o); });
      const fs::path dir(out_dir);
      write_text(dir / "report.json", report);
      const json r = json::parse(report);
      for (const auto& c : r["cards"]) {
        write_text(dir / "cards" / card_file(c["method_id"]), c.dump(2) + "\n");
        std::cout << c["method_id"].get<std::string>() << ": " << c["rendered_description"].get<std::string>()
                  << "\n";
      }
      for (const auto& [id, f] : r["failures"].items())
        std::cout << id << ": failed (" << f["code"].get<std::string>() << ") " << f["message"].get<std::string>()
                  << "\n";
      std::cout << "wrote " << (dir / "report.json").string() << "\n";
    } else if (*cap_score || *cap_curve || *cap_enhance) {
      json body = {{"model_id", cap_model}, {"dataset", cap_dataset}, {"steps", steps}, {"seed", seed}};
      if (limit > 0) body["limit"] = limit;
      body["locate"] = top_k > 0 ? json{{"mode", "top_k"}, {"k", top_k}} : json{{"mode", "sigma"}, {"sigma", sigma}};
      if (*cap_score) body["kind"] = "score";
      if (*cap_curve) {
        body["kind"] = "curve";
        body["sizes"] = sizes;
        body["n_splits"] = splits;
        body["identical"] = identical;
      }
      if (*cap_enhance) {
        body["kind"] = "enhance";
        body["epochs"] = epochs;
        body["batch"] = batch;
        body["lr"] = lr;
        body["train_fraction"] = train_fraction;
      }
      const json r = json::parse(s.call([&](auto* ws, char** o) { return km_capability(ws, body.dump().c_str(), o); }));
      std::string text;
      if (*cap_curve)
        text = r["csv"];
      else if (*cap_enhance)
        text = r["table"];
      else
        text = r.dump(2) + "\n";
      std::cout << text;
      if (!cap_out.empty()) write_text(cap_out, text);
    } else if (*experiment) {
      json spec = json::parse(read_text(exp_file));
      if (!spec.is_object()) throw Failure{KM_VALIDATION, exp_file + " is not a JSON object"};
      json seeds = spec.contains("seeds") ? spec["seeds"] : json::array({spec.value("seed", seed)});
      if (!seeds.is_array() || seeds.empty()) throw Failure{KM_VALIDATION, "seeds must be a non-empty list"};
      spec.erase("seeds");
      json results = {{"experiment", spec}, {"runs", json::array()}};
      for (const auto& sd : seeds) {
        json body = spec;
        body["seed"] = sd;
        const json r =
            json::parse(s.call([&](auto* ws, char** o) { return km_capability(ws, body.dump().c_str(), o); }));
        results["runs"].push_back({{"seed", sd}, {"result", r}});
        std::string text = r.contains("csv") ? r["csv"].get<std::string>()
                           : r.contains("table") ? r["table"].get<std::string>()
                                                 : r.dump(2) + "\n";
        std::cout << "# seed " << sd.dump() << "\n" << text;
        if (!exp_out.empty())
          write_text(fs::path(exp_out) / ("seed_" + sd.dump() + (r.contains("csv") ? ".csv" : ".txt")), text);
      }
      if (!exp_out.empty()) write_text(fs::path(exp_out) / "results.json", results.dump(2) + "\n");
    } else if (*serve) {
      check(km_serve(s.ws, host.empty() ? nullptr : host.c_str(), port));
    }
  } catch (const Failure& f) {
    std::cerr << "error (" << km_status_name(f.status) << "): " << f.message << "\n";
    return 2;
  } catch (const CLI::ValidationError& e) {
    std::cerr << "usage: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
