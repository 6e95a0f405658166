#include "knowmri/model/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <sstream>
#include <vector>

#include "knowmri/error.hpp"

namespace knowmri::model {
namespace {

namespace fs = std::filesystem;

std::string shape_string(const TensorView& t) {
  return t.is_vector ? std::to_string(t.cols) : std::to_string(t.rows) + "x" + std::to_string(t.cols);
}

std::uint32_t to_little(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    return (v >> 24) | ((v >> 8) & 0xff00u) | ((v << 8) & 0xff0000u) | (v << 24);
  }
}

void read_tensor(const fs::path& file, const TensorView& t) {
  std::error_code ec;
  const auto bytes = fs::file_size(file, ec);
  require(!ec, ErrorCode::kIo, "missing tensor file " + file.string());
  const auto want = static_cast<std::uintmax_t>(t.size()) * 4u;
  require(bytes == want, ErrorCode::kShapeMismatch,
          "tensor " + t.name + ": file holds " + std::to_string(bytes) + " bytes, shape " + shape_string(t) +
              " needs " + std::to_string(want));
  std::ifstream in(file, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open " + file.string());
  std::vector<std::uint32_t> raw(static_cast<std::size_t>(t.size()));
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(want));
  require(static_cast<bool>(in), ErrorCode::kIo, "short read on " + file.string());
  for (Eigen::Index i = 0; i < t.size(); ++i) {
    float f;
    const std::uint32_t bits = to_little(raw[static_cast<std::size_t>(i)]);
    std::memcpy(&f, &bits, 4);
    t.data[i] = static_cast<double>(f);
  }
}

void write_tensor(const fs::path& file, const TensorView& t) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot write " + file.string());
  for (Eigen::Index i = 0; i < t.size(); ++i) {
    const float f = static_cast<float>(t.data[i]);
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    bits = to_little(bits);
    out.write(reinterpret_cast<const char*>(&bits), 4);
  }
}

int parse_int(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const int v = std::stoi(value, &pos);
    if (pos == value.size()) return v;
  } catch (const std::exception&) {
  }
  fail(ErrorCode::kValidation, "manifest: spec field " + key + " is not an integer: '" + value + "'");
}

}  // namespace

Checkpoint load_checkpoint(const fs::path& dir) {
  const fs::path manifest = dir / "manifest.txt";
  std::ifstream in(manifest);
  require(static_cast<bool>(in), ErrorCode::kIo, "missing checkpoint manifest " + manifest.string());

  ModelSpec spec;
  Metadata meta;
  std::map<std::string, std::string> declared;  // tensor name -> shape string
  std::string tokenizer_file;
  bool in_spec = false, saw_spec = false;
  std::string line;
  int lineno = 0;
  auto where = [&] { return manifest.string() + ":" + std::to_string(lineno) + ": "; };

  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string head;
    if (!(ls >> head) || head[0] == '#') continue;
    if (in_spec) {
      if (head == "}") {
        in_spec = false;
        continue;
      }
      std::string value;
      ls >> value;
      if (head == "model_id") spec.model_id = value;
      else if (head == "n_layers") spec.n_layers = parse_int(head, value);
      else if (head == "hidden_dim") spec.hidden_dim = parse_int(head, value);
      else if (head == "mlp_dim") spec.mlp_dim = parse_int(head, value);
      else if (head == "n_heads") spec.n_heads = parse_int(head, value);
      else if (head == "vocab_size") spec.vocab_size = parse_int(head, value);
      else if (head == "max_seq_len") spec.max_seq_len = parse_int(head, value);
      else if (head == "layernorm_style") spec.layernorm_style = parse_layernorm_style(value);
      else if (head == "tied_embeddings") spec.tied_embeddings = value == "true";
      else fail(ErrorCode::kValidation, where() + "unknown spec field '" + head + "'");
      continue;
    }
    if (head == "format") {
      std::string name, version;
      ls >> name >> version;
      require(name == "knowmri-checkpoint" && version == "1", ErrorCode::kUnsupported,
              where() + "unsupported checkpoint format");
    } else if (head == "spec") {
      in_spec = saw_spec = true;
    } else if (head == "meta") {
      std::string key, rest;
      ls >> key;
      std::getline(ls >> std::ws, rest);
      meta[key] = rest;
    } else if (head == "tokenizer") {
      ls >> tokenizer_file;
    } else if (head == "tensor") {
      std::string name, dtype, shape;
      ls >> name >> dtype >> shape;
      require(dtype == "f32", ErrorCode::kUnsupported, where() + "tensor " + name + " has unsupported dtype " + dtype);
      declared[name] = shape;
    } else {
      fail(ErrorCode::kValidation, where() + "unknown manifest entry '" + head + "'");
    }
  }
  require(saw_spec && !in_spec, ErrorCode::kValidation, manifest.string() + ": missing or unterminated spec block");
  spec.validate();
  require(spec.layernorm_style == LayerNormStyle::kPre, ErrorCode::kUnsupported,
          "checkpoint uses layernorm_style 'post', which this backend does not support");

  Weights weights = Weights::zeros(spec);
  auto views = weights.tensors();
  for (const auto& t : views) {
    auto it = declared.find(t.name);
    require(it != declared.end(), ErrorCode::kShapeMismatch, "manifest does not declare tensor " + t.name);
    require(it->second == shape_string(t), ErrorCode::kShapeMismatch,
            "tensor " + t.name + " declared as " + it->second + " but spec implies " + shape_string(t));
    read_tensor(dir / (t.name + ".bin"), t);
    declared.erase(it);
  }
  require(declared.empty(), ErrorCode::kShapeMismatch,
          "manifest declares unexpected tensor " + (declared.empty() ? std::string() : declared.begin()->first));

  require(!tokenizer_file.empty(), ErrorCode::kValidation, "manifest does not name a tokenizer file");
  Tokenizer tok = Tokenizer::load(dir / tokenizer_file, spec.vocab_size);
  return Checkpoint{std::move(spec), std::move(weights), std::move(tok), std::move(meta)};
}

void save_checkpoint(const fs::path& dir, const ModelSpec& spec, const Weights& weights, const Tokenizer& tokenizer,
                     const Metadata& meta) {
  spec.validate();
  fs::create_directories(dir);
  std::ofstream out(dir / "manifest.txt", std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot write manifest in " + dir.string());
  out << "format knowmri-checkpoint 1\n";
  out << "spec {\n"
      << "  model_id " << spec.model_id << "\n"
      << "  n_layers " << spec.n_layers << "\n"
      << "  hidden_dim " << spec.hidden_dim << "\n"
      << "  mlp_dim " << spec.mlp_dim << "\n"
      << "  n_heads " << spec.n_heads << "\n"
      << "  vocab_size " << spec.vocab_size << "\n"
      << "  max_seq_len " << spec.max_seq_len << "\n"
      << "  layernorm_style " << layernorm_style_name(spec.layernorm_style) << "\n"
      << "  tied_embeddings " << (spec.tied_embeddings ? "true" : "false") << "\n"
      << "}\n";
  for (const auto& [k, v] : meta) out << "meta " << k << ' ' << v << "\n";
  out << "tokenizer tokenizer.txt\n";
  for (const auto& t : weights.tensors()) {
    out << "tensor " << t.name << " f32 " << shape_string(t) << "\n";
    write_tensor(dir / (t.name + ".bin"), t);
  }
  tokenizer.save(dir / "tokenizer.txt");
}

}  // namespace knowmri::model
