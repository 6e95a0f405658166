#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "knowmri/model/spec.hpp"
#include "knowmri/model/tokenizer.hpp"
#include "knowmri/model/transformer.hpp"

namespace knowmri::model {

using Metadata = std::map<std::string, std::string>;

struct Checkpoint {
  ModelSpec spec;
  Weights weights;
  Tokenizer tokenizer;
  Metadata meta;
};

// Directory layout: `manifest.txt`, `tokenizer.txt`, and one raw
// little-endian float32 file `<tensor name>.bin` per tensor.
//
// Manifest lines:
//   format knowmri-checkpoint 1
//   spec {
//     <field> <value>          (one per ModelSpec field)
//   }
//   meta <key> <value...>      (optional, free-form)
//   tokenizer <file>
//   tensor <name> f32 <dim0>x<dim1>...
Checkpoint load_checkpoint(const std::filesystem::path& dir);

void save_checkpoint(const std::filesystem::path& dir, const ModelSpec& spec, const Weights& weights,
                     const Tokenizer& tokenizer, const Metadata& meta = {});

}  // namespace knowmri::model
