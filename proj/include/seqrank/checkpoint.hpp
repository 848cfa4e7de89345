#pragma once

// Model checkpoints: `<stem>.bin` holds every parameter as packed
// little-endian f32, `<stem>.json` the model config and a name -> (offset,
// rows, cols) index into the blob.

#include <string>

#include "seqrank/model.hpp"

namespace seqrank {

struct Checkpoint {
  ModelConfig config;
  ModelParams<float> params;
};

/// `path` may be a stem or end in ".json".
void save_checkpoint(const std::string& path, const ModelParams<float>& params, const ModelConfig& config);
Checkpoint load_checkpoint(const std::string& path);

std::string checkpoint_stem(const std::string& path);

}  // namespace seqrank
