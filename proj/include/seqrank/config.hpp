#pragma once

// JSON (de)serialization of every config struct, plus the experiment config
// consumed by the CLI. Unknown keys are rejected so typos fail loudly.

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "seqrank/feature_store.hpp"
#include "seqrank/model.hpp"
#include "seqrank/synthetic.hpp"
#include "seqrank/training.hpp"

namespace seqrank {

using Json = nlohmann::json;

enum class RunKind { Train, Eval, ScaleSweep, BenchAttn, BenchParse, BenchScoring, Leakage, PositionalCompare };

const char* to_string(RunKind k);
RunKind run_kind_from_string(const std::string& s);

struct TrainConfig {
  Index epochs = 5;
  Index batch_size = 8;
  OptimizerConfig optimizer{3e-3};
  bool shuffle_within_sessions = false;
  double retain_p = 1.0;  // negative down-sampling, 1 keeps everything
  bool estimate_ipw = true;
  Index ipw_positions = 30;
  std::size_t auc_buckets = 10000;
};

struct BenchConfig {
  Index context_tokens = 512;  // attn: L
  Index candidates = 128;      // attn and scoring: N
  Index history = 256;         // scoring: T
  Index tile = 64;
  Index repeats = 5;
  std::vector<Index> parse_sizes{100, 10000};
};

struct ExperimentConfig {
  RunKind kind = RunKind::Train;
  ModelConfig model;
  LossConfig loss;
  SyntheticConfig synthetic;
  TrainConfig train;
  BenchConfig bench;
  std::string output_dir = "runs/default";
  std::uint64_t seed = 1;
  std::vector<std::uint64_t> seeds{1, 2, 3};  // leakage repeats
  std::vector<Json> sweep;                     // per-point overrides, merged into the base config
  Json source;                                 // the document as given
};

Json to_json(const FeatureSchema& s);
FeatureSchema schema_from_json(const Json& j);

Json to_json(const TransformerConfig& c);
TransformerConfig transformer_config_from_json(const Json& j);

Json to_json(const HeadConfig& c);
HeadConfig head_config_from_json(const Json& j);

Json to_json(const ModelConfig& c);
/// Schema and context dim may be omitted; `fallback` supplies them.
ModelConfig model_config_from_json(const Json& j, const ModelConfig& fallback = {});

Json to_json(const LossConfig& c);
LossConfig loss_config_from_json(const Json& j);

Json to_json(const SyntheticConfig& c);
SyntheticConfig synthetic_config_from_json(const Json& j);

Json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const Json& j);

Json to_json(const BenchConfig& c);
BenchConfig bench_config_from_json(const Json& j);

/// The fully resolved config (defaults filled in).
Json to_json(const ExperimentConfig& c);
/// Parses, fills the model schema and context dim from the synthetic
/// generator when absent, and validates.
ExperimentConfig experiment_config_from_json(const Json& j);
ExperimentConfig load_experiment_config(const std::string& path);

Json read_json(const std::string& path);
void write_json(const std::string& path, const Json& j);

/// Recursive object merge; `patch` wins.
Json merge_json(Json base, const Json& patch);

}  // namespace seqrank
