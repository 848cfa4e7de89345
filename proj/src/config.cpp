#include "seqrank/config.hpp"

#include <algorithm>
#include <fstream>
#include <initializer_list>
#include <set>

namespace seqrank {

namespace {

template <typename E, std::size_t N>
E enum_from(const std::string& s, const E (&all)[N], const char* what) {
  for (E e : all)
    if (s == to_string(e)) return e;
  std::string valid;
  for (E e : all) valid += std::string(valid.empty() ? "" : ", ") + to_string(e);
  throw Error(ErrorKind::Config, "unknown " + std::string(what) + " '" + s + "' (expected one of: " + valid + ")");
}

void check_keys(const Json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw Error(ErrorKind::Config, where + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }))
      throw Error(ErrorKind::Config, "unknown key '" + key + "' in " + where);
  }
}

template <typename T>
void get(const Json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Config, std::string("bad value for '") + key + "': " + e.what());
  }
}

std::string get_string(const Json& j, const char* key, const std::string& def) {
  std::string s = def;
  get(j, key, s);
  return s;
}

}  // namespace

// ------------------------------------------------------------ enum strings

const char* to_string(AttentionActivation a) {
  switch (a) {
    case AttentionActivation::Softmax: return "softmax";
    case AttentionActivation::Sigmoid: return "sigmoid";
    case AttentionActivation::Silu: return "silu";
    case AttentionActivation::Relu: return "relu";
  }
  return "?";
}

AttentionActivation attention_activation_from_string(const std::string& s) {
  static const AttentionActivation all[] = {AttentionActivation::Softmax, AttentionActivation::Sigmoid,
                                            AttentionActivation::Silu, AttentionActivation::Relu};
  return enum_from(s, all, "attention activation");
}

const char* to_string(PositionalMode m) { return m == PositionalMode::Rope ? "rope" : "learned_absolute"; }

const char* to_string(ResidualMode m) {
  switch (m) {
    case ResidualMode::RescaleAndAdd: return "rescale";
    case ResidualMode::Vanilla: return "vanilla";
    case ResidualMode::LayerScale: return "layerscale";
    case ResidualMode::DenseGating: return "dense_gating";
  }
  return "?";
}

const char* to_string(FfnActivation a) { return a == FfnActivation::Silu ? "silu" : "relu"; }

PositionalMode positional_mode_from_string(const std::string& s) {
  static const PositionalMode all[] = {PositionalMode::Rope, PositionalMode::LearnedAbsolute};
  return enum_from(s, all, "positional mode");
}

ResidualMode residual_mode_from_string(const std::string& s) {
  static const ResidualMode all[] = {ResidualMode::RescaleAndAdd, ResidualMode::Vanilla, ResidualMode::LayerScale,
                                     ResidualMode::DenseGating};
  return enum_from(s, all, "residual mode");
}

FfnActivation ffn_activation_from_string(const std::string& s) {
  static const FfnActivation all[] = {FfnActivation::Silu, FfnActivation::Relu};
  return enum_from(s, all, "ffn activation");
}

const char* to_string(HeadKind k) {
  switch (k) {
    case HeadKind::Linear: return "linear";
    case HeadKind::Mlp: return "mlp";
    case HeadKind::Dcnv2: return "dcnv2";
    case HeadKind::Mmoe: return "mmoe";
  }
  return "?";
}

HeadKind head_kind_from_string(const std::string& s) {
  static const HeadKind all[] = {HeadKind::Linear, HeadKind::Mlp, HeadKind::Dcnv2, HeadKind::Mmoe};
  return enum_from(s, all, "head kind");
}

const char* to_string(RunKind k) {
  switch (k) {
    case RunKind::Train: return "train";
    case RunKind::Eval: return "eval";
    case RunKind::ScaleSweep: return "scale-sweep";
    case RunKind::BenchAttn: return "bench-attn";
    case RunKind::BenchParse: return "bench-parse";
    case RunKind::BenchScoring: return "bench-scoring";
    case RunKind::Leakage: return "leakage";
    case RunKind::PositionalCompare: return "positional-compare";
  }
  return "?";
}

RunKind run_kind_from_string(const std::string& s) {
  static const RunKind all[] = {RunKind::Train,       RunKind::Eval,        RunKind::ScaleSweep,
                                RunKind::BenchAttn,   RunKind::BenchParse,  RunKind::BenchScoring,
                                RunKind::Leakage,     RunKind::PositionalCompare};
  return enum_from(s, all, "run kind");
}

// ------------------------------------------------------------- validation

void TransformerConfig::validate() const {
  require(layers >= 1, ErrorKind::Config, "transformer needs at least one layer");
  require(d_model >= 1 && heads >= 1 && d_model % heads == 0, ErrorKind::Config,
          "d_model " + std::to_string(d_model) + " is not divisible by " + std::to_string(heads) + " heads");
  if (positional == PositionalMode::Rope)
    require(head_dim() % 2 == 0, ErrorKind::Config, "RoPE needs an even head dim");
  require(ffn_hidden >= 1, ErrorKind::Config, "ffn_hidden must be positive");
  require(rope_theta > 0.0, ErrorKind::Config, "rope_theta must be positive");
}

Index HeadConfig::group_count() const {
  if (task_group.empty()) return 1;
  return *std::max_element(task_group.begin(), task_group.end()) + 1;
}

void HeadConfig::validate(Index tasks) const {
  switch (kind) {
    case HeadKind::Linear: break;
    case HeadKind::Mlp: require(mlp_hidden >= 1, ErrorKind::Config, "mlp_hidden must be positive"); break;
    case HeadKind::Dcnv2: require(cross_layers >= 1, ErrorKind::Config, "cross_layers must be positive"); break;
    case HeadKind::Mmoe: {
      require(experts >= 1 && expert_hidden >= 1, ErrorKind::Config, "MMoE needs experts and a hidden width");
      require(gate_dropout >= 0.0 && gate_dropout < 1.0, ErrorKind::Config, "gate_dropout must lie in [0, 1)");
      require(static_cast<Index>(task_group.size()) == tasks, ErrorKind::Config,
              "task_group has " + std::to_string(task_group.size()) + " entries for " + std::to_string(tasks) +
                  " tasks");
      std::set<int> used(task_group.begin(), task_group.end());
      require(*used.begin() == 0 && static_cast<Index>(used.size()) == group_count(), ErrorKind::Config,
              "task groups must be numbered densely from 0");
      break;
    }
  }
}

int ModelConfig::task_index(const std::string& name) const {
  const auto it = std::find(task_names.begin(), task_names.end(), name);
  return it == task_names.end() ? -1 : static_cast<int>(it - task_names.begin());
}

void ModelConfig::validate() const {
  require(!task_names.empty(), ErrorKind::Config, "at least one task is required");
  require(std::set<std::string>(task_names.begin(), task_names.end()).size() == task_names.size(),
          ErrorKind::Config, "task names must be unique");
  transformer.validate();
  head.validate(tasks());
  require(schema.encoded_dim() == transformer.d_model, ErrorKind::DimMismatch,
          "encoded post width " + std::to_string(schema.encoded_dim()) + " differs from d_model " +
              std::to_string(transformer.d_model));
  require(context_dim >= 0 && max_history >= 1 && tile >= 1, ErrorKind::Config,
          "context_dim, max_history and tile must be positive");
  require(inference_position >= 1 && inference_position <= kPositionOffsetRows, ErrorKind::Config,
          "inference_position outside the offset table");
}

std::vector<int> default_task_groups(const std::vector<std::string>& task_names) {
  std::vector<int> groups;
  bool any_passive = false;
  for (const auto& n : task_names) {
    const bool active = n == "like" || n == "comment" || n == "share";
    groups.push_back(active ? 1 : 0);
    any_passive |= !active;
  }
  if (!any_passive)  // active-only task lists collapse to one group
    for (auto& g : groups) g = 0;
  return groups;
}

// --------------------------------------------------------------- schema

Json to_json(const FeatureSchema& s) {
  Json arr = Json::array();
  for (const auto& f : s.features()) {
    Json jf{{"name", f.name}, {"kind", to_string(f.kind)}, {"dim", f.dim}, {"transform", to_string(f.transform)}};
    if (f.vocab) jf["vocab"] = f.vocab;
    arr.push_back(jf);
  }
  return arr;
}

FeatureSchema schema_from_json(const Json& j) {
  if (!j.is_array()) throw Error(ErrorKind::Config, "schema must be an array of features");
  std::vector<FeatureSpec> specs;
  for (const auto& jf : j) {
    check_keys(jf, {"name", "kind", "dim", "transform", "vocab"}, "schema feature");
    FeatureSpec f;
    get(jf, "name", f.name);
    f.kind = feature_kind_from_string(get_string(jf, "kind", to_string(f.kind)));
    f.transform = transform_from_string(get_string(jf, "transform", to_string(f.transform)));
    get(jf, "dim", f.dim);
    get(jf, "vocab", f.vocab);
    specs.push_back(std::move(f));
  }
  return FeatureSchema(std::move(specs));
}

// ------------------------------------------------------------ transformer

Json to_json(const TransformerConfig& c) {
  return {{"layers", c.layers},
          {"d_model", c.d_model},
          {"heads", c.heads},
          {"ffn_hidden", c.ffn_hidden},
          {"ffn_activation", to_string(c.ffn_activation)},
          {"attention", to_string(c.attention)},
          {"positional", to_string(c.positional)},
          {"residual", to_string(c.residual)},
          {"alpha_init", c.alpha_init},
          {"rope_theta", c.rope_theta}};
}

TransformerConfig transformer_config_from_json(const Json& j) {
  check_keys(j,
             {"layers", "d_model", "heads", "ffn_hidden", "ffn_activation", "attention", "positional", "residual",
              "alpha_init", "rope_theta"},
             "transformer");
  TransformerConfig c;
  get(j, "layers", c.layers);
  get(j, "d_model", c.d_model);
  get(j, "heads", c.heads);
  c.ffn_hidden = 4 * c.d_model;
  get(j, "ffn_hidden", c.ffn_hidden);
  c.ffn_activation = ffn_activation_from_string(get_string(j, "ffn_activation", to_string(c.ffn_activation)));
  c.attention = attention_activation_from_string(get_string(j, "attention", to_string(c.attention)));
  c.positional = positional_mode_from_string(get_string(j, "positional", to_string(c.positional)));
  c.residual = residual_mode_from_string(get_string(j, "residual", to_string(c.residual)));
  get(j, "alpha_init", c.alpha_init);
  get(j, "rope_theta", c.rope_theta);
  return c;
}

// ------------------------------------------------------------------ head

Json to_json(const HeadConfig& c) {
  return {{"kind", to_string(c.kind)},       {"mlp_hidden", c.mlp_hidden},       {"cross_layers", c.cross_layers},
          {"experts", c.experts},            {"expert_hidden", c.expert_hidden}, {"gate_dropout", c.gate_dropout},
          {"task_group", c.task_group}};
}

HeadConfig head_config_from_json(const Json& j) {
  check_keys(j, {"kind", "mlp_hidden", "cross_layers", "experts", "expert_hidden", "gate_dropout", "task_group"},
             "head");
  HeadConfig c;
  c.kind = head_kind_from_string(get_string(j, "kind", to_string(c.kind)));
  get(j, "mlp_hidden", c.mlp_hidden);
  get(j, "cross_layers", c.cross_layers);
  get(j, "experts", c.experts);
  get(j, "expert_hidden", c.expert_hidden);
  get(j, "gate_dropout", c.gate_dropout);
  get(j, "task_group", c.task_group);
  return c;
}

// ----------------------------------------------------------------- model

Json to_json(const ModelConfig& c) {
  return {{"schema", to_json(c.schema)},
          {"tasks", c.task_names},
          {"context_dim", c.context_dim},
          {"max_history", c.max_history},
          {"transformer", to_json(c.transformer)},
          {"head", to_json(c.head)},
          {"tiled_serving", c.tiled_serving},
          {"tile", c.tile},
          {"inference_position", c.inference_position}};
}

ModelConfig model_config_from_json(const Json& j, const ModelConfig& fallback) {
  check_keys(j,
             {"schema", "tasks", "context_dim", "max_history", "transformer", "head", "tiled_serving", "tile",
              "inference_position"},
             "model");
  ModelConfig c;
  c.schema = j.contains("schema") ? schema_from_json(j["schema"]) : fallback.schema;
  c.context_dim = fallback.context_dim;
  get(j, "context_dim", c.context_dim);
  if (!j.contains("tasks") && !fallback.task_names.empty()) c.task_names = fallback.task_names;
  get(j, "tasks", c.task_names);
  get(j, "max_history", c.max_history);
  c.transformer = transformer_config_from_json(j.value("transformer", Json::object()));
  c.head = head_config_from_json(j.value("head", Json::object()));
  if (c.head.task_group.empty()) c.head.task_group = default_task_groups(c.task_names);
  get(j, "tiled_serving", c.tiled_serving);
  get(j, "tile", c.tile);
  get(j, "inference_position", c.inference_position);
  return c;
}

// ------------------------------------------------------------------ loss

Json to_json(const LossConfig& c) {
  Json table = Json::array();
  for (Index r = 0; r < c.ipw_table.rows(); ++r) {
    Json row = Json::array();
    for (Index m = 0; m < c.ipw_table.cols(); ++m) row.push_back(c.ipw_table(r, m));
    table.push_back(row);
  }
  return {{"ipw_table", table},
          {"ipw_per_task", c.ipw_per_task},
          {"neg_weight", c.neg_weight},
          {"position_decay", c.position_decay},
          {"timestamp_decay", c.timestamp_decay},
          {"half_life_days", c.half_life_days},
          {"reference_timestamp", c.reference_timestamp},
          {"clamp", {c.clamp_min, c.clamp_max}},
          {"incremental", c.incremental}};
}

LossConfig loss_config_from_json(const Json& j) {
  check_keys(j,
             {"ipw_table", "ipw_per_task", "neg_weight", "position_decay", "timestamp_decay", "half_life_days",
              "reference_timestamp", "clamp", "incremental"},
             "loss");
  LossConfig c;
  if (j.contains("ipw_table")) {
    std::vector<std::vector<double>> rows;
    get(j, "ipw_table", rows);
    if (!rows.empty()) {
      c.ipw_table.resize(static_cast<Index>(rows.size()), static_cast<Index>(rows[0].size()));
      for (std::size_t r = 0; r < rows.size(); ++r) {
        require(rows[r].size() == rows[0].size(), ErrorKind::Config, "ipw_table rows differ in length");
        for (std::size_t m = 0; m < rows[r].size(); ++m) c.ipw_table(r, m) = rows[r][m];
      }
    }
  }
  get(j, "ipw_per_task", c.ipw_per_task);
  get(j, "neg_weight", c.neg_weight);
  get(j, "position_decay", c.position_decay);
  get(j, "timestamp_decay", c.timestamp_decay);
  get(j, "half_life_days", c.half_life_days);
  get(j, "reference_timestamp", c.reference_timestamp);
  if (j.contains("clamp")) {
    std::vector<double> clamp;
    get(j, "clamp", clamp);
    require(clamp.size() == 2, ErrorKind::Config, "clamp must be [lower, upper]");
    c.clamp_min = clamp[0];
    c.clamp_max = clamp[1];
  }
  get(j, "incremental", c.incremental);
  c.validate();
  return c;
}

// ------------------------------------------------------------- synthetic

Json to_json(const SyntheticConfig& c) {
  return {{"members", c.members},
          {"actors", c.actors},
          {"posts", c.posts},
          {"content_dim", c.content_dim},
          {"preference_dim", c.preference_dim},
          {"topics", c.topics},
          {"actor_table", c.actor_table},
          {"tasks", c.tasks},
          {"sessions_per_day", c.sessions_per_day},
          {"session_length_mean", c.session_length_mean},
          {"affinity_sparsity", c.affinity_sparsity},
          {"rho", c.rho},
          {"time_span_days", c.time_span_days},
          {"length_median", c.length_median},
          {"length_sigma", c.length_sigma},
          {"min_length", c.min_length},
          {"max_length", c.max_length},
          {"signal", c.signal},
          {"seed", c.seed}};
}

SyntheticConfig synthetic_config_from_json(const Json& j) {
  check_keys(j,
             {"members", "actors", "posts", "content_dim", "preference_dim", "topics", "actor_table", "tasks",
              "sessions_per_day", "session_length_mean", "affinity_sparsity", "rho", "time_span_days",
              "length_median", "length_sigma", "min_length", "max_length", "signal", "seed"},
             "synthetic");
  SyntheticConfig c;
  get(j, "members", c.members);
  get(j, "actors", c.actors);
  get(j, "posts", c.posts);
  get(j, "content_dim", c.content_dim);
  get(j, "preference_dim", c.preference_dim);
  get(j, "topics", c.topics);
  get(j, "actor_table", c.actor_table);
  get(j, "tasks", c.tasks);
  get(j, "sessions_per_day", c.sessions_per_day);
  get(j, "session_length_mean", c.session_length_mean);
  get(j, "affinity_sparsity", c.affinity_sparsity);
  get(j, "rho", c.rho);
  get(j, "time_span_days", c.time_span_days);
  get(j, "length_median", c.length_median);
  get(j, "length_sigma", c.length_sigma);
  get(j, "min_length", c.min_length);
  get(j, "max_length", c.max_length);
  get(j, "signal", c.signal);
  get(j, "seed", c.seed);
  c.validate();
  return c;
}

// ----------------------------------------------------------------- train

Json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"lr", c.optimizer.lr},
          {"beta1", c.optimizer.beta1},
          {"beta2", c.optimizer.beta2},
          {"eps", c.optimizer.eps},
          {"clip_norm", c.optimizer.clip_norm},
          {"shuffle_within_sessions", c.shuffle_within_sessions},
          {"retain_p", c.retain_p},
          {"estimate_ipw", c.estimate_ipw},
          {"ipw_positions", c.ipw_positions},
          {"auc_buckets", c.auc_buckets}};
}

TrainConfig train_config_from_json(const Json& j) {
  check_keys(j,
             {"epochs", "batch_size", "lr", "beta1", "beta2", "eps", "clip_norm", "shuffle_within_sessions",
              "retain_p", "estimate_ipw", "ipw_positions", "auc_buckets"},
             "train");
  TrainConfig c;
  get(j, "epochs", c.epochs);
  get(j, "batch_size", c.batch_size);
  get(j, "lr", c.optimizer.lr);
  get(j, "beta1", c.optimizer.beta1);
  get(j, "beta2", c.optimizer.beta2);
  get(j, "eps", c.optimizer.eps);
  get(j, "clip_norm", c.optimizer.clip_norm);
  get(j, "shuffle_within_sessions", c.shuffle_within_sessions);
  get(j, "retain_p", c.retain_p);
  get(j, "estimate_ipw", c.estimate_ipw);
  get(j, "ipw_positions", c.ipw_positions);
  get(j, "auc_buckets", c.auc_buckets);
  require(c.epochs >= 0 && c.batch_size >= 1, ErrorKind::Config, "epochs must be >= 0 and batch_size >= 1");
  require(c.optimizer.lr >= 0.0, ErrorKind::Config, "lr must be non-negative");
  require(c.retain_p > 0.0 && c.retain_p <= 1.0, ErrorKind::Config, "retain_p must lie in (0, 1]");
  require(c.ipw_positions >= 1, ErrorKind::Config, "ipw_positions must be positive");
  return c;
}

// ----------------------------------------------------------------- bench

Json to_json(const BenchConfig& c) {
  return {{"context_tokens", c.context_tokens}, {"candidates", c.candidates}, {"history", c.history},
          {"tile", c.tile},                     {"repeats", c.repeats},       {"parse_sizes", c.parse_sizes}};
}

BenchConfig bench_config_from_json(const Json& j) {
  check_keys(j, {"context_tokens", "candidates", "history", "tile", "repeats", "parse_sizes"}, "bench");
  BenchConfig c;
  get(j, "context_tokens", c.context_tokens);
  get(j, "candidates", c.candidates);
  get(j, "history", c.history);
  get(j, "tile", c.tile);
  get(j, "repeats", c.repeats);
  get(j, "parse_sizes", c.parse_sizes);
  require(c.repeats >= 1 && c.tile >= 1, ErrorKind::Config, "bench repeats and tile must be positive");
  return c;
}

// ------------------------------------------------------------ experiment

Json to_json(const ExperimentConfig& c) {
  Json j{{"kind", to_string(c.kind)},     {"seed", c.seed},         {"output_dir", c.output_dir},
         {"model", to_json(c.model)},     {"loss", to_json(c.loss)}, {"synthetic", to_json(c.synthetic)},
         {"train", to_json(c.train)},     {"bench", to_json(c.bench)}, {"seeds", c.seeds}};
  j["sweep"] = c.sweep;
  return j;
}

ExperimentConfig experiment_config_from_json(const Json& j) {
  check_keys(j, {"kind", "seed", "output_dir", "model", "loss", "synthetic", "train", "bench", "seeds", "sweep"},
             "experiment config");
  ExperimentConfig c;
  c.source = j;
  c.kind = run_kind_from_string(get_string(j, "kind", to_string(c.kind)));
  get(j, "seed", c.seed);
  get(j, "output_dir", c.output_dir);
  get(j, "seeds", c.seeds);
  if (j.contains("sweep")) {
    require(j["sweep"].is_array(), ErrorKind::Config, "sweep must be an array of overrides");
    for (const auto& s : j["sweep"]) c.sweep.push_back(s);
  }
  Json synth = j.value("synthetic", Json::object());
  if (!synth.contains("seed")) synth["seed"] = c.seed;
  c.synthetic = synthetic_config_from_json(synth);
  const Json model = j.value("model", Json::object());
  const Index d_model = model.value("transformer", Json::object()).value("d_model", Index{64});
  ModelConfig fallback;
  fallback.schema = synthetic_schema(d_model, c.synthetic);
  fallback.context_dim = synthetic_context_dim(c.synthetic);
  const std::vector<std::string> names{"click", "longDwell", "like", "comment", "share", "skip"};
  fallback.task_names.clear();
  for (Index m = 0; m < c.synthetic.tasks; ++m)
    fallback.task_names.push_back(m < 6 ? names[m] : "task" + std::to_string(m));
  c.model = model_config_from_json(model, fallback);
  c.model.validate();
  c.loss = loss_config_from_json(j.value("loss", Json::object()));
  c.train = train_config_from_json(j.value("train", Json::object()));
  c.bench = bench_config_from_json(j.value("bench", Json::object()));
  return c;
}

Json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::MissingFile, "cannot open '" + path + "'");
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::Config, "'" + path + "' is not valid JSON: " + e.what());
  }
}

void write_json(const std::string& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::MissingFile, "cannot write '" + path + "'");
  out << j.dump(2) << '\n';
}

ExperimentConfig load_experiment_config(const std::string& path) { return experiment_config_from_json(read_json(path)); }

Json merge_json(Json base, const Json& patch) {
  if (!patch.is_object() || !base.is_object()) return patch;
  for (const auto& [key, value] : patch.items()) base[key] = merge_json(base.value(key, Json()), value);
  return base;
}

}  // namespace seqrank
