#pragma once

// Experiment driver behind the CLI: synthetic training runs, evaluation,
// leakage and positional-embedding comparisons, scaling sweeps and
// benchmarks. Every run writes its resolved config next to its outputs.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "seqrank/config.hpp"
#include "seqrank/dataset_io.hpp"
#include "seqrank/model.hpp"
#include "seqrank/synthetic.hpp"

namespace seqrank {

struct TaskAuc {
  std::optional<double> exact, bucketized;
};

/// Per-task exact and bucketized AUC from flat score / label lists.
std::vector<TaskAuc> compute_auc(const std::vector<std::vector<double>>& scores,
                                 const std::vector<std::vector<std::uint8_t>>& labels, std::size_t buckets);

struct PreparedData {
  std::vector<TrainingSequence> train;
  std::vector<std::vector<InteractionEvent>> train_events;  // as fed to the model (possibly shuffled)
  std::vector<ServingInput> eval_inputs;
  std::vector<Mat<float>> eval_labels;  // N x M per request
  std::int64_t reference_timestamp = 0;
  Mat<double> ipw_table;
};

/// Last session of every member becomes its evaluation candidates; earlier
/// events (truncated to max_history) form the training sequence and the
/// serving history.
PreparedData prepare_data(const SyntheticDataset& ds, const ExperimentConfig& cfg);

/// P(action | position) / P(action | position 1), clamped to [0.05, 1], per
/// task; positions with fewer than 30 impressions reuse the previous row.
Mat<double> estimate_propensities(const std::vector<TrainingSequence>& seqs, Index positions, Index tasks);

struct EpochMetrics {
  Index epoch = 0;
  double loss = 0.0;
  std::vector<TaskAuc> train_auc, eval_auc;
};

struct StepLog {
  Index step = 0;
  double loss = 0.0;
  std::vector<double> mean_prediction, mean_label;
};

struct RunResult {
  ModelParams<float> params;
  std::vector<EpochMetrics> epochs;
  std::vector<StepLog> steps;
  Index sequences_seen = 0;
  double seconds = 0.0;
};

/// Trains from scratch. Evaluates after every epoch (and before the first,
/// as epoch 0).
RunResult train_model(const ExperimentConfig& cfg, const PreparedData& data, std::ostream* log = nullptr);

std::vector<TaskAuc> evaluate_serving(const ModelParams<float>& params, const ModelConfig& cfg, const PreparedData& data,
                                      std::size_t buckets);
std::vector<TaskAuc> evaluate_training(const ModelParams<float>& params, const ModelConfig& cfg,
                                       const PreparedData& data, std::size_t buckets);

struct FlopEstimate {
  Index dense_params = 0;
  Index seq_len = 0;
  double sequences_seen = 0.0;
  double flops = 0.0;
};

/// 6 * dense params * sequence length * sequences seen.
FlopEstimate estimate_flops(Index dense_params, Index seq_len, double sequences_seen);

/// True when every session keeps its multiset of events and sessions keep
/// their relative order.
bool sessions_preserved(const std::vector<InteractionEvent>& original, const std::vector<InteractionEvent>& shuffled);

/// Coefficient of variation of the last half of a series.
double tail_cov(const std::vector<double>& series);

struct LeakageRow {
  std::uint64_t seed = 0;
  double chrono_train = 0, chrono_eval = 0, shuffled_train = 0, shuffled_eval = 0;
  double chrono_gap() const { return chrono_train - chrono_eval; }
  double shuffled_gap() const { return shuffled_train - shuffled_eval; }
};

struct LeakageReport {
  std::vector<LeakageRow> rows;
  bool sessions_audited = false;
  Index seeds_in_direction() const;
};

LeakageReport run_leakage(const ExperimentConfig& cfg, std::ostream* log = nullptr);

struct PositionalReport {
  double rope_cov = 0, absolute_cov = 0;
  std::optional<double> rope_eval_auc, absolute_eval_auc;
};

PositionalReport run_positional_compare(const ExperimentConfig& cfg, std::ostream* log = nullptr);

struct AttnBench {
  double dense_ms = 0, tiled_ms = 0;
  std::uint64_t tiles_visited = 0, tiles_skipped = 0;
  double speedup() const { return dense_ms / tiled_ms; }
};
AttnBench bench_attention(Index context_tokens, Index candidates, Index d_model, Index heads, Index tile,
                          Index repeats, std::uint64_t seed);

struct ScoringBench {
  double batched_ms = 0, sequential_ms = 0;
  double max_abs_diff = 0;
  double speedup() const { return sequential_ms / batched_ms; }
};
ScoringBench bench_scoring(const ModelConfig& cfg, Index history, Index candidates, Index repeats, std::uint64_t seed);

struct ParseBench {
  std::vector<Index> sizes;
  std::vector<double> microseconds;
  std::vector<std::size_t> column_setups;
};
ParseBench bench_parse(const std::vector<Index>& sizes, Index repeats, std::uint64_t seed);

/// Random post / serving inputs for a model config.
FeatureRecord random_post(const FeatureSchema& schema, Rng& rng);
ServingInput random_serving_input(const ModelConfig& cfg, Index history, Index candidates, Rng& rng);

/// Human-readable header and column summary of a .sqrk file. The schema is
/// taken from a manifest.json next to the file when present; otherwise the
/// column layout is inferred.
void inspect_file(const std::string& path, std::ostream& out);

/// Runs the experiment named by cfg.kind, writing into cfg.output_dir.
/// Returns a process exit code.
int run_experiment(const ExperimentConfig& cfg, std::ostream& log);

}  // namespace seqrank
