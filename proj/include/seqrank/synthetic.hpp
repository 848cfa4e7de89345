#pragma once

// Planted-pattern synthetic feed data. Labels follow a log-linear model over
// viewer x actor affinity, member preference x content, post quality and
// popularity, a member activity bias and a feed-position bias, plus an
// in-session latent whose strength is set by rho.

#include <cstdint>
#include <string>
#include <vector>

#include "seqrank/common.hpp"
#include "seqrank/feature_store.hpp"
#include "seqrank/sequence_builder.hpp"

namespace seqrank {

struct SyntheticConfig {
  Index members = 400;
  Index actors = 300;
  Index posts = 6000;
  Index content_dim = 50;
  Index preference_dim = 8;
  Index topics = 32;
  Index actor_table = 512;  // hashed embedding rows
  Index tasks = 6;
  double sessions_per_day = 1.0;
  double session_length_mean = 8.0;
  double affinity_sparsity = 0.05;  // fraction of actors a member follows
  double rho = 0.0;
  double time_span_days = 180.0;
  // Log-normal history lengths (median, log-sd), clipped to [min, max].
  double length_median = 80.0;
  double length_sigma = 0.6;
  Index min_length = 12;
  Index max_length = 400;
  double signal = 1.0;  // scales every planted coefficient
  std::uint64_t seed = 1;

  void validate() const;
};

/// Planted per-impression features, the oracle's inputs.
inline constexpr Index kPlantedFeatures = 6;
inline const char* const kPlantedNames[kPlantedFeatures] = {"affinity", "preference", "quality",
                                                            "popularity", "log_position", "member_bias"};

struct MemberHistory {
  std::int64_t member_id = 0;
  std::vector<InteractionEvent> events;  // chronological, sessions assigned
  Mat<double> planted;                   // T x kPlantedFeatures
  std::vector<double> session_latent;    // per event
};

struct SyntheticDataset {
  FeatureSchema schema;
  std::vector<std::string> task_names;
  Index context_dim = 0;
  std::int64_t start_timestamp = 0;
  std::int64_t end_timestamp = 0;
  std::vector<MemberHistory> members;

  Index event_count() const;
};

/// Post features: hashed actor id, content embedding, topic multi-hot,
/// log1p post age and a reshare flag. The actor embedding width fills the
/// remaining columns so the encoded width equals d_model.
FeatureSchema synthetic_schema(Index d_model, const SyntheticConfig& cfg);

/// Width of the late-fused context features the generator emits.
Index synthetic_context_dim(const SyntheticConfig& cfg);

SyntheticDataset synth_generate(const SyntheticConfig& cfg, Index d_model = 64);

/// Planted true logit for task m given planted features (without the session
/// latent); exposed for tests.
double planted_logit(const SyntheticConfig& cfg, Index task, std::span<const double> planted);

/// Splits each member into training events (all but the last session) and
/// evaluation candidates (the last session). Members with a single session
/// are training-only.
struct MemberSplit {
  std::vector<InteractionEvent> train;
  std::vector<InteractionEvent> eval;
  Mat<double> train_planted, eval_planted;
};
MemberSplit split_last_session(const MemberHistory& member);

}  // namespace seqrank
