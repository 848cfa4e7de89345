#include <cmath>
#include <numeric>

#include "seqrank/training.hpp"

namespace seqrank {

void LossConfig::validate() const {
  require(half_life_days > 0.0, ErrorKind::Config, "half_life_days must be positive");
  require(clamp_min < clamp_max, ErrorKind::Config, "clamp_min must be below clamp_max");
  require(neg_weight >= 0.0, ErrorKind::Config, "neg_weight must be non-negative");
  for (Index i = 0; i < ipw_table.size(); ++i)
    require(ipw_table.data()[i] > 0.0 && ipw_table.data()[i] <= 1.0, ErrorKind::Config,
            "propensities must lie in (0, 1]");
}

double position_weight(Index t, Index length) {
  require(length >= 1 && t >= 1 && t <= length, ErrorKind::OutOfRange,
          "position_weight: t=" + std::to_string(t) + " outside [1, " + std::to_string(length) + "]");
  if (length == 1) return 1.0;
  return std::exp2(-static_cast<double>(length - t) / static_cast<double>(length - 1));
}

double timestamp_weight(std::int64_t ts, std::int64_t reference_ts, double half_life_days, double clamp_min,
                        double clamp_max) {
  require(ts <= reference_ts, ErrorKind::Precondition, "timestamp after the reference timestamp");
  require(half_life_days > 0.0, ErrorKind::Config, "half-life must be positive");
  const double age_days = static_cast<double>(reference_ts - ts) / 86400.0;
  const double w = std::exp2(-age_days / half_life_days);
  return std::clamp(w, clamp_min, clamp_max);
}

double ipw_weight(int position, Index task, const Mat<double>& table) {
  if (table.size() == 0 || position < 1 || position > table.rows()) return 1.0;
  const double p = table(position - 1, task);
  if (!(p > 0.0)) throw Error(ErrorKind::Config, "non-positive propensity at position " + std::to_string(position));
  return 1.0 / p;
}

std::vector<double> batch_normalize_weights(std::vector<double> weights) {
  double sum = 0.0;
  for (double w : weights) {
    require(w >= 0.0, ErrorKind::Domain, "negative loss weight");
    sum += w;
  }
  if (weights.empty() || !(sum > 0.0)) throw Error(ErrorKind::DegenerateBatch, "all loss weights are zero");
  const double mean = sum / static_cast<double>(weights.size());
  for (double& w : weights) w /= mean;
  return weights;
}

std::vector<bool> incremental_loss_mask(std::span<const InteractionEvent> events) {
  std::vector<bool> mask(events.size());
  for (std::size_t i = 0; i < events.size(); ++i) mask[i] = events[i].is_new;
  return mask;
}

Index unmasked_entries(std::span<const TrainingSequence> batch, Index tasks) {
  Index n = 0;
  for (const auto& seq : batch)
    for (bool b : seq.loss_mask) n += b;
  return n * tasks;
}

std::vector<Mat<double>> batch_loss_weights(std::span<const TrainingSequence> batch, const LossConfig& cfg, Index tasks) {
  std::vector<Mat<double>> out;
  std::vector<double> flat;
  for (const auto& seq : batch) {
    const Index len = seq.length();
    Mat<double> w(len, tasks);
    for (Index t = 0; t < len; ++t) {
      double row = seq.sample_weights[t];
      if (cfg.position_decay) row *= position_weight(t + 1, len);
      if (cfg.timestamp_decay)
        row *= timestamp_weight(seq.timestamps[t], cfg.reference_timestamp, cfg.half_life_days, cfg.clamp_min,
                                cfg.clamp_max);
      for (Index m = 0; m < tasks; ++m) {
        w(t, m) = row * ipw_weight(seq.feed_positions[t], cfg.ipw_per_task ? m : 0, cfg.ipw_table);
        if (seq.loss_mask[t]) flat.push_back(w(t, m));
      }
    }
    out.push_back(std::move(w));
  }
  batch_normalize_weights(flat);  // validates; masked entries get the same divisor
  const double mean = std::accumulate(flat.begin(), flat.end(), 0.0) / static_cast<double>(flat.size());
  for (auto& w : out) w /= mean;
  return out;
}

TrainingSequence make_training_sequence(const std::vector<InteractionEvent>& events, Index tasks, Index context_dim,
                                        bool incremental) {
  TrainingSequence seq;
  const Index len = static_cast<Index>(events.size());
  seq.actions.resize(len, tasks);
  seq.context.resize(len, context_dim);
  for (Index t = 0; t < len; ++t) {
    const auto& e = events[t];
    require(static_cast<Index>(e.action.size()) == tasks, ErrorKind::Shape, "event action length differs from M");
    require(static_cast<Index>(e.context.size()) == context_dim, ErrorKind::DimMismatch,
            "event context length differs from the context dim");
    seq.posts.push_back(e.post_features);
    for (Index m = 0; m < tasks; ++m) seq.actions(t, m) = e.action[m] ? 1.0f : 0.0f;
    for (Index k = 0; k < context_dim; ++k) seq.context(t, k) = e.context[k];
    seq.feed_positions.push_back(e.feed_position);
    seq.timestamps.push_back(e.timestamp);
    seq.sample_weights.push_back(e.sample_weight);
  }
  seq.loss_mask = incremental ? incremental_loss_mask(events) : std::vector<bool>(events.size(), true);
  return seq;
}

}  // namespace seqrank
