#pragma once

// Loss weighting (position / timestamp decay, inverse propensity, negative
// sample weights), the weighted multi-task BCE, and the Adam training step.

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "seqrank/common.hpp"
#include "seqrank/model.hpp"

namespace seqrank {

struct LossConfig {
  // Propensity per feed position (rows, 1-based) and task (columns). Empty
  // means uniform propensity 1.
  Mat<double> ipw_table;
  bool ipw_per_task = false;  // false: every task uses the click column
  double neg_weight = 10.0;
  bool position_decay = true;
  bool timestamp_decay = true;
  double half_life_days = 60.0;
  std::int64_t reference_timestamp = 0;
  double clamp_min = 1e-4;
  double clamp_max = 1.0;
  bool incremental = false;

  void validate() const;
};

/// 2^(-(T - t) / (T - 1)): 0.5 at t = 1 and 1.0 at t = T. Always 1 for T = 1.
double position_weight(Index t, Index length);

/// clamp(2^(-age_days / half_life), lo, hi) for a sample at `ts`.
double timestamp_weight(std::int64_t ts, std::int64_t reference_ts, double half_life_days = 60.0,
                        double clamp_min = 1e-4, double clamp_max = 1.0);

/// 1 / propensity; positions past the table weigh 1.
double ipw_weight(int position, Index task, const Mat<double>& table);

/// Divides by the mean so the result has mean exactly 1 (up to rounding).
std::vector<double> batch_normalize_weights(std::vector<double> weights);

std::vector<bool> incremental_loss_mask(std::span<const InteractionEvent> events);

/// Per-(t, m) loss weights for every sequence in a batch, normalized to mean
/// 1 over the unmasked entries of the whole batch.
std::vector<Mat<double>> batch_loss_weights(std::span<const TrainingSequence> batch, const LossConfig& cfg, Index tasks);

/// Number of unmasked (t, m) entries in the batch.
Index unmasked_entries(std::span<const TrainingSequence> batch, Index tasks);

/// Sum over unmasked (t, m) of w * BCE(sigmoid(logit), label). `grad`, when
/// given, receives d(sum)/d(logits) scaled by `grad_scale`.
template <typename Scalar>
double weighted_bce_sum(const Mat<Scalar>& logits, const Mat<float>& labels, const Mat<double>& weights,
                        const std::vector<bool>& mask, Mat<Scalar>* grad = nullptr, double grad_scale = 1.0) {
  require(logits.rows() == labels.rows() && logits.cols() == labels.cols() && weights.rows() == logits.rows() &&
              weights.cols() == logits.cols() && static_cast<Index>(mask.size()) == logits.rows(),
          ErrorKind::Shape, "weighted_bce: shapes differ");
  if (grad) grad->setZero(logits.rows(), logits.cols());
  double total = 0.0;
  for (Index t = 0; t < logits.rows(); ++t) {
    if (!mask[t]) continue;
    for (Index m = 0; m < logits.cols(); ++m) {
      const double x = static_cast<double>(logits(t, m));
      if (std::isnan(x)) throw Error(ErrorKind::Numeric, "NaN logit at (" + std::to_string(t) + ", " + std::to_string(m) + ")");
      const double y = labels(t, m);
      const double w = weights(t, m);
      total += w * (std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x))));
      if (grad) (*grad)(t, m) = Scalar(grad_scale * w * (1.0 / (1.0 + std::exp(-x)) - y));
    }
  }
  return total;
}

/// Mean over unmasked entries of the weighted BCE.
template <typename Scalar>
double weighted_bce(const Mat<Scalar>& logits, const Mat<float>& labels, const Mat<double>& weights,
                    const std::vector<bool>& mask) {
  Index count = 0;
  for (bool b : mask) count += b;
  if (count == 0) throw Error(ErrorKind::DegenerateBatch, "weighted_bce: every position is masked");
  return weighted_bce_sum(logits, labels, weights, mask) / static_cast<double>(count * logits.cols());
}

template <typename Scalar>
struct LossAndGradient {
  double loss = 0.0;
  ModelParams<Scalar> grad;
  std::vector<Mat<Scalar>> logits;  // per sequence
};

/// Batch loss and its gradient. Gate dropout draws from an RNG seeded with
/// `dropout_seed`, so repeated calls see the same dropout pattern.
template <typename Scalar>
LossAndGradient<Scalar> loss_and_gradient(const ModelParams<Scalar>& params, std::span<const TrainingSequence> batch,
                                          const ModelConfig& model_cfg, const LossConfig& loss_cfg,
                                          std::uint64_t dropout_seed, bool with_gradient = true) {
  const Index tasks = model_cfg.tasks();
  const Index count = unmasked_entries(batch, tasks);
  if (count == 0) throw Error(ErrorKind::DegenerateBatch, "every position in the batch is masked");
  const auto weights = batch_loss_weights(batch, loss_cfg, tasks);
  LossAndGradient<Scalar> out;
  if (with_gradient) out.grad = zeros_like(params);
  Rng rng(dropout_seed);
  double total = 0.0;
  for (std::size_t s = 0; s < batch.size(); ++s) {
    const TrainingSequence& seq = batch[s];
    if (seq.length() == 0) {
      out.logits.emplace_back(0, tasks);
      continue;
    }
    ForwardCache<Scalar> cache;
    Mat<Scalar> logits = forward_train(seq, params, model_cfg, HeadMode::Train, &rng, with_gradient ? &cache : nullptr);
    Mat<Scalar> grad_logits;
    total += weighted_bce_sum(logits, seq.actions, weights[s], seq.loss_mask, with_gradient ? &grad_logits : nullptr,
                              1.0 / static_cast<double>(count));
    if (with_gradient) backward_train(seq, grad_logits, params, model_cfg, cache, out.grad);
    out.logits.push_back(std::move(logits));
  }
  out.loss = total / static_cast<double>(count);
  if (!std::isfinite(out.loss)) throw Error(ErrorKind::Numeric, "non-finite loss");
  return out;
}

struct OptimizerConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 0.0;  // global gradient-norm clip, 0 disables
};

template <typename Scalar>
struct TrainState {
  ModelParams<Scalar> params;
  ModelParams<Scalar> first_moment, second_moment;
  std::uint64_t step = 0;
  Rng rng;

  TrainState(ModelParams<Scalar> p, std::uint64_t seed)
      : params(std::move(p)), first_moment(zeros_like(params)), second_moment(zeros_like(params)), rng(seed) {}
};

template <typename Scalar>
void adam_update(TrainState<Scalar>& state, ModelParams<Scalar>& grad, const OptimizerConfig& opt) {
  ++state.step;
  auto p = param_slots(state.params);
  auto g = param_slots(grad);
  auto m = param_slots(state.first_moment);
  auto v = param_slots(state.second_moment);
  double scale = 1.0;
  if (opt.clip_norm > 0.0) {
    double sq = 0.0;
    for (const auto& s : g)
      for (Index k = 0; k < s.size(); ++k) sq += static_cast<double>(s.data[k]) * static_cast<double>(s.data[k]);
    const double norm = std::sqrt(sq);
    if (norm > opt.clip_norm) scale = opt.clip_norm / norm;
  }
  const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < p.size(); ++i)
    for (Index k = 0; k < p[i].size(); ++k) {
      const double gk = scale * static_cast<double>(g[i].data[k]);
      const double mk = opt.beta1 * static_cast<double>(m[i].data[k]) + (1.0 - opt.beta1) * gk;
      const double vk = opt.beta2 * static_cast<double>(v[i].data[k]) + (1.0 - opt.beta2) * gk * gk;
      m[i].data[k] = Scalar(mk);
      v[i].data[k] = Scalar(vk);
      p[i].data[k] -= Scalar(opt.lr * (mk / bc1) / (std::sqrt(vk / bc2) + opt.eps));
    }
}

struct StepResult {
  double loss = 0.0;
  // Per-task mean predicted probability and mean label over unmasked positions.
  std::vector<double> mean_prediction, mean_label;
};

/// Forward, loss, backward and one Adam update.
template <typename Scalar>
StepResult train_step(TrainState<Scalar>& state, std::span<const TrainingSequence> batch, const ModelConfig& model_cfg,
                      const LossConfig& loss_cfg, const OptimizerConfig& opt) {
  const std::uint64_t dropout_seed = state.rng();
  auto lg = loss_and_gradient(state.params, batch, model_cfg, loss_cfg, dropout_seed);
  const Index tasks = model_cfg.tasks();
  StepResult r{lg.loss, std::vector<double>(tasks, 0.0), std::vector<double>(tasks, 0.0)};
  double rows = 0;
  for (std::size_t s = 0; s < batch.size(); ++s) {
    const Mat<Scalar> probs = predict_probabilities(lg.logits[s]);
    for (Index t = 0; t < batch[s].length(); ++t) {
      if (!batch[s].loss_mask[t]) continue;
      ++rows;
      for (Index m = 0; m < tasks; ++m) {
        r.mean_prediction[m] += static_cast<double>(probs(t, m));
        r.mean_label[m] += batch[s].actions(t, m);
      }
    }
  }
  for (Index m = 0; m < tasks; ++m) {
    r.mean_prediction[m] /= rows;
    r.mean_label[m] /= rows;
  }
  adam_update(state, lg.grad, opt);
  return r;
}

}  // namespace seqrank
