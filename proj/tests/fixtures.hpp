#pragma once

#include <map>
#include <string>
#include <vector>

#include "seqrank/harness.hpp"
#include "seqrank/model.hpp"
#include "seqrank/random.hpp"
#include "seqrank/training.hpp"
#include "support.hpp"

namespace seqrank::testing {

// A small but complete model: hashed id, dense, multi-hot and numeric post
// features, six tasks, MMoE head.
inline ModelConfig tiny_model(Index d_model = 16, Index layers = 2, HeadKind head = HeadKind::Mmoe) {
  ModelConfig c;
  const Index dense = d_model >= 16 ? 4 : 2, topics = 2;
  c.schema = FeatureSchema({
      {"actor_id", FeatureKind::CategoricalId, d_model - dense - topics - 2, Transform::EmbeddingLookup, 13},
      {"content", FeatureKind::DenseEmbedding, dense, Transform::Identity, 0},
      {"topics", FeatureKind::MultiHotSparse, topics, Transform::EmbeddingLookup, 6},
      {"age", FeatureKind::Numeric, 1, Transform::Log1p, 0},
      {"reshare", FeatureKind::Numeric, 1, Transform::Identity, 0},
  });
  c.context_dim = 3;
  c.max_history = 64;
  c.transformer.layers = layers;
  c.transformer.d_model = d_model;
  c.transformer.heads = 2;
  c.transformer.ffn_hidden = 2 * d_model;
  c.head.kind = head;
  c.head.experts = 3;
  c.head.expert_hidden = 8;
  c.head.mlp_hidden = 8;
  c.head.gate_dropout = 0.2;
  if (head == HeadKind::Mmoe) c.head.task_group = default_task_groups(c.task_names);
  c.tile = 4;
  return c;
}

inline FeatureRecord tiny_post(const ModelConfig& cfg, Rng& rng) {
  FeatureRecord r = random_post(cfg.schema, rng);
  // keep multi-hot ids inside the vocab and ids small enough to collide sometimes
  r[0] = static_cast<std::int64_t>(uniform_index(rng, 40));
  auto& topics = std::get<std::vector<std::int64_t>>(r[2]);
  for (auto& v : topics) v %= cfg.schema[2].vocab;
  std::sort(topics.begin(), topics.end());
  topics.erase(std::unique(topics.begin(), topics.end()), topics.end());
  return r;
}

inline std::vector<InteractionEvent> tiny_events(const ModelConfig& cfg, Index length, Rng& rng,
                                                 std::int64_t start = 1'700'000'000) {
  std::vector<InteractionEvent> ev;
  std::int64_t ts = start;
  for (Index t = 0; t < length; ++t) {
    InteractionEvent e;
    e.post_features = tiny_post(cfg, rng);
    e.action.resize(cfg.tasks());
    for (auto& a : e.action) a = bernoulli(rng, 0.35);
    ts += bernoulli(rng, 0.2) ? 4000 : 60;
    e.timestamp = ts;
    e.feed_position = 1 + static_cast<int>(uniform_index(rng, 12));
    for (Index k = 0; k < cfg.context_dim; ++k) e.context.push_back(static_cast<float>(normal01(rng)));
    ev.push_back(std::move(e));
  }
  return assign_sessions(std::move(ev));
}

inline LossConfig tiny_loss(const std::vector<TrainingSequence>& batch) {
  LossConfig l;
  std::int64_t ref = 0;
  for (const auto& s : batch)
    for (auto ts : s.timestamps) ref = std::max(ref, ts);
  l.reference_timestamp = ref + 86400 * 3;
  l.half_life_days = 0.05;  // make the decay visible over the short spans above
  l.ipw_table = Mat<double>::Constant(12, 6, 0.5);
  for (Index p = 0; p < 12; ++p) l.ipw_table.row(p).setConstant(1.0 / (1.0 + 0.2 * static_cast<double>(p)));
  l.ipw_per_task = true;
  return l;
}

struct FdReport {
  std::map<std::string, double> worst;  // per parameter group
  double overall = 0.0;
  std::string worst_group;
};

// Central differences of `loss` against `grad` for every entry of every
// parameter group, with the model in double precision.
template <typename LossFn>
FdReport model_fd(ModelParams<double>& params, ModelParams<double>& grad, const LossFn& loss, double step = 1e-6) {
  FdReport r;
  auto ps = param_slots(params);
  auto gs = param_slots(grad);
  for (std::size_t s = 0; s < ps.size(); ++s) {
    Eigen::Map<Mat<double>> pm(ps[s].data, ps[s].size(), 1);
    const Mat<double> gm = Eigen::Map<Mat<double>>(gs[s].data, gs[s].size(), 1);
    const double w = fd_worst(pm, gm, std::function<double()>(loss), step);
    r.worst[ps[s].name] = w;
    if (w >= r.overall) {
      r.overall = w;
      r.worst_group = ps[s].name;
    }
  }
  return r;
}

}  // namespace seqrank::testing
