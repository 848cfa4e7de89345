#include "seqrank/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "seqrank/random.hpp"

namespace seqrank {

namespace {

constexpr std::int64_t kStartTimestamp = 1'600'000'000;
constexpr std::int64_t kActorIdBase = 100'000;

struct TaskModel {
  double base;
  std::array<double, kPlantedFeatures> coef;
  double latent;
};

// click, longDwell, like, comment, share, skip. Extra tasks reuse the click row.
constexpr std::array<TaskModel, 6> kTaskModels{{
    {-1.3, {0.9, 0.8, 0.5, 0.35, -0.35, 1.0}, 1.0},
    {-1.1, {0.8, 1.1, 0.9, 0.3, -0.25, 1.0}, 1.0},
    {-2.4, {1.0, 0.9, 0.6, 0.45, -0.3, 1.0}, 0.8},
    {-3.0, {1.1, 0.6, 0.5, 0.4, -0.3, 1.0}, 0.6},
    {-3.2, {0.9, 0.7, 0.4, 0.55, -0.3, 1.0}, 0.6},
    {-1.4, {-0.6, -0.8, -0.7, -0.2, 0.3, -0.5}, -0.8},
}};

const TaskModel& task_model(Index m) { return kTaskModels[m < 6 ? m : 0]; }

constexpr double kLatentScale = 2.5;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct Post {
  std::int64_t actor = 0;
  std::vector<double> latent;  // preference space
  std::vector<float> content;
  std::vector<std::int64_t> topics;
  double quality = 0.0;
  double likes = 0.0;
  double comments = 0.0;
  bool reshare = false;
};

}  // namespace

void SyntheticConfig::validate() const {
  require(members > 0 && actors > 0 && posts > 0 && content_dim > 0 && preference_dim > 0 && topics > 0 &&
              actor_table > 0 && tasks > 0,
          ErrorKind::Config, "synthetic counts must be positive");
  require(rho >= 0.0 && rho <= 1.0, ErrorKind::Config, "rho must lie in [0, 1]");
  require(affinity_sparsity > 0.0 && affinity_sparsity <= 1.0, ErrorKind::Config,
          "affinity_sparsity must lie in (0, 1]");
  require(sessions_per_day > 0.0 && session_length_mean >= 1.0 && time_span_days > 0.0, ErrorKind::Config,
          "session settings must be positive");
  require(length_median >= 1.0 && length_sigma >= 0.0 && min_length >= 2 && max_length >= min_length,
          ErrorKind::Config, "history length settings are inconsistent");
}

Index SyntheticDataset::event_count() const {
  Index n = 0;
  for (const auto& m : members) n += static_cast<Index>(m.events.size());
  return n;
}

FeatureSchema synthetic_schema(Index d_model, const SyntheticConfig& cfg) {
  const Index topic_dim = 4;
  const Index actor_dim = d_model - cfg.content_dim - topic_dim - 2;
  require(actor_dim >= 1, ErrorKind::Config,
          "d_model " + std::to_string(d_model) + " too small for a " + std::to_string(cfg.content_dim) +
              "-dim content embedding");
  return FeatureSchema({
      {"actor_id", FeatureKind::CategoricalId, actor_dim, Transform::EmbeddingLookup, cfg.actor_table},
      {"content", FeatureKind::DenseEmbedding, cfg.content_dim, Transform::Identity, 0},
      {"topics", FeatureKind::MultiHotSparse, topic_dim, Transform::EmbeddingLookup, cfg.topics},
      {"post_age_hours", FeatureKind::Numeric, 1, Transform::Log1p, 0},
      {"is_reshare", FeatureKind::Numeric, 1, Transform::Identity, 0},
  });
}

// affinity, root affinity, log likes, log comments, 4 dwell buckets, post
// age, network strength, then the profile embedding.
Index synthetic_context_dim(const SyntheticConfig& cfg) { return 10 + cfg.preference_dim; }

double planted_logit(const SyntheticConfig& cfg, Index task, std::span<const double> planted) {
  const TaskModel& tm = task_model(task);
  double z = tm.base;
  for (Index k = 0; k < kPlantedFeatures; ++k) z += cfg.signal * tm.coef[k] * planted[k];
  return z;
}

SyntheticDataset synth_generate(const SyntheticConfig& cfg, Index d_model) {
  cfg.validate();
  Rng rng(cfg.seed);
  const Index k_pref = cfg.preference_dim;
  const double pref_norm = 1.0 / std::sqrt(static_cast<double>(k_pref));

  SyntheticDataset ds;
  ds.schema = synthetic_schema(d_model, cfg);
  ds.context_dim = synthetic_context_dim(cfg);
  const std::vector<std::string> names{"click", "longDwell", "like", "comment", "share", "skip"};
  for (Index m = 0; m < cfg.tasks; ++m) ds.task_names.push_back(m < 6 ? names[m] : "task" + std::to_string(m));
  ds.start_timestamp = kStartTimestamp;

  // Content embedding = G * latent + noise.
  Mat<double> g(cfg.content_dim, k_pref);
  for (Index i = 0; i < g.size(); ++i) g.data()[i] = normal01(rng) * pref_norm;

  std::vector<Post> posts(cfg.posts);
  std::vector<std::vector<Index>> by_actor(cfg.actors);
  for (Index i = 0; i < cfg.posts; ++i) {
    Post& p = posts[i];
    const Index a = static_cast<Index>(uniform_index(rng, cfg.actors));
    p.actor = kActorIdBase + a;
    by_actor[a].push_back(i);
    p.latent.resize(k_pref);
    for (auto& v : p.latent) v = normal01(rng);
    Vec<double> lat = Eigen::Map<const Vec<double>>(p.latent.data(), k_pref);
    Vec<double> c = g * lat;
    p.content.resize(cfg.content_dim);
    for (Index k = 0; k < cfg.content_dim; ++k) p.content[k] = static_cast<float>(c(k) + 0.1 * normal01(rng));
    const Index n_topics = 1 + static_cast<Index>(uniform_index(rng, 3));
    for (Index t = 0; t < n_topics; ++t) {
      const auto topic = static_cast<std::int64_t>(uniform_index(rng, cfg.topics));
      if (std::find(p.topics.begin(), p.topics.end(), topic) == p.topics.end()) p.topics.push_back(topic);
    }
    p.quality = normal01(rng);
    p.likes = std::floor(std::exp(1.5 + 0.8 * p.quality + 0.5 * normal01(rng)));
    p.comments = std::floor(0.15 * p.likes * uniform01(rng));
    p.reshare = bernoulli(rng, 0.2);
  }

  const Index follows = std::max<Index>(1, static_cast<Index>(std::lround(cfg.affinity_sparsity * cfg.actors)));
  const double span_seconds = cfg.time_span_days * 86400.0;
  const double sigma = kLatentScale * cfg.rho;
  const double innovation = std::sqrt(std::max(0.0, 1.0 - cfg.rho * cfg.rho));
  std::int64_t last_ts = kStartTimestamp;

  for (Index u = 0; u < cfg.members; ++u) {
    MemberHistory mh;
    mh.member_id = u;
    std::vector<double> pref(k_pref);
    for (auto& v : pref) v = normal01(rng);
    const double bias = 0.6 * normal01(rng);
    std::vector<double> affinity(cfg.actors, 0.0);
    std::vector<Index> followed;
    while (static_cast<Index>(followed.size()) < follows) {
      const Index a = static_cast<Index>(uniform_index(rng, cfg.actors));
      if (affinity[a] > 0.0) continue;
      affinity[a] = 0.5 + 1.5 * uniform01(rng);
      followed.push_back(a);
    }

    // History length and session sizes.
    double len = cfg.length_median * std::exp(cfg.length_sigma * normal01(rng));
    const Index target = std::clamp<Index>(static_cast<Index>(std::lround(len)), cfg.min_length, cfg.max_length);
    std::vector<Index> sizes;
    Index total = 0;
    while (total < target) {
      double u01 = uniform01(rng);
      while (u01 <= 0.0) u01 = uniform01(rng);
      Index s = 1 + static_cast<Index>(std::floor(-std::log(u01) * (cfg.session_length_mean - 1.0)));
      s = std::min(s, target - total);
      sizes.push_back(s);
      total += s;
    }
    // Sessions arrive at sessions_per_day over the most recent part of the span.
    const double active = std::min(span_seconds, 86400.0 * static_cast<double>(sizes.size()) / cfg.sessions_per_day);
    std::vector<double> starts(sizes.size());
    for (auto& s : starts) s = span_seconds - active * uniform01(rng);
    std::sort(starts.begin(), starts.end());

    mh.planted.resize(total, kPlantedFeatures);
    std::int64_t clock = kStartTimestamp - 1'000'000;
    Index row = 0;
    for (std::size_t s = 0; s < sizes.size(); ++s) {
      std::int64_t ts = std::max<std::int64_t>(kStartTimestamp + static_cast<std::int64_t>(starts[s]),
                                               clock + kSessionGapSeconds + 1 + static_cast<std::int64_t>(uniform_index(rng, 600)));
      double latent = sigma * normal01(rng);
      for (Index k = 0; k < sizes[s]; ++k) {
        if (k > 0) {
          ts += 5 + static_cast<std::int64_t>(uniform_index(rng, 116));
          latent = cfg.rho * latent + innovation * sigma * normal01(rng);
        }
        // Half the impressions come from followed actors.
        Index post_idx;
        if (bernoulli(rng, 0.5)) {
          const Index a = followed[uniform_index(rng, followed.size())];
          post_idx = by_actor[a].empty() ? static_cast<Index>(uniform_index(rng, cfg.posts))
                                         : by_actor[a][uniform_index(rng, by_actor[a].size())];
        } else {
          post_idx = static_cast<Index>(uniform_index(rng, cfg.posts));
        }
        const Post& p = posts[post_idx];
        const Index a = p.actor - kActorIdBase;
        const int position = static_cast<int>(k + 1);
        const double age_hours = -std::log(std::max(uniform01(rng), 1e-12)) * 48.0;

        double pref_dot = 0.0;
        for (Index j = 0; j < k_pref; ++j) pref_dot += pref[j] * p.latent[j];
        pref_dot *= pref_norm;
        const double planted[kPlantedFeatures] = {affinity[a], pref_dot, p.quality, std::log1p(p.likes) - 1.5,
                                                  std::log(static_cast<double>(position)), bias};
        for (Index j = 0; j < kPlantedFeatures; ++j) mh.planted(row, j) = planted[j];

        InteractionEvent e;
        e.post_features = {p.actor, p.content, p.topics, std::vector<float>{static_cast<float>(age_hours)},
                           std::vector<float>{p.reshare ? 1.0f : 0.0f}};
        e.timestamp = ts;
        e.feed_position = position;
        e.action.resize(cfg.tasks);
        for (Index m = 0; m < cfg.tasks; ++m) {
          const double z = planted_logit(cfg, m, planted) + task_model(m).latent * latent;
          e.action[m] = bernoulli(rng, sigmoid(z)) ? 1 : 0;
        }
        e.context.resize(ds.context_dim);
        const double root_aff = p.reshare ? affinity[uniform_index(rng, cfg.actors)] : affinity[a];
        e.context[0] = static_cast<float>(affinity[a]);
        e.context[1] = static_cast<float>(root_aff);
        e.context[2] = static_cast<float>(std::log1p(p.likes));
        e.context[3] = static_cast<float>(std::log1p(p.comments));
        double dwell[4], dsum = 0.0;
        for (int b = 0; b < 4; ++b) dsum += dwell[b] = std::exp(p.quality * (b - 1.5));
        for (int b = 0; b < 4; ++b) e.context[4 + b] = static_cast<float>(dwell[b] / dsum);
        e.context[8] = static_cast<float>(age_hours / 24.0 / 30.0);
        e.context[9] = static_cast<float>((affinity[a] > 0.0 ? 1.0 : 0.0) + 0.3 * normal01(rng));
        for (Index j = 0; j < k_pref; ++j) e.context[10 + j] = static_cast<float>(pref[j] + 0.3 * normal01(rng));

        mh.events.push_back(std::move(e));
        mh.session_latent.push_back(latent);
        ++row;
      }
      clock = ts;
    }
    mh.events = assign_sessions(std::move(mh.events));
    last_ts = std::max(last_ts, clock);
    ds.members.push_back(std::move(mh));
  }
  ds.end_timestamp = last_ts;
  return ds;
}

MemberSplit split_last_session(const MemberHistory& member) {
  MemberSplit out;
  const auto& ev = member.events;
  if (ev.empty()) return out;
  const std::int64_t last_session = ev.back().session_id;
  std::size_t cut = ev.size();
  while (cut > 0 && ev[cut - 1].session_id == last_session) --cut;
  if (cut == 0) cut = ev.size();  // one session: training only
  out.train.assign(ev.begin(), ev.begin() + static_cast<std::ptrdiff_t>(cut));
  out.eval.assign(ev.begin() + static_cast<std::ptrdiff_t>(cut), ev.end());
  const Index n_train = static_cast<Index>(cut);
  if (member.planted.rows() != static_cast<Index>(ev.size())) return out;  // loaded from disk
  out.train_planted = member.planted.topRows(n_train);
  out.eval_planted = member.planted.bottomRows(member.planted.rows() - n_train);
  return out;
}

}  // namespace seqrank
