#pragma once

// Building model inputs from member histories: post encoding, action
// projection, item/action interleaving, session handling, truncation and
// negative down-sampling.

#include <cmath>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "seqrank/common.hpp"
#include "seqrank/feature_store.hpp"
#include "seqrank/random.hpp"

namespace seqrank {

inline constexpr std::int64_t kSessionGapSeconds = 1800;
inline constexpr std::size_t kDefaultMaxHistory = 1000;

struct InteractionEvent {
  FeatureRecord post_features;
  std::vector<std::uint8_t> action;  // multi-hot, length M
  std::int64_t timestamp = 0;
  std::int32_t feed_position = 1;
  std::int64_t session_id = -1;
  double sample_weight = 1.0;
  bool is_new = true;
  // Candidate-conditional features, consumed only by the late-fusion head.
  std::vector<float> context;

  bool clicked() const {
    for (auto a : action)
      if (a) return true;
    return false;
  }
};

/// Learnable tables for embedding-lookup features; entry f is empty for
/// features without one.
template <typename Scalar>
struct PostEncoderParams {
  std::vector<Mat<Scalar>> tables;
};

template <typename Scalar>
PostEncoderParams<Scalar> zero_like(const PostEncoderParams<Scalar>& p) {
  PostEncoderParams<Scalar> z;
  for (const auto& t : p.tables) z.tables.push_back(Mat<Scalar>::Zero(t.rows(), t.cols()));
  return z;
}

/// Row of an embedding table used for a categorical id.
inline Index embedding_row(const FeatureSpec& spec, std::int64_t id) { return hash_bucket(id, spec.vocab); }

namespace detail {

inline double checked_log1p(double x, const FeatureSpec& spec) {
  if (x < -1.0) throw Error(ErrorKind::Domain, "log1p input below -1 for feature '" + spec.name + "'");
  return std::log1p(x);
}

}  // namespace detail

/// Encodes T posts into a T x d_seq matrix. Multi-hot features go through
/// sparse_to_dense and a single product with their table.
template <typename Scalar>
Mat<Scalar> encode_posts(std::span<const FeatureRecord* const> posts, const FeatureSchema& schema,
                         const PostEncoderParams<Scalar>& params) {
  const Index t_count = static_cast<Index>(posts.size());
  Mat<Scalar> out(t_count, schema.encoded_dim());
  for (Index t = 0; t < t_count; ++t)
    require(posts[t]->size() == schema.size(), ErrorKind::SchemaMismatch, "post record does not match schema");
  Index col = 0;
  for (std::size_t f = 0; f < schema.size(); ++f) {
    const FeatureSpec& spec = schema[f];
    switch (spec.kind) {
      case FeatureKind::CategoricalId: {
        for (Index t = 0; t < t_count; ++t) {
          const auto* id = std::get_if<std::int64_t>(&(*posts[t])[f]);
          require(id != nullptr, ErrorKind::SchemaMismatch, "feature '" + spec.name + "' expects an id");
          if (spec.transform == Transform::EmbeddingLookup)
            out.row(t).segment(col, spec.dim) = params.tables[f].row(embedding_row(spec, *id));
          else if (spec.transform == Transform::Log1p)
            out(t, col) = Scalar(detail::checked_log1p(static_cast<double>(*id), spec));
          else
            out(t, col) = Scalar(*id);
        }
        break;
      }
      case FeatureKind::Numeric:
      case FeatureKind::DenseEmbedding: {
        for (Index t = 0; t < t_count; ++t) {
          const auto* v = std::get_if<std::vector<float>>(&(*posts[t])[f]);
          require(v != nullptr && static_cast<Index>(v->size()) == spec.dim, ErrorKind::SchemaMismatch,
                  "feature '" + spec.name + "' expects " + std::to_string(spec.dim) + " floats");
          for (Index k = 0; k < spec.dim; ++k) {
            const double x = (*v)[k];
            out(t, col + k) = Scalar(spec.transform == Transform::Log1p ? detail::checked_log1p(x, spec) : x);
          }
        }
        break;
      }
      case FeatureKind::MultiHotSparse: {
        SparseBatch batch;
        batch.vocab = spec.vocab;
        for (Index t = 0; t < t_count; ++t) {
          const auto* v = std::get_if<std::vector<std::int64_t>>(&(*posts[t])[f]);
          require(v != nullptr, ErrorKind::SchemaMismatch, "feature '" + spec.name + "' expects indices");
          batch.add_row(*v);
        }
        Mat<Scalar> dense = sparse_to_dense<Scalar>(batch, spec.vocab);
        if (spec.transform == Transform::EmbeddingLookup) {
          out.middleCols(col, spec.dim) = dense * params.tables[f];
        } else {
          require(spec.dim == spec.vocab, ErrorKind::Config, "raw multi-hot feature needs dim == vocab");
          out.middleCols(col, spec.dim) = dense;
        }
        break;
      }
    }
    col += spec.dim;
  }
  return out;
}

/// Single-post form: concat of every feature transform.
template <typename Scalar>
RowVec<Scalar> encode_post(const FeatureRecord& post, const FeatureSchema& schema,
                           const PostEncoderParams<Scalar>& params) {
  const FeatureRecord* p = &post;
  return encode_posts<Scalar>(std::span<const FeatureRecord* const>(&p, 1), schema, params).row(0);
}

/// Accumulates table gradients given dLoss/dX_seq for the same posts.
template <typename Scalar>
void encode_posts_backward(std::span<const FeatureRecord* const> posts, const FeatureSchema& schema,
                           const Mat<Scalar>& grad_out, PostEncoderParams<Scalar>& grads) {
  Index col = 0;
  for (std::size_t f = 0; f < schema.size(); ++f) {
    const FeatureSpec& spec = schema[f];
    if (spec.transform == Transform::EmbeddingLookup) {
      if (spec.kind == FeatureKind::CategoricalId) {
        for (Index t = 0; t < static_cast<Index>(posts.size()); ++t) {
          const auto id = std::get<std::int64_t>((*posts[t])[f]);
          grads.tables[f].row(embedding_row(spec, id)) += grad_out.row(t).segment(col, spec.dim);
        }
      } else {
        SparseBatch batch;
        batch.vocab = spec.vocab;
        for (const auto* p : posts) batch.add_row(std::get<std::vector<std::int64_t>>((*p)[f]));
        grads.tables[f].noalias() += sparse_to_dense<Scalar>(batch, spec.vocab).transpose() *
                                     grad_out.middleCols(col, spec.dim);
      }
    }
    col += spec.dim;
  }
}

/// Learnable action projection: A = a W_a + b_a.
template <typename Scalar>
struct ActionProjection {
  Mat<Scalar> weight;  // M x d_seq
  RowVec<Scalar> bias;  // d_seq
};

template <typename Scalar>
RowVec<Scalar> encode_action(const RowVec<Scalar>& action, const ActionProjection<Scalar>& proj) {
  require(action.size() == proj.weight.rows(), ErrorKind::Shape, "action vector length differs from M");
  return action * proj.weight + proj.bias;
}

/// T x M action matrix times the projection.
template <typename Scalar>
Mat<Scalar> encode_actions(const Mat<Scalar>& actions, const ActionProjection<Scalar>& proj) {
  require(actions.cols() == proj.weight.rows(), ErrorKind::Shape, "action matrix width differs from M");
  Mat<Scalar> out = actions * proj.weight;
  out.rowwise() += proj.bias;
  return out;
}

/// [X_1, A_1, X_2, A_2, ...]
template <typename Scalar>
Mat<Scalar> interleave(const Mat<Scalar>& items, const Mat<Scalar>& actions) {
  require(items.rows() == actions.rows() && items.cols() == actions.cols(), ErrorKind::Shape,
          "interleave: item and action matrices differ in shape");
  Mat<Scalar> out(2 * items.rows(), items.cols());
  out(Eigen::seq(0, Eigen::last, 2), Eigen::all) = items;
  out(Eigen::seq(1, Eigen::last, 2), Eigen::all) = actions;
  return out;
}

template <typename Scalar>
std::pair<Mat<Scalar>, Mat<Scalar>> deinterleave(const Mat<Scalar>& tokens) {
  require(tokens.rows() % 2 == 0, ErrorKind::Shape, "deinterleave: odd token count");
  return {tokens(Eigen::seq(0, Eigen::last, 2), Eigen::all), tokens(Eigen::seq(1, Eigen::last, 2), Eigen::all)};
}

/// Session ids from timestamp gaps: a gap above 1800 s starts a new session.
std::vector<InteractionEvent> assign_sessions(std::vector<InteractionEvent> events,
                                              std::int64_t max_gap_seconds = kSessionGapSeconds);

/// Uniformly permutes events inside each session; sessions keep their order.
std::vector<InteractionEvent> shuffle_within_sessions(std::vector<InteractionEvent> events, Rng& rng);

/// Most recent `max_len` events, still in chronological order.
std::vector<InteractionEvent> truncate_history(std::vector<InteractionEvent> events,
                                               std::size_t max_len = kDefaultMaxHistory);

/// Keeps clicked events at weight 1; keeps each non-clicked event with
/// probability `retain_p` and weight `neg_weight`.
std::vector<InteractionEvent> downsample_negatives(std::vector<InteractionEvent> events, double retain_p,
                                                   double neg_weight, Rng& rng);

}  // namespace seqrank
