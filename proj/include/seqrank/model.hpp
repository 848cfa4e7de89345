#pragma once

// The full ranking model: post/action encoders, interleaved transformer
// stack, late-fusion head and position offsets. Training runs over one
// member sequence at a time (pattern L = 2T, N = 0); serving appends N
// candidate item tokens to the 2T history tokens.

#include <optional>
#include <string>
#include <vector>

#include "seqrank/attention.hpp"
#include "seqrank/common.hpp"
#include "seqrank/feature_store.hpp"
#include "seqrank/head.hpp"
#include "seqrank/random.hpp"
#include "seqrank/sequence_builder.hpp"
#include "seqrank/transformer.hpp"

namespace seqrank {

struct ModelConfig {
  FeatureSchema schema;  // sequence (per-item) features
  std::vector<std::string> task_names{"click", "longDwell", "like", "comment", "share", "skip"};
  Index context_dim = 0;
  Index max_history = 128;
  TransformerConfig transformer;
  HeadConfig head;
  bool tiled_serving = true;
  Index tile = 64;
  int inference_position = kInferencePosition;

  Index tasks() const { return static_cast<Index>(task_names.size()); }
  int task_index(const std::string& name) const;
  void validate() const;
};

/// Default active / passive grouping: like, comment, share are active.
std::vector<int> default_task_groups(const std::vector<std::string>& task_names);

template <typename Scalar>
struct ModelParams {
  PostEncoderParams<Scalar> encoder;
  ActionProjection<Scalar> action;
  Mat<Scalar> abs_pos;  // learned-absolute positional mode only
  std::vector<BlockParams<Scalar>> blocks;
  HeadParams<Scalar> head;
  Mat<Scalar> position_offsets;  // 60 x M

  template <typename F>
  void visit(F&& f) {
    for (std::size_t i = 0; i < encoder.tables.size(); ++i)
      if (encoder.tables[i].size()) f("encoder.table" + std::to_string(i), encoder.tables[i]);
    f(std::string("action.weight"), action.weight);
    f(std::string("action.bias"), action.bias);
    if (abs_pos.size()) f(std::string("abs_pos"), abs_pos);
    for (std::size_t l = 0; l < blocks.size(); ++l) blocks[l].visit("block" + std::to_string(l) + ".", f);
    head.visit("head.", f);
    f(std::string("position_offsets"), position_offsets);
  }
};

template <typename Scalar>
struct ParamSlot {
  std::string name;
  Scalar* data;
  Index rows, cols;
  Index size() const { return rows * cols; }
};

template <typename Scalar>
std::vector<ParamSlot<Scalar>> param_slots(ModelParams<Scalar>& p) {
  std::vector<ParamSlot<Scalar>> out;
  p.visit([&](const std::string& name, auto& m) { out.push_back({name, m.data(), m.rows(), m.cols()}); });
  return out;
}

template <typename Scalar>
ModelParams<Scalar> zeros_like(const ModelParams<Scalar>& p) {
  ModelParams<Scalar> z = p;
  z.visit([](const std::string&, auto& m) { m.setZero(); });
  return z;
}

template <typename Scalar>
ModelParams<Scalar> init_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  const Index d = cfg.transformer.d_model, m = cfg.tasks();
  ModelParams<Scalar> p;
  for (const auto& spec : cfg.schema.features()) {
    Mat<Scalar> table;
    if (spec.transform == Transform::EmbeddingLookup) detail::fill_normal(table, spec.vocab, spec.dim, 0.3, rng);
    p.encoder.tables.push_back(std::move(table));
  }
  detail::fill_normal(p.action.weight, m, d, 0.3, rng);
  p.action.bias = RowVec<Scalar>::Zero(d);
  if (cfg.transformer.positional == PositionalMode::LearnedAbsolute)
    detail::fill_normal(p.abs_pos, 2 * cfg.max_history, d, 0.1, rng);
  for (Index l = 0; l < cfg.transformer.layers; ++l) p.blocks.push_back(init_block<Scalar>(cfg.transformer, rng));
  p.head = init_head<Scalar>(cfg.head, d + cfg.context_dim, m, rng);
  p.position_offsets = Mat<Scalar>::Zero(kPositionOffsetRows, m);
  return p;
}

template <typename To, typename From>
ModelParams<To> cast_params(const ModelParams<From>& src, const ModelConfig& cfg) {
  ModelParams<To> out = init_model<To>(cfg, 0);
  auto from = param_slots(const_cast<ModelParams<From>&>(src));
  auto to = param_slots(out);
  require(from.size() == to.size(), ErrorKind::Shape, "cast_params: parameter layouts differ");
  for (std::size_t i = 0; i < to.size(); ++i) {
    require(from[i].size() == to[i].size(), ErrorKind::Shape, "cast_params: size of " + to[i].name);
    for (Index k = 0; k < to[i].size(); ++k) to[i].data[k] = To(from[i].data[k]);
  }
  return out;
}

/// One member's training sequence, already in model-input form.
struct TrainingSequence {
  std::vector<FeatureRecord> posts;
  Mat<float> actions;  // T x M, also the labels
  Mat<float> context;  // T x d_ctx
  std::vector<int> feed_positions;
  std::vector<std::int64_t> timestamps;
  std::vector<double> sample_weights;
  std::vector<bool> loss_mask;

  Index length() const { return static_cast<Index>(posts.size()); }
};

/// Incremental mode masks the loss to events flagged is_new; otherwise every
/// position contributes.
TrainingSequence make_training_sequence(const std::vector<InteractionEvent>& events, Index tasks, Index context_dim,
                                        bool incremental = false);

/// X_seq, A_seq and their interleaving for a training sequence.
template <typename Scalar>
struct EncodedSequence {
  Mat<Scalar> items;    // T x d
  Mat<Scalar> actions;  // T x d
  Mat<Scalar> tokens;   // 2T x d
};

template <typename Scalar>
std::vector<const FeatureRecord*> record_ptrs(const std::vector<FeatureRecord>& posts) {
  std::vector<const FeatureRecord*> out;
  out.reserve(posts.size());
  for (const auto& p : posts) out.push_back(&p);
  return out;
}

template <typename Scalar>
EncodedSequence<Scalar> encode_sequence(const TrainingSequence& seq, const ModelConfig& cfg,
                                        const ModelParams<Scalar>& p) {
  EncodedSequence<Scalar> e;
  const auto ptrs = record_ptrs<Scalar>(seq.posts);
  e.items = encode_posts<Scalar>(ptrs, cfg.schema, p.encoder);
  e.actions = encode_actions<Scalar>(seq.actions.cast<Scalar>(), p.action);
  e.tokens = interleave(e.items, e.actions);
  return e;
}

template <typename Scalar>
struct ForwardCache {
  EncodedSequence<Scalar> encoded;
  std::vector<BlockCache<Scalar>> blocks;
  HeadCache<Scalar> head;
  AttentionExec exec;
  std::vector<Index> positions;
};

namespace detail {

template <typename Scalar>
void add_absolute_positions(Mat<Scalar>& tokens, const Mat<Scalar>& table, const std::vector<Index>& index) {
  for (Index i = 0; i < tokens.rows(); ++i)
    tokens.row(i) += table.row(std::min<Index>(index[i], table.rows() - 1));
}

}  // namespace detail

/// Runs the transformer stack over `tokens` (already encoded) with the given
/// RoPE positions; absolute-table indices are the token indices, with
/// candidate tokens using `candidate_index`.
template <typename Scalar>
Mat<Scalar> transformer_forward(Mat<Scalar> tokens, const std::vector<Index>& rope_positions,
                                const std::vector<Index>& table_index, const ModelParams<Scalar>& p,
                                const ModelConfig& cfg, const AttentionExec& exec,
                                std::vector<BlockCache<Scalar>>* caches = nullptr) {
  const auto& tc = cfg.transformer;
  if (tc.positional == PositionalMode::LearnedAbsolute) detail::add_absolute_positions(tokens, p.abs_pos, table_index);
  std::optional<RopeTable<Scalar>> rope;
  if (tc.positional == PositionalMode::Rope) rope.emplace(rope_positions, tc.head_dim(), tc.rope_theta);
  if (caches) caches->resize(p.blocks.size());
  for (std::size_t l = 0; l < p.blocks.size(); ++l)
    tokens = block_forward(tokens, p.blocks[l], rope ? &*rope : nullptr, exec, tc, caches ? &(*caches)[l] : nullptr);
  return tokens;
}

/// Training-mode forward: T x M logits at every history position, including
/// the per-position logit offsets for the shown feed positions.
template <typename Scalar>
Mat<Scalar> forward_train(const TrainingSequence& seq, const ModelParams<Scalar>& p, const ModelConfig& cfg,
                          HeadMode mode, Rng* rng = nullptr, ForwardCache<Scalar>* cache = nullptr) {
  const Index t_len = seq.length();
  require(seq.context.rows() == t_len && seq.context.cols() == cfg.context_dim, ErrorKind::DimMismatch,
          "context features do not match the model's context dim");
  ForwardCache<Scalar> local;
  ForwardCache<Scalar>& c = cache ? *cache : local;
  c.encoded = encode_sequence(seq, cfg, p);
  c.exec = AttentionExec{AttentionPattern{2 * t_len, 0}, false, cfg.tile};
  c.positions = paired_positions(2 * t_len);
  std::vector<Index> table_index(2 * t_len);
  for (Index i = 0; i < 2 * t_len; ++i) table_index[i] = i;
  Mat<Scalar> z = transformer_forward(c.encoded.tokens, c.positions, table_index, p, cfg, c.exec,
                                      cache ? &c.blocks : nullptr);
  Mat<Scalar> fused = late_fuse<Scalar>(discard_action_positions(z), seq.context.cast<Scalar>());
  Mat<Scalar> logits = head_forward(fused, p.head, cfg.head, mode, rng, cache ? &c.head : nullptr);
  for (Index t = 0; t < t_len; ++t)
    add_position_offset(logits.row(t), seq.feed_positions[t], p.position_offsets);
  return logits;
}

/// Reverse pass of forward_train; accumulates parameter gradients.
template <typename Scalar>
void backward_train(const TrainingSequence& seq, const Mat<Scalar>& grad_logits, const ModelParams<Scalar>& p,
                    const ModelConfig& cfg, const ForwardCache<Scalar>& c, ModelParams<Scalar>& g) {
  const Index t_len = seq.length(), d = cfg.transformer.d_model;
  for (Index t = 0; t < t_len; ++t) {
    const int pos = seq.feed_positions[t];
    if (pos <= g.position_offsets.rows()) g.position_offsets.row(pos - 1) += grad_logits.row(t);
  }
  Mat<Scalar> grad_fused = head_backward(grad_logits, p.head, cfg.head, c.head, g.head);
  Mat<Scalar> grad_tokens = Mat<Scalar>::Zero(2 * t_len, d);
  grad_tokens(Eigen::seq(0, Eigen::last, 2), Eigen::all) = grad_fused.leftCols(d);

  std::optional<RopeTable<Scalar>> rope;
  if (cfg.transformer.positional == PositionalMode::Rope)
    rope.emplace(c.positions, cfg.transformer.head_dim(), cfg.transformer.rope_theta);
  for (Index l = static_cast<Index>(p.blocks.size()) - 1; l >= 0; --l)
    grad_tokens = block_backward(grad_tokens, p.blocks[l], c.blocks[l], rope ? &*rope : nullptr, c.exec, cfg.transformer,
                                 g.blocks[l]);
  if (cfg.transformer.positional == PositionalMode::LearnedAbsolute)
    for (Index i = 0; i < 2 * t_len; ++i) g.abs_pos.row(std::min<Index>(i, g.abs_pos.rows() - 1)) += grad_tokens.row(i);

  auto [grad_items, grad_actions] = deinterleave(grad_tokens);
  g.action.weight.noalias() += seq.actions.cast<Scalar>().transpose() * grad_actions;
  g.action.bias += grad_actions.colwise().sum();
  const auto ptrs = record_ptrs<Scalar>(seq.posts);
  encode_posts_backward<Scalar>(ptrs, cfg.schema, grad_items, g.encoder);
}

/// Serving input: a member history plus N candidates.
struct ServingInput {
  std::vector<FeatureRecord> history_posts;
  Mat<float> history_actions;  // T x M
  std::vector<FeatureRecord> candidate_posts;
  Mat<float> candidate_context;  // N x d_ctx
};

/// Transformer outputs for the candidates in one pass: context = 2T
/// interleaved history tokens, followed by N item-only candidate tokens that
/// all take RoPE position T.
template <typename Scalar>
Mat<Scalar> candidate_representations(const ServingInput& in, const ModelParams<Scalar>& p, const ModelConfig& cfg,
                                      bool tiled) {
  const Index t_len = static_cast<Index>(in.history_posts.size());
  const Index n_cand = static_cast<Index>(in.candidate_posts.size());
  const Index d = cfg.transformer.d_model;
  Mat<Scalar> tokens(2 * t_len + n_cand, d);
  if (t_len > 0) {
    const auto hist = record_ptrs<Scalar>(in.history_posts);
    tokens.topRows(2 * t_len) = interleave(encode_posts<Scalar>(hist, cfg.schema, p.encoder),
                                           encode_actions<Scalar>(in.history_actions.cast<Scalar>(), p.action));
  }
  const auto cand = record_ptrs<Scalar>(in.candidate_posts);
  tokens.bottomRows(n_cand) = encode_posts<Scalar>(cand, cfg.schema, p.encoder);
  std::vector<Index> positions = paired_positions(2 * t_len), table_index(2 * t_len + n_cand);
  positions.resize(2 * t_len + n_cand, t_len);
  for (Index i = 0; i < 2 * t_len + n_cand; ++i) table_index[i] = i < 2 * t_len ? i : 2 * t_len;
  const AttentionExec exec{AttentionPattern{2 * t_len, n_cand}, tiled, cfg.tile};
  Mat<Scalar> z = transformer_forward(std::move(tokens), positions, table_index, p, cfg, exec);
  return z.bottomRows(n_cand);
}

/// N x M logits for the candidates at the fixed inference position.
template <typename Scalar>
Mat<Scalar> forward_serve(const ServingInput& in, const ModelParams<Scalar>& p, const ModelConfig& cfg) {
  const Index n_cand = static_cast<Index>(in.candidate_posts.size());
  if (n_cand == 0) return Mat<Scalar>(0, cfg.tasks());
  require(in.candidate_context.rows() == n_cand && in.candidate_context.cols() == cfg.context_dim,
          ErrorKind::DimMismatch, "candidate context features do not match the model's context dim");
  require(in.history_actions.rows() == static_cast<Index>(in.history_posts.size()) &&
              (in.history_posts.empty() || in.history_actions.cols() == cfg.tasks()),
          ErrorKind::Shape, "history actions do not match the history");
  Mat<Scalar> z = candidate_representations(in, p, cfg, cfg.tiled_serving);
  Mat<Scalar> logits =
      head_forward(late_fuse<Scalar>(z, in.candidate_context.cast<Scalar>()), p.head, cfg.head, HeadMode::Infer);
  for (Index i = 0; i < n_cand; ++i)
    add_position_offset(logits.row(i), cfg.inference_position, p.position_offsets);
  return logits;
}

/// Dense parameters: everything except embedding tables.
template <typename Scalar>
Index dense_parameter_count(ModelParams<Scalar>& p) {
  Index n = 0;
  for (const auto& s : param_slots(p))
    if (s.name.rfind("encoder.", 0) != 0 && s.name != "abs_pos") n += s.size();
  return n;
}

}  // namespace seqrank
