#pragma once

// Multi-item scoring attention: the (context, candidate) mask predicate, the
// dense masked reference path and the tiled streaming-softmax path that
// skips tiles the mask rules out entirely.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "seqrank/common.hpp"

namespace seqrank {

enum class AttentionActivation { Softmax, Sigmoid, Silu, Relu };

const char* to_string(AttentionActivation a);
AttentionActivation attention_activation_from_string(const std::string& s);

using Mask = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// Context tokens [0, L) attend causally; candidate tokens [L, L+N) attend
/// to every context token and to themselves.
struct AttentionPattern {
  Index context_length = 0;
  Index candidate_length = 0;

  Index size() const { return context_length + candidate_length; }

  bool allowed(Index i, Index j) const {
    return i < context_length ? j <= i : (j < context_length || j == i);
  }

  /// True if some (i, j) with i in [q0, q1), j in [k0, k1) is allowed.
  bool any_allowed(Index q0, Index q1, Index k0, Index k1) const {
    if (q0 >= q1 || k0 >= k1) return false;
    const Index ctx_end = std::min(q1, context_length);
    if (q0 < ctx_end && k0 <= ctx_end - 1) return true;
    const Index cand_begin = std::max(q0, context_length);
    if (cand_begin < q1) {
      if (k0 < context_length) return true;
      if (std::max(cand_begin, k0) < std::min(q1, k1)) return true;
    }
    return false;
  }

  /// True if every (i, j) in the rectangle is allowed.
  bool all_allowed(Index q0, Index q1, Index /*k0*/, Index k1) const {
    if (q1 <= context_length) return k1 - 1 <= q0;
    if (q0 >= context_length) return k1 <= context_length;
    return false;
  }
};

inline Mask multi_item_mask(Index context_length, Index candidate_length) {
  const AttentionPattern p{context_length, candidate_length};
  const Index n = p.size();
  Mask m(n, n);
  for (Index j = 0; j < n; ++j)
    for (Index i = 0; i < n; ++i) m(i, j) = p.allowed(i, j);
  return m;
}

namespace detail {

template <typename Scalar>
Scalar activate(AttentionActivation a, Scalar s) {
  switch (a) {
    case AttentionActivation::Sigmoid: return Scalar(1) / (Scalar(1) + std::exp(-s));
    case AttentionActivation::Silu: return s / (Scalar(1) + std::exp(-s));
    case AttentionActivation::Relu: return s > Scalar(0) ? s : Scalar(0);
    case AttentionActivation::Softmax: break;
  }
  return s;
}

template <typename Scalar>
Scalar activate_grad(AttentionActivation a, Scalar s) {
  switch (a) {
    case AttentionActivation::Sigmoid: {
      const Scalar g = Scalar(1) / (Scalar(1) + std::exp(-s));
      return g * (Scalar(1) - g);
    }
    case AttentionActivation::Silu: {
      const Scalar g = Scalar(1) / (Scalar(1) + std::exp(-s));
      return g * (Scalar(1) + s * (Scalar(1) - g));
    }
    case AttentionActivation::Relu: return s > Scalar(0) ? Scalar(1) : Scalar(0);
    case AttentionActivation::Softmax: break;
  }
  return Scalar(1);
}

}  // namespace detail

/// Attention weights for one head given raw scores (already scaled).
/// Softmax rows normalize over allowed entries; the other activations are
/// divided by the number of allowed entries in the row. Rows with nothing
/// allowed are zero.
template <typename Scalar>
Mat<Scalar> attention_weights(const Mat<Scalar>& scores, const Mask& mask, AttentionActivation activation) {
  const Index n = scores.rows();
  Mat<Scalar> w = Mat<Scalar>::Zero(n, scores.cols());
  if (activation == AttentionActivation::Softmax) {
    const Scalar neg_inf = -std::numeric_limits<Scalar>::infinity();
    Mat<Scalar> masked = mask.select(scores, Mat<Scalar>::Constant(n, scores.cols(), neg_inf));
    for (Index i = 0; i < n; ++i) {
      const Scalar m = masked.row(i).maxCoeff();
      if (m == neg_inf) continue;
      w.row(i) = (masked.row(i).array() - m).exp().matrix();
      w.row(i) /= w.row(i).sum();
    }
  } else {
    for (Index i = 0; i < n; ++i) {
      Index count = 0;
      for (Index j = 0; j < scores.cols(); ++j)
        if (mask(i, j)) {
          w(i, j) = detail::activate(activation, scores(i, j));
          ++count;
        }
      if (count > 0) w.row(i) /= Scalar(count);
    }
  }
  return w;
}

/// Dense reference path: materializes the scores and the mask for every
/// head. `weights_out`, when given, receives the per-head weight matrices.
template <typename Scalar>
Mat<Scalar> masked_attention(const Mat<Scalar>& q, const Mat<Scalar>& k, const Mat<Scalar>& v, const Mask& mask,
                             Index heads, AttentionActivation activation = AttentionActivation::Softmax,
                             std::vector<Mat<Scalar>>* weights_out = nullptr) {
  const Index n = q.rows(), d = q.cols();
  require(k.rows() == n && v.rows() == n && k.cols() == d && v.cols() == d, ErrorKind::Shape,
          "masked_attention: q/k/v shapes differ");
  require(mask.rows() == n && mask.cols() == n, ErrorKind::Shape, "masked_attention: mask is not n x n");
  require(heads >= 1 && d % heads == 0, ErrorKind::Config, "masked_attention: d not divisible by head count");
  const Index dh = d / heads;
  const Scalar scale = Scalar(1) / std::sqrt(Scalar(dh));
  Mat<Scalar> out(n, d);
  if (weights_out) weights_out->resize(heads);
  for (Index h = 0; h < heads; ++h) {
    Mat<Scalar> scores = (q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose()) * scale;
    Mat<Scalar> w = attention_weights(scores, mask, activation);
    out.middleCols(h * dh, dh).noalias() = w * v.middleCols(h * dh, dh);
    if (weights_out) (*weights_out)[h] = std::move(w);
  }
  return out;
}

struct TileStats {
  std::size_t visited = 0;
  std::size_t skipped = 0;
};

/// Streaming-softmax attention over square tiles of `tile` tokens. The mask
/// is never materialized: each (query tile, key tile) pair is classified
/// from its corner indices as skipped, fully allowed, or partial, and only
/// partial tiles test individual entries.
template <typename Scalar>
Mat<Scalar> tiled_attention(const Mat<Scalar>& q, const Mat<Scalar>& k, const Mat<Scalar>& v,
                            const AttentionPattern& pattern, Index heads, Index tile,
                            AttentionActivation activation = AttentionActivation::Softmax,
                            TileStats* stats = nullptr) {
  require(tile >= 1, ErrorKind::Config, "tiled_attention: tile size must be >= 1");
  const Index n = q.rows(), d = q.cols();
  require(n == pattern.size(), ErrorKind::Shape, "tiled_attention: token count differs from L + N");
  require(k.rows() == n && v.rows() == n && k.cols() == d && v.cols() == d, ErrorKind::Shape,
          "tiled_attention: q/k/v shapes differ");
  require(heads >= 1 && d % heads == 0, ErrorKind::Config, "tiled_attention: d not divisible by head count");
  const Index dh = d / heads;
  const Scalar scale = Scalar(1) / std::sqrt(Scalar(dh));
  const Scalar neg_inf = -std::numeric_limits<Scalar>::infinity();
  const bool softmax = activation == AttentionActivation::Softmax;

  // Keys pre-transposed once so each tile product reads contiguous columns.
  const Mat<Scalar> kt = k.transpose();
  Mat<Scalar> out(n, d);
  Mat<Scalar> acc, s;
  Mat<Scalar> row_max, row_sum;  // bq x heads
  for (Index q0 = 0; q0 < n; q0 += tile) {
    const Index bq = std::min(tile, n - q0);
    acc.setZero(bq, d);
    row_max.setConstant(bq, heads, neg_inf);
    row_sum.setZero(bq, heads);
    for (Index k0 = 0; k0 < n; k0 += tile) {
      const Index bk = std::min(tile, n - k0);
      if (!pattern.any_allowed(q0, q0 + bq, k0, k0 + bk)) {
        if (stats) ++stats->skipped;
        continue;
      }
      if (stats) ++stats->visited;
      const bool full = pattern.all_allowed(q0, q0 + bq, k0, k0 + bk);
      for (Index h = 0; h < heads; ++h) {
        s.noalias() = q.block(q0, h * dh, bq, dh) * kt.block(h * dh, k0, dh, bk);
        s *= scale;
        if (softmax) {
          if (!full)
            for (Index c = 0; c < bk; ++c)
              for (Index r = 0; r < bq; ++r)
                if (!pattern.allowed(q0 + r, k0 + c)) s(r, c) = neg_inf;
          for (Index r = 0; r < bq; ++r) {
            const Scalar m_old = row_max(r, h);
            const Scalar m_new = std::max(m_old, s.row(r).maxCoeff());
            if (m_new == neg_inf) {
              s.row(r).setZero();
              continue;
            }
            const Scalar correction = m_old == neg_inf ? Scalar(0) : std::exp(m_old - m_new);
            s.row(r) = (s.row(r).array() - m_new).exp().matrix();
            row_sum(r, h) = row_sum(r, h) * correction + s.row(r).sum();
            row_max(r, h) = m_new;
            if (correction != Scalar(1)) acc.block(r, h * dh, 1, dh) *= correction;
          }
        } else {
          for (Index c = 0; c < bk; ++c)
            for (Index r = 0; r < bq; ++r) {
              if (full || pattern.allowed(q0 + r, k0 + c)) {
                s(r, c) = detail::activate(activation, s(r, c));
                if (h == 0) row_sum(r, 0) += Scalar(1);
              } else {
                s(r, c) = Scalar(0);
              }
            }
        }
        acc.middleCols(h * dh, dh).noalias() += s * v.block(k0, h * dh, bk, dh);
      }
    }
    for (Index h = 0; h < heads; ++h)
      for (Index r = 0; r < bq; ++r) {
        const Scalar denom = softmax ? row_sum(r, h) : row_sum(r, 0);
        if (denom > Scalar(0))
          out.block(q0 + r, h * dh, 1, dh) = acc.block(r, h * dh, 1, dh) / denom;
        else
          out.block(q0 + r, h * dh, 1, dh).setZero();
      }
  }
  return out;
}

}  // namespace seqrank
