#pragma once

// Pre-LN decoder block with rotary positions and scaled residuals, plus the
// reverse pass used for training.

#include <cmath>
#include <string>
#include <vector>

#include "seqrank/attention.hpp"
#include "seqrank/common.hpp"
#include "seqrank/random.hpp"

namespace seqrank {

enum class PositionalMode { Rope, LearnedAbsolute };
enum class ResidualMode { RescaleAndAdd, Vanilla, LayerScale, DenseGating };
enum class FfnActivation { Silu, Relu };

const char* to_string(PositionalMode m);
const char* to_string(ResidualMode m);
const char* to_string(FfnActivation a);
PositionalMode positional_mode_from_string(const std::string& s);
ResidualMode residual_mode_from_string(const std::string& s);
FfnActivation ffn_activation_from_string(const std::string& s);

inline constexpr double kLayerNormEps = 1e-5;

struct TransformerConfig {
  Index layers = 2;
  Index d_model = 64;
  Index heads = 4;
  Index ffn_hidden = 256;
  FfnActivation ffn_activation = FfnActivation::Silu;
  AttentionActivation attention = AttentionActivation::Softmax;
  PositionalMode positional = PositionalMode::Rope;
  ResidualMode residual = ResidualMode::RescaleAndAdd;
  double alpha_init = 1.0;
  double rope_theta = 10000.0;

  Index head_dim() const { return d_model / heads; }
  void validate() const;
};

// ---------------------------------------------------------------- LayerNorm

template <typename Scalar>
struct LayerNormCache {
  Mat<Scalar> normalized;  // (x - mean) * rstd
  Vec<Scalar> rstd;
};

/// Row-wise layer normalization of an n x d matrix.
template <typename Scalar>
Mat<Scalar> layer_norm(const Mat<Scalar>& x, const RowVec<Scalar>& gamma, const RowVec<Scalar>& beta,
                       LayerNormCache<Scalar>* cache = nullptr) {
  require(gamma.size() == x.cols() && beta.size() == x.cols(), ErrorKind::Shape, "layer_norm: parameter width");
  const Index d = x.cols();
  Vec<Scalar> mean = x.rowwise().mean();
  Mat<Scalar> centered = x.colwise() - mean;
  Vec<Scalar> var = centered.array().square().rowwise().sum() / Scalar(d);
  Vec<Scalar> rstd = (var.array() + Scalar(kLayerNormEps)).rsqrt();
  Mat<Scalar> normalized = centered.array().colwise() * rstd.array();
  Mat<Scalar> out = (normalized.array().rowwise() * gamma.array()).rowwise() + beta.array();
  if (cache) {
    cache->normalized = std::move(normalized);
    cache->rstd = std::move(rstd);
  }
  return out;
}

template <typename Scalar>
Mat<Scalar> layer_norm_backward(const Mat<Scalar>& grad_out, const RowVec<Scalar>& gamma,
                                const LayerNormCache<Scalar>& cache, RowVec<Scalar>& grad_gamma,
                                RowVec<Scalar>& grad_beta) {
  const Index d = grad_out.cols();
  grad_gamma += (grad_out.array() * cache.normalized.array()).colwise().sum().matrix();
  grad_beta += grad_out.colwise().sum();
  Mat<Scalar> gn = grad_out.array().rowwise() * gamma.array();
  Vec<Scalar> mean_g = gn.rowwise().sum() / Scalar(d);
  Vec<Scalar> mean_gx = (gn.array() * cache.normalized.array()).rowwise().sum() / Scalar(d);
  Mat<Scalar> out = gn.colwise() - mean_g;
  out -= (cache.normalized.array().colwise() * mean_gx.array()).matrix();
  return out.array().colwise() * cache.rstd.array();
}

// --------------------------------------------------------------------- RoPE

/// cos / sin of pos * theta^(-2k / d_h) for every token and pair k.
template <typename Scalar>
struct RopeTable {
  Mat<Scalar> cos, sin;  // n x d_h/2

  RopeTable(const std::vector<Index>& positions, Index head_dim, double theta) {
    require(head_dim % 2 == 0, ErrorKind::Config, "RoPE needs an even head dimension");
    const Index half = head_dim / 2;
    const Index n = static_cast<Index>(positions.size());
    cos.resize(n, half);
    sin.resize(n, half);
    for (Index k = 0; k < half; ++k) {
      const double freq = std::pow(theta, -2.0 * static_cast<double>(k) / static_cast<double>(head_dim));
      for (Index i = 0; i < n; ++i) {
        const double angle = static_cast<double>(positions[i]) * freq;
        cos(i, k) = Scalar(std::cos(angle));
        sin(i, k) = Scalar(std::sin(angle));
      }
    }
  }
};

/// Item token 2t and action token 2t+1 share position t.
inline std::vector<Index> paired_positions(Index tokens) {
  std::vector<Index> pos(tokens);
  for (Index i = 0; i < tokens; ++i) pos[i] = i / 2;
  return pos;
}

/// Rotates each (2k, 2k+1) pair of every head in place. `inverse` applies
/// the transpose rotation, which is also the reverse-mode map.
template <typename Scalar>
void rope_apply(Mat<Scalar>& x, const RopeTable<Scalar>& table, Index heads, bool inverse = false) {
  const Index dh = x.cols() / heads;
  const Index half = dh / 2;
  require(table.cos.rows() == x.rows() && table.cos.cols() == half, ErrorKind::Shape, "rope: table shape");
  for (Index h = 0; h < heads; ++h)
    for (Index k = 0; k < half; ++k) {
      auto a = x.col(h * dh + 2 * k);
      auto b = x.col(h * dh + 2 * k + 1);
      const auto c = table.cos.col(k).array();
      const auto s = inverse ? (-table.sin.col(k).array()).eval() : table.sin.col(k).array().eval();
      const Vec<Scalar> a0 = a;
      a = (a0.array() * c - b.array() * s).matrix();
      b = (a0.array() * s + b.array() * c).matrix();
    }
}

template <typename Scalar>
std::pair<Mat<Scalar>, Mat<Scalar>> rope_rotate(Mat<Scalar> q, Mat<Scalar> k, const std::vector<Index>& positions,
                                                Index heads, double theta = 10000.0) {
  require(heads >= 1 && q.cols() % heads == 0, ErrorKind::Config, "rope: d not divisible by head count");
  const RopeTable<Scalar> table(positions, q.cols() / heads, theta);
  rope_apply(q, table, heads);
  rope_apply(k, table, heads);
  return {std::move(q), std::move(k)};
}

// ---------------------------------------------------------------- Residuals

/// u + alpha * v
template <typename DerivedU, typename DerivedV, typename Scalar>
auto rescale_and_add(const Eigen::MatrixBase<DerivedU>& u, const Eigen::MatrixBase<DerivedV>& v, Scalar alpha) {
  return (u + alpha * v).eval();
}

template <typename Scalar>
struct ResidualParams {
  Mat<Scalar> alpha;       // 1 x 1, rescale-and-add
  RowVec<Scalar> scale;    // d, layer-scale
  Mat<Scalar> gate_w;      // d x d, dense gating
  RowVec<Scalar> gate_b;   // d, dense gating

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    if (alpha.size()) f(prefix + "alpha", alpha);
    if (scale.size()) f(prefix + "scale", scale);
    if (gate_w.size()) f(prefix + "gate_w", gate_w);
    if (gate_b.size()) f(prefix + "gate_b", gate_b);
  }
};

template <typename Scalar>
ResidualParams<Scalar> make_residual(ResidualMode mode, Index d, double alpha_init, Rng& rng) {
  ResidualParams<Scalar> p;
  switch (mode) {
    case ResidualMode::RescaleAndAdd: p.alpha = Mat<Scalar>::Constant(1, 1, Scalar(alpha_init)); break;
    case ResidualMode::Vanilla: break;
    case ResidualMode::LayerScale: p.scale = RowVec<Scalar>::Constant(d, Scalar(alpha_init)); break;
    case ResidualMode::DenseGating: {
      p.gate_w.resize(d, d);
      const double sd = 1.0 / std::sqrt(static_cast<double>(d));
      for (Index i = 0; i < p.gate_w.size(); ++i) p.gate_w.data()[i] = Scalar(sd * normal01(rng));
      p.gate_b = RowVec<Scalar>::Zero(d);
      break;
    }
  }
  return p;
}

template <typename Scalar>
struct ResidualCache {
  Mat<Scalar> gate;  // dense gating only
};

template <typename Scalar>
Mat<Scalar> residual_forward(ResidualMode mode, const Mat<Scalar>& u, const Mat<Scalar>& v,
                             const ResidualParams<Scalar>& p, ResidualCache<Scalar>* cache) {
  switch (mode) {
    case ResidualMode::RescaleAndAdd: return rescale_and_add(u, v, p.alpha(0, 0));
    case ResidualMode::Vanilla: return u + v;
    case ResidualMode::LayerScale: return u + (v.array().rowwise() * p.scale.array()).matrix();
    case ResidualMode::DenseGating: {
      Mat<Scalar> pre = u * p.gate_w;
      pre.rowwise() += p.gate_b;
      Mat<Scalar> gate = (Scalar(1) / (Scalar(1) + (-pre.array()).exp())).matrix();
      Mat<Scalar> out = u + gate.cwiseProduct(v);
      if (cache) cache->gate = std::move(gate);
      return out;
    }
  }
  return u + v;
}

/// Given dOut, returns dU and writes dV; parameter gradients accumulate.
template <typename Scalar>
Mat<Scalar> residual_backward(ResidualMode mode, const Mat<Scalar>& grad_out, const Mat<Scalar>& u,
                              const Mat<Scalar>& v, const ResidualParams<Scalar>& p,
                              const ResidualCache<Scalar>& cache, ResidualParams<Scalar>& grads, Mat<Scalar>& grad_v) {
  switch (mode) {
    case ResidualMode::RescaleAndAdd:
      grads.alpha(0, 0) += grad_out.cwiseProduct(v).sum();
      grad_v = p.alpha(0, 0) * grad_out;
      return grad_out;
    case ResidualMode::Vanilla:
      grad_v = grad_out;
      return grad_out;
    case ResidualMode::LayerScale:
      grads.scale += grad_out.cwiseProduct(v).colwise().sum();
      grad_v = grad_out.array().rowwise() * p.scale.array();
      return grad_out;
    case ResidualMode::DenseGating: {
      grad_v = cache.gate.cwiseProduct(grad_out);
      Mat<Scalar> grad_pre =
          (grad_out.array() * v.array() * cache.gate.array() * (Scalar(1) - cache.gate.array())).matrix();
      grads.gate_w.noalias() += u.transpose() * grad_pre;
      grads.gate_b += grad_pre.colwise().sum();
      return grad_out + grad_pre * p.gate_w.transpose();
    }
  }
  grad_v = grad_out;
  return grad_out;
}

// -------------------------------------------------------------------- Block

template <typename Scalar>
struct BlockParams {
  RowVec<Scalar> ln1_gamma, ln1_beta;
  Mat<Scalar> w_q, w_k, w_v, w_o;  // d x d, applied as x * W
  RowVec<Scalar> ln2_gamma, ln2_beta;
  Mat<Scalar> ffn_w1;  // d x hidden
  RowVec<Scalar> ffn_b1;
  Mat<Scalar> ffn_w2;  // hidden x d
  RowVec<Scalar> ffn_b2;
  ResidualParams<Scalar> res_attn, res_ffn;

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + "ln1.gamma", ln1_gamma);
    f(prefix + "ln1.beta", ln1_beta);
    f(prefix + "attn.w_q", w_q);
    f(prefix + "attn.w_k", w_k);
    f(prefix + "attn.w_v", w_v);
    f(prefix + "attn.w_o", w_o);
    res_attn.visit(prefix + "res_attn.", f);
    f(prefix + "ln2.gamma", ln2_gamma);
    f(prefix + "ln2.beta", ln2_beta);
    f(prefix + "ffn.w1", ffn_w1);
    f(prefix + "ffn.b1", ffn_b1);
    f(prefix + "ffn.w2", ffn_w2);
    f(prefix + "ffn.b2", ffn_b2);
    res_ffn.visit(prefix + "res_ffn.", f);
  }
};

namespace detail {

template <typename Scalar>
void fill_normal(Mat<Scalar>& m, Index rows, Index cols, double sd, Rng& rng) {
  m.resize(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = Scalar(sd * normal01(rng));
}

}  // namespace detail

template <typename Scalar>
BlockParams<Scalar> init_block(const TransformerConfig& cfg, Rng& rng) {
  const Index d = cfg.d_model, h = cfg.ffn_hidden;
  BlockParams<Scalar> p;
  p.ln1_gamma = RowVec<Scalar>::Ones(d);
  p.ln1_beta = RowVec<Scalar>::Zero(d);
  p.ln2_gamma = RowVec<Scalar>::Ones(d);
  p.ln2_beta = RowVec<Scalar>::Zero(d);
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  detail::fill_normal(p.w_q, d, d, sd, rng);
  detail::fill_normal(p.w_k, d, d, sd, rng);
  detail::fill_normal(p.w_v, d, d, sd, rng);
  detail::fill_normal(p.w_o, d, d, sd / std::sqrt(2.0 * static_cast<double>(cfg.layers)), rng);
  detail::fill_normal(p.ffn_w1, d, h, sd, rng);
  p.ffn_b1 = RowVec<Scalar>::Zero(h);
  detail::fill_normal(p.ffn_w2, h, d,
                      1.0 / std::sqrt(static_cast<double>(h)) / std::sqrt(2.0 * static_cast<double>(cfg.layers)), rng);
  p.ffn_b2 = RowVec<Scalar>::Zero(d);
  p.res_attn = make_residual<Scalar>(cfg.residual, d, cfg.alpha_init, rng);
  p.res_ffn = make_residual<Scalar>(cfg.residual, d, cfg.alpha_init, rng);
  return p;
}

/// Everything block_backward needs. The normalized sublayer inputs are kept
/// and double as the Pre-LN instrumentation hook.
template <typename Scalar>
struct BlockCache {
  Mat<Scalar> input;
  LayerNormCache<Scalar> ln1, ln2;
  Mat<Scalar> attn_in;  // LN1(x)
  Mat<Scalar> q_rot, k_rot, v;
  std::vector<Mat<Scalar>> weights;  // per head
  Mat<Scalar> heads_out;            // concatenated heads before W_o
  Mat<Scalar> attn;                 // after W_o
  ResidualCache<Scalar> res_attn, res_ffn;
  Mat<Scalar> y;
  Mat<Scalar> ffn_in;  // LN2(y)
  Mat<Scalar> ffn_pre, ffn_act, ffn_out;
};

namespace detail {

template <typename Scalar>
Mat<Scalar> ffn_activate(FfnActivation a, const Mat<Scalar>& x) {
  if (a == FfnActivation::Relu) return x.cwiseMax(Scalar(0));
  return (x.array() / (Scalar(1) + (-x.array()).exp())).matrix();
}

template <typename Scalar>
Mat<Scalar> ffn_activate_grad(FfnActivation a, const Mat<Scalar>& x) {
  if (a == FfnActivation::Relu) return (x.array() > Scalar(0)).template cast<Scalar>().matrix();
  auto g = (Scalar(1) / (Scalar(1) + (-x.array()).exp())).eval();
  return (g * (Scalar(1) + x.array() * (Scalar(1) - g))).matrix();
}

}  // namespace detail

/// How attention executes inside a block.
struct AttentionExec {
  AttentionPattern pattern;
  bool tiled = false;
  Index tile = 64;
};

/// One decoder block. Without a cache the attention may take the tiled path;
/// with a cache it always runs the dense path so weights are available.
template <typename Scalar>
Mat<Scalar> block_forward(const Mat<Scalar>& x, const BlockParams<Scalar>& p, const RopeTable<Scalar>* rope,
                          const AttentionExec& exec, const TransformerConfig& cfg, BlockCache<Scalar>* cache = nullptr) {
  require(x.cols() == cfg.d_model, ErrorKind::Shape, "block_forward: input width differs from d_model");
  require(x.rows() == exec.pattern.size(), ErrorKind::Shape, "block_forward: token count differs from L + N");
  LayerNormCache<Scalar> ln1;
  Mat<Scalar> xn = layer_norm(x, p.ln1_gamma, p.ln1_beta, cache ? &ln1 : nullptr);
  Mat<Scalar> q = xn * p.w_q, k = xn * p.w_k, v = xn * p.w_v;
  if (rope) {
    rope_apply(q, *rope, cfg.heads);
    rope_apply(k, *rope, cfg.heads);
  }
  Mat<Scalar> heads_out;
  std::vector<Mat<Scalar>> weights;
  if (!cache && exec.tiled) {
    heads_out = tiled_attention(q, k, v, exec.pattern, cfg.heads, exec.tile, cfg.attention);
  } else {
    const Mask mask = multi_item_mask(exec.pattern.context_length, exec.pattern.candidate_length);
    heads_out = masked_attention(q, k, v, mask, cfg.heads, cfg.attention, cache ? &weights : nullptr);
  }
  Mat<Scalar> attn = heads_out * p.w_o;
  ResidualCache<Scalar> rc_attn, rc_ffn;
  Mat<Scalar> y = residual_forward(cfg.residual, x, attn, p.res_attn, &rc_attn);

  LayerNormCache<Scalar> ln2;
  Mat<Scalar> yn = layer_norm(y, p.ln2_gamma, p.ln2_beta, cache ? &ln2 : nullptr);
  Mat<Scalar> pre = yn * p.ffn_w1;
  pre.rowwise() += p.ffn_b1;
  Mat<Scalar> act = detail::ffn_activate(cfg.ffn_activation, pre);
  Mat<Scalar> f = act * p.ffn_w2;
  f.rowwise() += p.ffn_b2;
  Mat<Scalar> z = residual_forward(cfg.residual, y, f, p.res_ffn, &rc_ffn);

  if (cache) {
    cache->input = x;
    cache->ln1 = std::move(ln1);
    cache->ln2 = std::move(ln2);
    cache->attn_in = std::move(xn);
    cache->q_rot = std::move(q);
    cache->k_rot = std::move(k);
    cache->v = std::move(v);
    cache->weights = std::move(weights);
    cache->heads_out = std::move(heads_out);
    cache->attn = std::move(attn);
    cache->res_attn = std::move(rc_attn);
    cache->res_ffn = std::move(rc_ffn);
    cache->y = std::move(y);
    cache->ffn_in = std::move(yn);
    cache->ffn_pre = std::move(pre);
    cache->ffn_act = std::move(act);
    cache->ffn_out = std::move(f);
  }
  return z;
}

/// Reverse pass of block_forward. Accumulates into `grads`, returns dX.
template <typename Scalar>
Mat<Scalar> block_backward(const Mat<Scalar>& grad_out, const BlockParams<Scalar>& p, const BlockCache<Scalar>& c,
                           const RopeTable<Scalar>* rope, const AttentionExec& exec, const TransformerConfig& cfg,
                           BlockParams<Scalar>& g) {
  // FFN sublayer.
  Mat<Scalar> grad_f;
  Mat<Scalar> grad_y = residual_backward(cfg.residual, grad_out, c.y, c.ffn_out, p.res_ffn, c.res_ffn, g.res_ffn, grad_f);
  g.ffn_w2.noalias() += c.ffn_act.transpose() * grad_f;
  g.ffn_b2 += grad_f.colwise().sum();
  Mat<Scalar> grad_pre = (grad_f * p.ffn_w2.transpose()).cwiseProduct(detail::ffn_activate_grad(cfg.ffn_activation, c.ffn_pre));
  g.ffn_w1.noalias() += c.ffn_in.transpose() * grad_pre;
  g.ffn_b1 += grad_pre.colwise().sum();
  grad_y += layer_norm_backward<Scalar>(grad_pre * p.ffn_w1.transpose(), p.ln2_gamma, c.ln2, g.ln2_gamma, g.ln2_beta);

  // Attention sublayer.
  Mat<Scalar> grad_attn;
  Mat<Scalar> grad_x = residual_backward(cfg.residual, grad_y, c.input, c.attn, p.res_attn, c.res_attn, g.res_attn, grad_attn);
  g.w_o.noalias() += c.heads_out.transpose() * grad_attn;
  const Mat<Scalar> grad_heads = grad_attn * p.w_o.transpose();

  const Index n = c.input.rows(), d = cfg.d_model, dh = cfg.head_dim();
  const Scalar scale = Scalar(1) / std::sqrt(Scalar(dh));
  Mat<Scalar> grad_q(n, d), grad_k(n, d), grad_v(n, d);
  const bool softmax = cfg.attention == AttentionActivation::Softmax;
  Mask mask;
  if (!softmax) mask = multi_item_mask(exec.pattern.context_length, exec.pattern.candidate_length);
  for (Index h = 0; h < cfg.heads; ++h) {
    const auto go = grad_heads.middleCols(h * dh, dh);
    const Mat<Scalar>& w = c.weights[h];
    Mat<Scalar> grad_w = go * c.v.middleCols(h * dh, dh).transpose();
    grad_v.middleCols(h * dh, dh).noalias() = w.transpose() * go;
    Mat<Scalar> grad_s;
    if (softmax) {
      Vec<Scalar> row_dot = grad_w.cwiseProduct(w).rowwise().sum();
      grad_s = w.cwiseProduct(grad_w.colwise() - row_dot);
    } else {
      Mat<Scalar> scores = (c.q_rot.middleCols(h * dh, dh) * c.k_rot.middleCols(h * dh, dh).transpose()) * scale;
      grad_s = Mat<Scalar>::Zero(n, n);
      for (Index i = 0; i < n; ++i) {
        Index count = 0;
        for (Index j = 0; j < n; ++j) count += mask(i, j);
        if (count == 0) continue;
        for (Index j = 0; j < n; ++j)
          if (mask(i, j)) grad_s(i, j) = grad_w(i, j) * detail::activate_grad(cfg.attention, scores(i, j)) / Scalar(count);
      }
    }
    grad_s *= scale;
    grad_q.middleCols(h * dh, dh).noalias() = grad_s * c.k_rot.middleCols(h * dh, dh);
    grad_k.middleCols(h * dh, dh).noalias() = grad_s.transpose() * c.q_rot.middleCols(h * dh, dh);
  }
  if (rope) {
    rope_apply(grad_q, *rope, cfg.heads, /*inverse=*/true);
    rope_apply(grad_k, *rope, cfg.heads, /*inverse=*/true);
  }
  g.w_q.noalias() += c.attn_in.transpose() * grad_q;
  g.w_k.noalias() += c.attn_in.transpose() * grad_k;
  g.w_v.noalias() += c.attn_in.transpose() * grad_v;
  Mat<Scalar> grad_xn = grad_q * p.w_q.transpose() + grad_k * p.w_k.transpose() + grad_v * p.w_v.transpose();
  grad_x += layer_norm_backward<Scalar>(grad_xn, p.ln1_gamma, c.ln1, g.ln1_gamma, g.ln1_beta);
  return grad_x;
}

/// Keeps rows 0, 2, ..., 2T-2 (the item tokens).
template <typename Scalar>
Mat<Scalar> discard_action_positions(const Mat<Scalar>& z) {
  require(z.rows() % 2 == 0, ErrorKind::Shape, "discard_action_positions: odd row count");
  return z(Eigen::seq(0, Eigen::last, 2), Eigen::all);
}

}  // namespace seqrank
