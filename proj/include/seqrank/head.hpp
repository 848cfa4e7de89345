#pragma once

// Late-fusion prediction heads (linear, MLP, DCNv2 cross network, MMoE with
// grouped gates and gate dropout) and per-position logit offsets.

#include <cmath>
#include <string>
#include <vector>

#include "seqrank/common.hpp"
#include "seqrank/random.hpp"

namespace seqrank {

enum class HeadKind { Linear, Mlp, Dcnv2, Mmoe };
enum class HeadMode { Train, Infer };

const char* to_string(HeadKind k);
HeadKind head_kind_from_string(const std::string& s);

inline constexpr Index kPositionOffsetRows = 60;
inline constexpr int kInferencePosition = 5;

struct HeadConfig {
  HeadKind kind = HeadKind::Mmoe;
  Index mlp_hidden = 64;
  Index cross_layers = 2;
  Index experts = 4;
  Index expert_hidden = 64;
  double gate_dropout = 0.1;
  // Gate group of each task; groups are numbered from 0.
  std::vector<int> task_group;

  Index group_count() const;
  void validate(Index tasks) const;
};

/// z first, then the context features.
template <typename Scalar>
Mat<Scalar> late_fuse(const Mat<Scalar>& z, const Mat<Scalar>& context) {
  require(z.rows() == context.rows() || context.cols() == 0, ErrorKind::Shape, "late_fuse: row counts differ");
  Mat<Scalar> out(z.rows(), z.cols() + context.cols());
  out << z, context;
  return out;
}

template <typename Scalar>
RowVec<Scalar> late_fuse(const RowVec<Scalar>& z, const RowVec<Scalar>& context) {
  RowVec<Scalar> out(z.size() + context.size());
  out << z, context;
  return out;
}

template <typename Scalar>
struct HeadParams {
  // linear: out_w / out_b only. mlp: hidden_w / hidden_b + out_w / out_b.
  // dcnv2: cross_w[l] / cross_b[l] + out_w / out_b.
  Mat<Scalar> hidden_w;
  RowVec<Scalar> hidden_b;
  std::vector<Mat<Scalar>> cross_w;
  std::vector<RowVec<Scalar>> cross_b;
  // mmoe
  std::vector<Mat<Scalar>> expert_w;
  std::vector<RowVec<Scalar>> expert_b;
  std::vector<Mat<Scalar>> gate_w;
  std::vector<RowVec<Scalar>> gate_b;
  // Shared output layer; for mmoe column m is task m's affine map.
  Mat<Scalar> out_w;
  RowVec<Scalar> out_b;

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    if (hidden_w.size()) {
      f(prefix + "hidden_w", hidden_w);
      f(prefix + "hidden_b", hidden_b);
    }
    for (std::size_t l = 0; l < cross_w.size(); ++l) {
      f(prefix + "cross" + std::to_string(l) + ".w", cross_w[l]);
      f(prefix + "cross" + std::to_string(l) + ".b", cross_b[l]);
    }
    for (std::size_t e = 0; e < expert_w.size(); ++e) {
      f(prefix + "expert" + std::to_string(e) + ".w", expert_w[e]);
      f(prefix + "expert" + std::to_string(e) + ".b", expert_b[e]);
    }
    for (std::size_t g = 0; g < gate_w.size(); ++g) {
      f(prefix + "gate" + std::to_string(g) + ".w", gate_w[g]);
      f(prefix + "gate" + std::to_string(g) + ".b", gate_b[g]);
    }
    f(prefix + "out_w", out_w);
    f(prefix + "out_b", out_b);
  }
};

template <typename Scalar>
HeadParams<Scalar> init_head(const HeadConfig& cfg, Index in_dim, Index tasks, Rng& rng) {
  cfg.validate(tasks);
  auto normal = [&](Index r, Index c, double sd) {
    Mat<Scalar> m(r, c);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = Scalar(sd * normal01(rng));
    return m;
  };
  const double sd_in = 1.0 / std::sqrt(static_cast<double>(in_dim));
  HeadParams<Scalar> p;
  Index out_in = in_dim;
  switch (cfg.kind) {
    case HeadKind::Linear: break;
    case HeadKind::Mlp:
      p.hidden_w = normal(in_dim, cfg.mlp_hidden, sd_in);
      p.hidden_b = RowVec<Scalar>::Zero(cfg.mlp_hidden);
      out_in = cfg.mlp_hidden;
      break;
    case HeadKind::Dcnv2:
      for (Index l = 0; l < cfg.cross_layers; ++l) {
        p.cross_w.push_back(normal(in_dim, in_dim, 0.1 * sd_in));
        p.cross_b.push_back(RowVec<Scalar>::Zero(in_dim));
      }
      break;
    case HeadKind::Mmoe:
      for (Index e = 0; e < cfg.experts; ++e) {
        p.expert_w.push_back(normal(in_dim, cfg.expert_hidden, sd_in));
        p.expert_b.push_back(RowVec<Scalar>::Zero(cfg.expert_hidden));
      }
      for (Index g = 0; g < cfg.group_count(); ++g) {
        p.gate_w.push_back(normal(in_dim, cfg.experts, 0.1 * sd_in));
        p.gate_b.push_back(RowVec<Scalar>::Zero(cfg.experts));
      }
      out_in = cfg.expert_hidden;
      break;
  }
  p.out_w = normal(out_in, tasks, 1.0 / std::sqrt(static_cast<double>(out_in)));
  p.out_b = RowVec<Scalar>::Zero(tasks);
  return p;
}

namespace detail {

template <typename Scalar>
Mat<Scalar> silu(const Mat<Scalar>& x) {
  return (x.array() / (Scalar(1) + (-x.array()).exp())).matrix();
}

template <typename Scalar>
Mat<Scalar> silu_grad(const Mat<Scalar>& x) {
  auto g = (Scalar(1) / (Scalar(1) + (-x.array()).exp())).eval();
  return (g * (Scalar(1) + x.array() * (Scalar(1) - g))).matrix();
}

template <typename Scalar>
Mat<Scalar> affine(const Mat<Scalar>& x, const Mat<Scalar>& w, const RowVec<Scalar>& b) {
  Mat<Scalar> out = x * w;
  out.rowwise() += b;
  return out;
}

}  // namespace detail

template <typename Scalar>
struct HeadCache {
  Mat<Scalar> input;
  Mat<Scalar> pre;                      // mlp pre-activation
  std::vector<Mat<Scalar>> cross_in;    // x_l for each cross layer
  std::vector<Mat<Scalar>> cross_lin;   // x_l W_l + b_l
  Mat<Scalar> out_in;                   // input to the output layer (non-mmoe)
  std::vector<Mat<Scalar>> expert_pre, expert_out;
  std::vector<Mat<Scalar>> gates_raw;   // post-softmax, per group
  std::vector<Mat<Scalar>> gate_keep;   // dropout keep mask (0/1), per group
  std::vector<Mat<Scalar>> gates;       // final, per group
  std::vector<Mat<Scalar>> mixed;       // per group combination of experts
};

/// Post-softmax gates for every group (before dropout). Rows are examples.
template <typename Scalar>
std::vector<Mat<Scalar>> mmoe_gates(const Mat<Scalar>& x, const HeadParams<Scalar>& p) {
  std::vector<Mat<Scalar>> out;
  for (std::size_t g = 0; g < p.gate_w.size(); ++g) {
    Mat<Scalar> logits = detail::affine(x, p.gate_w[g], p.gate_b[g]);
    Vec<Scalar> mx = logits.rowwise().maxCoeff();
    Mat<Scalar> e = (logits.colwise() - mx).array().exp().matrix();
    Vec<Scalar> sum = e.rowwise().sum();
    out.push_back(e.array().colwise() / sum.array());
  }
  return out;
}

/// Forward over rows of fused inputs, returning rows x M logits. In train
/// mode each post-softmax gate is dropped with probability gate_dropout and
/// the survivors are renormalized to sum to one.
template <typename Scalar>
Mat<Scalar> head_forward(const Mat<Scalar>& x, const HeadParams<Scalar>& p, const HeadConfig& cfg, HeadMode mode,
                         Rng* rng = nullptr, HeadCache<Scalar>* cache = nullptr) {
  HeadCache<Scalar> local;
  HeadCache<Scalar>& c = cache ? *cache : local;
  c.input = x;
  switch (cfg.kind) {
    case HeadKind::Linear:
      c.out_in = x;
      break;
    case HeadKind::Mlp:
      c.pre = detail::affine(x, p.hidden_w, p.hidden_b);
      c.out_in = detail::silu(c.pre);
      break;
    case HeadKind::Dcnv2: {
      Mat<Scalar> xl = x;
      c.cross_in.clear();
      c.cross_lin.clear();
      for (std::size_t l = 0; l < p.cross_w.size(); ++l) {
        Mat<Scalar> lin = detail::affine(xl, p.cross_w[l], p.cross_b[l]);
        Mat<Scalar> next = x.cwiseProduct(lin) + xl;
        c.cross_in.push_back(std::move(xl));
        c.cross_lin.push_back(std::move(lin));
        xl = std::move(next);
      }
      c.out_in = std::move(xl);
      break;
    }
    case HeadKind::Mmoe: {
      const Index n = x.rows(), experts = static_cast<Index>(p.expert_w.size());
      c.expert_pre.clear();
      c.expert_out.clear();
      for (Index e = 0; e < experts; ++e) {
        c.expert_pre.push_back(detail::affine(x, p.expert_w[e], p.expert_b[e]));
        c.expert_out.push_back(detail::silu(c.expert_pre.back()));
      }
      c.gates_raw = mmoe_gates(x, p);
      c.gate_keep.clear();
      c.gates.clear();
      c.mixed.clear();
      const bool dropout = mode == HeadMode::Train && cfg.gate_dropout > 0.0;
      require(!dropout || rng != nullptr, ErrorKind::Config, "head_forward: train-mode gate dropout needs an RNG");
      for (const auto& raw : c.gates_raw) {
        Mat<Scalar> keep = Mat<Scalar>::Ones(n, experts);
        Mat<Scalar> gates = raw;
        if (dropout) {
          for (Index i = 0; i < n; ++i) {
            for (Index e = 0; e < experts; ++e) keep(i, e) = uniform01(*rng) < cfg.gate_dropout ? Scalar(0) : Scalar(1);
            // If every gate of a row is dropped the row falls back to no dropout.
            if (keep.row(i).sum() == Scalar(0)) keep.row(i).setOnes();
            const Scalar kept = raw.row(i).cwiseProduct(keep.row(i)).sum();
            gates.row(i) = raw.row(i).cwiseProduct(keep.row(i)) / kept;
          }
        }
        Mat<Scalar> mixed = Mat<Scalar>::Zero(n, p.expert_w.empty() ? 0 : p.expert_w[0].cols());
        for (Index e = 0; e < experts; ++e) mixed += (c.expert_out[e].array().colwise() * gates.col(e).array()).matrix();
        c.gate_keep.push_back(std::move(keep));
        c.gates.push_back(std::move(gates));
        c.mixed.push_back(std::move(mixed));
      }
      const Index tasks = p.out_w.cols();
      Mat<Scalar> logits(n, tasks);
      for (Index m = 0; m < tasks; ++m)
        logits.col(m) = c.mixed[cfg.task_group[m]] * p.out_w.col(m) + Vec<Scalar>::Constant(n, p.out_b(m));
      return logits;
    }
  }
  return detail::affine(c.out_in, p.out_w, p.out_b);
}

/// Reverse pass; accumulates into `g` and returns dLoss/dInput.
template <typename Scalar>
Mat<Scalar> head_backward(const Mat<Scalar>& grad_logits, const HeadParams<Scalar>& p, const HeadConfig& cfg,
                          const HeadCache<Scalar>& c, HeadParams<Scalar>& g) {
  const Mat<Scalar>& x = c.input;
  if (cfg.kind == HeadKind::Mmoe) {
    const Index n = x.rows(), experts = static_cast<Index>(p.expert_w.size()), tasks = p.out_w.cols();
    std::vector<Mat<Scalar>> grad_mixed(c.mixed.size());
    for (auto& gm : grad_mixed) gm = Mat<Scalar>::Zero(n, p.out_w.rows());
    for (Index m = 0; m < tasks; ++m) {
      const int grp = cfg.task_group[m];
      g.out_w.col(m) += c.mixed[grp].transpose() * grad_logits.col(m);
      g.out_b(m) += grad_logits.col(m).sum();
      grad_mixed[grp] += grad_logits.col(m) * p.out_w.col(m).transpose();
    }
    Mat<Scalar> grad_x = Mat<Scalar>::Zero(n, x.cols());
    std::vector<Mat<Scalar>> grad_expert(experts, Mat<Scalar>::Zero(n, p.out_w.rows()));
    for (std::size_t grp = 0; grp < c.mixed.size(); ++grp) {
      Mat<Scalar> grad_gate(n, experts);
      for (Index e = 0; e < experts; ++e) {
        grad_gate.col(e) = grad_mixed[grp].cwiseProduct(c.expert_out[e]).rowwise().sum();
        grad_expert[e] += (grad_mixed[grp].array().colwise() * c.gates[grp].col(e).array()).matrix();
      }
      // Through the dropout renormalization g' = k*g / sum(k*g).
      const Mat<Scalar>& raw = c.gates_raw[grp];
      const Mat<Scalar>& keep = c.gate_keep[grp];
      const Mat<Scalar>& gates = c.gates[grp];
      Vec<Scalar> kept = raw.cwiseProduct(keep).rowwise().sum();
      Vec<Scalar> dot = grad_gate.cwiseProduct(gates).rowwise().sum();
      Mat<Scalar> grad_raw = (keep.array() * (grad_gate.colwise() - dot).array()).colwise() / kept.array();
      // Softmax.
      Vec<Scalar> sdot = grad_raw.cwiseProduct(raw).rowwise().sum();
      Mat<Scalar> grad_logit = raw.cwiseProduct(grad_raw.colwise() - sdot);
      g.gate_w[grp].noalias() += x.transpose() * grad_logit;
      g.gate_b[grp] += grad_logit.colwise().sum();
      grad_x.noalias() += grad_logit * p.gate_w[grp].transpose();
    }
    for (Index e = 0; e < experts; ++e) {
      Mat<Scalar> grad_pre = grad_expert[e].cwiseProduct(detail::silu_grad(c.expert_pre[e]));
      g.expert_w[e].noalias() += x.transpose() * grad_pre;
      g.expert_b[e] += grad_pre.colwise().sum();
      grad_x.noalias() += grad_pre * p.expert_w[e].transpose();
    }
    return grad_x;
  }

  g.out_w.noalias() += c.out_in.transpose() * grad_logits;
  g.out_b += grad_logits.colwise().sum();
  Mat<Scalar> grad_out_in = grad_logits * p.out_w.transpose();
  switch (cfg.kind) {
    case HeadKind::Linear: return grad_out_in;
    case HeadKind::Mlp: {
      Mat<Scalar> grad_pre = grad_out_in.cwiseProduct(detail::silu_grad(c.pre));
      g.hidden_w.noalias() += x.transpose() * grad_pre;
      g.hidden_b += grad_pre.colwise().sum();
      return grad_pre * p.hidden_w.transpose();
    }
    case HeadKind::Dcnv2: {
      // x_{l+1} = x_0 * (x_l W_l + b_l) + x_l
      Mat<Scalar> grad_xl = grad_out_in;
      Mat<Scalar> grad_x0 = Mat<Scalar>::Zero(x.rows(), x.cols());
      for (Index l = static_cast<Index>(p.cross_w.size()) - 1; l >= 0; --l) {
        Mat<Scalar> grad_lin = grad_xl.cwiseProduct(x);
        grad_x0 += grad_xl.cwiseProduct(c.cross_lin[l]);
        g.cross_w[l].noalias() += c.cross_in[l].transpose() * grad_lin;
        g.cross_b[l] += grad_lin.colwise().sum();
        grad_xl += grad_lin * p.cross_w[l].transpose();
      }
      return grad_xl + grad_x0;
    }
    case HeadKind::Mmoe: break;
  }
  return grad_out_in;
}

/// Adds the learned offset row for `position` (1-based) in place when it is
/// within the table; positions past the table are unchanged.
template <typename Derived, typename Scalar>
void add_position_offset(const Eigen::MatrixBase<Derived>& logits, int position, const Mat<Scalar>& offsets) {
  require(position >= 1, ErrorKind::OutOfRange, "feed position must be >= 1");
  auto& out = const_cast<Eigen::MatrixBase<Derived>&>(logits);
  if (position <= offsets.rows()) out += offsets.row(position - 1);
}

template <typename Scalar>
RowVec<Scalar> apply_position_offset(RowVec<Scalar> logits, int position, const Mat<Scalar>& offsets) {
  add_position_offset(logits, position, offsets);
  return logits;
}

template <typename Derived>
auto predict_probabilities(const Eigen::MatrixBase<Derived>& logits) {
  using Scalar = typename Derived::Scalar;
  return (Scalar(1) / (Scalar(1) + (-logits.derived().array()).exp())).matrix().eval();
}

}  // namespace seqrank
