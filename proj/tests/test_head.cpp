#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "seqrank/head.hpp"
#include "seqrank/model.hpp"
#include "seqrank/random.hpp"
#include "support.hpp"

using namespace seqrank;
using seqrank::testing::error_kind;
using seqrank::testing::fd_worst;

namespace {

Mat<double> random_mat(Index r, Index c, Rng& rng) {
  Mat<double> m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = normal01(rng);
  return m;
}

HeadConfig config_for(HeadKind kind, Index tasks) {
  HeadConfig c;
  c.kind = kind;
  c.mlp_hidden = 7;
  c.cross_layers = 2;
  c.experts = 3;
  c.expert_hidden = 5;
  c.gate_dropout = 0.3;
  std::vector<std::string> names{"click", "longDwell", "like", "comment", "share", "skip"};
  names.resize(tasks);
  if (kind == HeadKind::Mmoe) c.task_group = default_task_groups(names);
  return c;
}

}  // namespace

TEST_CASE("default task groups put contributions in the active group") {
  const auto g = default_task_groups({"click", "longDwell", "like", "comment", "share", "skip"});
  CHECK(g == std::vector<int>{0, 0, 1, 1, 1, 0});
  const auto passive = default_task_groups({"click", "skip"});
  CHECK(passive == std::vector<int>{0, 0});
}

TEST_CASE("head config validation") {
  HeadConfig c = config_for(HeadKind::Mmoe, 6);
  CHECK_NOTHROW(c.validate(6));
  CHECK(c.group_count() == 2);
  c.task_group = {0, 0, 1};
  CHECK(error_kind([&] { c.validate(6); }) == ErrorKind::Config);
  c.task_group = {0, 0, 2, 2, 2, 0};  // group 1 empty
  CHECK(error_kind([&] { c.validate(6); }) == ErrorKind::Config);
}

TEST_CASE("late fusion puts the transformer output first") {
  Mat<double> z(2, 2), ctx(2, 1);
  z << 1, 2, 3, 4;
  ctx << 9, 8;
  const Mat<double> f = late_fuse(z, ctx);
  REQUIRE(f.cols() == 3);
  CHECK(f(0, 0) == 1);
  CHECK(f(1, 1) == 4);
  CHECK(f(0, 2) == 9);
  CHECK(f(1, 2) == 8);
  CHECK(late_fuse(z, Mat<double>(0, 0)) == z);
}

TEST_CASE("head gradients match finite differences") {
  for (auto kind : {HeadKind::Linear, HeadKind::Mlp, HeadKind::Dcnv2, HeadKind::Mmoe})
    for (auto mode : {HeadMode::Infer, HeadMode::Train}) {
      CAPTURE(to_string(kind));
      CAPTURE(static_cast<int>(mode));
      const HeadConfig cfg = config_for(kind, 6);
      Rng rng(3);
      HeadParams<double> p = init_head<double>(cfg, 6, 6, rng);
      Mat<double> x = random_mat(9, 6, rng);
      const Mat<double> probe = random_mat(9, 6, rng);
      auto forward = [&](HeadCache<double>* cache) {
        Rng drop(77);  // same dropout pattern on every call
        return head_forward(x, p, cfg, mode, &drop, cache);
      };
      auto loss = [&] { return (forward(nullptr).array() * probe.array()).sum(); };
      HeadCache<double> cache;
      forward(&cache);
      HeadParams<double> g = p;
      g.visit("", [](const std::string&, auto& m) { m.setZero(); });
      const Mat<double> gx = head_backward(probe, p, cfg, cache, g);
      CHECK(fd_worst(x, gx, loss) < 1e-5);
      std::vector<double*> pd, gd;
      std::vector<Index> sizes;
      std::vector<std::string> names;
      p.visit("", [&](const std::string& n, auto& m) {
        names.push_back(n);
        pd.push_back(m.data());
        sizes.push_back(m.size());
      });
      g.visit("", [&](const std::string&, auto& m) { gd.push_back(m.data()); });
      for (std::size_t s = 0; s < pd.size(); ++s) {
        Eigen::Map<Mat<double>> pm(pd[s], sizes[s], 1);
        const Mat<double> gm = Eigen::Map<Mat<double>>(gd[s], sizes[s], 1);
        CAPTURE(names[s]);
        CHECK(fd_worst(pm, gm, loss) < 1e-5);
      }
    }
}

TEST_CASE("mmoe gates are a distribution and dropout renormalizes") {
  const HeadConfig cfg = config_for(HeadKind::Mmoe, 6);
  Rng rng(5);
  const HeadParams<double> p = init_head<double>(cfg, 4, 6, rng);
  const Mat<double> x = random_mat(50, 4, rng);
  const auto gates = mmoe_gates(x, p);
  REQUIRE(gates.size() == 2);
  for (const auto& g : gates)
    for (Index i = 0; i < g.rows(); ++i) {
      CHECK(g.row(i).sum() == doctest::Approx(1.0).epsilon(1e-14));
      CHECK(g.row(i).minCoeff() > 0.0);
    }
  HeadCache<double> cache;
  Rng drop(1);
  head_forward(x, p, cfg, HeadMode::Train, &drop, &cache);
  Index dropped = 0;
  for (std::size_t g = 0; g < cache.gates.size(); ++g)
    for (Index i = 0; i < x.rows(); ++i) {
      CHECK(cache.gates[g].row(i).sum() == doctest::Approx(1.0).epsilon(1e-14));
      CHECK(cache.gate_keep[g].row(i).sum() >= 1.0);
      for (Index e = 0; e < cfg.experts; ++e)
        if (cache.gate_keep[g](i, e) == 0.0) {
          ++dropped;
          CHECK(cache.gates[g](i, e) == 0.0);
        }
    }
  CHECK(dropped > 0);
  // Inference ignores dropout entirely.
  const Mat<double> a = head_forward(x, p, cfg, HeadMode::Infer);
  Rng other(999);
  const Mat<double> b = head_forward(x, p, cfg, HeadMode::Infer, &other);
  CHECK(a == b);
}

TEST_CASE("a row with every gate dropped keeps all experts") {
  HeadConfig cfg = config_for(HeadKind::Mmoe, 6);
  cfg.gate_dropout = 0.999999;
  Rng rng(5);
  const HeadParams<double> p = init_head<double>(cfg, 4, 6, rng);
  const Mat<double> x = random_mat(5, 4, rng);
  HeadCache<double> cache;
  Rng drop(2);
  const Mat<double> train = head_forward(x, p, cfg, HeadMode::Train, &drop, &cache);
  CHECK((train - head_forward(x, p, cfg, HeadMode::Infer)).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("train-mode dropout needs an rng") {
  const HeadConfig cfg = config_for(HeadKind::Mmoe, 6);
  Rng rng(5);
  const HeadParams<double> p = init_head<double>(cfg, 4, 6, rng);
  CHECK(error_kind([&] { head_forward(random_mat(2, 4, rng), p, cfg, HeadMode::Train); }) == ErrorKind::Config);
}

TEST_CASE("tasks in one group share the mixed representation") {
  const HeadConfig cfg = config_for(HeadKind::Mmoe, 6);
  Rng rng(8);
  HeadParams<double> p = init_head<double>(cfg, 4, 6, rng);
  // Give click and skip (both passive) the same output column: same logit.
  p.out_w.col(5) = p.out_w.col(0);
  p.out_b(5) = p.out_b(0);
  p.out_w.col(2) = p.out_w.col(0);  // like is active: differs
  p.out_b(2) = p.out_b(0);
  const Mat<double> x = random_mat(6, 4, rng);
  const Mat<double> z = head_forward(x, p, cfg, HeadMode::Infer);
  CHECK(z.col(5) == z.col(0));
  CHECK(z.col(2) != z.col(0));
}

TEST_CASE("dcnv2 cross layer by hand") {
  HeadConfig cfg = config_for(HeadKind::Dcnv2, 1);
  cfg.cross_layers = 1;
  Rng rng(1);
  HeadParams<double> p = init_head<double>(cfg, 2, 1, rng);
  p.cross_w[0] << 1, 2, 3, 4;
  p.cross_b[0] << 0.5, -0.5;
  p.out_w << 1, 1;
  p.out_b << 0;
  Mat<double> x(1, 2);
  x << 2, 3;
  // x0 * (x W + b) + x = [2, 3] * ([11, 16] + [0.5, -0.5]) + [2, 3]
  const double want = 2 * 11.5 + 3 * 15.5 + 2 + 3;
  CHECK(head_forward(x, p, cfg, HeadMode::Infer)(0, 0) == doctest::Approx(want));
}

TEST_CASE("position offsets") {
  Mat<double> offsets = Mat<double>::Zero(kPositionOffsetRows, 2);
  offsets.row(4) << 0.25, -1.0;
  RowVec<double> l(2);
  l << 1, 1;
  const RowVec<double> five = apply_position_offset(l, 5, offsets);
  CHECK(five(0) == 1.25);
  CHECK(five(1) == 0.0);
  CHECK(apply_position_offset(l, 61, offsets) == l);  // past the table
  CHECK(error_kind([&] { apply_position_offset(l, 0, offsets); }) == ErrorKind::OutOfRange);
  CHECK(kInferencePosition == 5);
}
