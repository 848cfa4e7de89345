// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
// criterion fails. Runs the long experiments too, so expect a few minutes.

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>

#include "fixtures.hpp"
#include "seqrank/attention.hpp"
#include "seqrank/config.hpp"
#include "seqrank/feature_store.hpp"
#include "seqrank/harness.hpp"
#include "seqrank/inference.hpp"
#include "seqrank/metrics.hpp"
#include "seqrank/sequence_builder.hpp"
#include "seqrank/training.hpp"
#include "seqrank/transformer.hpp"

using namespace seqrank;
using namespace seqrank::testing;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

// Collects failed sub-checks so one line can say what went wrong.
struct Checks {
  bool ok = true;
  std::ostringstream notes;
  void expect(bool cond, const std::string& what) {
    if (!cond) {
      if (!ok) notes << "; ";
      ok = false;
      notes << what;
    }
  }
};

template <typename Scalar>
Mat<Scalar> random_mat(Index r, Index c, Rng& rng) {
  Mat<Scalar> m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = Scalar(normal01(rng));
  return m;
}

std::string num(double v, int prec = 3) {
  std::ostringstream s;
  s.precision(prec);
  s << v;
  return s.str();
}

ExperimentConfig default_experiment() { return experiment_config_from_json(Json::object()); }

// ---------------------------------------------------------------------- 1

Outcome scoring_equivalence() {
  const auto t0 = Clock::now();
  const ModelConfig cfg = default_experiment().model;
  const ModelParams<float> params = init_model<float>(cfg, 11);
  Rng rng(101);
  double worst = 0.0;
  int requests = 0;
  for (Index n : {1, 2, 17, 128})
    for (Index t : {0, 1, 64, 256})
      for (int r = 0; r < 7; ++r) {
        const ServingInput in = random_serving_input(cfg, t, n, rng);
        const Mat<float> a = score_candidates_batched(in, params, cfg);
        const Mat<float> b = score_candidates_sequential(in, params, cfg);
        worst = std::max(worst, static_cast<double>((a - b).cwiseAbs().maxCoeff()));
        ++requests;
      }
  const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  Checks c;
  c.expect(worst < 1e-5, "max diff " + num(worst));
  c.expect(secs < 120, "took " + num(secs) + " s");
  return {c.ok, std::to_string(requests) + " requests, max |diff| " + num(worst) + ", " + num(secs) + " s" +
                    (c.ok ? "" : " (" + c.notes.str() + ")")};
}

// ---------------------------------------------------------------------- 2

bool oracle_allowed(Index i, Index j, Index L) { return i < L ? j <= i : (j < L || j == i); }

std::uint64_t enumerate_skipped(Index L, Index N, Index tile) {
  const Index n = L + N;
  std::uint64_t skipped = 0;
  for (Index q0 = 0; q0 < n; q0 += tile)
    for (Index k0 = 0; k0 < n; k0 += tile) {
      bool any = false;
      for (Index i = q0; i < std::min(n, q0 + tile) && !any; ++i)
        for (Index j = k0; j < std::min(n, k0 + tile) && !any; ++j) any = oracle_allowed(i, j, L);
      skipped += !any;
    }
  return skipped;
}

Outcome tiled_attention_exact() {
  const auto t0 = Clock::now();
  Rng rng(202);
  double worst_f = 0, worst_d = 0;
  int count_mismatch = 0, trials = 0, ragged = 0;
  for (int trial = 0; trial < 120; ++trial) {
    const Index L = static_cast<Index>(uniform_index(rng, 160));
    const Index N = 1 + static_cast<Index>(uniform_index(rng, 64));
    const Index tile = 1 + static_cast<Index>(uniform_index(rng, 48));
    const Index heads = 2, d = 16, n = L + N;
    ragged += n % tile != 0;
    const Mask mask = multi_item_mask(L, N);
    const AttentionPattern pat{L, N};
    const auto qd = random_mat<double>(n, d, rng), kd = random_mat<double>(n, d, rng), vd = random_mat<double>(n, d, rng);
    TileStats stats;
    const Mat<double> dense = masked_attention(qd, kd, vd, mask, heads);
    const Mat<double> tiled = tiled_attention(qd, kd, vd, pat, heads, tile, AttentionActivation::Softmax, &stats);
    worst_d = std::max(worst_d, (dense - tiled).cwiseAbs().maxCoeff());
    count_mismatch += stats.skipped != enumerate_skipped(L, N, tile);
    const Mat<float> qf = qd.cast<float>(), kf = kd.cast<float>(), vf = vd.cast<float>();
    const Mat<float> df = masked_attention(qf, kf, vf, mask, heads);
    const Mat<float> tf = tiled_attention(qf, kf, vf, pat, heads, tile);
    worst_f = std::max(worst_f, static_cast<double>((df - tf).cwiseAbs().maxCoeff()));
    ++trials;
  }
  const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  Checks c;
  c.expect(worst_d < 1e-10, "double diff " + num(worst_d));
  c.expect(worst_f < 1e-5, "single diff " + num(worst_f));
  c.expect(count_mismatch == 0, std::to_string(count_mismatch) + " skip-count mismatches");
  c.expect(ragged > 0, "no ragged tiles drawn");
  c.expect(secs < 60, "took " + num(secs) + " s");
  return {c.ok, std::to_string(trials) + " shapes (" + std::to_string(ragged) + " ragged), max diff double " +
                    num(worst_d) + " single " + num(worst_f) + ", skip counts exact in all, " + num(secs) + " s" +
                    (c.ok ? "" : " (" + c.notes.str() + ")")};
}

// ---------------------------------------------------------------------- 3

Outcome desk_speedups() {
  const auto t0 = Clock::now();
  const ModelConfig cfg = default_experiment().model;
  const ScoringBench s = bench_scoring(cfg, 256, 128, 3, 7);
  const AttnBench a = bench_attention(512, 128, cfg.transformer.d_model, cfg.transformer.heads, 64, 5, 7);
  const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  Checks c;
  c.expect(s.speedup() >= 10.0, "scoring speedup " + num(s.speedup()));
  c.expect(a.speedup() >= 1.5, "attention speedup " + num(a.speedup()));
  c.expect(secs < 300, "took " + num(secs) + " s");
  return {c.ok, "batched scoring " + num(s.speedup()) + "x (" + num(s.batched_ms) + " vs " + num(s.sequential_ms) +
                    " ms), tiled attention " + num(a.speedup()) + "x (" + std::to_string(a.tiles_skipped) + " of " +
                    std::to_string(a.tiles_visited + a.tiles_skipped) + " tiles skipped), " + num(secs) + " s" +
                    (c.ok ? "" : " (" + c.notes.str() + ")")};
}

// ---------------------------------------------------------------------- 4

Outcome gradient_fidelity() {
  const ModelConfig cfg = tiny_model(16, 2, HeadKind::Mmoe);
  Rng rng(404);
  std::vector<TrainingSequence> batch;
  for (Index len : {4, 7}) batch.push_back(make_training_sequence(tiny_events(cfg, len, rng), cfg.tasks(), cfg.context_dim));
  const LossConfig l = tiny_loss(batch);
  ModelParams<double> params = init_model<double>(cfg, 9);
  for (Index i = 0; i < params.position_offsets.size(); ++i) params.position_offsets.data()[i] = 0.1 * normal01(rng);
  const auto lg = loss_and_gradient(params, std::span<const TrainingSequence>(batch), cfg, l, 31);
  ModelParams<double> grad = lg.grad;
  auto loss = [&] { return loss_and_gradient(params, std::span<const TrainingSequence>(batch), cfg, l, 31, false).loss; };
  const FdReport r = model_fd(params, grad, loss, 1e-6);
  return {r.overall <= 1e-5, std::to_string(r.worst.size()) + " parameter groups, worst relative error " +
                                 num(r.overall) + " (" + r.worst_group + ")"};
}

// ---------------------------------------------------------------------- 5

Outcome bucketized_auc() {
  Checks c;
  double worst = 0;
  for (std::uint64_t seed : {1, 2, 3}) {
    Rng rng(seed);
    const std::size_t n = 100000;
    std::vector<double> s(n);
    std::vector<std::uint8_t> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = uniform01(rng);
      y[i] = bernoulli(rng, 0.5);
    }
    AucHistogram single(10000);
    for (std::size_t i = 0; i < n; ++i) single.add(s[i], y[i] != 0);
    const double exact = *exact_auc(s, y);
    const double approx = *single.finalize();
    worst = std::max(worst, std::abs(exact - approx));
    // Four uneven shards merged.
    std::vector<AucHistogram> shards(4, AucHistogram(10000));
    for (std::size_t i = 0; i < n; ++i) shards[(i * 7 / 3) % 4].add(s[i], y[i] != 0);
    AucHistogram merged(10000);
    for (const auto& h : shards) merged += h;
    c.expect(merged == single, "seed " + std::to_string(seed) + " merge differs");
    c.expect(*merged.finalize() == approx, "seed " + std::to_string(seed) + " merged AUC differs");
  }
  c.expect(worst < 5e-4, "gap " + num(worst));
  return {c.ok, "3 seeds x 1e5 pairs, worst |bucketized - exact| " + num(worst) + ", shard merge exact" +
                    (c.ok ? "" : " (" + c.notes.str() + ")")};
}

// ---------------------------------------------------------------------- 6

Outcome loss_weighting() {
  Checks c;
  const std::int64_t ref = 1'700'000'000, day = 86400;
  for (Index len : {2, 5, 64, 1000}) {
    c.expect(position_weight(1, len) == 0.5, "first position of " + std::to_string(len));
    c.expect(position_weight(len, len) == 1.0, "last position of " + std::to_string(len));
  }
  c.expect(timestamp_weight(ref - 60 * day, ref) == 0.5, "60-day weight");
  // 2^(-d/60) = 1e-4 at d = 60 log2(1e4), about 797.26 days
  const double cross = 60.0 * std::log2(1e4);
  c.expect(timestamp_weight(ref - static_cast<std::int64_t>((cross - 1) * day), ref) > 1e-4, "floor engaged early");
  c.expect(timestamp_weight(ref - static_cast<std::int64_t>((cross + 1) * day), ref) == 1e-4, "floor at 799 days");
  c.expect(timestamp_weight(ref - 3000 * day, ref) == 1e-4, "floor at 3000 days");
  Rng rng(606);
  double worst = 0;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> w(1 + uniform_index(rng, 2000));
    for (auto& x : w) x = std::exp(2.5 * normal01(rng)) * position_weight(1 + uniform_index(rng, 10), 10);
    const auto nw = batch_normalize_weights(w);
    const double mean = std::accumulate(nw.begin(), nw.end(), 0.0) / static_cast<double>(nw.size());
    worst = std::max(worst, std::abs(mean - 1.0));
  }
  // also through the full batch path with masks
  const ModelConfig cfg = tiny_model();
  for (int trial = 0; trial < 10; ++trial) {
    auto ev = tiny_events(cfg, 5 + static_cast<Index>(uniform_index(rng, 20)), rng);
    for (auto& e : ev) e.is_new = bernoulli(rng, 0.7);
    ev.back().is_new = true;
    std::vector<TrainingSequence> batch{make_training_sequence(ev, 6, 3, true)};
    const auto w = batch_loss_weights(batch, tiny_loss(batch), 6);
    double sum = 0, count = 0;
    for (Index t = 0; t < batch[0].length(); ++t)
      if (batch[0].loss_mask[t]) {
        sum += w[0].row(t).sum();
        count += 6;
      }
    worst = std::max(worst, std::abs(sum / count - 1.0));
  }
  c.expect(worst < 1e-12, "normalized mean off by " + num(worst));
  return {c.ok, "position endpoints exact, 60-day weight 0.5, floor from day " + num(cross, 5) +
                    ", normalized mean error " + num(worst) + (c.ok ? "" : " (" + c.notes.str() + ")")};
}

// ---------------------------------------------------------------------- 7

// Logistic regression on the planted features by Newton's method.
double logistic_oracle_auc(const SyntheticDataset& ds, Index task) {
  std::vector<RowVec<double>> xtr, xev;
  std::vector<double> ytr;
  std::vector<std::uint8_t> yev;
  auto row = [](const Mat<double>& planted, Index i) {
    RowVec<double> r(kPlantedFeatures + 1);
    r(0) = 1.0;
    r.tail(kPlantedFeatures) = planted.row(i);
    return r;
  };
  for (const auto& m : ds.members) {
    const MemberSplit sp = split_last_session(m);
    for (std::size_t i = 0; i < sp.train.size(); ++i) {
      xtr.push_back(row(sp.train_planted, static_cast<Index>(i)));
      ytr.push_back(sp.train[i].action[task]);
    }
    for (std::size_t i = 0; i < sp.eval.size(); ++i) {
      xev.push_back(row(sp.eval_planted, static_cast<Index>(i)));
      yev.push_back(sp.eval[i].action[task]);
    }
  }
  const Index p = kPlantedFeatures + 1;
  Vec<double> beta = Vec<double>::Zero(p);
  for (int it = 0; it < 25; ++it) {
    Mat<double> h = 1e-6 * Mat<double>::Identity(p, p);
    Vec<double> g = Vec<double>::Zero(p);
    for (std::size_t i = 0; i < xtr.size(); ++i) {
      const double z = xtr[i].dot(beta.transpose());
      const double q = 1.0 / (1.0 + std::exp(-z));
      g += (q - ytr[i]) * xtr[i].transpose();
      h += q * (1 - q) * xtr[i].transpose() * xtr[i];
    }
    beta -= h.ldlt().solve(g);
  }
  std::vector<double> scores;
  for (const auto& x : xev) scores.push_back(x.dot(beta.transpose()));
  return exact_auc(scores, yev).value_or(0.0);
}

Outcome learning_sanity() {
  const auto t0 = Clock::now();
  ExperimentConfig cfg = default_experiment();
  const SyntheticDataset ds = synth_generate(cfg.synthetic, cfg.model.transformer.d_model);
  const int ld = cfg.model.task_index("longDwell");
  const double oracle = logistic_oracle_auc(ds, ld);
  const PreparedData data = prepare_data(ds, cfg);
  const RunResult rr = train_model(cfg, data);
  double best = 0;
  Index best_epoch = 0;
  for (const auto& e : rr.epochs)
    if (e.epoch >= 1 && e.epoch <= 5 && e.eval_auc[ld].exact && *e.eval_auc[ld].exact > best) {
      best = *e.eval_auc[ld].exact;
      best_epoch = e.epoch;
    }
  const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  Checks c;
  c.expect(best >= 0.75, "model AUC " + num(best));
  c.expect(oracle >= 0.8, "oracle AUC " + num(oracle));
  c.expect(secs < 600, "took " + num(secs) + " s");
  return {c.ok, "eval longDwell AUC " + num(best, 4) + " at epoch " + std::to_string(best_epoch) +
                    " (epoch 0: " + num(rr.epochs.front().eval_auc[ld].exact.value_or(0), 4) +
                    "), logistic oracle " + num(oracle, 4) + ", " + num(secs) + " s" +
                    (c.ok ? "" : " (" + c.notes.str() + ")")};
}

// ---------------------------------------------------------------------- 8

Outcome leakage_direction() {
  const auto t0 = Clock::now();
  ExperimentConfig cfg = experiment_config_from_json(
      {{"kind", "leakage"}, {"synthetic", {{"rho", 0.8}, {"members", 250}}}, {"train", {{"epochs", 3}}}});
  cfg.seeds = {1, 2, 3};
  const LeakageReport rep = run_leakage(cfg);
  const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  std::ostringstream gaps;
  for (const auto& r : rep.rows) gaps << " seed " << r.seed << ": " << num(r.chrono_gap()) << " vs " << num(r.shuffled_gap()) << ';';
  Checks c;
  c.expect(rep.seeds_in_direction() >= 2, "direction held in " + std::to_string(rep.seeds_in_direction()) + " of 3");
  c.expect(rep.sessions_audited, "session audit failed");
  return {c.ok, "chronological gap larger in " + std::to_string(rep.seeds_in_direction()) + " of 3 seeds (" +
                    gaps.str().substr(1) + " chrono vs shuffled), " + num(secs) + " s" +
                    (c.ok ? "" : " (" + c.notes.str() + ")")};
}

// ---------------------------------------------------------------------- 9

Outcome structural_invariants() {
  Checks c;
  // Causality and isolation through two blocks, dense and tiled.
  TransformerConfig tc;
  tc.d_model = 16;
  tc.heads = 2;
  tc.ffn_hidden = 32;
  Rng rng(909);
  std::vector<BlockParams<double>> blocks{init_block<double>(tc, rng), init_block<double>(tc, rng)};
  const Index L = 12, N = 5, n = L + N;
  std::vector<Index> pos = paired_positions(L);
  pos.resize(n, L / 2);
  const RopeTable<double> rope(pos, tc.head_dim(), tc.rope_theta);
  int violations = 0, perturbations = 0;
  for (bool tiled : {false, true}) {
    const AttentionExec exec{AttentionPattern{L, N}, tiled, 5};
    auto run = [&](Mat<double> x) {
      for (const auto& b : blocks) x = block_forward(x, b, &rope, exec, tc);
      return x;
    };
    const Mat<double> x = random_mat<double>(n, tc.d_model, rng);
    const Mat<double> base = run(x);
    for (Index j = 0; j < n; ++j) {
      Mat<double> xp = x;
      xp.row(j) += random_mat<double>(1, tc.d_model, rng);
      const Mat<double> out = run(xp);
      ++perturbations;
      for (Index i = 0; i < n; ++i) {
        // reachability through any depth is the same one-step rule
        const bool may_change = oracle_allowed(i, j, L);
        if (!may_change && out.row(i) != base.row(i)) ++violations;
      }
    }
  }
  // Candidate isolation through the whole model.
  const ModelConfig mc = tiny_model();
  const ModelParams<double> mp = init_model<double>(mc, 3);
  ServingInput in = random_serving_input(mc, 9, 6, rng);
  const Mat<double> base = forward_serve(in, mp, mc);
  for (Index k = 0; k < 6; ++k) {
    ServingInput changed = in;
    changed.candidate_posts[k] = tiny_post(mc, rng);
    changed.candidate_context.row(k).array() += 1.0f;
    const Mat<double> out = forward_serve(changed, mp, mc);
    ++perturbations;
    for (Index i = 0; i < 6; ++i)
      if (i != k && out.row(i) != base.row(i)) ++violations;
  }
  c.expect(violations == 0, std::to_string(violations) + " mask violations");

  // Interleave / discard round trips.
  bool trips = true;
  for (Index t : {1, 2, 9, 64}) {
    const Mat<double> items = random_mat<double>(t, 6, rng), actions = random_mat<double>(t, 6, rng);
    const Mat<double> tok = interleave(items, actions);
    const auto [x, a] = deinterleave(tok);
    trips = trips && x == items && a == actions && discard_action_positions(tok) == items;
  }
  c.expect(trips, "interleave round trip");

  // RoPE.
  double norm_err = 0;
  bool pairs = true;
  const Index heads = 4, d = 32, tokens = 200;
  Mat<double> q = random_mat<double>(tokens, d, rng);
  for (Index t = 0; t < tokens; t += 2) q.row(t + 1) = q.row(t);
  const auto [qr, kr] = rope_rotate(q, q, paired_positions(tokens), heads, 10000.0);
  for (Index t = 0; t < tokens; ++t) {
    for (Index h = 0; h < heads; ++h)
      norm_err = std::max(norm_err, std::abs(qr.row(t).segment(h * 8, 8).norm() - q.row(t).segment(h * 8, 8).norm()));
    if (t % 2 == 0) pairs = pairs && qr.row(t) == qr.row(t + 1);
  }
  c.expect(norm_err < 1e-6, "RoPE norm error " + num(norm_err));
  c.expect(pairs, "item/action pairs rotate differently");
  return {c.ok, std::to_string(perturbations) + " perturbations with no mask violation, round trips exact, RoPE norm error " +
                    num(norm_err) + ", pair rotations identical" + (c.ok ? "" : " (" + c.notes.str() + ")")};
}

// --------------------------------------------------------------------- 10

Outcome format_fidelity() {
  Checks c;
  SyntheticConfig sc;
  sc.content_dim = 8;
  const FeatureSchema schema = synthetic_schema(24, sc);
  Rng rng(1010);
  int mismatches = 0, accepted_truncations = 0, truncations = 0;
  for (int h = 0; h < 10000; ++h) {
    std::vector<FeatureRecord> items;
    const Index len = static_cast<Index>(uniform_index(rng, 40));
    for (Index i = 0; i < len; ++i) {
      FeatureRecord r = random_post(schema, rng);
      auto& topics = std::get<std::vector<std::int64_t>>(r[2]);
      for (auto& v : topics) v %= schema[2].vocab;
      items.push_back(std::move(r));
    }
    const auto bytes = encode_history(items, schema);
    const ParsedHistory p = parse_history(bytes, schema);
    bool same = p.item_count == static_cast<std::uint32_t>(len);
    for (Index i = 0; same && i < len; ++i) same = p.record(i, schema) == items[i];
    mismatches += !same;
    // fuzzed truncation: a random strict prefix
    if (h % 5 == 0) {
      const std::size_t cut = uniform_index(rng, bytes.size());
      const auto kind = error_kind([&] { parse_history(std::span(bytes.data(), cut), schema); });
      ++truncations;
      accepted_truncations += !(kind && (*kind == ErrorKind::Truncation || *kind == ErrorKind::Format));
    }
  }
  c.expect(mismatches == 0, std::to_string(mismatches) + " round-trip mismatches");
  c.expect(accepted_truncations == 0, std::to_string(accepted_truncations) + " truncations accepted");

  int dense_mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const Index dim = 1 + static_cast<Index>(uniform_index(rng, 64));
    const Index rows = static_cast<Index>(uniform_index(rng, 20));
    const bool weighted = bernoulli(rng, 0.5);
    SparseBatch b;
    b.vocab = dim;
    for (Index r = 0; r < rows; ++r) {
      std::vector<std::int64_t> idx;
      std::vector<float> val;
      const auto k = uniform_index(rng, 6);
      for (std::uint64_t j = 0; j < k; ++j) {
        const auto col = static_cast<std::int64_t>(uniform_index(rng, dim));
        if (std::find(idx.begin(), idx.end(), col) != idx.end()) continue;
        idx.push_back(col);
        val.push_back(static_cast<float>(normal01(rng)));
      }
      if (weighted)
        b.add_row(idx, val);
      else
        b.add_row(idx);
    }
    const Mat<float> got = sparse_to_dense<float>(b, dim);
    Mat<float> want = Mat<float>::Zero(rows, dim);
    for (Index r = 0; r < rows; ++r)
      for (std::uint32_t k = b.offsets[r]; k < b.offsets[r + 1]; ++k)
        for (Index col = 0; col < dim; ++col)
          if (b.indices[k] == col) want(r, col) = weighted ? b.values[k] : 1.0f;
    dense_mismatches += got != want;
  }
  c.expect(dense_mismatches == 0, std::to_string(dense_mismatches) + " sparse_to_dense mismatches");
  return {c.ok, "10000 histories round-trip exactly, " + std::to_string(truncations) +
                    " fuzzed truncations all rejected, 1000 sparse batches match the oracle" +
                    (c.ok ? "" : " (" + c.notes.str() + ")")};
}

// --------------------------------------------------------------------- 11

Outcome incremental_training() {
  Checks c;
  const ModelConfig cfg = tiny_model(16, 2);
  Rng rng(1111);
  auto events = tiny_events(cfg, 14, rng);
  for (Index t = 0; t < 9; ++t) events[t].is_new = false;
  std::vector<TrainingSequence> batch{make_training_sequence(events, 6, 3, true)};
  const LossConfig l = tiny_loss(batch);
  ModelParams<double> params = init_model<double>(cfg, 5);
  auto lg = loss_and_gradient(params, std::span<const TrainingSequence>(batch), cfg, l, 3);
  auto loss = [&] { return loss_and_gradient(params, std::span<const TrainingSequence>(batch), cfg, l, 3, false).loss; };

  // The loss has no derivative along any old row's own loss term: nudging
  // the sample weight or the label of an old row (in the loss only) moves
  // nothing, while the same nudge on a new row does.
  double old_slope = 0, new_slope = 0;
  const double h = 1e-6;
  for (Index t = 0; t < batch[0].length(); ++t) {
    const double w0 = batch[0].sample_weights[t];
    batch[0].sample_weights[t] = w0 + h;
    const double up = loss();
    batch[0].sample_weights[t] = w0 - h;
    const double down = loss();
    batch[0].sample_weights[t] = w0;
    const double slope = std::abs(up - down) / (2 * h);
    (t < 9 ? old_slope : new_slope) = std::max(t < 9 ? old_slope : new_slope, slope);
  }
  c.expect(old_slope == 0.0, "old-row slope " + num(old_slope));
  c.expect(new_slope > 0.0, "new rows carry no signal");
  Mat<double> logit_grad;
  const auto w = batch_loss_weights(batch, l, 6);
  weighted_bce_sum(lg.logits[0], batch[0].actions, w[0], batch[0].loss_mask, &logit_grad);
  c.expect(logit_grad.topRows(9).cwiseAbs().maxCoeff() == 0.0, "old-row logit gradient nonzero");
  const FdReport fd = model_fd(params, lg.grad, loss);
  c.expect(fd.overall <= 1e-5, "masked-loss FD error " + num(fd.overall));

  // All new vs full history: bit-identical loss and gradient.
  const auto fresh = tiny_events(cfg, 20, rng);
  std::vector<TrainingSequence> full{make_training_sequence(fresh, 6, 3, false)};
  std::vector<TrainingSequence> inc{make_training_sequence(fresh, 6, 3, true)};
  LossConfig lf = tiny_loss(full);
  const auto a = loss_and_gradient(params, std::span<const TrainingSequence>(full), cfg, lf, 8);
  lf.incremental = true;
  const auto b = loss_and_gradient(params, std::span<const TrainingSequence>(inc), cfg, lf, 8);
  bool grads_equal = true;
  auto ga = param_slots(const_cast<ModelParams<double>&>(a.grad));
  auto gb = param_slots(const_cast<ModelParams<double>&>(b.grad));
  for (std::size_t s = 0; s < ga.size(); ++s)
    for (Index k = 0; k < ga[s].size(); ++k) grads_equal = grads_equal && ga[s].data[k] == gb[s].data[k];
  c.expect(a.loss == b.loss, "cold-start loss differs");
  c.expect(grads_equal, "cold-start gradient differs");
  return {c.ok, "old rows: zero loss slope and zero logit gradient, FD error " + num(fd.overall) +
                    "; all-new loss " + num(b.loss, 17) + " equals full " + num(a.loss, 17) +
                    (c.ok ? "" : " (" + c.notes.str() + ")")};
}

}  // namespace

int main(int argc, char** argv) {
  struct Criterion {
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> all{
      {"multi-item scoring equivalence", scoring_equivalence},
      {"tiled attention correctness", tiled_attention_exact},
      {"desk-scale speedups", desk_speedups},
      {"gradient fidelity", gradient_fidelity},
      {"bucketized AUC", bucketized_auc},
      {"loss weighting exactness", loss_weighting},
      {"learning sanity", learning_sanity},
      {"leakage direction", leakage_direction},
      {"structural invariants", structural_invariants},
      {"format fidelity", format_fidelity},
      {"incremental training", incremental_training},
  };
  // Optional: run a subset by number, e.g. `acceptance 4 9`.
  std::vector<bool> wanted(all.size(), argc <= 1);
  for (int i = 1; i < argc; ++i) {
    const int k = std::atoi(argv[i]);
    if (k >= 1 && k <= static_cast<int>(all.size())) wanted[k - 1] = true;
  }
  int failed = 0;
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (!wanted[i]) continue;
    Outcome o;
    try {
      o = all[i].run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  [" << i + 1 << "] " << all[i].name << ": " << o.detail << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
