#include "seqrank/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

#include "seqrank/checkpoint.hpp"
#include "seqrank/inference.hpp"
#include "seqrank/metrics.hpp"
#include "seqrank/training.hpp"

namespace seqrank {

namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string fmt(const std::optional<double>& v) {
  if (!v) return "nan";
  std::ostringstream os;
  os << std::setprecision(6) << std::fixed << *v;
  return os.str();
}

std::string fmt(double v) { return fmt(std::optional<double>(v)); }

int long_dwell_index(const ModelConfig& cfg) {
  const int i = cfg.task_index("longDwell");
  return i >= 0 ? i : 0;
}

}  // namespace

// ----------------------------------------------------------------- metrics

std::vector<TaskAuc> compute_auc(const std::vector<std::vector<double>>& scores,
                                 const std::vector<std::vector<std::uint8_t>>& labels, std::size_t buckets) {
  std::vector<TaskAuc> out(scores.size());
  for (std::size_t m = 0; m < scores.size(); ++m) {
    out[m].exact = exact_auc(scores[m], labels[m]);
    AucHistogram h(buckets);
    for (std::size_t i = 0; i < scores[m].size(); ++i) h.add(scores[m][i], labels[m][i] != 0);
    out[m].bucketized = h.finalize();
  }
  return out;
}

// -------------------------------------------------------------------- data

Mat<double> estimate_propensities(const std::vector<TrainingSequence>& seqs, Index positions, Index tasks) {
  Mat<double> hits = Mat<double>::Zero(positions, tasks);
  Vec<double> shown = Vec<double>::Zero(positions);
  for (const auto& s : seqs)
    for (Index t = 0; t < s.length(); ++t) {
      const int p = s.feed_positions[t];
      if (p < 1 || p > positions) continue;
      shown(p - 1) += 1;
      for (Index m = 0; m < tasks; ++m) hits(p - 1, m) += s.actions(t, m);
    }
  Mat<double> table = Mat<double>::Ones(positions, tasks);
  for (Index m = 0; m < tasks; ++m) {
    const double base = shown(0) > 0 ? hits(0, m) / shown(0) : 0.0;
    if (!(base > 0.0)) continue;
    for (Index p = 0; p < positions; ++p) {
      if (shown(p) < 30) {
        table(p, m) = p > 0 ? table(p - 1, m) : 1.0;
        continue;
      }
      table(p, m) = std::clamp(hits(p, m) / shown(p) / base, 0.05, 1.0);
    }
  }
  return table;
}

PreparedData prepare_data(const SyntheticDataset& ds, const ExperimentConfig& cfg) {
  const ModelConfig& mc = cfg.model;
  require(static_cast<Index>(ds.task_names.size()) == mc.tasks(), ErrorKind::DimMismatch,
          "dataset task count differs from the model's");
  require(ds.context_dim == mc.context_dim, ErrorKind::DimMismatch, "dataset context width differs from the model's");
  PreparedData out;
  Rng rng(cfg.seed ^ 0x5eed5eedULL);
  for (const auto& member : ds.members) {
    MemberSplit split = split_last_session(member);
    auto train = truncate_history(split.train, static_cast<std::size_t>(mc.max_history));
    if (!split.eval.empty()) {
      ScoringRequest req;
      req.history = train;  // serving always sees true chronological order
      req.candidate_context.resize(static_cast<Index>(split.eval.size()), mc.context_dim);
      Mat<float> labels(static_cast<Index>(split.eval.size()), mc.tasks());
      for (std::size_t i = 0; i < split.eval.size(); ++i) {
        const auto& e = split.eval[i];
        req.candidates.push_back(e.post_features);
        req.candidate_ids.push_back(static_cast<std::int64_t>(i));
        for (Index k = 0; k < mc.context_dim; ++k) req.candidate_context(static_cast<Index>(i), k) = e.context[k];
        for (Index m = 0; m < mc.tasks(); ++m) labels(static_cast<Index>(i), m) = e.action[m] ? 1.0f : 0.0f;
      }
      out.eval_inputs.push_back(serving_input(req, mc));
      out.eval_labels.push_back(std::move(labels));
    }
    if (cfg.train.shuffle_within_sessions) train = shuffle_within_sessions(std::move(train), rng);
    if (cfg.train.retain_p < 1.0) train = downsample_negatives(std::move(train), cfg.train.retain_p, cfg.loss.neg_weight, rng);
    if (train.empty()) continue;
    out.train.push_back(make_training_sequence(train, mc.tasks(), mc.context_dim, cfg.loss.incremental));
    out.train_events.push_back(std::move(train));
  }
  out.reference_timestamp = cfg.loss.reference_timestamp != 0 ? cfg.loss.reference_timestamp : ds.end_timestamp;
  if (cfg.loss.ipw_table.size())
    out.ipw_table = cfg.loss.ipw_table;
  else if (cfg.train.estimate_ipw)
    out.ipw_table = estimate_propensities(out.train, cfg.train.ipw_positions, mc.tasks());
  return out;
}

// ---------------------------------------------------------------- training

std::vector<TaskAuc> evaluate_serving(const ModelParams<float>& params, const ModelConfig& cfg, const PreparedData& data,
                                      std::size_t buckets) {
  const Index tasks = cfg.tasks();
  std::vector<std::vector<double>> scores(tasks);
  std::vector<std::vector<std::uint8_t>> labels(tasks);
  for (std::size_t r = 0; r < data.eval_inputs.size(); ++r) {
    const Mat<float> probs = score_candidates_batched(data.eval_inputs[r], params, cfg);
    for (Index i = 0; i < probs.rows(); ++i)
      for (Index m = 0; m < tasks; ++m) {
        scores[m].push_back(probs(i, m));
        labels[m].push_back(data.eval_labels[r](i, m) > 0.5f);
      }
  }
  return compute_auc(scores, labels, buckets);
}

std::vector<TaskAuc> evaluate_training(const ModelParams<float>& params, const ModelConfig& cfg,
                                       const PreparedData& data, std::size_t buckets) {
  const Index tasks = cfg.tasks();
  std::vector<std::vector<double>> scores(tasks);
  std::vector<std::vector<std::uint8_t>> labels(tasks);
  for (const auto& seq : data.train) {
    const Mat<float> probs = predict_probabilities(forward_train(seq, params, cfg, HeadMode::Infer));
    for (Index t = 0; t < seq.length(); ++t) {
      if (!seq.loss_mask[t]) continue;
      for (Index m = 0; m < tasks; ++m) {
        scores[m].push_back(probs(t, m));
        labels[m].push_back(seq.actions(t, m) > 0.5f);
      }
    }
  }
  return compute_auc(scores, labels, buckets);
}

RunResult train_model(const ExperimentConfig& cfg, const PreparedData& data, std::ostream* log) {
  const ModelConfig& mc = cfg.model;
  require(!data.train.empty(), ErrorKind::DegenerateBatch, "no training sequences");
  LossConfig loss = cfg.loss;
  loss.reference_timestamp = data.reference_timestamp;
  loss.ipw_table = data.ipw_table;
  loss.validate();

  RunResult res;
  const auto start = Clock::now();
  TrainState<float> state(init_model<float>(mc, cfg.seed), cfg.seed + 1);
  Rng order_rng(cfg.seed + 2);
  const std::size_t buckets = cfg.train.auc_buckets;

  auto record_epoch = [&](Index epoch, double loss_value) {
    EpochMetrics em;
    em.epoch = epoch;
    em.loss = loss_value;
    em.train_auc = evaluate_training(state.params, mc, data, buckets);
    em.eval_auc = evaluate_serving(state.params, mc, data, buckets);
    if (log) {
      const int ld = long_dwell_index(mc);
      *log << "epoch " << epoch << " loss " << fmt(loss_value) << " train_auc(" << mc.task_names[ld]
           << ") " << fmt(em.train_auc[ld].exact) << " eval_auc " << fmt(em.eval_auc[ld].exact) << '\n';
    }
    res.epochs.push_back(std::move(em));
  };
  record_epoch(0, std::nan(""));

  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t bs = static_cast<std::size_t>(cfg.train.batch_size);
  std::vector<TrainingSequence> batch;
  for (Index epoch = 1; epoch <= cfg.train.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(order_rng, i)]);
    double loss_sum = 0.0;
    Index steps = 0;
    for (std::size_t b = 0; b < order.size(); b += bs) {
      batch.clear();
      for (std::size_t k = b; k < std::min(order.size(), b + bs); ++k) batch.push_back(data.train[order[k]]);
      const StepResult sr = train_step(state, std::span<const TrainingSequence>(batch), mc, loss, cfg.train.optimizer);
      res.steps.push_back({static_cast<Index>(state.step), sr.loss, sr.mean_prediction, sr.mean_label});
      res.sequences_seen += static_cast<Index>(batch.size());
      loss_sum += sr.loss;
      ++steps;
    }
    record_epoch(epoch, loss_sum / static_cast<double>(std::max<Index>(steps, 1)));
  }
  res.params = std::move(state.params);
  res.seconds = std::chrono::duration<double>(Clock::now() - start).count();
  return res;
}

FlopEstimate estimate_flops(Index dense_params, Index seq_len, double sequences_seen) {
  require(dense_params > 0 && seq_len > 0 && sequences_seen > 0, ErrorKind::Precondition,
          "FLOP estimate needs positive params, sequence length and sequences");
  return {dense_params, seq_len, sequences_seen,
          6.0 * static_cast<double>(dense_params) * static_cast<double>(seq_len) * sequences_seen};
}

bool sessions_preserved(const std::vector<InteractionEvent>& original, const std::vector<InteractionEvent>& shuffled) {
  if (original.size() != shuffled.size()) return false;
  auto key = [](const InteractionEvent& e) { return std::make_pair(e.timestamp, e.feed_position); };
  std::size_t i = 0;
  while (i < original.size()) {
    std::size_t j = i;
    while (j < original.size() && original[j].session_id == original[i].session_id) ++j;
    std::vector<std::pair<std::int64_t, int>> a, b;
    for (std::size_t k = i; k < j; ++k) {
      if (shuffled[k].session_id != original[i].session_id) return false;
      a.push_back(key(original[k]));
      b.push_back(key(shuffled[k]));
    }
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    if (a != b) return false;
    i = j;
  }
  return true;
}

double tail_cov(const std::vector<double>& series) {
  if (series.size() < 2) return 0.0;
  const std::size_t start = series.size() / 2;
  double sum = 0.0, sq = 0.0;
  const double n = static_cast<double>(series.size() - start);
  for (std::size_t i = start; i < series.size(); ++i) sum += series[i];
  const double mean = sum / n;
  for (std::size_t i = start; i < series.size(); ++i) sq += (series[i] - mean) * (series[i] - mean);
  if (mean == 0.0) return 0.0;
  return std::sqrt(sq / n) / std::abs(mean);
}

// ------------------------------------------------------------- experiments

Index LeakageReport::seeds_in_direction() const {
  return std::count_if(rows.begin(), rows.end(), [](const LeakageRow& r) { return r.chrono_gap() > r.shuffled_gap(); });
}

LeakageReport run_leakage(const ExperimentConfig& base, std::ostream* log) {
  require(base.synthetic.rho > 0.0, ErrorKind::Config, "leakage experiment needs rho > 0 (nothing to detect at rho = 0)");
  LeakageReport rep;
  rep.sessions_audited = true;
  for (std::uint64_t seed : base.seeds) {
    ExperimentConfig cfg = base;
    cfg.seed = seed;
    cfg.synthetic.seed = seed;
    const SyntheticDataset ds = synth_generate(cfg.synthetic, cfg.model.transformer.d_model);
    const int ld = long_dwell_index(cfg.model);
    LeakageRow row;
    row.seed = seed;
    for (bool shuffled : {false, true}) {
      cfg.train.shuffle_within_sessions = shuffled;
      const PreparedData data = prepare_data(ds, cfg);
      if (shuffled) {
        cfg.train.shuffle_within_sessions = false;
        const PreparedData chrono = prepare_data(ds, cfg);
        for (std::size_t i = 0; i < data.train_events.size(); ++i)
          rep.sessions_audited = rep.sessions_audited && sessions_preserved(chrono.train_events[i], data.train_events[i]);
      }
      const RunResult rr = train_model(cfg, data, nullptr);
      const auto& last = rr.epochs.back();
      const double tr = last.train_auc[ld].exact.value_or(0.5), ev = last.eval_auc[ld].exact.value_or(0.5);
      (shuffled ? row.shuffled_train : row.chrono_train) = tr;
      (shuffled ? row.shuffled_eval : row.chrono_eval) = ev;
    }
    if (log)
      *log << "seed " << seed << " chronological gap " << fmt(row.chrono_gap()) << " shuffled gap "
           << fmt(row.shuffled_gap()) << '\n';
    rep.rows.push_back(row);
  }
  return rep;
}

PositionalReport run_positional_compare(const ExperimentConfig& base, std::ostream* log) {
  PositionalReport rep;
  const SyntheticDataset ds = synth_generate(base.synthetic, base.model.transformer.d_model);
  const int ld = long_dwell_index(base.model);
  for (PositionalMode mode : {PositionalMode::Rope, PositionalMode::LearnedAbsolute}) {
    ExperimentConfig cfg = base;
    cfg.model.transformer.positional = mode;
    const PreparedData data = prepare_data(ds, cfg);
    const RunResult rr = train_model(cfg, data, nullptr);
    std::vector<double> preds;
    for (const auto& s : rr.steps) preds.push_back(s.mean_prediction[ld]);
    const double cov = tail_cov(preds);
    const auto auc = rr.epochs.back().eval_auc[ld].exact;
    if (mode == PositionalMode::Rope) {
      rep.rope_cov = cov;
      rep.rope_eval_auc = auc;
    } else {
      rep.absolute_cov = cov;
      rep.absolute_eval_auc = auc;
    }
    if (log) {
      *log << to_string(mode) << " cov " << fmt(cov) << " eval_auc " << fmt(auc) << '\n';
      if (!base.output_dir.empty()) {
        std::ofstream out(fs::path(base.output_dir) / (std::string("series_") + to_string(mode) + ".csv"));
        out << "step,mean_prediction,mean_label\n";
        for (const auto& s : rr.steps) out << s.step << ',' << s.mean_prediction[ld] << ',' << s.mean_label[ld] << '\n';
      }
    }
  }
  return rep;
}

// -------------------------------------------------------------- benchmarks

FeatureRecord random_post(const FeatureSchema& schema, Rng& rng) {
  FeatureRecord r;
  for (const auto& f : schema.features()) {
    switch (f.kind) {
      case FeatureKind::CategoricalId: r.emplace_back(static_cast<std::int64_t>(uniform_index(rng, 1u << 20))); break;
      case FeatureKind::Numeric:
      case FeatureKind::DenseEmbedding: {
        std::vector<float> v(f.dim);
        for (auto& x : v) x = static_cast<float>(f.transform == Transform::Log1p ? 5.0 * uniform01(rng) : normal01(rng));
        r.emplace_back(std::move(v));
        break;
      }
      case FeatureKind::MultiHotSparse: {
        std::vector<std::int64_t> v;
        const auto n = uniform_index(rng, 4);
        for (std::uint64_t i = 0; i < n; ++i) v.push_back(static_cast<std::int64_t>(uniform_index(rng, f.vocab)));
        r.emplace_back(std::move(v));
        break;
      }
    }
  }
  return r;
}

ServingInput random_serving_input(const ModelConfig& cfg, Index history, Index candidates, Rng& rng) {
  ServingInput in;
  in.history_actions.resize(history, cfg.tasks());
  for (Index t = 0; t < history; ++t) {
    in.history_posts.push_back(random_post(cfg.schema, rng));
    for (Index m = 0; m < cfg.tasks(); ++m) in.history_actions(t, m) = bernoulli(rng, 0.3) ? 1.0f : 0.0f;
  }
  in.candidate_context.resize(candidates, cfg.context_dim);
  for (Index i = 0; i < candidates; ++i) {
    in.candidate_posts.push_back(random_post(cfg.schema, rng));
    for (Index k = 0; k < cfg.context_dim; ++k) in.candidate_context(i, k) = static_cast<float>(normal01(rng));
  }
  return in;
}

AttnBench bench_attention(Index context_tokens, Index candidates, Index d_model, Index heads, Index tile, Index repeats,
                          std::uint64_t seed) {
  Rng rng(seed);
  const AttentionPattern pattern{context_tokens, candidates};
  const Index n = pattern.size();
  Mat<float> q(n, d_model), k(n, d_model), v(n, d_model);
  for (Mat<float>* m : {&q, &k, &v})
    for (Index i = 0; i < m->size(); ++i) m->data()[i] = static_cast<float>(normal01(rng));
  AttnBench b;
  std::vector<double> dense, tiled;
  volatile float sink = 0;
  for (Index r = 0; r < repeats; ++r) {
    auto t0 = Clock::now();
    const Mask mask = multi_item_mask(context_tokens, candidates);
    Mat<float> a = masked_attention(q, k, v, mask, heads);
    dense.push_back(elapsed_ms(t0));
    TileStats stats;
    t0 = Clock::now();
    Mat<float> c = tiled_attention(q, k, v, pattern, heads, tile, AttentionActivation::Softmax, &stats);
    tiled.push_back(elapsed_ms(t0));
    sink = sink + a(0, 0) + c(0, 0);
    b.tiles_visited = stats.visited;
    b.tiles_skipped = stats.skipped;
  }
  b.dense_ms = median(dense);
  b.tiled_ms = median(tiled);
  return b;
}

ScoringBench bench_scoring(const ModelConfig& cfg, Index history, Index candidates, Index repeats, std::uint64_t seed) {
  Rng rng(seed);
  const ModelParams<float> params = init_model<float>(cfg, seed);
  const ServingInput in = random_serving_input(cfg, history, candidates, rng);
  ScoringBench b;
  std::vector<double> batched, sequential;
  for (Index r = 0; r < repeats; ++r) {
    auto t0 = Clock::now();
    const Mat<float> a = score_candidates_batched(in, params, cfg);
    batched.push_back(elapsed_ms(t0));
    t0 = Clock::now();
    const Mat<float> s = score_candidates_sequential(in, params, cfg);
    sequential.push_back(elapsed_ms(t0));
    b.max_abs_diff = std::max(b.max_abs_diff, static_cast<double>((a - s).cwiseAbs().maxCoeff()));
  }
  b.batched_ms = median(batched);
  b.sequential_ms = median(sequential);
  return b;
}

ParseBench bench_parse(const std::vector<Index>& sizes, Index repeats, std::uint64_t seed) {
  Rng rng(seed);
  SyntheticConfig sc;
  const FeatureSchema schema = synthetic_schema(64, sc);
  ParseBench b;
  for (Index n : sizes) {
    std::vector<FeatureRecord> items;
    for (Index i = 0; i < n; ++i) items.push_back(random_post(schema, rng));
    const auto bytes = encode_history(items, schema);
    std::vector<double> times;
    std::size_t setups = 0;
    const Index inner = 200;
    volatile std::size_t sink = 0;  // keeps the parse from being optimized away
    for (Index r = 0; r < repeats; ++r) {
      const auto t0 = Clock::now();
      for (Index k = 0; k < inner; ++k) {
        const ParsedHistory p = parse_history(bytes, schema);
        setups = p.column_setups;
        sink = sink + p.columns.back().count;
      }
      times.push_back(elapsed_ms(t0) * 1000.0 / static_cast<double>(inner));
    }
    b.sizes.push_back(n);
    b.microseconds.push_back(median(times));
    b.column_setups.push_back(setups);
  }
  return b;
}

// ----------------------------------------------------------------- inspect

void inspect_file(const std::string& path, std::ostream& out) {
  const auto bytes = read_file(path);
  require(bytes.size() >= kHeaderBytes, ErrorKind::Truncation, "file shorter than the .sqrk header");
  for (std::size_t i = 0; i < 4; ++i)
    require(static_cast<char>(bytes[i]) == kSqrkMagic[i], ErrorKind::Format, "bad magic");
  const auto version = detail::load_le<std::uint16_t>(bytes.data() + 4);
  const auto n = detail::load_le<std::uint32_t>(bytes.data() + 6);
  const auto f = detail::load_le<std::uint32_t>(bytes.data() + 10);
  out << path << "\n  version " << version << "  items " << n << "  features " << f << "  bytes " << bytes.size()
      << '\n';

  // Schema from a neighbouring manifest when there is one.
  std::optional<FeatureSchema> schema;
  const fs::path manifest = fs::path(path).parent_path() / "manifest.json";
  if (fs::exists(manifest)) {
    try {
      const Json j = read_json(manifest.string());
      const FeatureSchema posts = schema_from_json(j.at("schema"));
      const Index ctx = j.at("context_dim").get<Index>();
      const bool candidates = fs::path(path).filename().string().find("candidates") != std::string::npos;
      schema = candidates ? candidate_schema(posts, ctx)
                          : event_schema(posts, static_cast<Index>(j.at("tasks").size()), ctx);
      if (schema->size() != f) schema.reset();
    } catch (const std::exception&) {
      schema.reset();
    }
  }
  if (schema) {
    const ParsedHistory parsed = parse_history(bytes, *schema);
    for (std::size_t c = 0; c < parsed.columns.size(); ++c) {
      const ColumnView& col = parsed.columns[c];
      const FeatureSpec& spec = (*schema)[c];
      out << "  [" << c << "] " << spec.name << "  " << to_string(spec.kind) << "  "
          << (col.type == ElementType::I64 ? "i64" : "f32") << "  values " << col.count;
      if (col.count > 0) {
        double lo = 0, hi = 0;
        for (std::uint32_t k = 0; k < col.count; ++k) {
          const double x = col.type == ElementType::I64 ? static_cast<double>(col.i64(k)) : col.f32(k);
          lo = k ? std::min(lo, x) : x;
          hi = k ? std::max(hi, x) : x;
        }
        out << "  min " << lo << "  max " << hi;
      }
      out << '\n';
    }
    return;
  }
  // Without a schema: walk the columns, treating a block as multi-hot when a
  // valid offsets array fits in front of its values.
  std::size_t pos = kHeaderBytes;
  for (std::uint32_t c = 0; c < f; ++c) {
    require(pos + kColumnHeaderBytes <= bytes.size(), ErrorKind::Truncation, "truncated column header");
    const auto idx = detail::load_le<std::uint16_t>(bytes.data() + pos);
    const auto tag = static_cast<std::uint8_t>(bytes[pos + 2]);
    const auto count = detail::load_le<std::uint32_t>(bytes.data() + pos + 3);
    pos += kColumnHeaderBytes;
    const std::size_t width = tag == 0 ? 8 : 4;
    bool multi = false;
    const std::size_t off_bytes = (static_cast<std::size_t>(n) + 1) * 4;
    if (tag == 0 && pos + off_bytes + count * width <= bytes.size()) {
      const auto first = detail::load_le<std::uint32_t>(bytes.data() + pos);
      const auto last = detail::load_le<std::uint32_t>(bytes.data() + pos + n * 4);
      const std::size_t end = pos + off_bytes + count * width;
      const bool aligned = end == bytes.size() || (end + kColumnHeaderBytes <= bytes.size() &&
                                                   detail::load_le<std::uint16_t>(bytes.data() + end) == idx + 1);
      multi = first == 0 && last == count && aligned && count != n;
    }
    if (multi) pos += off_bytes;
    out << "  [" << idx << "] " << (tag == 0 ? "i64" : "f32") << "  values " << count
        << (multi ? "  multi-hot" : "") << '\n';
    pos += count * width;
  }
}

// ------------------------------------------------------------------ driver

namespace {

void write_metrics_csv(const std::string& path, const ModelConfig& mc, const RunResult& rr) {
  std::ofstream out(path);
  out << "epoch,loss";
  for (const auto& split : {"train", "eval"})
    for (const auto& t : mc.task_names) out << ',' << split << '_' << t << "_auc_exact," << split << '_' << t << "_auc_bucketized";
  out << '\n';
  for (const auto& e : rr.epochs) {
    out << e.epoch << ',' << (std::isnan(e.loss) ? std::string("nan") : fmt(e.loss));
    for (const auto* aucs : {&e.train_auc, &e.eval_auc})
      for (const auto& a : *aucs) out << ',' << fmt(a.exact) << ',' << fmt(a.bucketized);
    out << '\n';
  }
}

void write_steps_csv(const std::string& path, const ModelConfig& mc, const RunResult& rr) {
  std::ofstream out(path);
  out << "step,loss";
  for (const auto& t : mc.task_names) out << ",mean_pred_" << t << ",mean_label_" << t;
  out << '\n';
  for (const auto& s : rr.steps) {
    out << s.step << ',' << fmt(s.loss);
    for (std::size_t m = 0; m < s.mean_prediction.size(); ++m)
      out << ',' << fmt(s.mean_prediction[m]) << ',' << fmt(s.mean_label[m]);
    out << '\n';
  }
}

void write_bundle(const fs::path& dir, const ModelConfig& mc) {
  Json weights = Json::object();
  for (const auto& t : mc.task_names) weights[t] = t == "skip" ? -0.5 : (t == "longDwell" ? 1.0 : 0.5);
  write_json((dir / "config.json").string(),
             {{"scorer",
               {{"sources", Json::array({{{"name", "ranker"}, {"checkpoint", "model"}, {"kind", "ranking"}}})},
                {"objective_weights", weights}}}});
}

int run_train(const ExperimentConfig& cfg, std::ostream& log) {
  const fs::path dir(cfg.output_dir);
  const SyntheticDataset ds = synth_generate(cfg.synthetic, cfg.model.transformer.d_model);
  const PreparedData data = prepare_data(ds, cfg);
  log << "members " << ds.members.size() << "  training sequences " << data.train.size() << "  eval requests "
      << data.eval_inputs.size() << '\n';
  const RunResult rr = train_model(cfg, data, &log);
  write_metrics_csv((dir / "metrics.csv").string(), cfg.model, rr);
  write_steps_csv((dir / "steps.csv").string(), cfg.model, rr);
  save_checkpoint((dir / "model").string(), rr.params, cfg.model);
  write_bundle(dir, cfg.model);
  log << "trained in " << fmt(rr.seconds) << " s; outputs in " << dir.string() << '\n';
  return 0;
}

int run_eval(const ExperimentConfig& cfg, std::ostream& log) {
  const fs::path dir(cfg.output_dir);
  const Checkpoint ck = load_checkpoint((dir / "model").string());
  ExperimentConfig c = cfg;
  c.model = ck.config;
  const SyntheticDataset ds = synth_generate(c.synthetic, c.model.transformer.d_model);
  const PreparedData data = prepare_data(ds, c);
  const auto train = evaluate_training(ck.params, c.model, data, c.train.auc_buckets);
  const auto eval = evaluate_serving(ck.params, c.model, data, c.train.auc_buckets);
  std::ofstream out(dir / "eval.csv");
  out << "task,train_auc_exact,train_auc_bucketized,eval_auc_exact,eval_auc_bucketized\n";
  for (Index m = 0; m < c.model.tasks(); ++m) {
    out << c.model.task_names[m] << ',' << fmt(train[m].exact) << ',' << fmt(train[m].bucketized) << ','
        << fmt(eval[m].exact) << ',' << fmt(eval[m].bucketized) << '\n';
    log << c.model.task_names[m] << "  train " << fmt(train[m].exact) << "  eval " << fmt(eval[m].exact) << '\n';
  }
  return 0;
}

int run_sweep(const ExperimentConfig& cfg, std::ostream& log) {
  require(cfg.sweep.size() >= 3, ErrorKind::Config, "a scale sweep needs at least 3 configs");
  std::ofstream out(fs::path(cfg.output_dir) / "sweep.csv");
  out << "point,layers,d_model,seq_len,dense_params,sequences_seen,flops,log10_flops";
  for (const auto& t : cfg.model.task_names) out << ",eval_" << t << "_auc";
  out << '\n';
  Json base = to_json(cfg);
  base.erase("sweep");
  // Schema and context dim follow the synthetic generator for each point.
  base["model"].erase("schema");
  base["model"].erase("context_dim");
  base["model"]["head"].erase("task_group");
  for (std::size_t i = 0; i < cfg.sweep.size(); ++i) {
    Json merged = merge_json(base, cfg.sweep[i]);
    merged["kind"] = "train";
    ExperimentConfig pc = experiment_config_from_json(merged);
    if (!cfg.sweep[i].contains("model") || !cfg.sweep[i]["model"].contains("transformer") ||
        !cfg.sweep[i]["model"]["transformer"].contains("ffn_hidden"))
      pc.model.transformer.ffn_hidden = 4 * pc.model.transformer.d_model;
    const SyntheticDataset ds = synth_generate(pc.synthetic, pc.model.transformer.d_model);
    const PreparedData data = prepare_data(ds, pc);
    RunResult rr = train_model(pc, data, nullptr);
    const FlopEstimate fe =
        estimate_flops(dense_parameter_count(rr.params), pc.model.max_history, static_cast<double>(rr.sequences_seen));
    out << i << ',' << pc.model.transformer.layers << ',' << pc.model.transformer.d_model << ',' << fe.seq_len << ','
        << fe.dense_params << ',' << fe.sequences_seen << ',' << fe.flops << ',' << fmt(std::log10(fe.flops));
    for (const auto& a : rr.epochs.back().eval_auc) out << ',' << fmt(a.exact);
    out << '\n';
    log << "point " << i << "  log10 flops " << fmt(std::log10(fe.flops)) << "  eval longDwell "
        << fmt(rr.epochs.back().eval_auc[long_dwell_index(pc.model)].exact) << '\n';
  }
  return 0;
}

}  // namespace

int run_experiment(const ExperimentConfig& cfg, std::ostream& log) {
  fs::create_directories(cfg.output_dir);
  write_json((fs::path(cfg.output_dir) / "resolved_config.json").string(), to_json(cfg));
  switch (cfg.kind) {
    case RunKind::Train: return run_train(cfg, log);
    case RunKind::Eval: return run_eval(cfg, log);
    case RunKind::ScaleSweep: return run_sweep(cfg, log);
    case RunKind::Leakage: {
      const LeakageReport rep = run_leakage(cfg, &log);
      std::ofstream out(fs::path(cfg.output_dir) / "leakage.csv");
      out << "seed,chrono_train_auc,chrono_eval_auc,chrono_gap,shuffled_train_auc,shuffled_eval_auc,shuffled_gap\n";
      for (const auto& r : rep.rows)
        out << r.seed << ',' << fmt(r.chrono_train) << ',' << fmt(r.chrono_eval) << ',' << fmt(r.chrono_gap()) << ','
            << fmt(r.shuffled_train) << ',' << fmt(r.shuffled_eval) << ',' << fmt(r.shuffled_gap()) << '\n';
      log << "chronological gap larger in " << rep.seeds_in_direction() << " of " << rep.rows.size()
          << " seeds; session audit " << (rep.sessions_audited ? "ok" : "FAILED") << '\n';
      return rep.sessions_audited ? 0 : 1;
    }
    case RunKind::PositionalCompare: {
      const PositionalReport rep = run_positional_compare(cfg, &log);
      std::ofstream out(fs::path(cfg.output_dir) / "positional.csv");
      out << "mode,cov,eval_long_dwell_auc\n";
      out << "rope," << fmt(rep.rope_cov) << ',' << fmt(rep.rope_eval_auc) << '\n';
      out << "learned_absolute," << fmt(rep.absolute_cov) << ',' << fmt(rep.absolute_eval_auc) << '\n';
      return 0;
    }
    case RunKind::BenchAttn: {
      const auto& b = cfg.bench;
      const AttnBench r = bench_attention(b.context_tokens, b.candidates, cfg.model.transformer.d_model,
                                          cfg.model.transformer.heads, b.tile, b.repeats, cfg.seed);
      std::ofstream out(fs::path(cfg.output_dir) / "bench_attn.csv");
      out << "L,N,tile,dense_ms,tiled_ms,speedup,tiles_visited,tiles_skipped\n"
          << b.context_tokens << ',' << b.candidates << ',' << b.tile << ',' << fmt(r.dense_ms) << ','
          << fmt(r.tiled_ms) << ',' << fmt(r.speedup()) << ',' << r.tiles_visited << ',' << r.tiles_skipped << '\n';
      log << "dense " << fmt(r.dense_ms) << " ms  tiled " << fmt(r.tiled_ms) << " ms  speedup " << fmt(r.speedup())
          << "  skipped " << r.tiles_skipped << '/' << r.tiles_visited + r.tiles_skipped << '\n';
      return 0;
    }
    case RunKind::BenchScoring: {
      const auto& b = cfg.bench;
      const ScoringBench r = bench_scoring(cfg.model, b.history, b.candidates, b.repeats, cfg.seed);
      std::ofstream out(fs::path(cfg.output_dir) / "bench_scoring.csv");
      out << "T,N,batched_ms,sequential_ms,speedup,max_abs_diff\n"
          << b.history << ',' << b.candidates << ',' << fmt(r.batched_ms) << ',' << fmt(r.sequential_ms) << ','
          << fmt(r.speedup()) << ',' << r.max_abs_diff << '\n';
      log << "batched " << fmt(r.batched_ms) << " ms  sequential " << fmt(r.sequential_ms) << " ms  speedup "
          << fmt(r.speedup()) << '\n';
      return 0;
    }
    case RunKind::BenchParse: {
      const ParseBench r = bench_parse(cfg.bench.parse_sizes, cfg.bench.repeats, cfg.seed);
      std::ofstream out(fs::path(cfg.output_dir) / "bench_parse.csv");
      out << "items,parse_us,column_setups\n";
      for (std::size_t i = 0; i < r.sizes.size(); ++i) {
        out << r.sizes[i] << ',' << fmt(r.microseconds[i]) << ',' << r.column_setups[i] << '\n';
        log << r.sizes[i] << " items: " << fmt(r.microseconds[i]) << " us, " << r.column_setups[i]
            << " column setups\n";
      }
      return 0;
    }
  }
  return 1;
}

}  // namespace seqrank
