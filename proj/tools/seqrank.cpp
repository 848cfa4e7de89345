#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "seqrank/checkpoint.hpp"
#include "seqrank/config.hpp"
#include "seqrank/dataset_io.hpp"
#include "seqrank/harness.hpp"
#include "seqrank/scorer_bundle.hpp"

namespace fs = std::filesystem;
using namespace seqrank;

namespace {

struct Common {
  std::string config;
  std::uint64_t seed = 0;
  bool has_seed = false;
  std::string out;
};

void add_common(CLI::App* app, Common& c, bool config_required) {
  auto* opt = app->add_option("--config", c.config, "experiment config (JSON)");
  if (config_required) opt->required()->check(CLI::ExistingFile);
  app->add_option("--seed", c.seed, "overrides the config seed")->each([&c](const std::string&) { c.has_seed = true; });
  app->add_option("--out", c.out, "output directory (overrides output_dir)");
}

ExperimentConfig load(const Common& c, std::optional<RunKind> force) {
  Json j = c.config.empty() ? Json::object() : read_json(c.config);
  if (c.has_seed) {
    j["seed"] = c.seed;
    if (j.contains("synthetic")) j["synthetic"].erase("seed");
  }
  if (!c.out.empty()) j["output_dir"] = c.out;
  if (force) j["kind"] = to_string(*force);
  return experiment_config_from_json(j);
}

int run(const Common& c, std::optional<RunKind> force) {
  const ExperimentConfig cfg = load(c, force);
  return run_experiment(cfg, std::cout);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"seqrank: interleaved-sequence transformer ranker"};
  app.require_subcommand(1);

  Common train_c, eval_c, sweep_c, bench_c, leak_c, pos_c, synth_c, score_c;
  auto* train = app.add_subcommand("train", "train on synthetic data and write metrics + checkpoint");
  add_common(train, train_c, true);
  auto* eval = app.add_subcommand("eval", "re-evaluate the checkpoint in output_dir");
  add_common(eval, eval_c, true);
  auto* sweep = app.add_subcommand("sweep", "scale sweep: one training run per override");
  add_common(sweep, sweep_c, true);
  auto* bench = app.add_subcommand("bench", "micro-benchmarks");
  add_common(bench, bench_c, false);
  std::string bench_kind = "attn";
  bench->add_option("--kind", bench_kind, "attn | parse | scoring")
      ->check(CLI::IsMember({"attn", "parse", "scoring"}));
  auto* leak = app.add_subcommand("leakage", "chronological vs session-shuffled training");
  add_common(leak, leak_c, true);
  auto* pos = app.add_subcommand("positional", "RoPE vs learned absolute positions");
  add_common(pos, pos_c, true);

  auto* inspect = app.add_subcommand("inspect", "describe a .sqrk file");
  std::string inspect_path;
  inspect->add_option("file", inspect_path)->required()->check(CLI::ExistingFile);

  auto* synth = app.add_subcommand("synth", "write a synthetic dataset and scoring requests to disk");
  add_common(synth, synth_c, false);
  Index synth_requests = 64;
  synth->add_option("--requests", synth_requests, "number of scoring requests");

  auto* score = app.add_subcommand("score", "score candidate requests with a scorer bundle");
  add_common(score, score_c, false);
  std::string bundle_path, requests_dir, scores_out = "scores.csv";
  score->add_option("--bundle", bundle_path, "scorer bundle config")->required()->check(CLI::ExistingFile);
  score->add_option("--requests", requests_dir, "requests directory")->required()->check(CLI::ExistingDirectory);
  score->remove_option(score->get_option("--out"));
  score->add_option("--out", scores_out, "output CSV");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) return run(train_c, RunKind::Train);
    if (*eval) return run(eval_c, RunKind::Eval);
    if (*sweep) return run(sweep_c, RunKind::ScaleSweep);
    if (*leak) return run(leak_c, RunKind::Leakage);
    if (*pos) return run(pos_c, RunKind::PositionalCompare);
    if (*bench) {
      const RunKind k = bench_kind == "attn" ? RunKind::BenchAttn
                        : bench_kind == "parse" ? RunKind::BenchParse
                                                : RunKind::BenchScoring;
      return run(bench_c, k);
    }
    if (*inspect) {
      inspect_file(inspect_path, std::cout);
      return 0;
    }
    if (*synth) {
      const ExperimentConfig cfg = load(synth_c, std::nullopt);
      const SyntheticDataset ds = synth_generate(cfg.synthetic, cfg.model.transformer.d_model);
      const fs::path dir(cfg.output_dir);
      write_dataset((dir / "dataset").string(), ds);
      const auto reqs = requests_from_dataset(ds, synth_requests, cfg.model.max_history);
      write_requests((dir / "requests").string(), reqs, ds.schema, ds.task_names, ds.context_dim);
      std::cout << "wrote " << ds.members.size() << " members and " << reqs.size() << " requests under "
                << dir.string() << '\n';
      return 0;
    }
    if (*score) {
      const ScorerBundle bundle = load_scorer_bundle(bundle_path);
      const ModelConfig& mc = bundle.ranking.config;
      const auto reqs = read_requests(requests_dir, mc.schema, mc.tasks(), mc.context_dim);
      std::vector<ScoredRequest> scored;
      scored.reserve(reqs.size());
      for (const auto& r : reqs) scored.push_back(score_request(bundle, r));
      write_scores_csv(scores_out, mc.task_names, reqs, scored);
      std::cout << "scored " << reqs.size() << " requests -> " << scores_out << '\n';
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
