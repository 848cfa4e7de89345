#include "seqrank/scorer_bundle.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <set>

#include "seqrank/config.hpp"

namespace seqrank {

namespace fs = std::filesystem;

Vec<double> combine_objective(const ScoreSources& sources, const ObjectiveWeights& weights, Index n) {
  Vec<double> out = Vec<double>::Zero(n);
  for (const auto& [name, w] : weights) {
    const auto it = sources.find(name);
    if (it == sources.end()) throw Error(ErrorKind::Config, "objective weight for unknown source '" + name + "'");
    require(it->second.size() == n, ErrorKind::Shape, "source '" + name + "' has the wrong length");
    out += w * it->second;
  }
  return out;
}

RankedList rank_candidates(const std::vector<std::int64_t>& ids, const Vec<double>& final_scores) {
  require(static_cast<Index>(ids.size()) == final_scores.size(), ErrorKind::Shape, "ids and scores differ in length");
  RankedList r;
  r.order.resize(ids.size());
  std::iota(r.order.begin(), r.order.end(), Index{0});
  std::sort(r.order.begin(), r.order.end(), [&](Index a, Index b) {
    if (final_scores(a) != final_scores(b)) return final_scores(a) > final_scores(b);
    return ids[a] < ids[b];
  });
  r.final_scores.resize(final_scores.size());
  for (std::size_t k = 0; k < r.order.size(); ++k) {
    r.candidate_ids.push_back(ids[r.order[k]]);
    r.final_scores(static_cast<Index>(k)) = final_scores(r.order[k]);
  }
  return r;
}

Vec<double> AuxSource::score(const Mat<float>& context) const {
  require(context.cols() == weights.size(), ErrorKind::DimMismatch,
          "source '" + name + "' expects " + std::to_string(weights.size()) + " context features");
  Vec<double> out = context.cast<double>() * weights;
  out.array() += bias;
  return out;
}

ScorerBundle load_scorer_bundle(const std::string& path) {
  const Json doc = read_json(path);
  const fs::path base = fs::path(path).parent_path();
  auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? p : (base / p).string(); };

  if (!doc.is_object() || !doc.contains("scorer") || !doc["scorer"].is_object())
    throw Error(ErrorKind::Config, "bundle must be an object with a 'scorer' object");
  const Json& sc = doc["scorer"];
  if (!sc.contains("sources") || !sc["sources"].is_array() || !sc.contains("objective_weights") ||
      !sc["objective_weights"].is_object())
    throw Error(ErrorKind::Config, "'scorer' needs a 'sources' array and an 'objective_weights' object");

  ScorerBundle b;
  bool have_ranking = false;
  std::set<std::string> names;
  for (const auto& s : sc["sources"]) {
    if (!s.is_object() || !s.contains("name") || !s.contains("checkpoint") || !s.contains("kind") ||
        !s["name"].is_string() || !s["checkpoint"].is_string() || !s["kind"].is_string())
      throw Error(ErrorKind::Config, "each source needs string 'name', 'checkpoint' and 'kind'");
    const std::string name = s["name"], kind = s["kind"], ck = resolve(s["checkpoint"]);
    if (!names.insert(name).second) throw Error(ErrorKind::Config, "duplicate source name '" + name + "'");
    if (kind == "ranking") {
      if (have_ranking) throw Error(ErrorKind::Config, "bundle has more than one ranking source");
      const std::string stem = checkpoint_stem(ck);
      if (!fs::exists(stem + ".json") || !fs::exists(stem + ".bin"))
        throw Error(ErrorKind::MissingFile, "ranking checkpoint '" + ck + "' not found");
      b.ranking_name = name;
      b.ranking = load_checkpoint(ck);
      have_ranking = true;
    } else if (kind == "creator" || kind == "downstream") {
      if (!fs::exists(ck)) throw Error(ErrorKind::MissingFile, "source file '" + ck + "' not found");
      const Json a = read_json(ck);
      if (!a.is_object() || !a.contains("weights") || !a["weights"].is_array())
        throw Error(ErrorKind::Config, "source '" + name + "' needs a 'weights' array");
      AuxSource aux;
      aux.name = name;
      aux.kind = kind;
      const auto w = a["weights"].get<std::vector<double>>();
      aux.weights = Eigen::Map<const Vec<double>>(w.data(), static_cast<Index>(w.size()));
      aux.bias = a.value("bias", 0.0);
      b.aux.push_back(std::move(aux));
    } else {
      throw Error(ErrorKind::Config, "unknown source kind '" + kind + "'");
    }
  }
  if (!have_ranking) throw Error(ErrorKind::Config, "bundle has no ranking source");
  for (const auto& aux : b.aux)
    require(aux.weights.size() == b.ranking.config.context_dim, ErrorKind::DimMismatch,
            "source '" + aux.name + "' has " + std::to_string(aux.weights.size()) + " weights, context width is " +
                std::to_string(b.ranking.config.context_dim));

  for (const auto& [name, w] : sc["objective_weights"].items()) {
    if (!w.is_number()) throw Error(ErrorKind::Config, "weight for '" + name + "' is not a number");
    const double v = w.get<double>();
    if (!std::isfinite(v)) throw Error(ErrorKind::Config, "weight for '" + name + "' is not finite");
    const bool known = b.ranking.config.task_index(name) >= 0 ||
                       std::any_of(b.aux.begin(), b.aux.end(), [&](const AuxSource& a) { return a.name == name; });
    if (!known) throw Error(ErrorKind::Config, "objective weight for unknown task or source '" + name + "'");
    b.weights.emplace_back(name, v);
  }
  return b;
}

ScoredRequest score_request(const ScorerBundle& bundle, const ScoringRequest& request) {
  const ModelConfig& cfg = bundle.ranking.config;
  ScoredRequest out;
  const Index n = static_cast<Index>(request.candidates.size());
  out.probabilities = score_candidates_batched(serving_input(request, cfg), bundle.ranking.params, cfg);
  for (Index m = 0; m < cfg.tasks(); ++m)
    out.sources[cfg.task_names[m]] = n ? out.probabilities.col(m).cast<double>().eval() : Vec<double>();
  for (const auto& aux : bundle.aux) out.sources[aux.name] = aux.score(request.candidate_context);
  out.ranked = rank_candidates(request.candidate_ids, combine_objective(out.sources, bundle.weights, n));
  return out;
}

void write_scores_csv(const std::string& path, const std::vector<std::string>& task_names,
                      const std::vector<ScoringRequest>& requests, const std::vector<ScoredRequest>& scored) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::MissingFile, "cannot write '" + path + "'");
  out << "request_id,candidate_id";
  for (const auto& t : task_names) out << ',' << t;
  out << ",final_score,rank\n";
  out << std::setprecision(9);
  for (std::size_t r = 0; r < requests.size(); ++r) {
    const auto& s = scored[r];
    for (std::size_t k = 0; k < s.ranked.order.size(); ++k) {
      const Index i = s.ranked.order[k];
      out << requests[r].id << ',' << s.ranked.candidate_ids[k];
      for (Index m = 0; m < s.probabilities.cols(); ++m) out << ',' << s.probabilities(i, m);
      out << ',' << s.ranked.final_scores(static_cast<Index>(k)) << ',' << k + 1 << '\n';
    }
  }
}

}  // namespace seqrank
