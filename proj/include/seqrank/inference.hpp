#pragma once

// Candidate scoring: all N candidates in one pass over the shared history
// (batched), or one pass per candidate (sequential, the reference), and the
// weighted objective that turns per-task probabilities into a ranking.

#include <algorithm>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "seqrank/dataset_io.hpp"
#include "seqrank/model.hpp"

namespace seqrank {

/// History truncated to the model's max_history, in serving form.
inline ServingInput serving_input(const ScoringRequest& req, const ModelConfig& cfg) {
  ServingInput in;
  const std::size_t keep = std::min<std::size_t>(req.history.size(), static_cast<std::size_t>(cfg.max_history));
  const std::size_t first = req.history.size() - keep;
  in.history_actions.resize(static_cast<Index>(keep), cfg.tasks());
  for (std::size_t t = 0; t < keep; ++t) {
    const auto& e = req.history[first + t];
    require(static_cast<Index>(e.action.size()) == cfg.tasks(), ErrorKind::Shape, "history action width differs from M");
    in.history_posts.push_back(e.post_features);
    for (Index m = 0; m < cfg.tasks(); ++m) in.history_actions(static_cast<Index>(t), m) = e.action[m] ? 1.0f : 0.0f;
  }
  in.candidate_posts = req.candidates;
  in.candidate_context = req.candidate_context;
  return in;
}

/// N x M probabilities from one forward pass over history + all candidates.
template <typename Scalar>
Mat<Scalar> score_candidates_batched(const ServingInput& in, const ModelParams<Scalar>& p, const ModelConfig& cfg) {
  return predict_probabilities(forward_serve(in, p, cfg));
}

/// N x M probabilities, one forward pass per candidate.
template <typename Scalar>
Mat<Scalar> score_candidates_sequential(const ServingInput& in, const ModelParams<Scalar>& p, const ModelConfig& cfg) {
  const Index n = static_cast<Index>(in.candidate_posts.size());
  Mat<Scalar> out(n, cfg.tasks());
  require(in.candidate_context.rows() == n, ErrorKind::DimMismatch, "candidate context rows differ from N");
  ServingInput one;
  one.history_posts = in.history_posts;
  one.history_actions = in.history_actions;
  for (Index i = 0; i < n; ++i) {
    one.candidate_posts.assign(1, in.candidate_posts[i]);
    one.candidate_context = in.candidate_context.row(i);
    out.row(i) = score_candidates_batched(one, p, cfg);
  }
  return out;
}

/// Named N-vectors of scores (task probabilities and auxiliary sources).
using ScoreSources = std::map<std::string, Vec<double>>;
using ObjectiveWeights = std::vector<std::pair<std::string, double>>;

/// final_i = sum_k w_k * score_{i,k}; every weighted name must be present.
Vec<double> combine_objective(const ScoreSources& sources, const ObjectiveWeights& weights, Index n);

struct RankedList {
  std::vector<std::int64_t> candidate_ids;  // best first
  std::vector<Index> order;                 // original candidate index, best first
  Vec<double> final_scores;                 // in ranked order
};

/// Descending final score, ties by ascending candidate id.
RankedList rank_candidates(const std::vector<std::int64_t>& ids, const Vec<double>& final_scores);

}  // namespace seqrank
