#pragma once

// A scorer bundle: one ranking checkpoint, optional auxiliary score sources
// and the objective weights that combine them, loaded from a JSON config:
//
//   {"scorer": {"sources": [{"name": "ranker", "checkpoint": "model", "kind": "ranking"},
//                           {"name": "creator", "checkpoint": "creator.json", "kind": "creator"}],
//               "objective_weights": {"click": 1.0, "like": 2.0, "creator": 0.5}}}
//
// Auxiliary sources ("creator", "downstream") are affine maps over the
// candidate context features stored as {"weights": [...], "bias": b}.
// Relative paths resolve against the bundle file's directory.

#include <string>
#include <vector>

#include "seqrank/checkpoint.hpp"
#include "seqrank/inference.hpp"

namespace seqrank {

struct AuxSource {
  std::string name;
  std::string kind;
  Vec<double> weights;  // d_ctx
  double bias = 0.0;

  Vec<double> score(const Mat<float>& context) const;
};

struct ScorerBundle {
  std::string ranking_name;
  Checkpoint ranking;
  std::vector<AuxSource> aux;
  ObjectiveWeights weights;
};

ScorerBundle load_scorer_bundle(const std::string& path);

struct ScoredRequest {
  Mat<float> probabilities;  // N x M, candidate order
  ScoreSources sources;
  RankedList ranked;
};

ScoredRequest score_request(const ScorerBundle& bundle, const ScoringRequest& request);

/// request_id, candidate_id, one column per task, final_score, rank.
void write_scores_csv(const std::string& path, const std::vector<std::string>& task_names,
                      const std::vector<ScoringRequest>& requests, const std::vector<ScoredRequest>& scored);

}  // namespace seqrank
