#pragma once

// On-disk datasets and scoring requests. Each member history (and each
// request's history / candidate list) is one .sqrk file whose schema is the
// post schema followed by bookkeeping columns; a manifest.json describes the
// directory.

#include <string>
#include <vector>

#include "seqrank/config.hpp"
#include "seqrank/synthetic.hpp"

namespace seqrank {

/// Post schema plus timestamp, feed position, session, action, sample
/// weight, is_new and (when context_dim > 0) context columns.
FeatureSchema event_schema(const FeatureSchema& posts, Index tasks, Index context_dim);

/// Post schema plus candidate id and context columns.
FeatureSchema candidate_schema(const FeatureSchema& posts, Index context_dim);

std::vector<std::byte> encode_events(std::span<const InteractionEvent> events, const FeatureSchema& posts, Index tasks,
                                     Index context_dim);
std::vector<InteractionEvent> decode_events(std::span<const std::byte> buffer, const FeatureSchema& posts, Index tasks,
                                            Index context_dim);

struct ScoringRequest {
  std::string id;
  std::vector<InteractionEvent> history;
  std::vector<FeatureRecord> candidates;
  std::vector<std::int64_t> candidate_ids;
  Mat<float> candidate_context;  // N x d_ctx
};

std::vector<std::byte> encode_candidates(const ScoringRequest& request, const FeatureSchema& posts, Index context_dim);
void decode_candidates(std::span<const std::byte> buffer, const FeatureSchema& posts, Index context_dim,
                       ScoringRequest& request);

/// Writes manifest.json plus one file per member.
void write_dataset(const std::string& dir, const SyntheticDataset& ds);
SyntheticDataset read_dataset(const std::string& dir);

void write_requests(const std::string& dir, const std::vector<ScoringRequest>& requests, const FeatureSchema& posts,
                    const std::vector<std::string>& task_names, Index context_dim);
std::vector<ScoringRequest> read_requests(const std::string& dir, const FeatureSchema& expected_posts,
                                          Index tasks, Index context_dim);

/// One request per member: history = all but the last session, candidates =
/// the last session's posts (ids are the event indices).
std::vector<ScoringRequest> requests_from_dataset(const SyntheticDataset& ds, Index max_requests, Index max_history);

}  // namespace seqrank
