#include "seqrank/sequence_builder.hpp"

#include <algorithm>

namespace seqrank {

std::vector<InteractionEvent> assign_sessions(std::vector<InteractionEvent> events, std::int64_t max_gap_seconds) {
  std::int64_t session = 0;
  for (std::size_t i = 0; i < events.size(); ++i) {
    if (i > 0) {
      const std::int64_t gap = events[i].timestamp - events[i - 1].timestamp;
      require(gap >= 0, ErrorKind::Precondition, "assign_sessions: timestamps not sorted at index " + std::to_string(i));
      if (gap > max_gap_seconds) ++session;
    }
    events[i].session_id = session;
  }
  return events;
}

std::vector<InteractionEvent> shuffle_within_sessions(std::vector<InteractionEvent> events, Rng& rng) {
  std::size_t begin = 0;
  while (begin < events.size()) {
    std::size_t end = begin + 1;
    while (end < events.size() && events[end].session_id == events[begin].session_id) ++end;
    // Fisher-Yates over [begin, end).
    for (std::size_t i = end - begin; i > 1; --i) {
      const std::size_t j = uniform_index(rng, i);
      std::swap(events[begin + i - 1], events[begin + j]);
    }
    begin = end;
  }
  return events;
}

std::vector<InteractionEvent> truncate_history(std::vector<InteractionEvent> events, std::size_t max_len) {
  if (events.size() > max_len) events.erase(events.begin(), events.end() - static_cast<std::ptrdiff_t>(max_len));
  return events;
}

std::vector<InteractionEvent> downsample_negatives(std::vector<InteractionEvent> events, double retain_p,
                                                   double neg_weight, Rng& rng) {
  require(retain_p > 0.0 && retain_p <= 1.0, ErrorKind::Config, "retain_p must lie in (0, 1]");
  require(neg_weight >= 0.0, ErrorKind::Config, "neg_weight must be non-negative");
  std::vector<InteractionEvent> kept;
  kept.reserve(events.size());
  for (auto& e : events) {
    if (e.clicked()) {
      e.sample_weight = 1.0;
      kept.push_back(std::move(e));
    } else if (uniform01(rng) < retain_p) {
      e.sample_weight = neg_weight;
      kept.push_back(std::move(e));
    }
  }
  return kept;
}

}  // namespace seqrank
