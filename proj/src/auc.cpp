#include "seqrank/metrics.hpp"

#include <algorithm>
#include <numeric>

#include "seqrank/common.hpp"

namespace seqrank {

AucHistogram::AucHistogram(std::size_t buckets) : positives_(buckets, 0), negatives_(buckets, 0) {
  require(buckets >= 2, ErrorKind::Config, "AUC histogram needs at least 2 buckets");
}

std::size_t AucHistogram::bucket_of(double score) const {
  const std::size_t b = positives_.size();
  const auto idx = static_cast<std::size_t>(score * static_cast<double>(b));
  return std::min(idx, b - 1);
}

void AucHistogram::add(double score, bool positive) {
  if (!(score >= 0.0 && score <= 1.0)) {
    ++clamped_;
    score = score > 1.0 ? 1.0 : 0.0;  // NaN lands in bucket 0
  }
  auto& hist = positive ? positives_ : negatives_;
  ++hist[bucket_of(score)];
}

void AucHistogram::update(std::span<const float> scores, std::span<const std::uint8_t> labels,
                          std::span<const std::uint8_t> mask) {
  require(scores.size() == labels.size() && (mask.empty() || mask.size() == scores.size()), ErrorKind::Shape,
          "AUC update: scores, labels and mask differ in length");
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (mask.empty() || mask[i]) add(scores[i], labels[i] != 0);
}

std::optional<double> AucHistogram::finalize() const {
  double pos_total = 0, neg_total = 0, area = 0, neg_below = 0;
  for (std::size_t b = 0; b < positives_.size(); ++b) {
    const auto p = static_cast<double>(positives_[b]);
    const auto n = static_cast<double>(negatives_[b]);
    area += p * (neg_below + 0.5 * n);
    neg_below += n;
    pos_total += p;
    neg_total += n;
  }
  if (pos_total == 0 || neg_total == 0) return std::nullopt;
  return area / (pos_total * neg_total);
}

AucHistogram& AucHistogram::operator+=(const AucHistogram& other) {
  require(other.buckets() == buckets(), ErrorKind::Shape, "merging histograms with different bucket counts");
  for (std::size_t b = 0; b < positives_.size(); ++b) {
    positives_[b] += other.positives_[b];
    negatives_[b] += other.negatives_[b];
  }
  clamped_ += other.clamped_;
  return *this;
}

std::uint64_t AucHistogram::total() const {
  return std::accumulate(positives_.begin(), positives_.end(), std::uint64_t{0}) +
         std::accumulate(negatives_.begin(), negatives_.end(), std::uint64_t{0});
}

AucBuckets& AucBuckets::operator+=(const AucBuckets& other) {
  require(other.tasks.size() == tasks.size(), ErrorKind::Shape, "merging bucket sets with different task counts");
  for (std::size_t m = 0; m < tasks.size(); ++m) tasks[m] += other.tasks[m];
  return *this;
}

std::optional<double> exact_auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  require(scores.size() == labels.size(), ErrorKind::Shape, "exact_auc: scores and labels differ in length");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double pos_rank_sum = 0;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]]) {
        pos_rank_sum += avg_rank;
        ++positives;
      }
    i = j;
  }
  const std::size_t negatives = n - positives;
  if (positives == 0 || negatives == 0) return std::nullopt;
  const double p = static_cast<double>(positives);
  return (pos_rank_sum - p * (p + 1) / 2) / (p * static_cast<double>(negatives));
}

}  // namespace seqrank
