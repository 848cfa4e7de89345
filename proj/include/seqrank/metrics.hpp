#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace seqrank {

/// Fixed-width score histograms for one task over [0, 1].
class AucHistogram {
 public:
  explicit AucHistogram(std::size_t buckets = 10000);

  /// Single pass over the batch; masked-out entries are ignored. Scores
  /// outside [0, 1] are clamped and counted.
  void update(std::span<const float> scores, std::span<const std::uint8_t> labels,
              std::span<const std::uint8_t> mask = {});
  void add(double score, bool positive);

  /// Rank-sum AUC with half credit for pairs in the same bucket; nullopt when
  /// either class is empty.
  std::optional<double> finalize() const;

  AucHistogram& operator+=(const AucHistogram& other);
  bool operator==(const AucHistogram&) const = default;

  std::size_t buckets() const { return positives_.size(); }
  std::size_t bucket_of(double score) const;
  const std::vector<std::uint64_t>& positives() const { return positives_; }
  const std::vector<std::uint64_t>& negatives() const { return negatives_; }
  std::uint64_t clamped() const { return clamped_; }
  std::uint64_t total() const;

 private:
  std::vector<std::uint64_t> positives_, negatives_;
  std::uint64_t clamped_ = 0;
};

/// One histogram per task.
struct AucBuckets {
  std::vector<AucHistogram> tasks;

  AucBuckets() = default;
  AucBuckets(std::size_t task_count, std::size_t buckets) : tasks(task_count, AucHistogram(buckets)) {}

  AucBuckets& operator+=(const AucBuckets& other);
};

/// Exact AUC from average ranks (ties get half credit); nullopt when either
/// class is empty.
std::optional<double> exact_auc(std::span<const double> scores, std::span<const std::uint8_t> labels);

}  // namespace seqrank
