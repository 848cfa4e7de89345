#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace seqrank {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVec = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using Index = Eigen::Index;

enum class ErrorKind {
  SchemaMismatch,
  OutOfVocabulary,
  Format,
  Truncation,
  OutOfRange,
  Domain,
  Shape,
  Config,
  Precondition,
  DegenerateBatch,
  Numeric,
  UndefinedMetric,
  MissingFile,
  DimMismatch,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) throw Error(kind, what);
}

/// splitmix64 finalizer. Used for hashed id embeddings so that bucket
/// assignment is identical on every platform.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr Index hash_bucket(std::int64_t id, Index table_size) noexcept {
  return static_cast<Index>(mix64(static_cast<std::uint64_t>(id)) %
                            static_cast<std::uint64_t>(table_size));
}

}  // namespace seqrank
