#pragma once

// Columnar history storage (.sqrk) and the copy-free parsing routines that
// feed the model.
//
// Layout, all integers little-endian:
//
//   "SQRK" | version u16 | item count N u32 | feature count F u32
//   F column blocks, each:
//     feature index u16 | element tag u8 (0 = i64, 1 = f32) | value count u32
//     [multi-hot only: N + 1 u32 offsets]
//     value count packed values
//
// Columns appear in schema order. Numeric and dense-embedding columns hold
// N * dim f32 values, categorical ids hold N i64 values, multi-hot columns
// hold the concatenated i64 indices of all rows.

#include <array>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "seqrank/common.hpp"

namespace seqrank {

enum class FeatureKind : std::uint8_t { CategoricalId, Numeric, DenseEmbedding, MultiHotSparse };
enum class Transform : std::uint8_t { EmbeddingLookup, Log1p, Identity };

const char* to_string(FeatureKind kind);
const char* to_string(Transform transform);
FeatureKind feature_kind_from_string(const std::string& s);
Transform transform_from_string(const std::string& s);

struct FeatureSpec {
  std::string name;
  FeatureKind kind = FeatureKind::Numeric;
  Index dim = 1;
  Transform transform = Transform::Identity;
  // Multi-hot: vocabulary size. Hashed categorical embeddings: table rows.
  Index vocab = 0;
};

class FeatureSchema {
 public:
  FeatureSchema() = default;
  explicit FeatureSchema(std::vector<FeatureSpec> features);

  std::span<const FeatureSpec> features() const { return features_; }
  const FeatureSpec& operator[](std::size_t i) const { return features_[i]; }
  std::size_t size() const { return features_.size(); }
  bool empty() const { return features_.empty(); }

  // Index of a feature by name, or -1.
  int find(const std::string& name) const;

  // Sum of per-feature output widths, i.e. the encoded post dimension.
  Index encoded_dim() const;

  FeatureSchema with(std::vector<FeatureSpec> extra) const;

  bool operator==(const FeatureSchema&) const = default;

 private:
  std::vector<FeatureSpec> features_;
};

inline bool operator==(const FeatureSpec& a, const FeatureSpec& b) {
  return a.name == b.name && a.kind == b.kind && a.dim == b.dim && a.transform == b.transform &&
         a.vocab == b.vocab;
}

// Categorical ids, numeric / dense values, or multi-hot indices.
using FeatureValue = std::variant<std::int64_t, std::vector<float>, std::vector<std::int64_t>>;
// One item: a value per schema feature, in schema order.
using FeatureRecord = std::vector<FeatureValue>;

enum class ElementType : std::uint8_t { I64 = 0, F32 = 1 };

inline constexpr std::array<char, 4> kSqrkMagic{'S', 'Q', 'R', 'K'};
inline constexpr std::uint16_t kSqrkVersion = 1;
inline constexpr std::size_t kHeaderBytes = 4 + 2 + 4 + 4;
inline constexpr std::size_t kColumnHeaderBytes = 2 + 1 + 4;

namespace detail {

template <typename T>
T load_le(const std::byte* p) noexcept {
  T v;
  std::memcpy(&v, p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    auto* b = reinterpret_cast<unsigned char*>(&v);
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
  }
  return v;
}

}  // namespace detail

/// Read-only view of one column inside a parsed buffer. No value bytes are
/// copied; element access decodes in place.
struct ColumnView {
  std::uint16_t feature_index = 0;
  ElementType type = ElementType::F32;
  std::uint32_t count = 0;
  std::span<const std::byte> values;
  std::span<const std::byte> offsets;  // N + 1 entries for multi-hot, else empty

  std::int64_t i64(std::size_t k) const noexcept {
    return detail::load_le<std::int64_t>(values.data() + k * 8);
  }
  float f32(std::size_t k) const noexcept {
    return detail::load_le<float>(values.data() + k * 4);
  }
  std::uint32_t offset(std::size_t i) const noexcept {
    return detail::load_le<std::uint32_t>(offsets.data() + i * 4);
  }
  bool multi_hot() const noexcept { return !offsets.empty(); }
  // [begin, end) of row i in a multi-hot column; Format error if the offsets
  // decrease or run past the value count.
  std::pair<std::uint32_t, std::uint32_t> row_range(std::size_t i) const;
};

struct ParsedHistory {
  std::uint32_t item_count = 0;
  std::vector<ColumnView> columns;
  // Number of per-column setup operations performed. Independent of N.
  std::size_t column_setups = 0;

  // Materialize item i as a record (used by dataset readers, not the hot path).
  FeatureRecord record(std::size_t i, const FeatureSchema& schema) const;
};

std::vector<std::byte> encode_history(std::span<const FeatureRecord> items, const FeatureSchema& schema);

/// Parses a buffer produced by encode_history. The returned views alias
/// `buffer`, which must outlive them.
ParsedHistory parse_history(std::span<const std::byte> buffer, const FeatureSchema& schema);

std::vector<std::byte> read_file(const std::string& path);
void write_file(const std::string& path, std::span<const std::byte> bytes);

/// CSR rows of indices into [0, vocab) with optional per-entry values.
struct SparseBatch {
  Index vocab = 0;
  std::vector<std::uint32_t> offsets{0};
  std::vector<std::int64_t> indices;
  std::vector<float> values;  // empty means all ones

  Index rows() const { return static_cast<Index>(offsets.size()) - 1; }
  void add_row(std::span<const std::int64_t> idx, std::span<const float> vals = {});
  static SparseBatch from_column(const ColumnView& column, Index vocab);
};

/// Dense rows x dim matrix. Validates the whole batch, then scatters every
/// (row, index, value) triple in one flat pass.
template <typename Scalar>
Mat<Scalar> sparse_to_dense(const SparseBatch& batch, Index dim) {
  require(dim >= 1, ErrorKind::Config, "sparse_to_dense: dim must be positive");
  require(batch.values.empty() || batch.values.size() == batch.indices.size(), ErrorKind::Shape,
          "sparse_to_dense: value count does not match index count");
  const Index n = batch.rows();
  Mat<Scalar> out = Mat<Scalar>::Zero(n, dim);
  if (batch.indices.empty()) return out;

  // Column-major linear position of (row, idx) is idx * n + row.
  std::vector<Index> linear(batch.indices.size());
  for (Index r = 0; r < n; ++r) {
    for (std::uint32_t k = batch.offsets[r]; k < batch.offsets[r + 1]; ++k) {
      const std::int64_t idx = batch.indices[k];
      if (idx < 0 || idx >= dim)
        throw Error(ErrorKind::OutOfRange, "sparse_to_dense: index " + std::to_string(idx) +
                                               " outside [0, " + std::to_string(dim) + ")");
      linear[k] = static_cast<Index>(idx) * n + r;
    }
  }
  Scalar* data = out.data();
  if (batch.values.empty()) {
    for (Index pos : linear) data[pos] = Scalar(1);
  } else {
    for (std::size_t k = 0; k < linear.size(); ++k) data[linear[k]] = Scalar(batch.values[k]);
  }
  return out;
}

}  // namespace seqrank
