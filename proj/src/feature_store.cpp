#include "seqrank/feature_store.hpp"

#include <fstream>
#include <iterator>
#include <limits>
#include <unordered_set>

namespace seqrank {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::SchemaMismatch: return "schema mismatch";
    case ErrorKind::OutOfVocabulary: return "out of vocabulary";
    case ErrorKind::Format: return "format error";
    case ErrorKind::Truncation: return "truncated buffer";
    case ErrorKind::OutOfRange: return "out of range";
    case ErrorKind::Domain: return "domain error";
    case ErrorKind::Shape: return "shape mismatch";
    case ErrorKind::Config: return "config error";
    case ErrorKind::Precondition: return "precondition violated";
    case ErrorKind::DegenerateBatch: return "degenerate batch";
    case ErrorKind::Numeric: return "numeric error";
    case ErrorKind::UndefinedMetric: return "undefined metric";
    case ErrorKind::MissingFile: return "missing file";
    case ErrorKind::DimMismatch: return "dimension mismatch";
  }
  return "error";
}

const char* to_string(FeatureKind kind) {
  switch (kind) {
    case FeatureKind::CategoricalId: return "categorical-id";
    case FeatureKind::Numeric: return "numeric";
    case FeatureKind::DenseEmbedding: return "dense-embedding";
    case FeatureKind::MultiHotSparse: return "multi-hot-sparse";
  }
  return "?";
}

const char* to_string(Transform transform) {
  switch (transform) {
    case Transform::EmbeddingLookup: return "embedding-lookup";
    case Transform::Log1p: return "log1p";
    case Transform::Identity: return "identity";
  }
  return "?";
}

FeatureKind feature_kind_from_string(const std::string& s) {
  for (auto k : {FeatureKind::CategoricalId, FeatureKind::Numeric, FeatureKind::DenseEmbedding,
                 FeatureKind::MultiHotSparse})
    if (s == to_string(k)) return k;
  throw Error(ErrorKind::Config, "unknown feature kind '" + s + "'");
}

Transform transform_from_string(const std::string& s) {
  for (auto t : {Transform::EmbeddingLookup, Transform::Log1p, Transform::Identity})
    if (s == to_string(t)) return t;
  throw Error(ErrorKind::Config, "unknown transform '" + s + "'");
}

FeatureSchema::FeatureSchema(std::vector<FeatureSpec> features) : features_(std::move(features)) {
  std::unordered_set<std::string> seen;
  for (const auto& f : features_) {
    require(seen.insert(f.name).second, ErrorKind::Config, "duplicate feature name '" + f.name + "'");
    require(f.dim >= 1, ErrorKind::Config, "feature '" + f.name + "' has non-positive dim");
    if (f.kind == FeatureKind::MultiHotSparse)
      require(f.vocab >= 1, ErrorKind::Config, "multi-hot feature '" + f.name + "' needs vocab >= 1");
    if (f.transform == Transform::EmbeddingLookup)
      require(f.kind == FeatureKind::CategoricalId || f.kind == FeatureKind::MultiHotSparse,
              ErrorKind::Config, "embedding lookup on non-id feature '" + f.name + "'");
    if (f.kind == FeatureKind::CategoricalId && f.transform == Transform::EmbeddingLookup)
      require(f.vocab >= 1, ErrorKind::Config, "hashed feature '" + f.name + "' needs a table size");
    if (f.kind == FeatureKind::Numeric)
      require(f.dim == 1, ErrorKind::Config, "numeric feature '" + f.name + "' must have dim 1");
  }
  require(features_.size() <= std::numeric_limits<std::uint16_t>::max(), ErrorKind::Config,
          "too many features");
}

int FeatureSchema::find(const std::string& name) const {
  for (std::size_t i = 0; i < features_.size(); ++i)
    if (features_[i].name == name) return static_cast<int>(i);
  return -1;
}

Index FeatureSchema::encoded_dim() const {
  Index d = 0;
  for (const auto& f : features_) d += f.dim;
  return d;
}

FeatureSchema FeatureSchema::with(std::vector<FeatureSpec> extra) const {
  auto all = features_;
  all.insert(all.end(), std::make_move_iterator(extra.begin()), std::make_move_iterator(extra.end()));
  return FeatureSchema(std::move(all));
}

namespace {

ElementType element_type(FeatureKind kind) {
  return (kind == FeatureKind::CategoricalId || kind == FeatureKind::MultiHotSparse) ? ElementType::I64
                                                                                     : ElementType::F32;
}

class Writer {
 public:
  explicit Writer(std::vector<std::byte>& out) : out_(out) {}

  template <typename T>
  void put(T v) {
    if constexpr (std::endian::native == std::endian::big) {
      auto* b = reinterpret_cast<unsigned char*>(&v);
      for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    }
    const auto* p = reinterpret_cast<const std::byte*>(&v);
    out_.insert(out_.end(), p, p + sizeof(T));
  }

 private:
  std::vector<std::byte>& out_;
};

template <typename T>
const T& get_value(const FeatureValue& v, const FeatureSpec& spec) {
  const T* p = std::get_if<T>(&v);
  if (!p) throw Error(ErrorKind::SchemaMismatch, "value for feature '" + spec.name + "' has the wrong type");
  return *p;
}

}  // namespace

std::vector<std::byte> encode_history(std::span<const FeatureRecord> items, const FeatureSchema& schema) {
  require(items.size() <= std::numeric_limits<std::uint32_t>::max(), ErrorKind::Config, "too many items");
  const auto n = static_cast<std::uint32_t>(items.size());
  for (const auto& rec : items)
    require(rec.size() == schema.size(), ErrorKind::SchemaMismatch,
            "record has " + std::to_string(rec.size()) + " values, schema has " + std::to_string(schema.size()));

  std::vector<std::byte> out;
  Writer w(out);
  for (char c : kSqrkMagic) w.put(static_cast<std::uint8_t>(c));
  w.put(kSqrkVersion);
  w.put(n);
  w.put(static_cast<std::uint32_t>(schema.size()));

  for (std::size_t f = 0; f < schema.size(); ++f) {
    const FeatureSpec& spec = schema[f];
    w.put(static_cast<std::uint16_t>(f));
    w.put(static_cast<std::uint8_t>(element_type(spec.kind)));
    switch (spec.kind) {
      case FeatureKind::CategoricalId: {
        w.put(n);
        for (const auto& rec : items) w.put(get_value<std::int64_t>(rec[f], spec));
        break;
      }
      case FeatureKind::Numeric:
      case FeatureKind::DenseEmbedding: {
        w.put(static_cast<std::uint32_t>(n * spec.dim));
        for (const auto& rec : items) {
          const auto& v = get_value<std::vector<float>>(rec[f], spec);
          require(static_cast<Index>(v.size()) == spec.dim, ErrorKind::SchemaMismatch,
                  "feature '" + spec.name + "' expects " + std::to_string(spec.dim) + " values");
          for (float x : v) w.put(x);
        }
        break;
      }
      case FeatureKind::MultiHotSparse: {
        std::uint64_t total = 0;
        for (const auto& rec : items) {
          const auto& idx = get_value<std::vector<std::int64_t>>(rec[f], spec);
          for (auto i : idx)
            if (i < 0 || i >= spec.vocab)
              throw Error(ErrorKind::OutOfVocabulary, "feature '" + spec.name + "' index " + std::to_string(i) +
                                                          " outside vocabulary of " + std::to_string(spec.vocab));
          total += idx.size();
        }
        require(total <= std::numeric_limits<std::uint32_t>::max(), ErrorKind::Config, "multi-hot column too large");
        w.put(static_cast<std::uint32_t>(total));
        std::uint32_t running = 0;
        w.put(running);
        for (const auto& rec : items) {
          running += static_cast<std::uint32_t>(std::get<std::vector<std::int64_t>>(rec[f]).size());
          w.put(running);
        }
        for (const auto& rec : items)
          for (auto i : std::get<std::vector<std::int64_t>>(rec[f])) w.put(i);
        break;
      }
    }
  }
  return out;
}

ParsedHistory parse_history(std::span<const std::byte> buffer, const FeatureSchema& schema) {
  const std::byte* base = buffer.data();
  const std::size_t size = buffer.size();
  std::size_t pos = 0;
  auto need = [&](std::size_t bytes, const char* what) {
    if (size - pos < bytes)
      throw Error(ErrorKind::Truncation, std::string("buffer ends inside ") + what + " at byte " + std::to_string(pos));
  };

  need(kHeaderBytes, "header");
  for (std::size_t i = 0; i < 4; ++i)
    if (static_cast<char>(base[i]) != kSqrkMagic[i]) throw Error(ErrorKind::Format, "bad magic");
  const auto version = detail::load_le<std::uint16_t>(base + 4);
  if (version != kSqrkVersion) throw Error(ErrorKind::Format, "unsupported version " + std::to_string(version));
  ParsedHistory out;
  out.item_count = detail::load_le<std::uint32_t>(base + 6);
  const auto feature_count = detail::load_le<std::uint32_t>(base + 10);
  pos = kHeaderBytes;
  if (feature_count != schema.size())
    throw Error(ErrorKind::SchemaMismatch, "buffer has " + std::to_string(feature_count) + " columns, schema has " +
                                               std::to_string(schema.size()));
  const std::uint64_t n = out.item_count;

  out.columns.reserve(feature_count);
  for (std::size_t f = 0; f < feature_count; ++f) {
    const FeatureSpec& spec = schema[f];
    need(kColumnHeaderBytes, "column header");
    ColumnView col;
    col.feature_index = detail::load_le<std::uint16_t>(base + pos);
    const auto tag = static_cast<std::uint8_t>(base[pos + 2]);
    col.count = detail::load_le<std::uint32_t>(base + pos + 3);
    pos += kColumnHeaderBytes;
    if (col.feature_index != f) throw Error(ErrorKind::Format, "column " + std::to_string(f) + " out of order");
    if (tag > 1) throw Error(ErrorKind::Format, "unknown element tag " + std::to_string(tag));
    col.type = static_cast<ElementType>(tag);
    if (col.type != element_type(spec.kind))
      throw Error(ErrorKind::Format, "column '" + spec.name + "' has the wrong element type");

    const std::size_t width = col.type == ElementType::I64 ? 8 : 4;
    if (spec.kind == FeatureKind::MultiHotSparse) {
      const std::size_t offset_bytes = (n + 1) * 4;
      need(offset_bytes, "offsets");
      col.offsets = buffer.subspan(pos, offset_bytes);
      pos += offset_bytes;
      if (col.offset(0) != 0) throw Error(ErrorKind::Format, "first offset of '" + spec.name + "' is not zero");
      // Monotonicity is checked per row on access, keeping the parse O(F).
      if (col.offset(n) != col.count)
        throw Error(ErrorKind::Format, "last offset of '" + spec.name + "' differs from value count");
    } else {
      const std::uint64_t expected = spec.kind == FeatureKind::CategoricalId ? n : n * spec.dim;
      if (col.count != expected)
        throw Error(ErrorKind::Format, "column '" + spec.name + "' declares " + std::to_string(col.count) +
                                           " values, expected " + std::to_string(expected));
    }
    const std::size_t value_bytes = static_cast<std::size_t>(col.count) * width;
    need(value_bytes, "column values");
    col.values = buffer.subspan(pos, value_bytes);
    pos += value_bytes;
    out.columns.push_back(col);
    ++out.column_setups;
  }
  if (pos != size) throw Error(ErrorKind::Format, std::to_string(size - pos) + " trailing bytes after last column");
  return out;
}

std::pair<std::uint32_t, std::uint32_t> ColumnView::row_range(std::size_t i) const {
  const std::uint32_t begin = offset(i), end = offset(i + 1);
  if (end < begin || end > count) throw Error(ErrorKind::Format, "multi-hot offsets decrease at row " + std::to_string(i));
  return {begin, end};
}

FeatureRecord ParsedHistory::record(std::size_t i, const FeatureSchema& schema) const {
  FeatureRecord rec;
  rec.reserve(columns.size());
  for (std::size_t f = 0; f < columns.size(); ++f) {
    const ColumnView& col = columns[f];
    const FeatureSpec& spec = schema[f];
    switch (spec.kind) {
      case FeatureKind::CategoricalId: rec.emplace_back(col.i64(i)); break;
      case FeatureKind::Numeric:
      case FeatureKind::DenseEmbedding: {
        std::vector<float> v(spec.dim);
        for (Index k = 0; k < spec.dim; ++k) v[k] = col.f32(i * spec.dim + k);
        rec.emplace_back(std::move(v));
        break;
      }
      case FeatureKind::MultiHotSparse: {
        std::vector<std::int64_t> v;
        const auto [begin, end] = col.row_range(i);
        for (std::uint32_t k = begin; k < end; ++k) v.push_back(col.i64(k));
        rec.emplace_back(std::move(v));
        break;
      }
    }
  }
  return rec;
}

std::vector<std::byte> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::MissingFile, "cannot open '" + path + "'");
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::vector<std::byte> out(raw.size());
  std::memcpy(out.data(), raw.data(), raw.size());
  return out;
}

void write_file(const std::string& path, std::span<const std::byte> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::MissingFile, "cannot write '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void SparseBatch::add_row(std::span<const std::int64_t> idx, std::span<const float> vals) {
  require(vals.empty() || vals.size() == idx.size(), ErrorKind::Shape, "sparse row values/indices differ in length");
  require(idx.empty() || indices.empty() || vals.empty() == values.empty(), ErrorKind::Shape,
          "sparse batch mixes rows with and without values");
  indices.insert(indices.end(), idx.begin(), idx.end());
  values.insert(values.end(), vals.begin(), vals.end());
  offsets.push_back(static_cast<std::uint32_t>(indices.size()));
}

SparseBatch SparseBatch::from_column(const ColumnView& column, Index vocab) {
  require(column.multi_hot(), ErrorKind::Format, "column is not multi-hot");
  SparseBatch b;
  b.vocab = vocab;
  const std::size_t n = column.offsets.size() / 4 - 1;
  b.offsets.resize(n + 1);
  for (std::size_t i = 0; i < n; ++i) b.offsets[i + 1] = column.row_range(i).second;
  b.indices.resize(column.count);
  for (std::size_t k = 0; k < column.count; ++k) b.indices[k] = column.i64(k);
  return b;
}

}  // namespace seqrank
