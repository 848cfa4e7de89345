#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "seqrank/feature_store.hpp"
#include "seqrank/harness.hpp"
#include "seqrank/random.hpp"
#include "support.hpp"

using namespace seqrank;
using seqrank::testing::error_kind;

namespace {

FeatureSchema small_schema() {
  return FeatureSchema({
      {"actor_id", FeatureKind::CategoricalId, 4, Transform::EmbeddingLookup, 97},
      {"content", FeatureKind::DenseEmbedding, 3, Transform::Identity, 0},
      {"topics", FeatureKind::MultiHotSparse, 2, Transform::EmbeddingLookup, 16},
      {"age", FeatureKind::Numeric, 1, Transform::Log1p, 0},
  });
}

std::vector<FeatureRecord> random_items(const FeatureSchema& schema, Index n, Rng& rng) {
  std::vector<FeatureRecord> out;
  for (Index i = 0; i < n; ++i) {
    FeatureRecord r = random_post(schema, rng);
    // random_post draws ids from a large range; keep multi-hot indices in vocab.
    for (std::size_t f = 0; f < schema.size(); ++f)
      if (schema[f].kind == FeatureKind::MultiHotSparse)
        for (auto& v : std::get<std::vector<std::int64_t>>(r[f])) v %= schema[f].vocab;
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace

TEST_CASE("schema lookup and encoded width") {
  const FeatureSchema s = small_schema();
  CHECK(s.find("topics") == 2);
  CHECK(s.find("missing") == -1);
  CHECK(s.encoded_dim() == 4 + 3 + 2 + 1);
}

TEST_CASE("schema rejects duplicates and bad dims") {
  CHECK(error_kind([] {
          FeatureSchema({{"a", FeatureKind::Numeric, 1, Transform::Identity, 0},
                         {"a", FeatureKind::Numeric, 1, Transform::Identity, 0}});
        }) == ErrorKind::Config);
  CHECK(error_kind([] { FeatureSchema({{"a", FeatureKind::Numeric, 3, Transform::Identity, 0}}); }) ==
        ErrorKind::Config);
  CHECK(error_kind([] { FeatureSchema({{"t", FeatureKind::MultiHotSparse, 2, Transform::EmbeddingLookup, 0}}); }) ==
        ErrorKind::Config);
}

TEST_CASE("round trip is exact") {
  Rng rng(7);
  const FeatureSchema s = small_schema();
  for (Index n : {0, 1, 2, 33, 500}) {
    const auto items = random_items(s, n, rng);
    const auto bytes = encode_history(items, s);
    const ParsedHistory p = parse_history(bytes, s);
    REQUIRE(p.item_count == static_cast<std::uint32_t>(n));
    CHECK(p.column_setups == s.size());
    for (Index i = 0; i < n; ++i) CHECK(p.record(i, s) == items[i]);
  }
}

TEST_CASE("header fields") {
  Rng rng(1);
  const FeatureSchema s = small_schema();
  const auto bytes = encode_history(random_items(s, 5, rng), s);
  CHECK(std::equal(kSqrkMagic.begin(), kSqrkMagic.end(), reinterpret_cast<const char*>(bytes.data())));
  CHECK(detail::load_le<std::uint16_t>(bytes.data() + 4) == kSqrkVersion);
  CHECK(detail::load_le<std::uint32_t>(bytes.data() + 6) == 5u);
  CHECK(detail::load_le<std::uint32_t>(bytes.data() + 10) == s.size());
}

TEST_CASE("every truncation is rejected") {
  Rng rng(3);
  const FeatureSchema s = small_schema();
  const auto bytes = encode_history(random_items(s, 9, rng), s);
  for (std::size_t len = 0; len < bytes.size(); ++len) {
    const auto kind = error_kind([&] { parse_history(std::span(bytes.data(), len), s); });
    REQUIRE(kind.has_value());
    CHECK((*kind == ErrorKind::Truncation || *kind == ErrorKind::Format));
  }
}

TEST_CASE("corrupt headers") {
  Rng rng(4);
  const FeatureSchema s = small_schema();
  auto bytes = encode_history(random_items(s, 4, rng), s);

  auto bad = bytes;
  bad[0] = std::byte{'X'};
  CHECK(error_kind([&] { parse_history(bad, s); }) == ErrorKind::Format);

  bad = bytes;
  bad[4] = std::byte{9};
  CHECK(error_kind([&] { parse_history(bad, s); }) == ErrorKind::Format);

  bad = bytes;
  bad.push_back(std::byte{0});
  CHECK(error_kind([&] { parse_history(bad, s); }) == ErrorKind::Format);

  const FeatureSchema fewer({s[0], s[1]});
  CHECK(error_kind([&] { parse_history(bytes, fewer); }) == ErrorKind::SchemaMismatch);

  FeatureSchema retyped({s[0], s[1], s[2], {"age", FeatureKind::CategoricalId, 1, Transform::Identity, 0}});
  CHECK(error_kind([&] { parse_history(bytes, retyped); }) == ErrorKind::Format);
}

TEST_CASE("decreasing offsets are caught on row access") {
  const FeatureSchema s({{"t", FeatureKind::MultiHotSparse, 2, Transform::EmbeddingLookup, 8}});
  std::vector<FeatureRecord> items{{std::vector<std::int64_t>{1, 2}}, {std::vector<std::int64_t>{3}},
                                   {std::vector<std::int64_t>{4, 5}}};
  auto bytes = encode_history(items, s);
  // offsets start right after header + column header: 0, 2, 3, 5
  const std::size_t off = kHeaderBytes + kColumnHeaderBytes;
  CHECK(detail::load_le<std::uint32_t>(bytes.data() + off + 4) == 2u);
  const std::uint32_t four = 4;
  std::memcpy(bytes.data() + off + 8, &four, 4);  // 0, 2, 4, 5 still fine
  CHECK_NOTHROW(parse_history(bytes, s).record(1, s));
  const std::uint32_t one = 1;
  std::memcpy(bytes.data() + off + 8, &one, 4);  // 0, 2, 1, 5
  const ParsedHistory p = parse_history(bytes, s);
  CHECK_NOTHROW(p.record(0, s));
  CHECK(error_kind([&] { p.record(1, s); }) == ErrorKind::Format);
}

TEST_CASE("out-of-vocabulary indices are rejected when encoding") {
  const FeatureSchema s({{"t", FeatureKind::MultiHotSparse, 2, Transform::EmbeddingLookup, 8}});
  std::vector<FeatureRecord> items{{std::vector<std::int64_t>{8}}};
  CHECK(error_kind([&] { encode_history(items, s); }) == ErrorKind::OutOfVocabulary);
}

TEST_CASE("wrong value type is a schema mismatch") {
  const FeatureSchema s({{"x", FeatureKind::Numeric, 1, Transform::Identity, 0}});
  std::vector<FeatureRecord> items{{std::int64_t{3}}};
  CHECK(error_kind([&] { encode_history(items, s); }) == ErrorKind::SchemaMismatch);
}

TEST_CASE("sparse_to_dense matches a nested-loop oracle") {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const Index dim = 1 + static_cast<Index>(uniform_index(rng, 40));
    const Index rows = static_cast<Index>(uniform_index(rng, 12));
    const bool weighted = bernoulli(rng, 0.5);
    SparseBatch b;
    b.vocab = dim;
    for (Index r = 0; r < rows; ++r) {
      std::vector<std::int64_t> idx;
      std::vector<float> val;
      const auto k = uniform_index(rng, 5);
      for (std::uint64_t j = 0; j < k; ++j) {
        const auto c = static_cast<std::int64_t>(uniform_index(rng, dim));
        if (std::find(idx.begin(), idx.end(), c) != idx.end()) continue;
        idx.push_back(c);
        val.push_back(static_cast<float>(normal01(rng)));
      }
      if (weighted)
        b.add_row(idx, val);
      else
        b.add_row(idx);
    }
    const Mat<double> got = sparse_to_dense<double>(b, dim);
    Mat<double> want = Mat<double>::Zero(rows, dim);
    for (Index r = 0; r < rows; ++r)
      for (std::uint32_t k = b.offsets[r]; k < b.offsets[r + 1]; ++k)
        for (Index c = 0; c < dim; ++c)
          if (b.indices[k] == c) want(r, c) = weighted ? b.values[k] : 1.0;
    REQUIRE(got == want);
  }
}

TEST_CASE("sparse_to_dense bounds") {
  SparseBatch b;
  b.vocab = 4;
  b.add_row(std::vector<std::int64_t>{4});
  CHECK(error_kind([&] { sparse_to_dense<float>(b, 4); }) == ErrorKind::OutOfRange);
}

TEST_CASE("column view feeds a sparse batch") {
  const FeatureSchema s({{"t", FeatureKind::MultiHotSparse, 2, Transform::EmbeddingLookup, 8}});
  std::vector<FeatureRecord> items{{std::vector<std::int64_t>{1, 7}}, {std::vector<std::int64_t>{}},
                                   {std::vector<std::int64_t>{0}}};
  const auto bytes = encode_history(items, s);
  const ParsedHistory p = parse_history(bytes, s);
  const SparseBatch b = SparseBatch::from_column(p.columns[0], 8);
  const Mat<float> dense = sparse_to_dense<float>(b, 8);
  CHECK(dense.rows() == 3);
  CHECK(dense(0, 1) == 1.0f);
  CHECK(dense(0, 7) == 1.0f);
  CHECK(dense.row(1).sum() == 0.0f);
  CHECK(dense(2, 0) == 1.0f);
}

TEST_CASE("file round trip") {
  Rng rng(5);
  const FeatureSchema s = small_schema();
  const auto bytes = encode_history(random_items(s, 20, rng), s);
  const auto path = std::filesystem::temp_directory_path() / "seqrank_fs_test.sqrk";
  write_file(path.string(), bytes);
  CHECK(read_file(path.string()) == bytes);
  std::filesystem::remove(path);
  CHECK(error_kind([&] { read_file(path.string()); }) == ErrorKind::MissingFile);
}
