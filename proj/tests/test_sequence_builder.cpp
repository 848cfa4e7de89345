#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <map>

#include "seqrank/model.hpp"
#include "seqrank/sequence_builder.hpp"
#include "support.hpp"

using namespace seqrank;
using seqrank::testing::error_kind;

namespace {

InteractionEvent event_at(std::int64_t ts, bool clicked = false, int pos = 1) {
  InteractionEvent e;
  e.timestamp = ts;
  e.feed_position = pos;
  e.action = {static_cast<std::uint8_t>(clicked), 0};
  return e;
}

FeatureSchema schema() {
  return FeatureSchema({
      {"actor", FeatureKind::CategoricalId, 3, Transform::EmbeddingLookup, 11},
      {"raw_id", FeatureKind::CategoricalId, 1, Transform::Identity, 0},
      {"likes", FeatureKind::Numeric, 1, Transform::Log1p, 0},
      {"emb", FeatureKind::DenseEmbedding, 2, Transform::Identity, 0},
      {"topics", FeatureKind::MultiHotSparse, 2, Transform::EmbeddingLookup, 5},
  });
}

PostEncoderParams<double> params_for(const FeatureSchema& s, Rng& rng) {
  PostEncoderParams<double> p;
  for (const auto& f : s.features()) {
    Mat<double> t;
    if (f.transform == Transform::EmbeddingLookup) {
      t.resize(f.vocab, f.dim);
      for (Index i = 0; i < t.size(); ++i) t.data()[i] = normal01(rng);
    }
    p.tables.push_back(t);
  }
  return p;
}

}  // namespace

TEST_CASE("sessions split on gaps above 30 minutes") {
  std::vector<InteractionEvent> ev{event_at(0), event_at(1800), event_at(3601), event_at(3700), event_at(10000)};
  ev = assign_sessions(std::move(ev));
  CHECK(ev[0].session_id == 0);
  CHECK(ev[1].session_id == 0);  // exactly 1800 s stays in the session
  CHECK(ev[2].session_id == 1);
  CHECK(ev[3].session_id == 1);
  CHECK(ev[4].session_id == 2);
}

TEST_CASE("unsorted timestamps are a precondition failure") {
  std::vector<InteractionEvent> ev{event_at(10), event_at(5)};
  CHECK(error_kind([&] { assign_sessions(ev); }) == ErrorKind::Precondition);
}

TEST_CASE("shuffling keeps every event inside its session") {
  std::vector<InteractionEvent> ev;
  for (int i = 0; i < 60; ++i) ev.push_back(event_at(i * 100 + (i / 10) * 5000, i % 3 == 0, i));
  ev = assign_sessions(std::move(ev));
  Rng rng(2);
  const auto shuffled = shuffle_within_sessions(ev, rng);
  REQUIRE(shuffled.size() == ev.size());
  bool moved = false;
  for (std::size_t i = 0; i < ev.size(); ++i) {
    CHECK(shuffled[i].session_id == ev[i].session_id);
    moved = moved || shuffled[i].timestamp != ev[i].timestamp;
  }
  CHECK(moved);
  std::map<std::int64_t, std::multiset<std::int64_t>> a, b;
  for (std::size_t i = 0; i < ev.size(); ++i) {
    a[ev[i].session_id].insert(ev[i].timestamp);
    b[shuffled[i].session_id].insert(shuffled[i].timestamp);
  }
  CHECK(a == b);
}

TEST_CASE("truncation keeps the most recent events") {
  std::vector<InteractionEvent> ev;
  for (int i = 0; i < 10; ++i) ev.push_back(event_at(i));
  const auto t = truncate_history(ev, 4);
  REQUIRE(t.size() == 4);
  CHECK(t.front().timestamp == 6);
  CHECK(t.back().timestamp == 9);
  CHECK(truncate_history(ev, 50).size() == 10);
}

TEST_CASE("negative down-sampling keeps positives and reweights negatives") {
  std::vector<InteractionEvent> ev;
  for (int i = 0; i < 4000; ++i) ev.push_back(event_at(i, i % 4 == 0));
  Rng rng(9);
  const auto kept = downsample_negatives(ev, 0.25, 4.0, rng);
  Index pos = 0, neg = 0;
  for (const auto& e : kept) {
    if (e.clicked()) {
      ++pos;
      CHECK(e.sample_weight == 1.0);
    } else {
      ++neg;
      CHECK(e.sample_weight == 4.0);
    }
  }
  CHECK(pos == 1000);
  CHECK(neg > 600);
  CHECK(neg < 900);
  CHECK(error_kind([&] { downsample_negatives(ev, 0.0, 1.0, rng); }) == ErrorKind::Config);
}

TEST_CASE("interleave and deinterleave round trip") {
  Rng rng(1);
  for (Index t : {1, 2, 7}) {
    Mat<double> items(t, 3), actions(t, 3);
    for (Index i = 0; i < items.size(); ++i) {
      items.data()[i] = normal01(rng);
      actions.data()[i] = normal01(rng);
    }
    const Mat<double> tok = interleave(items, actions);
    REQUIRE(tok.rows() == 2 * t);
    for (Index i = 0; i < t; ++i) {
      CHECK(tok.row(2 * i) == items.row(i));
      CHECK(tok.row(2 * i + 1) == actions.row(i));
    }
    const auto [x, a] = deinterleave(tok);
    CHECK(x == items);
    CHECK(a == actions);
    CHECK(discard_action_positions(tok) == items);
  }
  CHECK(error_kind([] { deinterleave<double>(Mat<double>(3, 2)); }) == ErrorKind::Shape);
  CHECK(error_kind([] { interleave<double>(Mat<double>(3, 2), Mat<double>(2, 2)); }) == ErrorKind::Shape);
}

TEST_CASE("post encoding follows each transform") {
  Rng rng(4);
  const FeatureSchema s = schema();
  const auto params = params_for(s, rng);
  FeatureRecord post{std::int64_t{123456}, std::int64_t{42}, std::vector<float>{9.0f},
                     std::vector<float>{0.5f, -2.0f}, std::vector<std::int64_t>{1, 3}};
  const RowVec<double> x = encode_post(post, s, params);
  REQUIRE(x.size() == s.encoded_dim());
  CHECK(x.segment(0, 3) == params.tables[0].row(hash_bucket(123456, 11)));
  CHECK(x(3) == 42.0);
  CHECK(x(4) == doctest::Approx(std::log(10.0)));
  CHECK(x(5) == 0.5);
  CHECK(x(6) == -2.0);
  const RowVec<double> topics = params.tables[4].row(1) + params.tables[4].row(3);
  CHECK((x.segment(7, 2) - topics).norm() < 1e-15);
}

TEST_CASE("hashed ids are stable and in range") {
  CHECK(hash_bucket(5, 1000) == hash_bucket(5, 1000));
  for (std::int64_t id = -50; id < 50; ++id) {
    const Index b = hash_bucket(id, 17);
    CHECK(b >= 0);
    CHECK(b < 17);
  }
}

TEST_CASE("log1p below -1 is a domain error") {
  Rng rng(4);
  const FeatureSchema s = schema();
  const auto params = params_for(s, rng);
  FeatureRecord post{std::int64_t{1}, std::int64_t{1}, std::vector<float>{-2.0f}, std::vector<float>{0.f, 0.f},
                     std::vector<std::int64_t>{}};
  CHECK(error_kind([&] { encode_post(post, s, params); }) == ErrorKind::Domain);
  FeatureRecord short_post{std::int64_t{1}};
  CHECK(error_kind([&] { encode_post(short_post, s, params); }) == ErrorKind::SchemaMismatch);
}

TEST_CASE("encoder backward is the transpose of the lookup") {
  Rng rng(8);
  const FeatureSchema s = schema();
  auto params = params_for(s, rng);
  std::vector<FeatureRecord> posts;
  for (int i = 0; i < 5; ++i)
    posts.push_back({std::int64_t{i * 7}, std::int64_t{i}, std::vector<float>{1.0f}, std::vector<float>{0.f, 1.f},
                     std::vector<std::int64_t>{i % 5, (i + 2) % 5}});
  std::vector<const FeatureRecord*> ptrs;
  for (const auto& p : posts) ptrs.push_back(&p);
  Mat<double> probe(5, s.encoded_dim());
  for (Index i = 0; i < probe.size(); ++i) probe.data()[i] = normal01(rng);
  auto grads = zero_like(params);
  encode_posts_backward<double>(ptrs, s, probe, grads);
  for (std::size_t f : {0u, 4u}) {
    auto loss = [&] { return (encode_posts<double>(ptrs, s, params).array() * probe.array()).sum(); };
    CHECK(seqrank::testing::fd_worst(params.tables[f], grads.tables[f], loss) < 1e-7);
  }
}

TEST_CASE("action projection") {
  ActionProjection<double> proj{Mat<double>::Identity(2, 3), RowVec<double>::Constant(3, 0.5)};
  RowVec<double> a(2);
  a << 1, 0;
  const RowVec<double> e = encode_action(a, proj);
  CHECK(e(0) == 1.5);
  CHECK(e(1) == 0.5);
  CHECK(error_kind([&] { encode_action(RowVec<double>(RowVec<double>::Zero(3)), proj); }) == ErrorKind::Shape);
}
