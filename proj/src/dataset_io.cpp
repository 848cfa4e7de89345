#include "seqrank/dataset_io.hpp"

#include <cstdio>
#include <filesystem>

namespace seqrank {

namespace fs = std::filesystem;

namespace {

constexpr int kMetaColumns = 6;  // before the optional context column

std::int64_t as_i64(const FeatureValue& v) { return std::get<std::int64_t>(v); }
const std::vector<float>& as_f32(const FeatureValue& v) { return std::get<std::vector<float>>(v); }

void check_posts(const FeatureSchema& posts) {
  for (const auto& f : posts.features())
    require(f.name.rfind("__", 0) != 0, ErrorKind::Config, "post feature names may not start with '__'");
}

std::string member_file(std::int64_t id) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "member_%06lld.sqrk", static_cast<long long>(id));
  return buf;
}

}  // namespace

FeatureSchema event_schema(const FeatureSchema& posts, Index tasks, Index context_dim) {
  check_posts(posts);
  std::vector<FeatureSpec> meta{
      {"__timestamp", FeatureKind::CategoricalId, 1, Transform::Identity, 0},
      {"__feed_position", FeatureKind::CategoricalId, 1, Transform::Identity, 0},
      {"__session", FeatureKind::CategoricalId, 1, Transform::Identity, 0},
      {"__actions", FeatureKind::MultiHotSparse, 1, Transform::Identity, tasks},
      {"__sample_weight", FeatureKind::Numeric, 1, Transform::Identity, 0},
      {"__is_new", FeatureKind::CategoricalId, 1, Transform::Identity, 0},
  };
  if (context_dim > 0) meta.push_back({"__context", FeatureKind::DenseEmbedding, context_dim, Transform::Identity, 0});
  return posts.with(std::move(meta));
}

FeatureSchema candidate_schema(const FeatureSchema& posts, Index context_dim) {
  check_posts(posts);
  std::vector<FeatureSpec> meta{{"__candidate_id", FeatureKind::CategoricalId, 1, Transform::Identity, 0}};
  if (context_dim > 0) meta.push_back({"__context", FeatureKind::DenseEmbedding, context_dim, Transform::Identity, 0});
  return posts.with(std::move(meta));
}

std::vector<std::byte> encode_events(std::span<const InteractionEvent> events, const FeatureSchema& posts, Index tasks,
                                     Index context_dim) {
  const FeatureSchema schema = event_schema(posts, tasks, context_dim);
  std::vector<FeatureRecord> records;
  records.reserve(events.size());
  for (const auto& e : events) {
    require(static_cast<Index>(e.action.size()) == tasks, ErrorKind::Shape, "event action length differs from M");
    require(static_cast<Index>(e.context.size()) == context_dim, ErrorKind::DimMismatch,
            "event context width differs from the dataset's");
    FeatureRecord r = e.post_features;
    std::vector<std::int64_t> acts;
    for (Index m = 0; m < tasks; ++m)
      if (e.action[m]) acts.push_back(m);
    r.emplace_back(e.timestamp);
    r.emplace_back(std::int64_t{e.feed_position});
    r.emplace_back(e.session_id);
    r.emplace_back(std::move(acts));
    r.emplace_back(std::vector<float>{static_cast<float>(e.sample_weight)});
    r.emplace_back(std::int64_t{e.is_new ? 1 : 0});
    if (context_dim > 0) r.emplace_back(e.context);
    records.push_back(std::move(r));
  }
  return encode_history(records, schema);
}

std::vector<InteractionEvent> decode_events(std::span<const std::byte> buffer, const FeatureSchema& posts, Index tasks,
                                            Index context_dim) {
  const FeatureSchema schema = event_schema(posts, tasks, context_dim);
  const ParsedHistory parsed = parse_history(buffer, schema);
  const std::size_t p = posts.size();
  std::vector<InteractionEvent> out;
  out.reserve(parsed.item_count);
  for (std::size_t i = 0; i < parsed.item_count; ++i) {
    FeatureRecord r = parsed.record(i, schema);
    InteractionEvent e;
    e.post_features.assign(r.begin(), r.begin() + static_cast<std::ptrdiff_t>(p));
    e.timestamp = as_i64(r[p]);
    e.feed_position = static_cast<std::int32_t>(as_i64(r[p + 1]));
    e.session_id = as_i64(r[p + 2]);
    e.action.assign(tasks, 0);
    for (auto m : std::get<std::vector<std::int64_t>>(r[p + 3])) e.action[m] = 1;
    e.sample_weight = as_f32(r[p + 4])[0];
    e.is_new = as_i64(r[p + 5]) != 0;
    if (context_dim > 0) e.context = as_f32(r[p + kMetaColumns]);
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<std::byte> encode_candidates(const ScoringRequest& request, const FeatureSchema& posts, Index context_dim) {
  const FeatureSchema schema = candidate_schema(posts, context_dim);
  const std::size_t n = request.candidates.size();
  require(request.candidate_ids.size() == n && request.candidate_context.rows() == static_cast<Index>(n) &&
              request.candidate_context.cols() == context_dim,
          ErrorKind::DimMismatch, "request candidates, ids and context differ in size");
  std::vector<FeatureRecord> records;
  for (std::size_t i = 0; i < n; ++i) {
    FeatureRecord r = request.candidates[i];
    r.emplace_back(request.candidate_ids[i]);
    if (context_dim > 0) {
      std::vector<float> ctx(context_dim);
      for (Index k = 0; k < context_dim; ++k) ctx[k] = request.candidate_context(static_cast<Index>(i), k);
      r.emplace_back(std::move(ctx));
    }
    records.push_back(std::move(r));
  }
  return encode_history(records, schema);
}

void decode_candidates(std::span<const std::byte> buffer, const FeatureSchema& posts, Index context_dim,
                       ScoringRequest& request) {
  const FeatureSchema schema = candidate_schema(posts, context_dim);
  const ParsedHistory parsed = parse_history(buffer, schema);
  const std::size_t p = posts.size();
  request.candidates.clear();
  request.candidate_ids.clear();
  request.candidate_context.resize(parsed.item_count, context_dim);
  for (std::size_t i = 0; i < parsed.item_count; ++i) {
    FeatureRecord r = parsed.record(i, schema);
    request.candidate_ids.push_back(as_i64(r[p]));
    if (context_dim > 0) {
      const auto& ctx = as_f32(r[p + 1]);
      for (Index k = 0; k < context_dim; ++k) request.candidate_context(static_cast<Index>(i), k) = ctx[k];
    }
    r.resize(p);
    request.candidates.push_back(std::move(r));
  }
}

void write_dataset(const std::string& dir, const SyntheticDataset& ds) {
  fs::create_directories(dir);
  const Index tasks = static_cast<Index>(ds.task_names.size());
  Json members = Json::array();
  for (const auto& m : ds.members) {
    const std::string file = member_file(m.member_id);
    write_file((fs::path(dir) / file).string(), encode_events(m.events, ds.schema, tasks, ds.context_dim));
    members.push_back({{"id", m.member_id}, {"file", file}, {"events", m.events.size()}});
  }
  write_json((fs::path(dir) / "manifest.json").string(), {{"kind", "dataset"},
                                                          {"schema", to_json(ds.schema)},
                                                          {"tasks", ds.task_names},
                                                          {"context_dim", ds.context_dim},
                                                          {"start_timestamp", ds.start_timestamp},
                                                          {"end_timestamp", ds.end_timestamp},
                                                          {"members", members}});
}

SyntheticDataset read_dataset(const std::string& dir) {
  const Json j = read_json((fs::path(dir) / "manifest.json").string());
  require(j.value("kind", "") == "dataset", ErrorKind::Format, "'" + dir + "' is not a dataset directory");
  SyntheticDataset ds;
  ds.schema = schema_from_json(j.at("schema"));
  ds.task_names = j.at("tasks").get<std::vector<std::string>>();
  ds.context_dim = j.at("context_dim").get<Index>();
  ds.start_timestamp = j.at("start_timestamp").get<std::int64_t>();
  ds.end_timestamp = j.at("end_timestamp").get<std::int64_t>();
  const Index tasks = static_cast<Index>(ds.task_names.size());
  for (const auto& jm : j.at("members")) {
    MemberHistory m;
    m.member_id = jm.at("id").get<std::int64_t>();
    const auto bytes = read_file((fs::path(dir) / jm.at("file").get<std::string>()).string());
    m.events = decode_events(bytes, ds.schema, tasks, ds.context_dim);
    ds.members.push_back(std::move(m));
  }
  return ds;
}

void write_requests(const std::string& dir, const std::vector<ScoringRequest>& requests, const FeatureSchema& posts,
                    const std::vector<std::string>& task_names, Index context_dim) {
  fs::create_directories(dir);
  const Index tasks = static_cast<Index>(task_names.size());
  Json list = Json::array();
  for (std::size_t i = 0; i < requests.size(); ++i) {
    const auto& r = requests[i];
    const std::string hist = "request_" + std::to_string(i) + "_history.sqrk";
    const std::string cand = "request_" + std::to_string(i) + "_candidates.sqrk";
    write_file((fs::path(dir) / hist).string(), encode_events(r.history, posts, tasks, context_dim));
    write_file((fs::path(dir) / cand).string(), encode_candidates(r, posts, context_dim));
    list.push_back({{"id", r.id}, {"history", hist}, {"candidates", cand}});
  }
  write_json((fs::path(dir) / "manifest.json").string(), {{"kind", "requests"},
                                                          {"schema", to_json(posts)},
                                                          {"tasks", task_names},
                                                          {"context_dim", context_dim},
                                                          {"requests", list}});
}

std::vector<ScoringRequest> read_requests(const std::string& dir, const FeatureSchema& expected_posts, Index tasks,
                                          Index context_dim) {
  const Json j = read_json((fs::path(dir) / "manifest.json").string());
  require(j.value("kind", "") == "requests", ErrorKind::Format, "'" + dir + "' is not a request directory");
  const FeatureSchema posts = schema_from_json(j.at("schema"));
  require(posts == expected_posts, ErrorKind::SchemaMismatch, "request schema differs from the model's");
  require(j.at("context_dim").get<Index>() == context_dim, ErrorKind::DimMismatch,
          "request context width differs from the model's");
  require(static_cast<Index>(j.at("tasks").size()) == tasks, ErrorKind::DimMismatch,
          "request task count differs from the model's");
  std::vector<ScoringRequest> out;
  for (const auto& jr : j.at("requests")) {
    ScoringRequest r;
    r.id = jr.at("id").get<std::string>();
    r.history = decode_events(read_file((fs::path(dir) / jr.at("history").get<std::string>()).string()), posts, tasks,
                              context_dim);
    decode_candidates(read_file((fs::path(dir) / jr.at("candidates").get<std::string>()).string()), posts,
                      context_dim, r);
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<ScoringRequest> requests_from_dataset(const SyntheticDataset& ds, Index max_requests, Index max_history) {
  std::vector<ScoringRequest> out;
  for (const auto& m : ds.members) {
    if (static_cast<Index>(out.size()) >= max_requests) break;
    MemberSplit split = split_last_session(m);
    if (split.eval.empty()) continue;
    ScoringRequest r;
    r.id = "member_" + std::to_string(m.member_id);
    r.history = truncate_history(std::move(split.train), static_cast<std::size_t>(max_history));
    r.candidate_context.resize(static_cast<Index>(split.eval.size()), ds.context_dim);
    for (std::size_t i = 0; i < split.eval.size(); ++i) {
      r.candidates.push_back(split.eval[i].post_features);
      r.candidate_ids.push_back(static_cast<std::int64_t>(i));
      for (Index k = 0; k < ds.context_dim; ++k) r.candidate_context(static_cast<Index>(i), k) = split.eval[i].context[k];
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace seqrank
