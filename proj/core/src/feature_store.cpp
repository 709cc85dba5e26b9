#include "leaklab/feature_store.hpp"

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "leaklab/errors.hpp"

namespace leaklab::harness {

using json = nlohmann::ordered_json;

namespace {
std::string hash_hex(std::uint64_t h) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}
}  // namespace

FeatureStore FeatureStore::create(const std::filesystem::path& dir,
                                  std::uint64_t extractor_hash,
                                  pooling::PoolingMethod method) {
  FeatureStore store;
  store.dir_ = dir;
  store.extractor_hash_ = extractor_hash;
  store.method_ = method;
  std::filesystem::create_directories(dir);
  return store;
}

FeatureStore FeatureStore::open(const std::filesystem::path& dir, std::uint64_t expected_hash) {
  const auto index_path = dir / "index.json";
  std::ifstream in(index_path);
  if (!in) throw ParseError("feature store: no index at " + index_path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ParseError("feature store index: " + std::string(e.what()));
  }
  FeatureStore store;
  store.dir_ = dir;
  const auto stored = j.at("extractor_hash").get<std::string>();
  if (stored != hash_hex(expected_hash))
    throw StaleCacheError("feature store at " + dir.string() + " was built by extractor " +
                          stored + ", expected " + hash_hex(expected_hash));
  store.extractor_hash_ = expected_hash;
  store.method_ = pooling::pooling_from_string(j.at("pooling").get<std::string>());
  for (const auto& [id, entry] : j.at("videos").items()) {
    Entry e;
    e.file = entry.at("file").get<std::string>();
    e.rows = entry.at("rows").get<std::size_t>();
    e.cols = entry.at("cols").get<std::size_t>();
    e.pooled = entry.at("pooled").get<std::vector<double>>();
    store.entries_[id] = std::move(e);
  }
  return store;
}

void FeatureStore::put(const std::string& video_id, const Matrix& frame_features,
                       std::span<const double> pooled) {
  Entry e;
  e.file = video_id + ".bin";
  e.rows = frame_features.rows();
  e.cols = frame_features.cols();
  e.pooled.assign(pooled.begin(), pooled.end());
  write_matrix_binary(dir_ / e.file, frame_features);
  entries_[video_id] = std::move(e);
}

bool FeatureStore::contains(const std::string& video_id) const {
  return entries_.count(video_id) > 0;
}

Matrix FeatureStore::frame_features(const std::string& video_id) const {
  auto it = entries_.find(video_id);
  if (it == entries_.end()) throw DomainError("feature store: unknown video " + video_id);
  Matrix m = read_matrix_binary(dir_ / it->second.file);
  if (m.rows() != it->second.rows || m.cols() != it->second.cols)
    throw IntegrityError("feature store: shape mismatch for " + video_id);
  return m;
}

std::vector<double> FeatureStore::pooled(const std::string& video_id) const {
  auto it = entries_.find(video_id);
  if (it == entries_.end()) throw DomainError("feature store: unknown video " + video_id);
  return it->second.pooled;
}

std::vector<std::string> FeatureStore::video_ids() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [id, _] : entries_) out.push_back(id);
  return out;
}

void FeatureStore::save_index() const {
  json j;
  j["format_version"] = 1;
  j["extractor_hash"] = hash_hex(extractor_hash_);
  j["pooling"] = pooling::to_string(method_);
  json videos = json::object();
  for (const auto& [id, e] : entries_) {
    json entry;
    entry["file"] = e.file;
    entry["rows"] = e.rows;
    entry["cols"] = e.cols;
    entry["pooled"] = e.pooled;
    videos[id] = std::move(entry);
  }
  j["videos"] = std::move(videos);
  std::ofstream out(dir_ / "index.json");
  if (!out) throw ParseError("feature store: cannot write index in " + dir_.string());
  out << j.dump(1) << '\n';
}

FeatureStore cache_features(const extractor::Extractor& extractor,
                            const std::vector<dataset::VideoRecord>& videos,
                            const std::filesystem::path& dir, pooling::PoolingMethod method) {
  const std::uint64_t hash = extractor::weights_hash(extractor);
  if (std::filesystem::exists(dir / "index.json")) {
    auto store = FeatureStore::open(dir, hash);  // throws StaleCacheError if not ours
    bool complete = store.pooling_method() == method;
    for (const auto& v : videos)
      if (!store.contains(v.video_id)) {
        complete = false;
        break;
      }
    if (complete) return store;
  }
  auto store = FeatureStore::create(dir, hash, method);
  for (const auto& v : videos) {
    const Matrix feats = extractor::extract_features(extractor, dataset::frame_matrix(v));
    const auto pooled = pooling::pool(feats, method);
    store.put(v.video_id, feats, pooled);
  }
  store.save_index();
  return store;
}

}  // namespace leaklab::harness
