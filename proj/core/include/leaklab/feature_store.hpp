#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "leaklab/dataset.hpp"
#include "leaklab/extractor.hpp"
#include "leaklab/matrix.hpp"
#include "leaklab/pooling.hpp"

namespace leaklab::harness {

// On-disk cache of per-frame and pooled features, keyed by the extractor's
// weight hash. Layout: DIR/index.json plus one binary matrix per video.
class FeatureStore {
 public:
  static FeatureStore create(const std::filesystem::path& dir, std::uint64_t extractor_hash,
                             pooling::PoolingMethod method);
  // Throws StaleCacheError when the stored hash differs from expected.
  static FeatureStore open(const std::filesystem::path& dir, std::uint64_t expected_hash);

  void put(const std::string& video_id, const Matrix& frame_features,
           std::span<const double> pooled);
  bool contains(const std::string& video_id) const;
  Matrix frame_features(const std::string& video_id) const;
  std::vector<double> pooled(const std::string& video_id) const;
  std::vector<std::string> video_ids() const;

  std::uint64_t extractor_hash() const { return extractor_hash_; }
  pooling::PoolingMethod pooling_method() const { return method_; }
  const std::filesystem::path& dir() const { return dir_; }

  void save_index() const;

 private:
  struct Entry {
    std::string file;
    std::size_t rows = 0, cols = 0;
    std::vector<double> pooled;
  };

  std::filesystem::path dir_;
  std::uint64_t extractor_hash_ = 0;
  pooling::PoolingMethod method_ = pooling::PoolingMethod::Mean;
  std::map<std::string, Entry> entries_;
};

// Extracts, pools, and persists features for every video; reuses a fresh
// cache, refuses a stale one.
FeatureStore cache_features(const extractor::Extractor& extractor,
                            const std::vector<dataset::VideoRecord>& videos,
                            const std::filesystem::path& dir,
                            pooling::PoolingMethod method = pooling::PoolingMethod::Mean);

}  // namespace leaklab::harness
