#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "leaklab/matrix.hpp"

namespace leaklab::dataset {

// Five MOS-interval classes, index increasing as quality decreases.
enum class ClassLabel : int {
  VeryGood = 0,
  Good = 1,
  Mediocre = 2,
  Poor = 3,
  VeryPoor = 4,
};

inline constexpr int kNumClasses = 5;

const char* to_string(ClassLabel c);
inline int class_index(ClassLabel c) { return static_cast<int>(c); }

// Maps a MOS in [1, 5] to its interval class. Boundaries: [4.2, 5.0] is
// VeryGood, then half-open (lo, hi] steps of 0.8 down to VeryPoor, which is
// closed at 1.0 so the mapping is total. Out-of-range input throws
// DomainError naming the value.
ClassLabel classify_mos(double mos);

struct FrameSample {
  std::string video_id;
  int frame_index = 0;
  std::vector<double> raw_features;
};

struct VideoRecord {
  std::string video_id;
  double mos = 0.0;
  std::vector<FrameSample> frames;
};

struct GeneratorConfig {
  int n_videos = 300;
  int frames_per_video = 40;
  int feature_dim = 32;
  double quality_signal_strength = 1.0;
  double video_nuisance_strength = 2.5;
  double frame_noise_strength = 0.5;
  std::uint64_t seed = 1;

  void validate() const;  // throws DomainError
};

// Fixed nonlinear embedding of quality into feature space:
// component k is sin(k*q/5) + (q/5)^((k mod 3)+1).
std::vector<double> quality_embedding(double q, int dim);

// Synthetic videos: per video a latent MOS ~ U[1,5] and a per-video nuisance
// vector shared by all of its frames (this shared component is what makes
// frame-level leakage profitable); per frame white noise on top. Pure
// function of the config.
std::vector<VideoRecord> generate(const GeneratorConfig& config);

// Manifest CSV: header "video_id,mos,frame_file"; frame_file is a binary or
// CSV frames-by-D matrix, relative paths resolved against the manifest dir.
std::vector<VideoRecord> ingest_manifest(const std::filesystem::path& manifest_path);

// Writes dataset in the manifest layout: DIR/manifest.csv plus
// DIR/frames/<video_id>.bin (or .csv when csv_frames).
void write_manifest(const std::vector<VideoRecord>& videos,
                    const std::filesystem::path& dir, bool csv_frames = false);

// Counts of true classes, VeryGood..VeryPoor order.
std::array<int, kNumClasses> class_histogram(const std::vector<VideoRecord>& videos);

// Share of videos whose class equals the modal class. Empty input throws.
double dominant_class_share(const std::vector<VideoRecord>& videos);

// Checks record invariants (mos range, frames present, ids consistent,
// feature dimension uniform); throws DomainError / IntegrityError.
void validate_dataset(const std::vector<VideoRecord>& videos);

// Frame features of one video as a frames-by-D matrix.
Matrix frame_matrix(const VideoRecord& video);

}  // namespace leaklab::dataset
