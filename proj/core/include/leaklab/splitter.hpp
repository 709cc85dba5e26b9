#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "leaklab/dataset.hpp"

namespace leaklab::splitter {

// train:val proportions for the secondary split (3:1 canonical, 2:1 seen in
// the wild).
struct Ratio {
  int train = 3;
  int val = 1;
};

struct FrameRef {
  std::string video_id;
  int frame_index = 0;
  auto operator<=>(const FrameRef&) const = default;
};

// A complete assignment of videos and frames to roles. train/val always
// describe the fine-tuning roles; test_videos is the evaluation target set
// (the held-out fifth for clean plans, a fold for tainted plans).
struct SplitPlan {
  std::vector<std::string> train_videos;  // sorted unique
  std::vector<std::string> val_videos;    // sorted unique
  std::vector<std::string> test_videos;   // sorted unique
  std::vector<FrameRef> train_frames;     // sorted
  std::vector<FrameRef> val_frames;       // sorted
  bool ft_leaky = false;
  bool test_tainted = false;
  std::uint64_t seed = 0;

  // Optional provenance so a plan file is auditable on its own: either a
  // manifest path or a generator config echo (JSON text).
  std::string dataset_ref;
};

struct FoldSet {
  std::vector<SplitPlan> folds;
  int replicate_index = 0;
};

struct SplitOptions {
  bool strided_frames = false;  // uniform stride instead of random sampling
};

// 4:1 video split into train-pool and test; frame_fraction of each
// train-pool video's frames sampled; pool videos (not frames) split
// train:val. Rounding: floor for val/test sizes, remainder to train.
SplitPlan split_clean(const std::vector<dataset::VideoRecord>& videos,
                      double frame_fraction, Ratio ratio, std::uint64_t seed,
                      SplitOptions options = {});

// Same primary split and frame sampling, but the sampled frames of all
// train-pool videos are pooled and split train:val at the frame level, so
// frames of one video land on both sides.
SplitPlan split_ft_leaky(const std::vector<dataset::VideoRecord>& videos,
                         double frame_fraction, Ratio ratio, std::uint64_t seed,
                         SplitOptions options = {});

// K-fold partitions of ALL videos, ignoring fine-tuning membership; each
// fold plan inherits the ft roles from ft_plan and uses the fold as its test
// set, flagged tainted when it overlaps the fine-tuning pool.
std::vector<FoldSet> make_tainted_folds(const std::vector<dataset::VideoRecord>& videos,
                                        int k, int replicates,
                                        const SplitPlan& ft_plan, std::uint64_t seed);

struct AuditReport {
  int videos_in_train_and_val = 0;      // videos with frames on both sides
  int test_videos_in_train_or_val = 0;  // test videos in the ft pool
  bool ft_leaky = false;                // computed from counts
  bool test_tainted = false;            // computed from counts
  bool consistent = false;              // computed flags equal declared flags
  bool declared_ft_leaky = false;
  bool declared_test_tainted = false;
};

// Verifies the plan against the dataset (dangling references are an
// IntegrityError) and recomputes the leakage flags from content.
AuditReport audit(const SplitPlan& plan, const std::vector<dataset::VideoRecord>& videos);

std::string format_audit(const AuditReport& report);

std::string to_json_string(const SplitPlan& plan);
SplitPlan plan_from_json_string(const std::string& text);
void write_plan(const SplitPlan& plan, const std::filesystem::path& path);
SplitPlan read_plan(const std::filesystem::path& path);

}  // namespace leaklab::splitter
