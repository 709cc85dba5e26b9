#include <doctest.h>

#include <algorithm>
#include <set>
#include <unordered_set>

#include "leaklab/errors.hpp"
#include "leaklab/splitter.hpp"
#include "support/test_util.hpp"

using namespace leaklab;
using splitter::Ratio;
using splitter::SplitPlan;
namespace tu = leaklab::testing;

TEST_SUITE_BEGIN("splitter");

namespace {

std::vector<dataset::VideoRecord> videos_of(int n, int frames, std::uint64_t seed = 7) {
  return dataset::generate(tu::small_config(n, frames, 4, seed));
}

std::set<std::string> to_set(const std::vector<std::string>& v) {
  return {v.begin(), v.end()};
}

int frames_of_video(const std::vector<splitter::FrameRef>& refs, const std::string& id) {
  int n = 0;
  for (const auto& fr : refs)
    if (fr.video_id == id) ++n;
  return n;
}

}  // namespace

TEST_CASE("clean split holds the 4:1 video ratio") {
  const auto videos = videos_of(1200, 2);
  const auto plan = splitter::split_clean(videos, 1.0, {3, 1}, 5);
  CHECK(plan.test_videos.size() == 240);
  CHECK(plan.train_videos.size() + plan.val_videos.size() == 960);
}

TEST_CASE("ten videos at 3:1 give 6/2/2 disjoint roles") {
  const auto videos = videos_of(10, 3);
  const auto plan = splitter::split_clean(videos, 1.0, {3, 1}, 11);
  CHECK(plan.train_videos.size() == 6);
  CHECK(plan.val_videos.size() == 2);
  CHECK(plan.test_videos.size() == 2);
  auto train = to_set(plan.train_videos), val = to_set(plan.val_videos),
       test = to_set(plan.test_videos);
  for (const auto& id : train) {
    CHECK(!val.count(id));
    CHECK(!test.count(id));
  }
  for (const auto& id : val) CHECK(!test.count(id));
}

TEST_CASE("a 240-frame video at fraction 0.2 contributes 48 frames") {
  auto videos = videos_of(10, 240);
  const auto plan = splitter::split_clean(videos, 0.2, {3, 1}, 3);
  for (const auto& id : plan.train_videos)
    CHECK(frames_of_video(plan.train_frames, id) == 48);
  for (const auto& id : plan.val_videos)
    CHECK(frames_of_video(plan.val_frames, id) == 48);
}

TEST_CASE("clean split roles are pairwise disjoint across seeds") {
  const auto videos = videos_of(37, 5);
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto plan = splitter::split_clean(videos, 0.4, {3, 1}, seed);
    auto train = to_set(plan.train_videos), val = to_set(plan.val_videos),
         test = to_set(plan.test_videos);
    CHECK(train.size() + val.size() + test.size() == videos.size());
    const auto audit = splitter::audit(plan, videos);
    CHECK(audit.videos_in_train_and_val == 0);
    CHECK(audit.test_videos_in_train_or_val == 0);
    CHECK(audit.consistent);
  }
}

TEST_CASE("clean and leaky splits share the primary video split and frame sample") {
  const auto videos = videos_of(25, 8);
  const auto clean = splitter::split_clean(videos, 0.25, {3, 1}, 99);
  const auto leaky = splitter::split_ft_leaky(videos, 0.25, {3, 1}, 99);
  CHECK(clean.test_videos == leaky.test_videos);
  // same sampled frame multiset: clean train+val == leaky train+val
  auto all_frames = [](const SplitPlan& p) {
    std::vector<splitter::FrameRef> out = p.train_frames;
    out.insert(out.end(), p.val_frames.begin(), p.val_frames.end());
    std::sort(out.begin(), out.end());
    return out;
  };
  CHECK(all_frames(clean) == all_frames(leaky));
}

TEST_CASE("leaky split pools frames at roughly the configured ratio") {
  // 10 pool videos x 48 frames, 3:1 split: a video expects 36 train / 12 val.
  const auto videos = videos_of(13, 240);  // pool has 13 - 2 = 11 videos... use floor(13/5)=2 test
  double mean_val_frames = 0.0;
  int count = 0;
  for (std::uint64_t seed = 0; seed < 300; ++seed) {
    const auto plan = splitter::split_ft_leaky(videos, 0.2, {3, 1}, seed);
    std::unordered_set<std::string> pool;
    for (const auto& fr : plan.train_frames) pool.insert(fr.video_id);
    for (const auto& fr : plan.val_frames) pool.insert(fr.video_id);
    for (const auto& id : pool) {
      mean_val_frames += frames_of_video(plan.val_frames, id);
      ++count;
    }
  }
  mean_val_frames /= count;
  CHECK(mean_val_frames == doctest::Approx(12.0).epsilon(0.05));
}

TEST_CASE("leaky split leaks almost surely with many frames per video") {
  // per video, P(all 48 sampled frames stay in train) ~ (3/4)^48 < 1e-5
  CHECK(std::pow(0.75, 48) < 1e-5);
  const auto videos = videos_of(20, 40);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto plan = splitter::split_ft_leaky(videos, 0.2, {3, 1}, seed);
    const auto audit = splitter::audit(plan, videos);
    CHECK(audit.videos_in_train_and_val > 0);
    CHECK(audit.ft_leaky);
    CHECK(audit.consistent);
  }
}

TEST_CASE("a video contributing one frame cannot leak") {
  const auto videos = videos_of(20, 4);
  const auto plan = splitter::split_ft_leaky(videos, 0.01, {3, 1}, 5);  // 1 frame per video
  std::unordered_set<std::string> train_v, val_v;
  for (const auto& fr : plan.train_frames) train_v.insert(fr.video_id);
  for (const auto& fr : plan.val_frames) val_v.insert(fr.video_id);
  for (const auto& id : train_v) CHECK(!val_v.count(id));
  const auto audit = splitter::audit(plan, videos);
  CHECK(audit.videos_in_train_and_val == 0);
  CHECK_FALSE(audit.consistent);  // declared leaky, nothing actually leaked
}

TEST_CASE("tainted folds partition the videos and overlap the fine-tune pool") {
  const auto videos = videos_of(1200, 2);
  const auto ft = splitter::split_clean(videos, 1.0, {3, 1}, 8);
  const auto sets = splitter::make_tainted_folds(videos, 5, 1, ft, 21);
  REQUIRE(sets.size() == 1);
  REQUIRE(sets[0].folds.size() == 5);

  std::set<std::string> seen;
  int overlap_total = 0;
  std::unordered_set<std::string> pool(ft.train_videos.begin(), ft.train_videos.end());
  pool.insert(ft.val_videos.begin(), ft.val_videos.end());
  for (const auto& fold : sets[0].folds) {
    CHECK(fold.test_videos.size() == 240);
    CHECK(fold.test_tainted);
    CHECK(fold.ft_leaky == ft.ft_leaky);
    for (const auto& id : fold.test_videos) {
      CHECK(!seen.count(id));
      seen.insert(id);
      if (pool.count(id)) ++overlap_total;
    }
    const auto audit = splitter::audit(fold, videos);
    CHECK(audit.test_tainted);
    CHECK(audit.consistent);
    // expectation: 80% of each fold was in the fine-tuning pool
    CHECK(audit.test_videos_in_train_or_val > 150);
  }
  CHECK(seen.size() == videos.size());
  CHECK(overlap_total == 960);  // every pool video lands in exactly one fold
}

TEST_CASE("leave-one-out folds are tainted exactly when the video was in the pool") {
  const auto videos = videos_of(12, 3);
  const auto ft = splitter::split_clean(videos, 1.0, {3, 1}, 4);
  std::unordered_set<std::string> pool(ft.train_videos.begin(), ft.train_videos.end());
  pool.insert(ft.val_videos.begin(), ft.val_videos.end());
  const auto sets = splitter::make_tainted_folds(videos, 12, 1, ft, 77);
  for (const auto& fold : sets[0].folds) {
    REQUIRE(fold.test_videos.size() == 1);
    CHECK(fold.test_tainted == (pool.count(fold.test_videos[0]) > 0));
    CHECK(splitter::audit(fold, videos).consistent);
  }
}

TEST_CASE("ten replicates of five folds carry distinct derived seeds") {
  const auto videos = videos_of(30, 3);
  const auto ft = splitter::split_clean(videos, 1.0, {3, 1}, 4);
  const auto sets = splitter::make_tainted_folds(videos, 5, 10, ft, 9);
  REQUIRE(sets.size() == 10);
  std::set<std::uint64_t> seeds;
  for (const auto& fs : sets)
    for (const auto& fold : fs.folds) seeds.insert(fold.seed);
  CHECK(seeds.size() == 50);
}

TEST_CASE("audit flags dangling references") {
  const auto videos = videos_of(10, 3);
  auto plan = splitter::split_clean(videos, 1.0, {3, 1}, 2);
  SUBCASE("unknown video") {
    plan.test_videos.push_back("vMISSING");
    CHECK_THROWS_AS(splitter::audit(plan, videos), IntegrityError);
  }
  SUBCASE("unknown frame index") {
    plan.train_frames.push_back({videos[0].video_id, 999});
    CHECK_THROWS_AS(splitter::audit(plan, videos), IntegrityError);
  }
}

TEST_CASE("split preconditions") {
  const auto videos = videos_of(10, 3);
  CHECK_THROWS_AS(splitter::split_clean(videos, 0.0, {3, 1}, 1), DomainError);
  CHECK_THROWS_AS(splitter::split_clean(videos, 1.1, {3, 1}, 1), DomainError);
  CHECK_THROWS_AS(splitter::split_clean(videos_of(4, 3), 1.0, {3, 1}, 1), DomainError);
  CHECK_THROWS_AS(splitter::make_tainted_folds(videos, 1, 1, {}, 1), DomainError);
  CHECK_THROWS_AS(splitter::make_tainted_folds(videos, 11, 1, {}, 1), DomainError);
}

TEST_CASE("strided sampling is deterministic and evenly spaced") {
  const auto videos = videos_of(10, 20);
  splitter::SplitOptions opts{true};
  const auto a = splitter::split_clean(videos, 0.25, {3, 1}, 5, opts);
  const auto b = splitter::split_clean(videos, 0.25, {3, 1}, 5, opts);
  CHECK(a.train_frames == b.train_frames);
  // every pool video got indices {0, 4, 8, 12, 16} under stride 20/5
  for (const auto& id : a.train_videos) {
    std::vector<int> idx;
    for (const auto& fr : a.train_frames)
      if (fr.video_id == id) idx.push_back(fr.frame_index);
    CHECK(idx == std::vector<int>{0, 4, 8, 12, 16});
  }
}

TEST_CASE("plan JSON round trip") {
  const auto videos = videos_of(12, 4);
  auto plan = splitter::split_ft_leaky(videos, 0.5, {2, 1}, 31);
  plan.dataset_ref = "manifest:/tmp/x.csv";
  const auto text = splitter::to_json_string(plan);
  const auto back = splitter::plan_from_json_string(text);
  CHECK(back.train_videos == plan.train_videos);
  CHECK(back.val_videos == plan.val_videos);
  CHECK(back.test_videos == plan.test_videos);
  CHECK(back.train_frames == plan.train_frames);
  CHECK(back.val_frames == plan.val_frames);
  CHECK(back.ft_leaky == plan.ft_leaky);
  CHECK(back.test_tainted == plan.test_tainted);
  CHECK(back.seed == plan.seed);
  CHECK(back.dataset_ref == plan.dataset_ref);
  CHECK_THROWS_AS(splitter::plan_from_json_string("{not json"), ParseError);
}

TEST_SUITE_END();
