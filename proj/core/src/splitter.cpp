#include "leaklab/splitter.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "leaklab/errors.hpp"
#include "leaklab/rng.hpp"

namespace leaklab::splitter {

using dataset::VideoRecord;
using json = nlohmann::ordered_json;

namespace {

void check_split_inputs(const std::vector<VideoRecord>& videos, double frame_fraction,
                        Ratio ratio) {
  if (!(frame_fraction > 0.0 && frame_fraction <= 1.0))
    throw DomainError("split: frame_fraction must be in (0, 1]");
  if (ratio.train <= 0 || ratio.val <= 0)
    throw DomainError("split: ratio parts must be positive");
  if (videos.size() < 5)
    throw DomainError("split: need at least 5 videos to populate all roles, got " +
                      std::to_string(videos.size()));
}

struct PrimarySplit {
  std::vector<std::size_t> pool;  // shuffled order preserved
  std::vector<std::size_t> test;
  // sampled frame indices per pool video, parallel to `pool`
  std::vector<std::vector<int>> sampled;
};

// Shared by both protocols so that a given seed yields the same 4:1 video
// split and frame sample; only the secondary split differs.
PrimarySplit primary_split(const std::vector<VideoRecord>& videos, double frame_fraction,
                           Rng& rng, const SplitOptions& options) {
  const std::size_t n = videos.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  rng.shuffle(order);

  const std::size_t n_test = n / 5;  // floor; remainder stays in the pool
  PrimarySplit out;
  out.pool.assign(order.begin(), order.end() - static_cast<std::ptrdiff_t>(n_test));
  out.test.assign(order.end() - static_cast<std::ptrdiff_t>(n_test), order.end());

  out.sampled.reserve(out.pool.size());
  for (std::size_t v : out.pool) {
    const int nf = static_cast<int>(videos[v].frames.size());
    const int k = std::max(1, static_cast<int>(frame_fraction * nf));
    std::vector<int> picks;
    if (options.strided_frames) {
      picks.reserve(static_cast<std::size_t>(k));
      for (int j = 0; j < k; ++j) picks.push_back(j * nf / k);
    } else {
      picks = rng.sample_without_replacement(nf, k);
    }
    out.sampled.push_back(std::move(picks));
  }
  return out;
}

std::vector<std::string> sorted_ids(const std::vector<VideoRecord>& videos,
                                    const std::vector<std::size_t>& idx) {
  std::vector<std::string> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(videos[i].video_id);
  std::sort(out.begin(), out.end());
  return out;
}

void sort_frames(std::vector<FrameRef>& frames) {
  std::sort(frames.begin(), frames.end());
}

}  // namespace

SplitPlan split_clean(const std::vector<VideoRecord>& videos, double frame_fraction,
                      Ratio ratio, std::uint64_t seed, SplitOptions options) {
  check_split_inputs(videos, frame_fraction, ratio);
  Rng rng(seed);
  const auto primary = primary_split(videos, frame_fraction, rng, options);

  std::vector<std::size_t> pool_order(primary.pool.size());
  for (std::size_t i = 0; i < pool_order.size(); ++i) pool_order[i] = i;
  rng.shuffle(pool_order);
  const std::size_t n_val =
      primary.pool.size() * static_cast<std::size_t>(ratio.val) /
      static_cast<std::size_t>(ratio.train + ratio.val);

  SplitPlan plan;
  plan.seed = seed;
  std::vector<std::size_t> train_pos(pool_order.begin(),
                                     pool_order.end() - static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> val_pos(pool_order.end() - static_cast<std::ptrdiff_t>(n_val),
                                   pool_order.end());
  for (std::size_t p : train_pos) {
    const auto& vid = videos[primary.pool[p]].video_id;
    for (int f : primary.sampled[p]) plan.train_frames.push_back({vid, f});
  }
  for (std::size_t p : val_pos) {
    const auto& vid = videos[primary.pool[p]].video_id;
    for (int f : primary.sampled[p]) plan.val_frames.push_back({vid, f});
  }
  std::vector<std::size_t> train_idx, val_idx;
  for (std::size_t p : train_pos) train_idx.push_back(primary.pool[p]);
  for (std::size_t p : val_pos) val_idx.push_back(primary.pool[p]);
  plan.train_videos = sorted_ids(videos, train_idx);
  plan.val_videos = sorted_ids(videos, val_idx);
  plan.test_videos = sorted_ids(videos, primary.test);
  sort_frames(plan.train_frames);
  sort_frames(plan.val_frames);
  return plan;
}

SplitPlan split_ft_leaky(const std::vector<VideoRecord>& videos, double frame_fraction,
                         Ratio ratio, std::uint64_t seed, SplitOptions options) {
  check_split_inputs(videos, frame_fraction, ratio);
  Rng rng(seed);
  const auto primary = primary_split(videos, frame_fraction, rng, options);

  std::vector<FrameRef> pooled;
  for (std::size_t p = 0; p < primary.pool.size(); ++p) {
    const auto& vid = videos[primary.pool[p]].video_id;
    for (int f : primary.sampled[p]) pooled.push_back({vid, f});
  }
  rng.shuffle(pooled);
  const std::size_t n_val = pooled.size() * static_cast<std::size_t>(ratio.val) /
                            static_cast<std::size_t>(ratio.train + ratio.val);

  SplitPlan plan;
  plan.seed = seed;
  plan.ft_leaky = true;
  plan.train_frames.assign(pooled.begin(), pooled.end() - static_cast<std::ptrdiff_t>(n_val));
  plan.val_frames.assign(pooled.end() - static_cast<std::ptrdiff_t>(n_val), pooled.end());
  sort_frames(plan.train_frames);
  sort_frames(plan.val_frames);

  std::set<std::string> train_v, val_v;
  for (const auto& fr : plan.train_frames) train_v.insert(fr.video_id);
  for (const auto& fr : plan.val_frames) val_v.insert(fr.video_id);
  plan.train_videos.assign(train_v.begin(), train_v.end());
  plan.val_videos.assign(val_v.begin(), val_v.end());
  plan.test_videos = sorted_ids(videos, primary.test);
  return plan;
}

std::vector<FoldSet> make_tainted_folds(const std::vector<VideoRecord>& videos, int k,
                                        int replicates, const SplitPlan& ft_plan,
                                        std::uint64_t seed) {
  if (k < 2) throw DomainError("make_tainted_folds: K must be >= 2");
  if (static_cast<std::size_t>(k) > videos.size())
    throw DomainError("make_tainted_folds: K exceeds the number of videos");
  if (replicates < 1) throw DomainError("make_tainted_folds: replicates must be >= 1");

  std::unordered_set<std::string> ft_pool(ft_plan.train_videos.begin(),
                                          ft_plan.train_videos.end());
  ft_pool.insert(ft_plan.val_videos.begin(), ft_plan.val_videos.end());

  std::vector<FoldSet> out;
  out.reserve(static_cast<std::size_t>(replicates));
  for (int rep = 0; rep < replicates; ++rep) {
    const std::uint64_t rep_seed = derive_seed(seed, static_cast<std::uint64_t>(rep));
    Rng rng(rep_seed);
    std::vector<std::size_t> order(videos.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);

    FoldSet fs;
    fs.replicate_index = rep;
    const std::size_t base = videos.size() / static_cast<std::size_t>(k);
    const std::size_t extra = videos.size() % static_cast<std::size_t>(k);
    std::size_t pos = 0;
    for (int fold = 0; fold < k; ++fold) {
      const std::size_t size = base + (static_cast<std::size_t>(fold) < extra ? 1 : 0);
      SplitPlan plan;
      plan.train_videos = ft_plan.train_videos;
      plan.val_videos = ft_plan.val_videos;
      plan.train_frames = ft_plan.train_frames;
      plan.val_frames = ft_plan.val_frames;
      plan.ft_leaky = ft_plan.ft_leaky;
      plan.dataset_ref = ft_plan.dataset_ref;
      plan.seed = derive_seed(rep_seed, static_cast<std::uint64_t>(fold));
      std::vector<std::size_t> fold_idx(order.begin() + static_cast<std::ptrdiff_t>(pos),
                                        order.begin() + static_cast<std::ptrdiff_t>(pos + size));
      pos += size;
      plan.test_videos = sorted_ids(videos, fold_idx);
      plan.test_tainted = std::any_of(plan.test_videos.begin(), plan.test_videos.end(),
                                      [&](const std::string& id) { return ft_pool.count(id) > 0; });
      fs.folds.push_back(std::move(plan));
    }
    out.push_back(std::move(fs));
  }
  return out;
}

AuditReport audit(const SplitPlan& plan, const std::vector<VideoRecord>& videos) {
  std::unordered_map<std::string, std::unordered_set<int>> index;
  for (const auto& v : videos) {
    auto& fr = index[v.video_id];
    for (const auto& f : v.frames) fr.insert(f.frame_index);
  }
  auto check_video = [&](const std::string& id) {
    if (!index.count(id)) throw IntegrityError("plan references unknown video: " + id);
  };
  auto check_frame = [&](const FrameRef& fr) {
    auto it = index.find(fr.video_id);
    if (it == index.end() || !it->second.count(fr.frame_index))
      throw IntegrityError("plan references unknown frame: " + fr.video_id + "[" +
                           std::to_string(fr.frame_index) + "]");
  };
  for (const auto& id : plan.train_videos) check_video(id);
  for (const auto& id : plan.val_videos) check_video(id);
  for (const auto& id : plan.test_videos) check_video(id);
  for (const auto& fr : plan.train_frames) check_frame(fr);
  for (const auto& fr : plan.val_frames) check_frame(fr);

  std::unordered_set<std::string> train_frame_videos, val_frame_videos;
  for (const auto& fr : plan.train_frames) train_frame_videos.insert(fr.video_id);
  for (const auto& fr : plan.val_frames) val_frame_videos.insert(fr.video_id);

  AuditReport report;
  for (const auto& id : train_frame_videos)
    if (val_frame_videos.count(id)) report.videos_in_train_and_val++;

  std::unordered_set<std::string> ft_pool(plan.train_videos.begin(), plan.train_videos.end());
  ft_pool.insert(plan.val_videos.begin(), plan.val_videos.end());
  for (const auto& id : plan.test_videos)
    if (ft_pool.count(id)) report.test_videos_in_train_or_val++;

  report.ft_leaky = report.videos_in_train_and_val > 0;
  report.test_tainted = report.test_videos_in_train_or_val > 0;
  report.declared_ft_leaky = plan.ft_leaky;
  report.declared_test_tainted = plan.test_tainted;
  report.consistent = report.ft_leaky == plan.ft_leaky &&
                      report.test_tainted == plan.test_tainted;
  return report;
}

std::string format_audit(const AuditReport& r) {
  std::ostringstream out;
  out << "videos with frames in both train and val: " << r.videos_in_train_and_val << '\n'
      << "test videos appearing in train/val:       " << r.test_videos_in_train_or_val << '\n'
      << "fine-tune leak: " << (r.ft_leaky ? "yes" : "no")
      << " (declared " << (r.declared_ft_leaky ? "yes" : "no") << ")\n"
      << "tainted test:   " << (r.test_tainted ? "yes" : "no")
      << " (declared " << (r.declared_test_tainted ? "yes" : "no") << ")\n"
      << "flags consistent with declaration: " << (r.consistent ? "yes" : "NO") << '\n';
  return out.str();
}

namespace {

json frames_to_json(const std::vector<FrameRef>& frames) {
  json arr = json::array();
  for (const auto& fr : frames) arr.push_back(json::array({fr.video_id, fr.frame_index}));
  return arr;
}

std::vector<FrameRef> frames_from_json(const json& arr) {
  std::vector<FrameRef> out;
  for (const auto& item : arr)
    out.push_back({item.at(0).get<std::string>(), item.at(1).get<int>()});
  return out;
}

}  // namespace

std::string to_json_string(const SplitPlan& plan) {
  json j;
  j["format_version"] = 1;
  j["train_videos"] = plan.train_videos;
  j["val_videos"] = plan.val_videos;
  j["test_videos"] = plan.test_videos;
  j["train_frames"] = frames_to_json(plan.train_frames);
  j["val_frames"] = frames_to_json(plan.val_frames);
  j["ft_leaky"] = plan.ft_leaky;
  j["test_tainted"] = plan.test_tainted;
  j["seed"] = plan.seed;
  if (!plan.dataset_ref.empty()) j["dataset_ref"] = plan.dataset_ref;
  return j.dump(2);
}

SplitPlan plan_from_json_string(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("plan JSON: ") + e.what());
  }
  try {
    SplitPlan plan;
    plan.train_videos = j.at("train_videos").get<std::vector<std::string>>();
    plan.val_videos = j.at("val_videos").get<std::vector<std::string>>();
    plan.test_videos = j.at("test_videos").get<std::vector<std::string>>();
    plan.train_frames = frames_from_json(j.at("train_frames"));
    plan.val_frames = frames_from_json(j.at("val_frames"));
    plan.ft_leaky = j.at("ft_leaky").get<bool>();
    plan.test_tainted = j.at("test_tainted").get<bool>();
    plan.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("dataset_ref")) plan.dataset_ref = j["dataset_ref"].get<std::string>();
    return plan;
  } catch (const json::exception& e) {
    throw ParseError(std::string("plan JSON: ") + e.what());
  }
}

void write_plan(const SplitPlan& plan, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write plan: " + path.string());
  out << to_json_string(plan) << '\n';
}

SplitPlan read_plan(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open plan: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return plan_from_json_string(ss.str());
}

}  // namespace leaklab::splitter
