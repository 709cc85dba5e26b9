#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>

#include "leaklab/dataset.hpp"
#include "leaklab/errors.hpp"
#include "leaklab/matrix.hpp"
#include "support/test_util.hpp"

using namespace leaklab;
using dataset::ClassLabel;
namespace tu = leaklab::testing;

TEST_SUITE_BEGIN("dataset");

TEST_CASE("classify_mos maps the interval boundaries") {
  CHECK(dataset::classify_mos(4.2) == ClassLabel::VeryGood);
  CHECK(dataset::classify_mos(3.4) == ClassLabel::Mediocre);  // Good needs mos > 3.4
  CHECK(dataset::classify_mos(1.0) == ClassLabel::VeryPoor);
  CHECK(dataset::classify_mos(5.0) == ClassLabel::VeryGood);
  CHECK(dataset::classify_mos(3.9) == ClassLabel::Good);
  CHECK(dataset::classify_mos(2.61) == ClassLabel::Mediocre);
  CHECK(dataset::classify_mos(1.8) == ClassLabel::VeryPoor);
  CHECK(dataset::classify_mos(1.81) == ClassLabel::Poor);
}

TEST_CASE("classify_mos rejects out-of-range values by name") {
  CHECK_THROWS_WITH_AS(dataset::classify_mos(5.3), doctest::Contains("5.3"), DomainError);
  CHECK_THROWS_AS(dataset::classify_mos(0.99), DomainError);
  CHECK_THROWS_AS(dataset::classify_mos(std::nan("")), DomainError);
}

TEST_CASE("classify_mos is total and monotone on a fine grid") {
  int prev = 0;
  for (int i = 0; i <= 40000; ++i) {
    const double mos = 1.0 + 4.0 * i / 40000.0;
    const int idx = dataset::class_index(dataset::classify_mos(mos));
    CHECK(idx == tu::interval_class(mos));
    if (i > 0) CHECK(idx <= prev);  // class index never increases as MOS rises
    prev = idx;
  }
}

TEST_CASE("noise-free generation degenerates to the quality embedding") {
  auto config = tu::small_config(5, 4, 8, 42);
  config.video_nuisance_strength = 0.0;
  config.frame_noise_strength = 0.0;
  config.quality_signal_strength = 2.0;
  const auto videos = dataset::generate(config);
  for (const auto& v : videos) {
    const auto g = dataset::quality_embedding(v.mos, config.feature_dim);
    for (const auto& f : v.frames)
      for (int k = 0; k < config.feature_dim; ++k)
        CHECK(f.raw_features[static_cast<std::size_t>(k)] ==
              doctest::Approx(2.0 * g[static_cast<std::size_t>(k)]).epsilon(1e-12));
    for (const auto& f : v.frames) CHECK(f.raw_features == v.frames.front().raw_features);
  }
}

TEST_CASE("generation is a pure function of its config") {
  const auto config = tu::small_config(20, 6, 16, 777);
  const auto a = dataset::generate(config);
  const auto b = dataset::generate(config);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].mos == b[i].mos);
    for (std::size_t f = 0; f < a[i].frames.size(); ++f)
      CHECK(a[i].frames[f].raw_features == b[i].frames[f].raw_features);
  }
}

TEST_CASE("default config has a nonzero dominant class, confirmed by recount") {
  const auto videos = dataset::generate(dataset::GeneratorConfig{});
  const double share = dataset::dominant_class_share(videos);
  // independent recount straight from the interval definition
  int counts[5] = {0, 0, 0, 0, 0};
  for (const auto& v : videos) counts[tu::interval_class(v.mos)]++;
  const int top = *std::max_element(counts, counts + 5);
  CHECK(share == doctest::Approx(static_cast<double>(top) / videos.size()));
  CHECK(share > 0.0);
  CHECK(share <= 1.0);
}

TEST_CASE("frames of one video correlate more than frames across videos") {
  auto config = tu::small_config(30, 6, 32, 2024);
  const auto videos = dataset::generate(config);
  auto cosine = [](std::span<const double> a, std::span<const double> b) {
    return dot(a, b) / std::sqrt(dot(a, a) * dot(b, b));
  };
  double within = 0.0;
  int nw = 0;
  for (const auto& v : videos)
    for (std::size_t i = 0; i < v.frames.size(); ++i)
      for (std::size_t j = i + 1; j < v.frames.size(); ++j) {
        within += cosine(v.frames[i].raw_features, v.frames[j].raw_features);
        ++nw;
      }
  double between = 0.0;
  int nb = 0;
  for (std::size_t a = 0; a < videos.size(); ++a)
    for (std::size_t b = a + 1; b < videos.size(); ++b) {
      between += cosine(videos[a].frames[0].raw_features, videos[b].frames[0].raw_features);
      ++nb;
    }
  CHECK(within / nw > between / nb);
}

TEST_CASE("manifest round trip preserves the dataset bit-for-bit") {
  tu::TempDir dir("manifest");
  const auto videos = dataset::generate(tu::small_config(4, 3, 6, 99));
  dataset::write_manifest(videos, dir.path());
  const auto loaded = dataset::ingest_manifest(dir.path() / "manifest.csv");
  REQUIRE(loaded.size() == videos.size());
  for (std::size_t i = 0; i < videos.size(); ++i) {
    CHECK(loaded[i].video_id == videos[i].video_id);
    CHECK(loaded[i].mos == videos[i].mos);
    REQUIRE(loaded[i].frames.size() == videos[i].frames.size());
    for (std::size_t f = 0; f < videos[i].frames.size(); ++f)
      CHECK(loaded[i].frames[f].raw_features == videos[i].frames[f].raw_features);
  }

  SUBCASE("csv frame files load too") {
    tu::TempDir csvdir("manifest_csv");
    dataset::write_manifest(videos, csvdir.path(), /*csv_frames=*/true);
    const auto from_csv = dataset::ingest_manifest(csvdir.path() / "manifest.csv");
    REQUIRE(from_csv.size() == videos.size());
    for (std::size_t f = 0; f < videos[0].frames.size(); ++f)
      for (std::size_t k = 0; k < videos[0].frames[f].raw_features.size(); ++k)
        CHECK(from_csv[0].frames[f].raw_features[k] ==
              doctest::Approx(videos[0].frames[f].raw_features[k]).epsilon(1e-15));
  }
}

TEST_CASE("two-video manifest classifies its extremes") {
  tu::TempDir dir("manifest2");
  Matrix frames(2, 3);
  frames.at(0, 0) = 1.0;
  frames.at(1, 2) = -2.5;
  write_matrix_binary(dir.path() / "a.bin", frames);
  write_matrix_binary(dir.path() / "b.bin", frames);
  std::ofstream(dir.path() / "manifest.csv")
      << "video_id,mos,frame_file\nvid_a,1.3,a.bin\nvid_b,4.9,b.bin\n";
  const auto videos = dataset::ingest_manifest(dir.path() / "manifest.csv");
  REQUIRE(videos.size() == 2);
  CHECK(dataset::classify_mos(videos[0].mos) == ClassLabel::VeryPoor);
  CHECK(dataset::classify_mos(videos[1].mos) == ClassLabel::VeryGood);
}

TEST_CASE("manifest errors carry the offending row") {
  tu::TempDir dir("manifest_bad");
  Matrix frames(1, 2);
  write_matrix_binary(dir.path() / "a.bin", frames);

  SUBCASE("mos out of range is a domain error citing the line") {
    std::ofstream(dir.path() / "manifest.csv")
        << "video_id,mos,frame_file\nok,3.0,a.bin\nbad,5.3,a.bin\n";
    CHECK_THROWS_WITH_AS(dataset::ingest_manifest(dir.path() / "manifest.csv"),
                         doctest::Contains("line 3"), DomainError);
  }
  SUBCASE("malformed row is a parse error with the line number") {
    std::ofstream(dir.path() / "manifest.csv")
        << "video_id,mos,frame_file\nonly_two_fields,3.0\n";
    CHECK_THROWS_WITH_AS(dataset::ingest_manifest(dir.path() / "manifest.csv"),
                         doctest::Contains("line 2"), ParseError);
  }
  SUBCASE("empty file yields an empty list") {
    std::ofstream(dir.path() / "manifest.csv") << "";
    CHECK(dataset::ingest_manifest(dir.path() / "manifest.csv").empty());
  }
  SUBCASE("header-only file yields an empty list") {
    std::ofstream(dir.path() / "manifest.csv") << "video_id,mos,frame_file\n";
    CHECK(dataset::ingest_manifest(dir.path() / "manifest.csv").empty());
  }
}

TEST_CASE("dominant_class_share counts the modal class") {
  auto mk = [](double mos) {
    dataset::VideoRecord v;
    v.video_id = "v";
    v.mos = mos;
    v.frames.push_back({"v", 0, {0.0}});
    return v;
  };
  SUBCASE("single class") {
    std::vector<dataset::VideoRecord> vids = {mk(3.0), mk(3.0), mk(3.0)};
    CHECK(dataset::dominant_class_share(vids) == doctest::Approx(1.0));
  }
  SUBCASE("two thirds") {
    std::vector<dataset::VideoRecord> vids = {mk(4.0), mk(4.0), mk(2.0)};  // Good, Good, Poor
    CHECK(dataset::dominant_class_share(vids) == doctest::Approx(2.0 / 3.0));
  }
  SUBCASE("empty list is a domain error") {
    CHECK_THROWS_AS(dataset::dominant_class_share({}), DomainError);
  }
}

TEST_CASE("generator config validation") {
  auto config = tu::small_config(10, 4, 8, 1);
  config.frame_noise_strength = -0.5;
  CHECK_THROWS_AS(dataset::generate(config), DomainError);
  config.frame_noise_strength = 0.5;
  config.n_videos = 0;
  CHECK_THROWS_AS(dataset::generate(config), DomainError);
}

TEST_SUITE_END();
