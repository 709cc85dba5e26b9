#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "leaklab/endtoend.hpp"
#include "leaklab/errors.hpp"
#include "leaklab/extractor.hpp"
#include "leaklab/rng.hpp"
#include "leaklab/splitter.hpp"
#include "support/test_util.hpp"

using namespace leaklab;
using endtoend::RegressionHead;
using endtoend::RegressionHeadConfig;
namespace tu = leaklab::testing;

TEST_SUITE_BEGIN("endtoend");

namespace {

std::vector<dataset::VideoRecord> default_videos(std::uint64_t seed = 3) {
  return dataset::generate(tu::small_config(40, 6, 16, seed));
}

Matrix body_weights(std::uint64_t seed = 12) {
  return extractor::Extractor::initialize(16, 32, 8, seed).embed_weights;
}

}  // namespace

TEST_CASE("scaled layer sizes clamp at the minimum width") {
  RegressionHeadConfig config;
  CHECK(config.scaled_sizes() == std::array<int, 3>{64, 32, 4});
  config.layer_scale = 1.0;
  CHECK(config.scaled_sizes() == std::array<int, 3>{1024, 512, 32});
  config.layer_scale = 1.0 / 64.0;
  CHECK(config.scaled_sizes() == std::array<int, 3>{16, 8, 4});
}

TEST_CASE("learning rate decays multiplicatively per epoch") {
  RegressionHeadConfig config;
  CHECK(endtoend::epoch_learning_rate(config, 0) == doctest::Approx(1e-4));
  CHECK(endtoend::epoch_learning_rate(config, 2) == doctest::Approx(1e-4 * 0.5625));
}

TEST_CASE("zero epochs return the untrained initialization") {
  const auto videos = default_videos();
  const auto plan = splitter::split_clean(videos, 0.5, {3, 1}, 9);
  RegressionHeadConfig config;
  config.epochs = 0;
  config.dropout_rate = 0.0;
  config.seed = 50;
  const auto body = body_weights();
  const auto [model, summary] = endtoend::train_regression(body, plan, videos, config);
  CHECK(summary.epoch_mean_loss.empty());

  // identical seed builds the identical initialization
  const auto [again, _] = endtoend::train_regression(body, plan, videos, config);
  const auto& x = videos[0].frames[0].raw_features;
  CHECK(model.predict_frame(x) == again.predict_frame(x));
  CHECK(model.body_weights == body);
}

TEST_CASE("training refuses a leaky plan") {
  const auto videos = default_videos();
  const auto plan = splitter::split_ft_leaky(videos, 0.5, {3, 1}, 9);
  CHECK_THROWS_AS(endtoend::train_regression(body_weights(), plan, videos, RegressionHeadConfig{}),
                  DomainError);
}

TEST_CASE("per-epoch mean training loss decreases on the default task") {
  const auto videos = dataset::generate(dataset::GeneratorConfig{
      .n_videos = 60, .frames_per_video = 10, .feature_dim = 32, .seed = 17});
  const auto plan = splitter::split_clean(videos, 0.4, {3, 1}, 21);
  RegressionHeadConfig config;
  config.seed = 5;
  const auto body = extractor::Extractor::initialize(32, 128, 64, 33).embed_weights;
  const auto [model, summary] = endtoend::train_regression(body, plan, videos, config);
  REQUIRE(summary.epoch_mean_loss.size() == 10);
  for (std::size_t e = 1; e < summary.epoch_mean_loss.size(); ++e)
    CHECK(summary.epoch_mean_loss[e] < summary.epoch_mean_loss[e - 1]);
}

TEST_CASE("predict_video averages frame predictions over all frames") {
  const auto videos = default_videos(8);
  const auto plan = splitter::split_clean(videos, 0.5, {3, 1}, 2);
  RegressionHeadConfig config;
  config.epochs = 1;
  config.seed = 3;
  const auto [model, _] = endtoend::train_regression(body_weights(), plan, videos, config);
  const auto& video = videos[5];
  double mean = 0.0;
  for (const auto& f : video.frames) mean += model.predict_frame(f.raw_features);
  mean /= static_cast<double>(video.frames.size());
  CHECK(endtoend::predict_video(model, video) == doctest::Approx(mean).epsilon(1e-12));

  SUBCASE("empty video is a domain error") {
    dataset::VideoRecord empty;
    empty.video_id = "none";
    empty.mos = 3.0;
    CHECK_THROWS_AS(endtoend::predict_video(model, empty), DomainError);
  }
  SUBCASE("frame order does not matter") {
    dataset::VideoRecord shuffled = video;
    std::reverse(shuffled.frames.begin(), shuffled.frames.end());
    CHECK(endtoend::predict_video(model, shuffled) ==
          doctest::Approx(endtoend::predict_video(model, video)).epsilon(1e-12));
  }
}

TEST_CASE("a constant model predicts its output bias") {
  RegressionHead model;
  model.body_weights = Matrix(4, 3);  // zero body
  model.layer_weights.push_back(Matrix(2, 4));
  model.layer_biases.push_back({0.0, 0.0});
  model.layer_weights.push_back(Matrix(1, 2));
  model.layer_biases.push_back({2.75});
  // one hidden layer of rectifiers at zero, then the scalar output
  dataset::VideoRecord video;
  video.video_id = "c";
  video.mos = 3.0;
  video.frames.push_back({"c", 0, {1.0, -2.0, 3.0}});
  video.frames.push_back({"c", 1, {-4.0, 5.0, -6.0}});
  CHECK(endtoend::predict_video(model, video) == doctest::Approx(2.75));
}

TEST_CASE("evaluation is deterministic with dropout disabled") {
  const auto videos = default_videos(4);
  const auto plan = splitter::split_clean(videos, 0.5, {3, 1}, 7);
  RegressionHeadConfig config;
  config.epochs = 2;
  config.seed = 11;
  const auto [model, _] = endtoend::train_regression(body_weights(), plan, videos, config);
  const auto& x = videos[0].frames[0].raw_features;
  CHECK(model.predict_frame(x) == model.predict_frame(x));
}

TEST_CASE("head gradients match central finite differences") {
  const auto videos = default_videos(14);
  const auto plan = splitter::split_clean(videos, 0.5, {3, 1}, 5);
  RegressionHeadConfig config;
  config.epochs = 1;
  config.seed = 21;
  auto [model, _] = endtoend::train_regression(body_weights(), plan, videos, config);

  Rng rng(61);
  Matrix inputs(6, 16);
  for (auto& v : inputs.data()) v = rng.normal();
  std::vector<double> targets(6);
  for (auto& t : targets) t = rng.uniform(1.0, 5.0);

  const auto grads = endtoend::head_gradients(model, inputs, targets);
  const double h = 1e-6;
  int probes = 0;
  for (std::size_t layer = 0; layer < model.layer_weights.size(); ++layer) {
    for (int t = 0; t < 3; ++t) {
      const std::size_t idx = rng.below(model.layer_weights[layer].data().size());
      auto plus = model, minus = model;
      plus.layer_weights[layer].data()[idx] += h;
      minus.layer_weights[layer].data()[idx] -= h;
      const double fd = (endtoend::head_loss(plus, inputs, targets) -
                         endtoend::head_loss(minus, inputs, targets)) /
                        (2.0 * h);
      const double analytic = grads.layer_w[layer].data()[idx];
      if (analytic == 0.0 && fd == 0.0) {
        ++probes;  // dead rectifier path: both sides vanish
        continue;
      }
      CHECK(tu::relative_error(analytic, fd) <= 1e-4);
      ++probes;
    }
  }
  // and through the trainable body
  for (int t = 0; t < 3; ++t) {
    const std::size_t idx = rng.below(model.body_weights.data().size());
    auto plus = model, minus = model;
    plus.body_weights.data()[idx] += h;
    minus.body_weights.data()[idx] -= h;
    const double fd = (endtoend::head_loss(plus, inputs, targets) -
                       endtoend::head_loss(minus, inputs, targets)) /
                      (2.0 * h);
    const double analytic = grads.body_w.data()[idx];
    if (!(analytic == 0.0 && fd == 0.0)) CHECK(tu::relative_error(analytic, fd) <= 1e-4);
    ++probes;
  }
  CHECK(probes >= 10);
}

TEST_CASE("config validation") {
  RegressionHeadConfig config;
  config.dropout_rate = 1.0;
  CHECK_THROWS_AS(config.validate(), DomainError);
  config = {};
  config.lr_decay_per_epoch = 0.0;
  CHECK_THROWS_AS(config.validate(), DomainError);
  config = {};
  config.epochs = -1;
  CHECK_THROWS_AS(config.validate(), DomainError);
}

TEST_SUITE_END();
