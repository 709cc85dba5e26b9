#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "leaklab/dataset.hpp"
#include "leaklab/matrix.hpp"
#include "leaklab/splitter.hpp"

namespace leaklab::endtoend {

// The single-stage alternative: drop the classifier and SVR, put a
// regression head directly on the body and average frame predictions.
struct RegressionHeadConfig {
  std::array<int, 3> base_layer_sizes = {1024, 512, 32};
  double layer_scale = 1.0 / 16.0;
  int min_layer_width = 4;  // a scaled layer narrower than this saturates dead
  double dropout_rate = 0.25;
  double head_lr_multiplier = 10.0;
  double lr_decay_per_epoch = 0.75;
  int epochs = 10;
  std::uint64_t seed = 0;

  std::array<int, 3> scaled_sizes() const;
  void validate() const;
};

// Base SGD rate; the head layers train at head_lr_multiplier times this.
inline constexpr double kBaseLearningRate = 1e-4;
inline constexpr double kMomentum = 0.9;

// Body rate in effect during the given zero-based epoch.
inline double epoch_learning_rate(const RegressionHeadConfig& config, int epoch) {
  double lr = kBaseLearningRate;
  for (int e = 0; e < epoch; ++e) lr *= config.lr_decay_per_epoch;
  return lr;
}

struct RegressionHead {
  Matrix body_weights;                            // trained copy of the body
  std::vector<Matrix> layer_weights;              // 3 hidden + 1 output
  std::vector<std::vector<double>> layer_biases;  // matching

  double predict_frame(std::span<const double> x) const;  // dropout off
};

struct TrainSummary {
  std::vector<double> epoch_mean_loss;  // mean frame loss per epoch
};

// Trains body + rectifier/dropout head by SGD with momentum over the plan's
// sampled frames (train and validation pooled: selection is final-epoch, so
// a validation set would go unused). Requires a clean plan.
std::pair<RegressionHead, TrainSummary> train_regression(
    const Matrix& body_weights, const splitter::SplitPlan& plan,
    const std::vector<dataset::VideoRecord>& videos, const RegressionHeadConfig& config);

// Mean frame prediction over ALL frames of the video, not the sampled
// subset. Empty video throws DomainError.
double predict_video(const RegressionHead& model, const dataset::VideoRecord& video);

// Half-MSE loss and gradients with dropout off; for finite-difference checks.
struct HeadGradients {
  std::vector<Matrix> layer_w;
  std::vector<std::vector<double>> layer_b;
  Matrix body_w;
  double loss = 0.0;
};

double head_loss(const RegressionHead& model, const Matrix& inputs,
                 std::span<const double> targets);
HeadGradients head_gradients(const RegressionHead& model, const Matrix& inputs,
                             std::span<const double> targets);

}  // namespace leaklab::endtoend
