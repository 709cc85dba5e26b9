#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "leaklab/dataset.hpp"
#include "leaklab/matrix.hpp"
#include "leaklab/splitter.hpp"

namespace leaklab::extractor {

// Surrogate for the fine-tuned feature network: a frozen random projection
// stands in for the pre-trained body, a trainable hidden layer plays the
// last pooling layer (its activations are the frame features), and a
// trainable 5-way softmax head sits on top.
struct Extractor {
  Matrix embed_weights;             // hidden_dim x input_dim, frozen
  Matrix hidden_weights;            // feature_dim x hidden_dim
  std::vector<double> hidden_bias;  // feature_dim
  Matrix head_weights;              // 5 x feature_dim
  std::vector<double> head_bias;    // 5

  int input_dim() const { return static_cast<int>(embed_weights.cols()); }
  int hidden_dim() const { return static_cast<int>(embed_weights.rows()); }
  int feature_dim() const { return static_cast<int>(hidden_weights.rows()); }

  // Body frozen random normal scaled 1/sqrt(input_dim); trainable layers
  // scaled-uniform fan-based, biases zero.
  static Extractor initialize(int input_dim, int hidden_dim, int feature_dim,
                              std::uint64_t seed);

  std::vector<double> embedded(std::span<const double> x) const;  // tanh body
  std::vector<double> frame_features(std::span<const double> x) const;
  std::array<double, dataset::kNumClasses> class_probabilities(std::span<const double> x) const;
};

struct TrainConfig {
  double momentum = 0.9;
  double learning_rate = 0.03;
  int minibatch_size = 32;
  long max_iterations = 4000;
  long validation_every = 1600;  // frames between validation passes
  int patience = 5;              // non-improving validations before an LR drop
  double lr_drop_factor = 1.0;   // 1.0 disables the drop
  std::uint64_t seed = 0;

  void validate() const;
};

struct ValidationPoint {
  long iteration = 0;
  double loss = 0.0;
  double accuracy = 0.0;
};

struct TrainTrace {
  std::vector<double> train_loss;      // per iteration (minibatch)
  std::vector<double> train_accuracy;  // per iteration (minibatch)
  std::vector<ValidationPoint> validation;
  long selected_iteration = -1;
  double selected_val_loss = 0.0;
  double selected_val_accuracy = 0.0;
  // Frame-level accuracy of the selected model on all frames of the plan's
  // test videos; absent when the plan has no test videos.
  std::optional<double> test_accuracy;

  // CSV: iteration,train_loss,train_acc,val_loss,val_acc with the val
  // columns filled only at validation points.
  void write_csv(std::ostream& out) const;
};

inline double momentum_step(double& velocity, double gradient, double momentum,
                            double learning_rate) {
  velocity = momentum * velocity - learning_rate * gradient;
  return velocity;
}

// Cross-entropy SGD with momentum over the plan's train frames; targets are
// the class of each frame's parent video. Validates every validation_every
// frames (and at the last iteration) and returns the snapshot with minimum
// validation loss.
std::pair<Extractor, TrainTrace> fine_tune(const Extractor& init,
                                           const splitter::SplitPlan& plan,
                                           const std::vector<dataset::VideoRecord>& videos,
                                           const TrainConfig& config);

Matrix extract_features(const Extractor& extractor, const Matrix& raw_frames);
Matrix extract_features(const Extractor& extractor,
                        const std::vector<dataset::FrameSample>& frames);

struct GapStats {
  double clean_gap = 0.0;  // validation minus test accuracy, clean trace
  double leaky_gap = 0.0;
  double difference = 0.0;  // leaky_gap - clean_gap
};

// The training-progress contrast: selected-model validation accuracy minus
// test accuracy, per protocol. Throws DomainError when a trace lacks
// validation points or test accuracy.
GapStats validation_gap(const TrainTrace& clean_trace, const TrainTrace& leaky_trace);

struct ClassDistribution {
  std::array<double, dataset::kNumClasses> percent{};  // majority-vote classes
  double accuracy = 0.0;        // video-level vote vs true class
  double dominant_share = 0.0;  // dominant-class baseline on the same videos
  int n_videos = 0;
};

ClassDistribution class_distribution(const Extractor& extractor,
                                     const std::vector<dataset::VideoRecord>& videos,
                                     const std::vector<std::string>& video_ids);

// Loss/gradients over one batch; exposed for the finite-difference checks.
struct Gradients {
  Matrix hidden_w;
  std::vector<double> hidden_b;
  Matrix head_w;
  std::vector<double> head_b;
  double loss = 0.0;
  double accuracy = 0.0;
};

Gradients batch_gradients(const Extractor& extractor, const Matrix& inputs,
                          std::span<const int> labels);
double batch_loss(const Extractor& extractor, const Matrix& inputs,
                  std::span<const int> labels);

std::string to_json_string(const Extractor& extractor);
Extractor extractor_from_json_string(const std::string& text);
std::uint64_t weights_hash(const Extractor& extractor);

}  // namespace leaklab::extractor
