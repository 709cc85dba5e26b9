#include "leaklab/endtoend.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_map>

#include "leaklab/errors.hpp"
#include "leaklab/extractor.hpp"
#include "leaklab/rng.hpp"

namespace leaklab::endtoend {

using dataset::VideoRecord;
using extractor::momentum_step;

std::array<int, 3> RegressionHeadConfig::scaled_sizes() const {
  std::array<int, 3> out{};
  for (std::size_t i = 0; i < 3; ++i)
    out[i] = std::max(min_layer_width,
                      static_cast<int>(std::lround(base_layer_sizes[i] * layer_scale)));
  return out;
}

void RegressionHeadConfig::validate() const {
  for (int s : base_layer_sizes)
    if (s <= 0) throw DomainError("regression head: layer sizes must be positive");
  if (!(layer_scale > 0.0)) throw DomainError("regression head: layer_scale must be positive");
  if (min_layer_width < 1) throw DomainError("regression head: min_layer_width must be >= 1");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
    throw DomainError("regression head: dropout_rate must be in [0, 1)");
  if (!(head_lr_multiplier > 0.0))
    throw DomainError("regression head: head_lr_multiplier must be positive");
  if (!(lr_decay_per_epoch > 0.0 && lr_decay_per_epoch <= 1.0))
    throw DomainError("regression head: lr_decay_per_epoch must be in (0, 1]");
  if (epochs < 0) throw DomainError("regression head: epochs must be non-negative");
}

namespace {

constexpr int kMinibatch = 32;

struct Forward {
  std::vector<double> body_act;                 // tanh body output
  std::vector<std::vector<double>> pre;         // hidden pre-activations
  std::vector<std::vector<double>> act;         // hidden post relu (and mask)
  double prediction = 0.0;
};

Forward forward_one(const RegressionHead& m, std::span<const double> x,
                    const std::vector<std::vector<double>>* masks, std::size_t sample) {
  Forward fw;
  fw.body_act.resize(m.body_weights.rows());
  for (std::size_t i = 0; i < m.body_weights.rows(); ++i)
    fw.body_act[i] = std::tanh(dot(m.body_weights.row(i), x));

  const std::vector<double>* in = &fw.body_act;
  const std::size_t n_hidden = m.layer_weights.size() - 1;
  fw.pre.resize(n_hidden);
  fw.act.resize(n_hidden);
  for (std::size_t l = 0; l < n_hidden; ++l) {
    const auto& w = m.layer_weights[l];
    fw.pre[l].resize(w.rows());
    fw.act[l].resize(w.rows());
    for (std::size_t u = 0; u < w.rows(); ++u) {
      const double z = dot(w.row(u), *in) + m.layer_biases[l][u];
      fw.pre[l][u] = z;
      double a = z > 0.0 ? z : 0.0;
      if (masks) a *= (*masks)[l][sample * w.rows() + u];
      fw.act[l][u] = a;
    }
    in = &fw.act[l];
  }
  fw.prediction = dot(m.layer_weights.back().row(0), *in) + m.layer_biases.back()[0];
  return fw;
}

}  // namespace

double RegressionHead::predict_frame(std::span<const double> x) const {
  if (x.size() != body_weights.cols())
    throw DomainError("regression head: frame dimension mismatch");
  return forward_one(*this, x, nullptr, 0).prediction;
}

namespace {

RegressionHead init_head(const Matrix& body_weights, const RegressionHeadConfig& config,
                         Rng& rng) {
  RegressionHead m;
  m.body_weights = body_weights;
  const auto sizes = config.scaled_sizes();
  std::vector<int> dims = {static_cast<int>(body_weights.rows()), sizes[0], sizes[1], sizes[2], 1};
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    Matrix w(static_cast<std::size_t>(dims[l + 1]), static_cast<std::size_t>(dims[l]));
    const double lim = std::sqrt(6.0 / (dims[l] + dims[l + 1]));
    for (auto& v : w.data()) v = rng.uniform(-lim, lim);
    m.layer_weights.push_back(std::move(w));
    // Small positive bias keeps rectifier units initially alive; the scalar
    // output layer starts at zero.
    const double bias = (l + 2 < dims.size()) ? 0.1 : 0.0;
    m.layer_biases.emplace_back(static_cast<std::size_t>(dims[l + 1]), bias);
  }
  return m;
}

struct GatheredFrames {
  Matrix inputs;
  std::vector<double> targets;
};

GatheredFrames gather_sampled(const splitter::SplitPlan& plan,
                              const std::vector<VideoRecord>& videos) {
  std::unordered_map<std::string, const VideoRecord*> vindex;
  for (const auto& v : videos) vindex[v.video_id] = &v;
  std::vector<splitter::FrameRef> refs = plan.train_frames;
  refs.insert(refs.end(), plan.val_frames.begin(), plan.val_frames.end());
  std::sort(refs.begin(), refs.end());

  GatheredFrames out;
  std::vector<const dataset::FrameSample*> rows;
  for (const auto& ref : refs) {
    auto it = vindex.find(ref.video_id);
    if (it == vindex.end()) throw IntegrityError("plan references unknown video: " + ref.video_id);
    const dataset::FrameSample* frame = nullptr;
    for (const auto& f : it->second->frames)
      if (f.frame_index == ref.frame_index) {
        frame = &f;
        break;
      }
    if (!frame)
      throw IntegrityError("plan references unknown frame: " + ref.video_id + "[" +
                           std::to_string(ref.frame_index) + "]");
    rows.push_back(frame);
    out.targets.push_back(it->second->mos);
  }
  if (rows.empty()) throw DomainError("train_regression: plan has no sampled frames");
  out.inputs = Matrix(rows.size(), rows.front()->raw_features.size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy(rows[i]->raw_features.begin(), rows[i]->raw_features.end(),
              out.inputs.row(i).begin());
  return out;
}

}  // namespace

std::pair<RegressionHead, TrainSummary> train_regression(
    const Matrix& body_weights, const splitter::SplitPlan& plan,
    const std::vector<VideoRecord>& videos, const RegressionHeadConfig& config) {
  config.validate();
  if (plan.ft_leaky)
    throw DomainError("train_regression: this variant is evaluated under the correct protocol only");
  Rng rng(config.seed);
  RegressionHead model = init_head(body_weights, config, rng);
  TrainSummary summary;
  if (config.epochs == 0) return {std::move(model), std::move(summary)};

  const auto data = gather_sampled(plan, videos);
  const std::size_t n = data.targets.size();
  const auto batch = std::min<std::size_t>(kMinibatch, n);

  Matrix vel_body(model.body_weights.rows(), model.body_weights.cols());
  std::vector<Matrix> vel_w;
  std::vector<std::vector<double>> vel_b;
  for (std::size_t l = 0; l < model.layer_weights.size(); ++l) {
    vel_w.emplace_back(model.layer_weights[l].rows(), model.layer_weights[l].cols());
    vel_b.emplace_back(model.layer_biases[l].size(), 0.0);
  }

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  const std::size_t n_hidden = model.layer_weights.size() - 1;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = epoch_learning_rate(config, epoch);
    const double head_lr = lr * config.head_lr_multiplier;
    rng.shuffle(order);
    double epoch_loss = 0.0;
    std::size_t epoch_frames = 0;
    for (std::size_t start = 0; start + batch <= n; start += batch) {
      // inverted dropout masks for this minibatch
      std::vector<std::vector<double>> masks(n_hidden);
      for (std::size_t l = 0; l < n_hidden; ++l) {
        masks[l].resize(batch * model.layer_weights[l].rows());
        const double keep = 1.0 - config.dropout_rate;
        for (auto& v : masks[l])
          v = (rng.uniform() >= config.dropout_rate) ? 1.0 / keep : 0.0;
      }

      std::vector<Matrix> gw;
      std::vector<std::vector<double>> gb;
      for (std::size_t l = 0; l < model.layer_weights.size(); ++l) {
        gw.emplace_back(model.layer_weights[l].rows(), model.layer_weights[l].cols());
        gb.emplace_back(model.layer_biases[l].size(), 0.0);
      }
      Matrix gbody(model.body_weights.rows(), model.body_weights.cols());

      double batch_loss = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const std::size_t src = order[start + b];
        const auto x = data.inputs.row(src);
        const auto fw = forward_one(model, x, &masks, b);
        const double err = fw.prediction - data.targets[src];
        batch_loss += 0.5 * err * err;
        const double dpred = err / static_cast<double>(batch);

        // output layer
        const auto& top_in = n_hidden ? fw.act[n_hidden - 1] : fw.body_act;
        for (std::size_t k = 0; k < top_in.size(); ++k)
          gw.back().at(0, k) += dpred * top_in[k];
        gb.back()[0] += dpred;

        std::vector<double> delta(top_in.size());
        for (std::size_t k = 0; k < top_in.size(); ++k)
          delta[k] = dpred * model.layer_weights.back().at(0, k);

        for (std::size_t l = n_hidden; l-- > 0;) {
          std::vector<double> dz(model.layer_weights[l].rows());
          for (std::size_t u = 0; u < dz.size(); ++u) {
            const double mask = masks[l][b * dz.size() + u];
            dz[u] = (fw.pre[l][u] > 0.0) ? delta[u] * mask : 0.0;
          }
          const auto& in = l == 0 ? fw.body_act : fw.act[l - 1];
          for (std::size_t u = 0; u < dz.size(); ++u) {
            if (dz[u] == 0.0) continue;
            auto grow = gw[l].row(u);
            for (std::size_t k = 0; k < in.size(); ++k) grow[k] += dz[u] * in[k];
            gb[l][u] += dz[u];
          }
          std::vector<double> next(in.size(), 0.0);
          for (std::size_t u = 0; u < dz.size(); ++u) {
            if (dz[u] == 0.0) continue;
            const auto wrow = model.layer_weights[l].row(u);
            for (std::size_t k = 0; k < in.size(); ++k) next[k] += dz[u] * wrow[k];
          }
          delta = std::move(next);
        }

        // through the tanh body
        for (std::size_t i = 0; i < model.body_weights.rows(); ++i) {
          const double da = delta[i] * (1.0 - fw.body_act[i] * fw.body_act[i]);
          if (da == 0.0) continue;
          auto grow = gbody.row(i);
          for (std::size_t k = 0; k < x.size(); ++k) grow[k] += da * x[k];
        }
      }
      if (!std::isfinite(batch_loss))
        throw TrainingDivergedError("train_regression: non-finite loss in epoch " +
                                    std::to_string(epoch), epoch);
      epoch_loss += batch_loss;
      epoch_frames += batch;

      for (std::size_t l = 0; l < model.layer_weights.size(); ++l) {
        for (std::size_t i = 0; i < model.layer_weights[l].data().size(); ++i)
          model.layer_weights[l].data()[i] +=
              momentum_step(vel_w[l].data()[i], gw[l].data()[i], kMomentum, head_lr);
        for (std::size_t i = 0; i < model.layer_biases[l].size(); ++i)
          model.layer_biases[l][i] +=
              momentum_step(vel_b[l][i], gb[l][i], kMomentum, head_lr);
      }
      for (std::size_t i = 0; i < model.body_weights.data().size(); ++i)
        model.body_weights.data()[i] +=
            momentum_step(vel_body.data()[i], gbody.data()[i], kMomentum, lr);
    }
    summary.epoch_mean_loss.push_back(epoch_loss / static_cast<double>(epoch_frames));
  }
  return {std::move(model), std::move(summary)};
}

double predict_video(const RegressionHead& model, const VideoRecord& video) {
  if (video.frames.empty()) throw DomainError("predict_video: video has no frames");
  double sum = 0.0;
  for (const auto& f : video.frames) sum += model.predict_frame(f.raw_features);
  return sum / static_cast<double>(video.frames.size());
}

double head_loss(const RegressionHead& model, const Matrix& inputs,
                 std::span<const double> targets) {
  double loss = 0.0;
  for (std::size_t i = 0; i < inputs.rows(); ++i) {
    const double err = model.predict_frame(inputs.row(i)) - targets[i];
    loss += 0.5 * err * err;
  }
  return loss / static_cast<double>(inputs.rows());
}

HeadGradients head_gradients(const RegressionHead& model, const Matrix& inputs,
                             std::span<const double> targets) {
  HeadGradients g;
  for (std::size_t l = 0; l < model.layer_weights.size(); ++l) {
    g.layer_w.emplace_back(model.layer_weights[l].rows(), model.layer_weights[l].cols());
    g.layer_b.emplace_back(model.layer_biases[l].size(), 0.0);
  }
  g.body_w = Matrix(model.body_weights.rows(), model.body_weights.cols());

  const std::size_t n = inputs.rows();
  const std::size_t n_hidden = model.layer_weights.size() - 1;
  for (std::size_t i = 0; i < n; ++i) {
    const auto x = inputs.row(i);
    const auto fw = forward_one(model, x, nullptr, 0);
    const double err = fw.prediction - targets[i];
    g.loss += 0.5 * err * err;
    const double dpred = err / static_cast<double>(n);

    const auto& top_in = n_hidden ? fw.act[n_hidden - 1] : fw.body_act;
    for (std::size_t k = 0; k < top_in.size(); ++k)
      g.layer_w.back().at(0, k) += dpred * top_in[k];
    g.layer_b.back()[0] += dpred;

    std::vector<double> delta(top_in.size());
    for (std::size_t k = 0; k < top_in.size(); ++k)
      delta[k] = dpred * model.layer_weights.back().at(0, k);

    for (std::size_t l = n_hidden; l-- > 0;) {
      std::vector<double> dz(model.layer_weights[l].rows());
      for (std::size_t u = 0; u < dz.size(); ++u)
        dz[u] = (fw.pre[l][u] > 0.0) ? delta[u] : 0.0;
      const auto& in = l == 0 ? fw.body_act : fw.act[l - 1];
      for (std::size_t u = 0; u < dz.size(); ++u) {
        if (dz[u] == 0.0) continue;
        auto grow = g.layer_w[l].row(u);
        for (std::size_t k = 0; k < in.size(); ++k) grow[k] += dz[u] * in[k];
        g.layer_b[l][u] += dz[u];
      }
      std::vector<double> next(in.size(), 0.0);
      for (std::size_t u = 0; u < dz.size(); ++u) {
        if (dz[u] == 0.0) continue;
        const auto wrow = model.layer_weights[l].row(u);
        for (std::size_t k = 0; k < in.size(); ++k) next[k] += dz[u] * wrow[k];
      }
      delta = std::move(next);
    }
    for (std::size_t r = 0; r < model.body_weights.rows(); ++r) {
      const double da = delta[r] * (1.0 - fw.body_act[r] * fw.body_act[r]);
      if (da == 0.0) continue;
      auto grow = g.body_w.row(r);
      for (std::size_t k = 0; k < x.size(); ++k) grow[k] += da * x[k];
    }
  }
  g.loss /= static_cast<double>(n);
  return g;
}

}  // namespace leaklab::endtoend
