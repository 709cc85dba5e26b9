#include "leaklab/extractor.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "leaklab/errors.hpp"
#include "leaklab/rng.hpp"

namespace leaklab::extractor {

using dataset::kNumClasses;
using dataset::VideoRecord;
using json = nlohmann::ordered_json;

Extractor Extractor::initialize(int input_dim, int hidden_dim, int feature_dim,
                                std::uint64_t seed) {
  if (input_dim <= 0 || hidden_dim <= 0 || feature_dim <= 0)
    throw DomainError("extractor: dimensions must be positive");
  Rng rng(seed);
  Extractor e;
  e.embed_weights = Matrix(static_cast<std::size_t>(hidden_dim), static_cast<std::size_t>(input_dim));
  const double embed_scale = 1.0 / std::sqrt(static_cast<double>(input_dim));
  for (auto& w : e.embed_weights.data()) w = rng.normal() * embed_scale;

  e.hidden_weights = Matrix(static_cast<std::size_t>(feature_dim), static_cast<std::size_t>(hidden_dim));
  const double lim1 = std::sqrt(6.0 / (hidden_dim + feature_dim));
  for (auto& w : e.hidden_weights.data()) w = rng.uniform(-lim1, lim1);
  e.hidden_bias.assign(static_cast<std::size_t>(feature_dim), 0.0);

  e.head_weights = Matrix(kNumClasses, static_cast<std::size_t>(feature_dim));
  const double lim2 = std::sqrt(6.0 / (feature_dim + kNumClasses));
  for (auto& w : e.head_weights.data()) w = rng.uniform(-lim2, lim2);
  e.head_bias.assign(kNumClasses, 0.0);
  return e;
}

std::vector<double> Extractor::embedded(std::span<const double> x) const {
  if (x.size() != embed_weights.cols())
    throw DomainError("extractor: frame dimension " + std::to_string(x.size()) +
                      " does not match input dimension " + std::to_string(embed_weights.cols()));
  std::vector<double> h(embed_weights.rows());
  for (std::size_t i = 0; i < embed_weights.rows(); ++i)
    h[i] = std::tanh(dot(embed_weights.row(i), x));
  return h;
}

std::vector<double> Extractor::frame_features(std::span<const double> x) const {
  const auto h = embedded(x);
  std::vector<double> f(hidden_weights.rows());
  for (std::size_t i = 0; i < hidden_weights.rows(); ++i)
    f[i] = std::tanh(dot(hidden_weights.row(i), h) + hidden_bias[i]);
  return f;
}

namespace {

std::array<double, kNumClasses> softmax_from_features(const Extractor& e,
                                                      std::span<const double> f) {
  std::array<double, kNumClasses> logits{};
  for (int c = 0; c < kNumClasses; ++c)
    logits[static_cast<std::size_t>(c)] = dot(e.head_weights.row(static_cast<std::size_t>(c)), f) +
                                          e.head_bias[static_cast<std::size_t>(c)];
  const double top = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  std::array<double, kNumClasses> p{};
  for (int c = 0; c < kNumClasses; ++c) {
    p[static_cast<std::size_t>(c)] = std::exp(logits[static_cast<std::size_t>(c)] - top);
    sum += p[static_cast<std::size_t>(c)];
  }
  for (auto& v : p) v /= sum;
  return p;
}

}  // namespace

std::array<double, kNumClasses> Extractor::class_probabilities(std::span<const double> x) const {
  const auto f = frame_features(x);
  return softmax_from_features(*this, f);
}

void TrainConfig::validate() const {
  if (!(momentum >= 0.0 && momentum < 1.0)) throw DomainError("train: momentum must be in [0, 1)");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
    throw DomainError("train: learning_rate must be finite and non-negative");
  if (minibatch_size <= 0) throw DomainError("train: minibatch_size must be positive");
  if (max_iterations <= 0) throw DomainError("train: max_iterations must be positive");
  if (validation_every <= 0) throw DomainError("train: validation_every must be positive");
  if (patience < 0) throw DomainError("train: patience must be non-negative");
  if (!(lr_drop_factor > 0.0 && lr_drop_factor <= 1.0))
    throw DomainError("train: lr_drop_factor must be in (0, 1]");
}

namespace {

struct FrameTable {
  Matrix inputs;            // n x D
  std::vector<int> labels;  // class indices
};

const VideoRecord& find_video(const std::unordered_map<std::string, const VideoRecord*>& index,
                              const std::string& id) {
  auto it = index.find(id);
  if (it == index.end()) throw IntegrityError("plan references unknown video: " + id);
  return *it->second;
}

FrameTable gather_frames(const std::vector<VideoRecord>& videos,
                         const std::vector<splitter::FrameRef>& refs) {
  std::unordered_map<std::string, const VideoRecord*> vindex;
  for (const auto& v : videos) vindex[v.video_id] = &v;
  FrameTable t;
  if (refs.empty()) return t;
  std::size_t dim = 0;
  std::vector<const dataset::FrameSample*> rows;
  rows.reserve(refs.size());
  for (const auto& ref : refs) {
    const auto& video = find_video(vindex, ref.video_id);
    const dataset::FrameSample* frame = nullptr;
    for (const auto& f : video.frames)
      if (f.frame_index == ref.frame_index) {
        frame = &f;
        break;
      }
    if (!frame)
      throw IntegrityError("plan references unknown frame: " + ref.video_id + "[" +
                           std::to_string(ref.frame_index) + "]");
    dim = frame->raw_features.size();
    rows.push_back(frame);
    t.labels.push_back(dataset::class_index(dataset::classify_mos(video.mos)));
  }
  t.inputs = Matrix(rows.size(), dim);
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy(rows[i]->raw_features.begin(), rows[i]->raw_features.end(), t.inputs.row(i).begin());
  return t;
}

FrameTable gather_all_frames(const std::vector<VideoRecord>& videos,
                             const std::vector<std::string>& ids) {
  std::unordered_map<std::string, const VideoRecord*> vindex;
  for (const auto& v : videos) vindex[v.video_id] = &v;
  FrameTable t;
  std::vector<const dataset::FrameSample*> rows;
  for (const auto& id : ids) {
    const auto& video = find_video(vindex, id);
    const int label = dataset::class_index(dataset::classify_mos(video.mos));
    for (const auto& f : video.frames) {
      rows.push_back(&f);
      t.labels.push_back(label);
    }
  }
  if (rows.empty()) return t;
  t.inputs = Matrix(rows.size(), rows.front()->raw_features.size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy(rows[i]->raw_features.begin(), rows[i]->raw_features.end(), t.inputs.row(i).begin());
  return t;
}

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
};

EvalResult evaluate(const Extractor& e, const Matrix& inputs, std::span<const int> labels) {
  EvalResult r;
  const std::size_t n = inputs.rows();
  int correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto p = e.class_probabilities(inputs.row(i));
    const auto y = static_cast<std::size_t>(labels[i]);
    r.loss += -std::log(std::max(p[y], 1e-300));
    std::size_t arg = 0;
    for (std::size_t c = 1; c < p.size(); ++c)
      if (p[c] > p[arg]) arg = c;
    if (arg == y) ++correct;
  }
  r.loss /= static_cast<double>(n);
  r.accuracy = static_cast<double>(correct) / static_cast<double>(n);
  return r;
}

struct Snapshot {
  Matrix hidden_w;
  std::vector<double> hidden_b;
  Matrix head_w;
  std::vector<double> head_b;
};

Snapshot take_snapshot(const Extractor& e) {
  return {e.hidden_weights, e.hidden_bias, e.head_weights, e.head_bias};
}

void restore_snapshot(Extractor& e, const Snapshot& s) {
  e.hidden_weights = s.hidden_w;
  e.hidden_bias = s.hidden_b;
  e.head_weights = s.head_w;
  e.head_bias = s.head_b;
}

}  // namespace

Gradients batch_gradients(const Extractor& e, const Matrix& inputs,
                          std::span<const int> labels) {
  const std::size_t n = inputs.rows();
  if (n == 0) throw DomainError("batch_gradients: empty batch");
  const auto h_dim = static_cast<std::size_t>(e.hidden_dim());
  const auto f_dim = static_cast<std::size_t>(e.feature_dim());

  Gradients g;
  g.hidden_w = Matrix(f_dim, h_dim);
  g.hidden_b.assign(f_dim, 0.0);
  g.head_w = Matrix(kNumClasses, f_dim);
  g.head_b.assign(kNumClasses, 0.0);

  int correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto h = e.embedded(inputs.row(i));
    std::vector<double> f(f_dim);
    for (std::size_t k = 0; k < f_dim; ++k)
      f[k] = std::tanh(dot(e.hidden_weights.row(k), h) + e.hidden_bias[k]);
    const auto p = softmax_from_features(e, f);
    const auto y = static_cast<std::size_t>(labels[i]);
    g.loss += -std::log(std::max(p[y], 1e-300));
    std::size_t arg = 0;
    for (std::size_t c = 1; c < p.size(); ++c)
      if (p[c] > p[arg]) arg = c;
    if (arg == y) ++correct;

    // dL/dlogit = softmax - onehot, averaged over the batch at the end
    std::array<double, kNumClasses> dlogit = p;
    dlogit[y] -= 1.0;
    std::vector<double> df(f_dim, 0.0);
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      g.head_b[c] += dlogit[c];
      auto gw = g.head_w.row(c);
      const auto w = e.head_weights.row(c);
      for (std::size_t k = 0; k < f_dim; ++k) {
        gw[k] += dlogit[c] * f[k];
        df[k] += dlogit[c] * w[k];
      }
    }
    for (std::size_t k = 0; k < f_dim; ++k) {
      const double dz = df[k] * (1.0 - f[k] * f[k]);
      g.hidden_b[k] += dz;
      auto gw = g.hidden_w.row(k);
      for (std::size_t j = 0; j < h_dim; ++j) gw[j] += dz * h[j];
    }
  }
  const double inv = 1.0 / static_cast<double>(n);
  g.loss *= inv;
  g.accuracy = static_cast<double>(correct) * inv;
  for (auto& v : g.hidden_w.data()) v *= inv;
  for (auto& v : g.hidden_b) v *= inv;
  for (auto& v : g.head_w.data()) v *= inv;
  for (auto& v : g.head_b) v *= inv;
  return g;
}

double batch_loss(const Extractor& e, const Matrix& inputs, std::span<const int> labels) {
  return evaluate(e, inputs, labels).loss;
}

std::pair<Extractor, TrainTrace> fine_tune(const Extractor& init,
                                           const splitter::SplitPlan& plan,
                                           const std::vector<VideoRecord>& videos,
                                           const TrainConfig& config) {
  config.validate();
  const auto train = gather_frames(videos, plan.train_frames);
  const auto val = gather_frames(videos, plan.val_frames);
  if (train.labels.empty()) throw DomainError("fine_tune: empty train frame set");
  if (val.labels.empty()) throw DomainError("fine_tune: empty validation frame set");

  Extractor model = init;
  TrainTrace trace;
  Rng rng(config.seed);

  Matrix vel_hidden_w(model.hidden_weights.rows(), model.hidden_weights.cols());
  std::vector<double> vel_hidden_b(model.hidden_bias.size(), 0.0);
  Matrix vel_head_w(model.head_weights.rows(), model.head_weights.cols());
  std::vector<double> vel_head_b(model.head_bias.size(), 0.0);

  const std::size_t n_train = train.labels.size();
  const auto batch = static_cast<std::size_t>(config.minibatch_size);
  std::vector<std::size_t> order(n_train);
  for (std::size_t i = 0; i < n_train; ++i) order[i] = i;
  rng.shuffle(order);
  std::size_t pos = 0;

  double lr = config.learning_rate;
  const long stride = std::max<long>(1, config.validation_every / config.minibatch_size);
  Snapshot best = take_snapshot(model);
  double best_loss = std::numeric_limits<double>::infinity();
  double best_acc = 0.0;
  long best_iter = -1;
  int stale = 0;

  Matrix batch_inputs(std::min(batch, n_train), train.inputs.cols());
  std::vector<int> batch_labels(batch_inputs.rows());

  for (long it = 1; it <= config.max_iterations; ++it) {
    if (pos + batch_inputs.rows() > n_train) {
      rng.shuffle(order);
      pos = 0;
    }
    for (std::size_t b = 0; b < batch_inputs.rows(); ++b) {
      const std::size_t src = order[pos + b];
      std::copy(train.inputs.row(src).begin(), train.inputs.row(src).end(),
                batch_inputs.row(b).begin());
      batch_labels[b] = train.labels[src];
    }
    pos += batch_inputs.rows();

    const auto g = batch_gradients(model, batch_inputs, batch_labels);
    if (!std::isfinite(g.loss))
      throw TrainingDivergedError("fine_tune: non-finite loss at iteration " + std::to_string(it), it);
    trace.train_loss.push_back(g.loss);
    trace.train_accuracy.push_back(g.accuracy);

    for (std::size_t i = 0; i < model.hidden_weights.data().size(); ++i)
      model.hidden_weights.data()[i] +=
          momentum_step(vel_hidden_w.data()[i], g.hidden_w.data()[i], config.momentum, lr);
    for (std::size_t i = 0; i < model.hidden_bias.size(); ++i)
      model.hidden_bias[i] += momentum_step(vel_hidden_b[i], g.hidden_b[i], config.momentum, lr);
    for (std::size_t i = 0; i < model.head_weights.data().size(); ++i)
      model.head_weights.data()[i] +=
          momentum_step(vel_head_w.data()[i], g.head_w.data()[i], config.momentum, lr);
    for (std::size_t i = 0; i < model.head_bias.size(); ++i)
      model.head_bias[i] += momentum_step(vel_head_b[i], g.head_b[i], config.momentum, lr);

    if (it % stride == 0 || it == config.max_iterations) {
      const auto v = evaluate(model, val.inputs, val.labels);
      if (!std::isfinite(v.loss))
        throw TrainingDivergedError("fine_tune: non-finite validation loss at iteration " +
                                    std::to_string(it), it);
      trace.validation.push_back({it, v.loss, v.accuracy});
      if (v.loss < best_loss) {
        best_loss = v.loss;
        best_acc = v.accuracy;
        best_iter = it;
        best = take_snapshot(model);
        stale = 0;
      } else {
        ++stale;
        if (stale > config.patience) {
          lr *= config.lr_drop_factor;
          stale = 0;
        }
      }
    }
  }

  restore_snapshot(model, best);
  trace.selected_iteration = best_iter;
  trace.selected_val_loss = best_loss;
  trace.selected_val_accuracy = best_acc;

  if (!plan.test_videos.empty()) {
    const auto test = gather_all_frames(videos, plan.test_videos);
    trace.test_accuracy = evaluate(model, test.inputs, test.labels).accuracy;
  }
  return {std::move(model), std::move(trace)};
}

void TrainTrace::write_csv(std::ostream& out) const {
  out << "iteration,train_loss,train_acc,val_loss,val_acc\n";
  out.precision(10);
  std::size_t vi = 0;
  for (std::size_t it = 0; it < train_loss.size(); ++it) {
    out << (it + 1) << ',' << train_loss[it] << ',' << train_accuracy[it] << ',';
    if (vi < validation.size() && validation[vi].iteration == static_cast<long>(it + 1)) {
      out << validation[vi].loss << ',' << validation[vi].accuracy;
      ++vi;
    } else {
      out << ',';
    }
    out << '\n';
  }
}

Matrix extract_features(const Extractor& extractor, const Matrix& raw_frames) {
  Matrix out(raw_frames.rows(), static_cast<std::size_t>(extractor.feature_dim()));
  for (std::size_t i = 0; i < raw_frames.rows(); ++i) {
    const auto f = extractor.frame_features(raw_frames.row(i));
    std::copy(f.begin(), f.end(), out.row(i).begin());
  }
  return out;
}

Matrix extract_features(const Extractor& extractor,
                        const std::vector<dataset::FrameSample>& frames) {
  if (frames.empty()) return {};
  Matrix raw(frames.size(), frames.front().raw_features.size());
  for (std::size_t i = 0; i < frames.size(); ++i)
    std::copy(frames[i].raw_features.begin(), frames[i].raw_features.end(), raw.row(i).begin());
  return extract_features(extractor, raw);
}

GapStats validation_gap(const TrainTrace& clean_trace, const TrainTrace& leaky_trace) {
  for (const auto* t : {&clean_trace, &leaky_trace}) {
    if (t->validation.empty()) throw DomainError("validation_gap: trace has no validation points");
    if (!t->test_accuracy.has_value())
      throw DomainError("validation_gap: trace has no test accuracy");
  }
  GapStats g;
  g.clean_gap = clean_trace.selected_val_accuracy - *clean_trace.test_accuracy;
  g.leaky_gap = leaky_trace.selected_val_accuracy - *leaky_trace.test_accuracy;
  g.difference = g.leaky_gap - g.clean_gap;
  return g;
}

ClassDistribution class_distribution(const Extractor& extractor,
                                     const std::vector<VideoRecord>& videos,
                                     const std::vector<std::string>& video_ids) {
  if (video_ids.empty()) throw DomainError("class_distribution: no videos");
  std::unordered_map<std::string, const VideoRecord*> vindex;
  for (const auto& v : videos) vindex[v.video_id] = &v;

  ClassDistribution dist;
  dist.n_videos = static_cast<int>(video_ids.size());
  std::array<int, kNumClasses> votes{};
  std::array<int, kNumClasses> true_counts{};
  int correct = 0;
  for (const auto& id : video_ids) {
    const auto& video = find_video(vindex, id);
    std::array<int, kNumClasses> frame_votes{};
    for (const auto& f : video.frames) {
      const auto p = extractor.class_probabilities(f.raw_features);
      std::size_t arg = 0;
      for (std::size_t c = 1; c < p.size(); ++c)
        if (p[c] > p[arg]) arg = c;
      frame_votes[arg]++;
    }
    std::size_t vote = 0;
    for (std::size_t c = 1; c < kNumClasses; ++c)
      if (frame_votes[c] > frame_votes[vote]) vote = c;
    votes[vote]++;
    const auto truth = static_cast<std::size_t>(
        dataset::class_index(dataset::classify_mos(video.mos)));
    true_counts[truth]++;
    if (vote == truth) ++correct;
  }
  for (std::size_t c = 0; c < kNumClasses; ++c)
    dist.percent[c] = 100.0 * votes[c] / static_cast<double>(dist.n_videos);
  dist.accuracy = static_cast<double>(correct) / dist.n_videos;
  dist.dominant_share = static_cast<double>(*std::max_element(true_counts.begin(), true_counts.end())) /
                        dist.n_videos;
  return dist;
}

namespace {

json matrix_rows(const Matrix& m) {
  json rows = json::array();
  for (std::size_t i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (double v : m.row(i)) row.push_back(v);
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from_rows(const json& rows) {
  if (rows.empty()) return {};
  Matrix m(rows.size(), rows[0].size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) m.at(i, j) = rows[i][j].get<double>();
  return m;
}

}  // namespace

std::string to_json_string(const Extractor& e) {
  json j;
  j["format_version"] = 1;
  j["embed_weights"] = matrix_rows(e.embed_weights);
  j["hidden_weights"] = matrix_rows(e.hidden_weights);
  j["hidden_bias"] = e.hidden_bias;
  j["head_weights"] = matrix_rows(e.head_weights);
  j["head_bias"] = e.head_bias;
  return j.dump();
}

Extractor extractor_from_json_string(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& ex) {
    throw ParseError(std::string("extractor JSON: ") + ex.what());
  }
  try {
    Extractor e;
    e.embed_weights = matrix_from_rows(j.at("embed_weights"));
    e.hidden_weights = matrix_from_rows(j.at("hidden_weights"));
    e.hidden_bias = j.at("hidden_bias").get<std::vector<double>>();
    e.head_weights = matrix_from_rows(j.at("head_weights"));
    e.head_bias = j.at("head_bias").get<std::vector<double>>();
    return e;
  } catch (const json::exception& ex) {
    throw ParseError(std::string("extractor JSON: ") + ex.what());
  }
}

std::uint64_t weights_hash(const Extractor& e) {
  std::uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a over the weight bytes
  auto mix_bytes = [&h](const void* p, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ull;
    }
  };
  auto mix_size = [&](std::size_t s) {
    const auto v = static_cast<std::uint64_t>(s);
    mix_bytes(&v, sizeof(v));
  };
  for (const Matrix* m : {&e.embed_weights, &e.hidden_weights, &e.head_weights}) {
    mix_size(m->rows());
    mix_size(m->cols());
    mix_bytes(m->data().data(), m->data().size() * sizeof(double));
  }
  for (const std::vector<double>* v : {&e.hidden_bias, &e.head_bias}) {
    mix_size(v->size());
    mix_bytes(v->data(), v->size() * sizeof(double));
  }
  return h;
}

}  // namespace leaklab::extractor
