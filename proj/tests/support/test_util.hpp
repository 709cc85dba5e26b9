#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <unistd.h>

#include "leaklab/dataset.hpp"
#include "leaklab/rng.hpp"

namespace leaklab::testing {

inline dataset::GeneratorConfig small_config(int n_videos, int frames, int dim,
                                             std::uint64_t seed) {
  dataset::GeneratorConfig c;
  c.n_videos = n_videos;
  c.frames_per_video = frames;
  c.feature_dim = dim;
  c.seed = seed;
  return c;
}

// Independent re-statement of the class intervals, used as the oracle against
// classify_mos.
inline int interval_class(double mos) {
  if (mos >= 4.2) return 0;
  if (mos > 3.4) return 1;
  if (mos > 2.6) return 2;
  if (mos > 1.8) return 3;
  return 4;
}

// Brute-force tie-aware ranks: rank_i = 1 + #(x_j < x_i) + #(x_j == x_i, j != i)/2.
inline std::vector<double> brute_force_ranks(const std::vector<double>& x) {
  std::vector<double> ranks(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    int less = 0, equal = 0;
    for (std::size_t j = 0; j < x.size(); ++j) {
      if (x[j] < x[i]) ++less;
      if (x[j] == x[i]) ++equal;
    }
    ranks[i] = 1.0 + less + (equal - 1) / 2.0;
  }
  return ranks;
}

// Direct covariance-formula Pearson, no shortcuts shared with the library.
inline double brute_force_pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxy += x[i] * y[i];
    sxx += x[i] * x[i];
    syy += y[i] * y[i];
  }
  const double cov = sxy / n - (sx / n) * (sy / n);
  const double vx = sxx / n - (sx / n) * (sx / n);
  const double vy = syy / n - (sy / n) * (sy / n);
  return cov / std::sqrt(vx * vy);
}

// Central finite difference of f at w with step h.
inline double central_difference(const std::function<double(double)>& f_of_w, double w,
                                 double h) {
  return (f_of_w(w + h) - f_of_w(w - h)) / (2.0 * h);
}

inline double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-10});
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    dir_ = std::filesystem::temp_directory_path() /
           ("leaklab_test_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(dir_);
    std::filesystem::create_directories(dir_);
  }
  ~TempDir() { std::filesystem::remove_all(dir_); }
  const std::filesystem::path& path() const { return dir_; }

 private:
  std::filesystem::path dir_;
};

}  // namespace leaklab::testing
