#include "leaklab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "leaklab/errors.hpp"

namespace leaklab::metrics {

namespace {

void check_pair(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size())
    throw DomainError("correlation: length mismatch " + std::to_string(x.size()) +
                      " vs " + std::to_string(y.size()));
  if (x.size() < 2) throw DomainError("correlation: need at least 2 samples");
}

bool is_constant(std::span<const double> v) {
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  return *lo == *hi;
}

}  // namespace

std::optional<double> plcc(std::span<const double> x, std::span<const double> y) {
  check_pair(x, y);
  if (is_constant(x) || is_constant(y)) return std::nullopt;
  const std::size_t n = x.size();
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  const double r = sxy / std::sqrt(sxx * syy);
  return std::clamp(r, -1.0, 1.0);
}

std::vector<double> average_ranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    // positions i..j (0-based) share the mean of ranks i+1..j+1
    const double r = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

std::optional<double> srocc(std::span<const double> x, std::span<const double> y) {
  check_pair(x, y);
  if (is_constant(x) || is_constant(y)) return std::nullopt;
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  return plcc(rx, ry);
}

CorrelationResult correlate(std::span<const double> predictions,
                            std::span<const double> truths) {
  CorrelationResult out;
  out.n = static_cast<int>(predictions.size());
  out.plcc = plcc(predictions, truths);
  out.srocc = srocc(predictions, truths);
  return out;
}

MeanStd aggregate(std::span<const double> values) {
  if (values.empty()) throw DomainError("aggregate: no values");
  MeanStd out;
  out.n = static_cast<int>(values.size());
  double sum = 0.0;
  for (double v : values) sum += v;
  out.mean = sum / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) {
      const double d = v - out.mean;
      ss += d * d;
    }
    out.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return out;
}

}  // namespace leaklab::metrics
