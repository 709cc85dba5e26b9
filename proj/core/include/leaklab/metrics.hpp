#pragma once

#include <optional>
#include <span>
#include <vector>

namespace leaklab::metrics {

// Pearson correlation. nullopt when either input is constant (the harness
// counts those folds as failures rather than scoring them zero). Length
// mismatch or fewer than two samples throws DomainError.
std::optional<double> plcc(std::span<const double> x, std::span<const double> y);

// Spearman correlation: Pearson over average-fractional ranks, tied values
// sharing their mean rank.
std::optional<double> srocc(std::span<const double> x, std::span<const double> y);

// Tie-adjusted ranks in [1, n]; exposed because srocc is defined as plcc over
// exactly these.
std::vector<double> average_ranks(std::span<const double> values);

struct CorrelationResult {
  std::optional<double> plcc;
  std::optional<double> srocc;
  int n = 0;
  bool defined() const { return plcc.has_value() && srocc.has_value(); }
};

CorrelationResult correlate(std::span<const double> predictions,
                            std::span<const double> truths);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample std (n-1); 0 for a single value
  int n = 0;
};

MeanStd aggregate(std::span<const double> values);  // throws DomainError on empty

}  // namespace leaklab::metrics
