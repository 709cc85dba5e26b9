#pragma once

#include <string_view>
#include <vector>

#include "leaklab/matrix.hpp"

namespace leaklab::pooling {

enum class PoolingMethod { Mean, Median, Min, Max };

const char* to_string(PoolingMethod m);
PoolingMethod pooling_from_string(std::string_view name);  // throws DomainError

// Column-wise statistic over frame rows. Even-count median is the midpoint
// of the two central values. Empty input throws DomainError.
std::vector<double> pool(const Matrix& features, PoolingMethod method);

}  // namespace leaklab::pooling
