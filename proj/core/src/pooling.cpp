#include "leaklab/pooling.hpp"

#include <algorithm>
#include <string>

#include "leaklab/errors.hpp"

namespace leaklab::pooling {

const char* to_string(PoolingMethod m) {
  switch (m) {
    case PoolingMethod::Mean: return "mean";
    case PoolingMethod::Median: return "median";
    case PoolingMethod::Min: return "min";
    case PoolingMethod::Max: return "max";
  }
  return "?";
}

PoolingMethod pooling_from_string(std::string_view name) {
  if (name == "mean") return PoolingMethod::Mean;
  if (name == "median") return PoolingMethod::Median;
  if (name == "min") return PoolingMethod::Min;
  if (name == "max") return PoolingMethod::Max;
  throw DomainError("unknown pooling method: " + std::string(name));
}

std::vector<double> pool(const Matrix& features, PoolingMethod method) {
  const std::size_t n = features.rows();
  const std::size_t d = features.cols();
  if (n == 0) throw DomainError("pool: empty feature matrix");
  std::vector<double> out(d);
  std::vector<double> column(n);
  for (std::size_t j = 0; j < d; ++j) {
    switch (method) {
      case PoolingMethod::Mean: {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += features.at(i, j);
        out[j] = s / static_cast<double>(n);
        break;
      }
      case PoolingMethod::Min: {
        double m = features.at(0, j);
        for (std::size_t i = 1; i < n; ++i) m = std::min(m, features.at(i, j));
        out[j] = m;
        break;
      }
      case PoolingMethod::Max: {
        double m = features.at(0, j);
        for (std::size_t i = 1; i < n; ++i) m = std::max(m, features.at(i, j));
        out[j] = m;
        break;
      }
      case PoolingMethod::Median: {
        for (std::size_t i = 0; i < n; ++i) column[i] = features.at(i, j);
        std::sort(column.begin(), column.end());
        out[j] = (n % 2 == 1) ? column[n / 2]
                              : 0.5 * (column[n / 2 - 1] + column[n / 2]);
        break;
      }
    }
  }
  return out;
}

}  // namespace leaklab::pooling
