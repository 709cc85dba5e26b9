#pragma once

#include <span>
#include <vector>

#include "leaklab/matrix.hpp"
#include "leaklab/svr.hpp"

namespace leaklab::testing {

// Reference solver for the epsilon-SVR dual: accelerated projected gradient
// over (alpha, alpha*) in the box [0, C]^{2n} intersected with the equality
// constraint. Independent of the SMO path it checks.
struct OracleSolution {
  std::vector<double> alpha;
  std::vector<double> alpha_star;
  double objective = 0.0;
};

OracleSolution solve_dual_reference(const Matrix& features, std::span<const double> targets,
                                    const svr::KernelSpec& kernel, double C, double epsilon,
                                    long iterations = 200000);

}  // namespace leaklab::testing
