#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "leaklab/matrix.hpp"

namespace leaklab::svr {

struct LinearKernel {};

struct PolynomialKernel {
  int degree = 3;
  double coef = 1.0;
};

struct GaussianKernel {
  double gamma = 1.0;
};

using KernelSpec = std::variant<LinearKernel, PolynomialKernel, GaussianKernel>;

std::string kernel_label(const KernelSpec& spec);
KernelSpec kernel_from_label(const std::string& label, double gamma_default);

// Linear: <x,y>; Polynomial: (<x,y>+c)^d; Gaussian: exp(-gamma*||x-y||^2).
double kernel_eval(const KernelSpec& spec, std::span<const double> x,
                   std::span<const double> y);

struct SvrConfig {
  double C = 1.0;
  double epsilon = 0.1;
  double tolerance = 1e-3;   // KKT gap at which the solver stops
  long max_passes = 200000;  // pairwise optimization steps

  void validate() const;
};

struct FitInfo {
  long passes = 0;
  double kkt_violation = 0.0;
  double objective = 0.0;  // dual objective at the solution
  bool converged = false;
  double max_abs_residual = 0.0;  // training residual of the fitted model
  int n_outside_tube = 0;         // training points with |residual| > epsilon
};

struct RegressionModel {
  KernelSpec kernel;
  Matrix support_vectors;            // stored in normalized feature space
  std::vector<double> coefficients;  // alpha - alpha* per support vector
  double bias = 0.0;
  std::vector<double> feature_mean;  // z-score statistics from the training fold
  std::vector<double> feature_std;
  FitInfo info;
};

// Full dual state, exposed for oracle and KKT tests.
struct DualSolution {
  std::vector<double> alpha;
  std::vector<double> alpha_star;
  double bias = 0.0;
  double b_low = 0.0;  // tightest lower bound on the bias at termination
  double b_up = 0.0;   // tightest upper bound
  long passes = 0;
  double objective = 0.0;
  bool converged = false;
};

// Solves the epsilon-insensitive dual by sequential pairwise optimization
// (maximal-violating-pair selection) on the given features as-is; fit() is
// the normalizing front end.
DualSolution solve_dual(const Matrix& features, std::span<const double> targets,
                        const KernelSpec& kernel, const SvrConfig& config);

// Dual objective for arbitrary feasible (alpha, alpha*); shared by the
// solver and the test oracles.
double dual_objective(const Matrix& features, std::span<const double> targets,
                      const KernelSpec& kernel, double epsilon,
                      std::span<const double> alpha, std::span<const double> alpha_star);

// Z-scores features with training statistics (constant features get unit
// std), solves the dual, keeps the support vectors.
RegressionModel fit(const Matrix& features, std::span<const double> targets,
                    const KernelSpec& kernel, const SvrConfig& config);

std::vector<double> predict(const RegressionModel& model, const Matrix& features);
double predict_one(const RegressionModel& model, std::span<const double> x);

std::string to_json_string(const RegressionModel& model);
RegressionModel model_from_json_string(const std::string& text);

}  // namespace leaklab::svr
