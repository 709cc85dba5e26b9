#include "leaklab/svr.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

#include "leaklab/errors.hpp"

namespace leaklab::svr {

using json = nlohmann::ordered_json;

std::string kernel_label(const KernelSpec& spec) {
  if (std::holds_alternative<LinearKernel>(spec)) return "linear";
  if (std::holds_alternative<PolynomialKernel>(spec)) return "polynomial";
  return "gaussian";
}

KernelSpec kernel_from_label(const std::string& label, double gamma_default) {
  if (label == "linear") return LinearKernel{};
  if (label == "polynomial" || label == "poly") return PolynomialKernel{};
  if (label == "gaussian" || label == "rbf") return GaussianKernel{gamma_default};
  throw DomainError("unknown kernel: " + label);
}

double kernel_eval(const KernelSpec& spec, std::span<const double> x,
                   std::span<const double> y) {
  if (x.size() != y.size())
    throw DomainError("kernel_eval: dimension mismatch " + std::to_string(x.size()) +
                      " vs " + std::to_string(y.size()));
  if (const auto* g = std::get_if<GaussianKernel>(&spec))
    return std::exp(-g->gamma * squared_distance(x, y));
  if (const auto* p = std::get_if<PolynomialKernel>(&spec))
    return std::pow(dot(x, y) + p->coef, p->degree);
  return dot(x, y);
}

void SvrConfig::validate() const {
  if (!(C > 0.0)) throw DomainError("svr: C must be positive");
  if (!(epsilon >= 0.0)) throw DomainError("svr: epsilon must be non-negative");
  if (!(tolerance > 0.0)) throw DomainError("svr: tolerance must be positive");
  if (max_passes <= 0) throw DomainError("svr: max_passes must be positive");
}

double dual_objective(const Matrix& features, std::span<const double> targets,
                      const KernelSpec& kernel, double epsilon,
                      std::span<const double> alpha, std::span<const double> alpha_star) {
  const std::size_t n = features.rows();
  std::vector<double> beta(n);
  for (std::size_t i = 0; i < n; ++i) beta[i] = alpha[i] - alpha_star[i];
  double quad = 0.0, lin = 0.0, slack = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (beta[i] == 0.0 && alpha[i] == 0.0 && alpha_star[i] == 0.0) continue;
    double fi = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (beta[j] == 0.0) continue;
      fi += beta[j] * kernel_eval(kernel, features.row(i), features.row(j));
    }
    quad += beta[i] * fi;
    lin += targets[i] * beta[i];
    slack += alpha[i] + alpha_star[i];
  }
  return -0.5 * quad + lin - epsilon * slack;
}

// The dual is a box-constrained QP over (alpha, alpha*) in [0, C]^{2n} with
// the single equality constraint sum(alpha - alpha*) = 0. With
// e_i = y_i - f_i (f_i = sum_j beta_j K_ij, no bias), feasibility of the
// bias multiplier b requires
//   b >= e_i - eps  when alpha_i  < C      (beta_i can rise via alpha)
//   b >= e_i + eps  when alpha*_i > 0      (beta_i can rise via alpha*)
//   b <= e_i - eps  when alpha_i  > 0      (beta_i can fall via alpha)
//   b <= e_i + eps  when alpha*_i < C      (beta_i can fall via alpha*)
// so the KKT gap is max(lower) - min(upper). Each step takes the maximal
// violating pair (p raises beta, q lowers it by the same amount, which keeps
// the equality constraint) and solves the one-dimensional subproblem in
// closed form: the epsilon term is linear in (alpha, alpha*), so there is no
// kink along the move.
DualSolution solve_dual(const Matrix& features, std::span<const double> targets,
                        const KernelSpec& kernel, const SvrConfig& config) {
  config.validate();
  const std::size_t n = features.rows();
  if (n < 2) throw DomainError("svr fit: need at least 2 training points");
  if (targets.size() != n) throw DomainError("svr fit: target count mismatch");
  for (double t : targets)
    if (!std::isfinite(t)) throw DomainError("svr fit: non-finite target");
  for (double v : features.data())
    if (!std::isfinite(v)) throw DomainError("svr fit: non-finite feature");

  Matrix gram(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j) {
      const double k = kernel_eval(kernel, features.row(i), features.row(j));
      gram.at(i, j) = k;
      gram.at(j, i) = k;
    }

  const double C = config.C;
  const double eps = config.epsilon;
  DualSolution sol;
  sol.alpha.assign(n, 0.0);
  sol.alpha_star.assign(n, 0.0);
  std::vector<double> f(n, 0.0);  // f_i = sum_j beta_j K_ij

  const double snap = 1e-12 * C;
  enum Side { kAlpha, kAlphaStar };

  for (long pass = 0; pass < config.max_passes; ++pass) {
    double b_low = -std::numeric_limits<double>::infinity();
    double b_up = std::numeric_limits<double>::infinity();
    std::size_t p = 0, q = 0;
    Side p_side = kAlpha, q_side = kAlpha;
    for (std::size_t i = 0; i < n; ++i) {
      const double e = targets[i] - f[i];
      if (sol.alpha[i] < C && e - eps > b_low) {
        b_low = e - eps;
        p = i;
        p_side = kAlpha;
      }
      if (sol.alpha_star[i] > 0.0 && e + eps > b_low) {
        b_low = e + eps;
        p = i;
        p_side = kAlphaStar;
      }
      if (sol.alpha[i] > 0.0 && e - eps < b_up) {
        b_up = e - eps;
        q = i;
        q_side = kAlpha;
      }
      if (sol.alpha_star[i] < C && e + eps < b_up) {
        b_up = e + eps;
        q = i;
        q_side = kAlphaStar;
      }
    }
    sol.b_low = b_low;
    sol.b_up = b_up;
    sol.passes = pass;
    if (b_low - b_up <= config.tolerance) {
      sol.converged = true;
      break;
    }

    // Step size along (beta_p += lambda, beta_q -= lambda).
    const double eta = gram.at(p, p) + gram.at(q, q) - 2.0 * gram.at(p, q);
    double lambda = (eta > 1e-12) ? (b_low - b_up) / eta
                                  : std::numeric_limits<double>::infinity();
    const double cap_p = (p_side == kAlpha) ? C - sol.alpha[p] : sol.alpha_star[p];
    const double cap_q = (q_side == kAlpha) ? sol.alpha[q] : C - sol.alpha_star[q];
    lambda = std::min(lambda, std::min(cap_p, cap_q));
    if (!(lambda > 0.0)) {  // numerically stuck; report the gap honestly
      sol.converged = false;
      break;
    }

    if (p_side == kAlpha)
      sol.alpha[p] += lambda;
    else
      sol.alpha_star[p] -= lambda;
    if (q_side == kAlpha)
      sol.alpha[q] -= lambda;
    else
      sol.alpha_star[q] += lambda;
    for (double* v : {&sol.alpha[p], &sol.alpha_star[p], &sol.alpha[q], &sol.alpha_star[q]}) {
      if (*v < snap) *v = 0.0;
      if (*v > C - snap) *v = C;
    }
    if (p != q) {
      for (std::size_t i = 0; i < n; ++i)
        f[i] += lambda * (gram.at(i, p) - gram.at(i, q));
    }
  }

  // Bias: average over KKT-interior points, midpoint of the bounds if none.
  const double interior_margin = 1e-8 * C;
  double bias_sum = 0.0;
  int bias_count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double e = targets[i] - f[i];
    if (sol.alpha[i] > interior_margin && sol.alpha[i] < C - interior_margin) {
      bias_sum += e - eps;
      ++bias_count;
    }
    if (sol.alpha_star[i] > interior_margin && sol.alpha_star[i] < C - interior_margin) {
      bias_sum += e + eps;
      ++bias_count;
    }
  }
  sol.bias = bias_count > 0 ? bias_sum / bias_count : 0.5 * (sol.b_low + sol.b_up);
  sol.objective = dual_objective(features, targets, kernel, eps, sol.alpha, sol.alpha_star);
  return sol;
}

RegressionModel fit(const Matrix& features, std::span<const double> targets,
                    const KernelSpec& kernel, const SvrConfig& config) {
  const std::size_t n = features.rows();
  const std::size_t d = features.cols();
  if (n < 2) throw DomainError("svr fit: need at least 2 training points");

  RegressionModel model;
  model.kernel = kernel;
  model.feature_mean.assign(d, 0.0);
  model.feature_std.assign(d, 0.0);
  for (std::size_t j = 0; j < d; ++j) {
    double m = 0.0;
    for (std::size_t i = 0; i < n; ++i) m += features.at(i, j);
    m /= static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double dv = features.at(i, j) - m;
      ss += dv * dv;
    }
    model.feature_mean[j] = m;
    const double sd = std::sqrt(ss / static_cast<double>(n));
    model.feature_std[j] = sd > 0.0 ? sd : 1.0;
  }
  Matrix z(n, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j)
      z.at(i, j) = (features.at(i, j) - model.feature_mean[j]) / model.feature_std[j];

  auto sol = solve_dual(z, targets, kernel, config);
  model.bias = sol.bias;
  model.info.passes = sol.passes;
  model.info.kkt_violation = std::max(0.0, sol.b_low - sol.b_up);
  model.info.objective = sol.objective;
  model.info.converged = sol.converged;

  std::vector<std::size_t> supports;
  for (std::size_t i = 0; i < n; ++i)
    if (sol.alpha[i] - sol.alpha_star[i] != 0.0) supports.push_back(i);
  model.support_vectors = Matrix(supports.size(), d);
  model.coefficients.resize(supports.size());
  for (std::size_t s = 0; s < supports.size(); ++s) {
    const std::size_t i = supports[s];
    model.coefficients[s] = sol.alpha[i] - sol.alpha_star[i];
    std::copy(z.row(i).begin(), z.row(i).end(), model.support_vectors.row(s).begin());
  }

  for (std::size_t i = 0; i < n; ++i) {
    double pred = model.bias;
    for (std::size_t s = 0; s < supports.size(); ++s)
      pred += model.coefficients[s] *
              kernel_eval(kernel, model.support_vectors.row(s), z.row(i));
    const double resid = std::abs(pred - targets[i]);
    model.info.max_abs_residual = std::max(model.info.max_abs_residual, resid);
    if (resid > config.epsilon + 1e-9) model.info.n_outside_tube++;
  }
  return model;
}

double predict_one(const RegressionModel& model, std::span<const double> x) {
  if (x.size() != model.feature_mean.size())
    throw DomainError("svr predict: dimension mismatch " + std::to_string(x.size()) +
                      " vs " + std::to_string(model.feature_mean.size()));
  std::vector<double> z(x.size());
  for (std::size_t j = 0; j < x.size(); ++j)
    z[j] = (x[j] - model.feature_mean[j]) / model.feature_std[j];
  double out = model.bias;
  for (std::size_t s = 0; s < model.support_vectors.rows(); ++s)
    out += model.coefficients[s] * kernel_eval(model.kernel, model.support_vectors.row(s), z);
  return out;
}

std::vector<double> predict(const RegressionModel& model, const Matrix& features) {
  std::vector<double> out;
  out.reserve(features.rows());
  for (std::size_t i = 0; i < features.rows(); ++i)
    out.push_back(predict_one(model, features.row(i)));
  return out;
}

namespace {

json kernel_to_json(const KernelSpec& spec) {
  json j;
  j["kind"] = kernel_label(spec);
  if (const auto* p = std::get_if<PolynomialKernel>(&spec)) {
    j["degree"] = p->degree;
    j["coef"] = p->coef;
  }
  if (const auto* g = std::get_if<GaussianKernel>(&spec)) j["gamma"] = g->gamma;
  return j;
}

KernelSpec kernel_from_json(const json& j) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "linear") return LinearKernel{};
  if (kind == "polynomial")
    return PolynomialKernel{j.at("degree").get<int>(), j.at("coef").get<double>()};
  if (kind == "gaussian") return GaussianKernel{j.at("gamma").get<double>()};
  throw ParseError("model JSON: unknown kernel kind " + kind);
}

json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (std::size_t i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (double v : m.row(i)) row.push_back(v);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

std::string to_json_string(const RegressionModel& model) {
  json j;
  j["format_version"] = 1;
  j["kernel"] = kernel_to_json(model.kernel);
  j["bias"] = model.bias;
  j["coefficients"] = model.coefficients;
  j["support_vectors"] = matrix_to_json(model.support_vectors);
  j["feature_mean"] = model.feature_mean;
  j["feature_std"] = model.feature_std;
  return j.dump(2);
}

RegressionModel model_from_json_string(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("model JSON: ") + e.what());
  }
  try {
    RegressionModel model;
    model.kernel = kernel_from_json(j.at("kernel"));
    model.bias = j.at("bias").get<double>();
    model.coefficients = j.at("coefficients").get<std::vector<double>>();
    model.feature_mean = j.at("feature_mean").get<std::vector<double>>();
    model.feature_std = j.at("feature_std").get<std::vector<double>>();
    const auto& rows = j.at("support_vectors");
    model.support_vectors = Matrix(rows.size(), model.feature_mean.size());
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t k = 0; k < model.feature_mean.size(); ++k)
        model.support_vectors.at(i, k) = rows[i][k].get<double>();
    return model;
  } catch (const json::exception& e) {
    throw ParseError(std::string("model JSON: ") + e.what());
  }
}

}  // namespace leaklab::svr
