#pragma once

// Klyshko heralding-efficiency estimation and the power/length noise
// model fit.
//
// The pair process scales as P^2 L while herald-channel noise scales as
// beta P L (scattering in the fiber) plus alpha P (leaked pump light), so
// the measured heralding efficiency follows
//
//   eta_K(P, L) = eta_S * P^2 L / (P^2 L + beta P L + alpha P).
//
// The fit is a damped Gauss-Newton iteration on (eta_S, alpha, beta) with
// numerically differentiated sensitivities and a coarse log-spaced
// multi-start in (alpha, beta): when one noise term dominates, the other
// parameter sits in a shallow valley, and the reported parameter
// covariance is the honest record of that degeneracy.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "hpl/errors.hpp"

namespace hpl {

/// Heralding efficiency predicted by the noise model; strictly below
/// eta_s whenever noise is present, approaching it as the power grows.
inline double model_eta(double pump_power_mw, double fiber_length_m,
                        double eta_s, double alpha, double beta) {
  if (!(pump_power_mw > 0.0)) throw ConfigError("pump power must be > 0");
  if (!(fiber_length_m > 0.0)) throw ConfigError("fiber length must be > 0");
  const double pair_term = pump_power_mw * pump_power_mw * fiber_length_m;
  const double raman_term = beta * pump_power_mw * fiber_length_m;
  const double pump_term = alpha * pump_power_mw;
  // Ratio first: the noise-free limit is then exactly eta_s.
  return eta_s * (pair_term / (pair_term + raman_term + pump_term));
}

/// eta_K = N_HS / N_H with its binomial standard error.
struct KlyshkoEstimate {
  double eta_k = 0.0;
  double sigma = 0.0;
};

inline KlyshkoEstimate estimate_klyshko(std::uint64_t n_coincidence,
                                        std::uint64_t n_herald) {
  if (n_herald == 0) throw StatisticsError("no herald detections");
  if (n_coincidence > n_herald) {
    throw ConfigError("coincidences cannot exceed herald detections");
  }
  const double eta =
      static_cast<double>(n_coincidence) / static_cast<double>(n_herald);
  const double sigma =
      std::sqrt(eta * (1.0 - eta) / static_cast<double>(n_herald));
  return KlyshkoEstimate{eta, sigma};
}

struct KlyshkoPoint {
  double pump_power_mw = 0.0;
  double fiber_length_m = 0.0;
  std::string detector;
  double eta_k = 0.0;
  double sigma = 0.0;
};

struct KlyshkoDataset {
  std::vector<KlyshkoPoint> points;

  void validate() const {
    for (const auto& point : points) {
      if (!(point.pump_power_mw > 0.0)) throw ConfigError("pump power must be > 0");
      if (!(point.fiber_length_m > 0.0)) throw ConfigError("fiber length must be > 0");
      if (!(point.eta_k >= 0.0 && point.eta_k <= 1.0)) {
        throw ConfigError("eta_k must be in [0, 1]");
      }
      if (!(point.sigma > 0.0)) throw ConfigError("sigma must be > 0");
    }
  }

  int distinct_powers() const {
    std::set<double> values;
    for (const auto& point : points) values.insert(point.pump_power_mw);
    return static_cast<int>(values.size());
  }

  int distinct_lengths() const {
    std::set<double> values;
    for (const auto& point : points) values.insert(point.fiber_length_m);
    return static_cast<int>(values.size());
  }
};

struct KlyshkoFitResult {
  double eta_s = 0.0;
  double alpha = 0.0;  // mW * m
  double beta = 0.0;   // mW
  double residual_norm = 0.0;             // sqrt of the weighted SSR
  std::array<double, 9> covariance{};     // (eta_s, alpha, beta), row major
  int iterations = 0;
  bool boundary_alpha = false;  // parameter pinned at 0
  bool boundary_beta = false;
  bool boundary_eta_s = false;  // pinned at 1

  double sigma_eta_s() const { return std::sqrt(std::max(covariance[0], 0.0)); }
  double sigma_alpha() const { return std::sqrt(std::max(covariance[4], 0.0)); }
  double sigma_beta() const { return std::sqrt(std::max(covariance[8], 0.0)); }
};

struct KlyshkoFitOptions {
  bool weighted = true;      // weight residuals by 1/sigma
  bool multistart = true;
  int max_iterations = 200;
  double tolerance = 1e-14;  // relative SSR decrease considered converged
};

namespace detail {

struct Mat3 {
  std::array<double, 9> m{};
  double& operator()(int i, int j) { return m[i * 3 + j]; }
  double operator()(int i, int j) const { return m[i * 3 + j]; }
};

/// Gaussian elimination with partial pivoting; returns false if singular.
inline bool solve3(Mat3 a, std::array<double, 3> rhs,
                   std::array<double, 3>& out) {
  int order[3] = {0, 1, 2};
  for (int col = 0; col < 3; ++col) {
    int pivot = col;
    for (int row = col + 1; row < 3; ++row) {
      if (std::fabs(a(order[row], col)) > std::fabs(a(order[pivot], col))) {
        pivot = row;
      }
    }
    std::swap(order[col], order[pivot]);
    const double diag = a(order[col], col);
    if (std::fabs(diag) < 1e-300) return false;
    for (int row = col + 1; row < 3; ++row) {
      const double factor = a(order[row], col) / diag;
      for (int k = col; k < 3; ++k) a(order[row], k) -= factor * a(order[col], k);
      rhs[order[row]] -= factor * rhs[order[col]];
    }
  }
  for (int col = 2; col >= 0; --col) {
    double value = rhs[order[col]];
    for (int k = col + 1; k < 3; ++k) value -= a(order[col], k) * out[k];
    out[col] = value / a(order[col], col);
  }
  return true;
}

/// Jacobi eigendecomposition of a symmetric 3x3 matrix.
inline void eigen_sym3(Mat3 a, std::array<double, 3>& values, Mat3& vectors) {
  vectors = Mat3{};
  vectors(0, 0) = vectors(1, 1) = vectors(2, 2) = 1.0;
  for (int sweep = 0; sweep < 64; ++sweep) {
    double off = std::fabs(a(0, 1)) + std::fabs(a(0, 2)) + std::fabs(a(1, 2));
    if (off == 0.0) break;
    for (int p = 0; p < 2; ++p) {
      for (int q = p + 1; q < 3; ++q) {
        if (std::fabs(a(p, q)) < 1e-300) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        Mat3 rotated = a;
        for (int k = 0; k < 3; ++k) {
          rotated(p, k) = c * a(p, k) - s * a(q, k);
          rotated(q, k) = s * a(p, k) + c * a(q, k);
        }
        a = rotated;
        rotated = a;
        for (int k = 0; k < 3; ++k) {
          rotated(k, p) = c * a(k, p) - s * a(k, q);
          rotated(k, q) = s * a(k, p) + c * a(k, q);
        }
        a = rotated;
        for (int k = 0; k < 3; ++k) {
          const double vp = vectors(k, p);
          const double vq = vectors(k, q);
          vectors(k, p) = c * vp - s * vq;
          vectors(k, q) = s * vp + c * vq;
        }
      }
    }
  }
  for (int i = 0; i < 3; ++i) values[i] = a(i, i);
}

struct FitWork {
  const KlyshkoDataset& data;
  bool weighted;

  double weight(std::size_t i) const {
    return weighted ? 1.0 / data.points[i].sigma : 1.0;
  }

  double ssr(const std::array<double, 3>& params) const {
    double total = 0.0;
    for (std::size_t i = 0; i < data.points.size(); ++i) {
      const auto& point = data.points[i];
      const double r = weight(i) * (point.eta_k -
                                    model_eta(point.pump_power_mw,
                                              point.fiber_length_m, params[0],
                                              params[1], params[2]));
      total += r * r;
    }
    return total;
  }

  /// Residuals r_i and the central-difference Jacobian of -r w.r.t. the
  /// parameters (i.e. J(i, j) = d model_i / d theta_j, weighted).
  void jacobian(const std::array<double, 3>& params,
                const std::array<double, 3>& scales, std::vector<double>& r,
                std::vector<double>& jac) const {
    const std::size_t n = data.points.size();
    r.resize(n);
    jac.resize(n * 3);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& point = data.points[i];
      const double w = weight(i);
      r[i] = w * (point.eta_k -
                  model_eta(point.pump_power_mw, point.fiber_length_m,
                            params[0], params[1], params[2]));
      for (int j = 0; j < 3; ++j) {
        const double h = 1e-6 * std::fabs(params[j]) + 1e-9 * scales[j];
        auto up = params;
        auto down = params;
        up[j] += h;
        down[j] = std::max(down[j] - h, 0.0);
        const double span = up[j] - down[j];
        const double d_model =
            (model_eta(point.pump_power_mw, point.fiber_length_m, up[0], up[1],
                       up[2]) -
             model_eta(point.pump_power_mw, point.fiber_length_m, down[0],
                       down[1], down[2])) /
            span;
        jac[i * 3 + j] = w * d_model;
      }
    }
  }
};

inline std::array<double, 3> clip_params(std::array<double, 3> params) {
  params[0] = std::clamp(params[0], 1e-12, 1.0);
  params[1] = std::max(params[1], 0.0);
  params[2] = std::max(params[2], 0.0);
  return params;
}

}  // namespace detail

/// Single damped Gauss-Newton descent from an explicit starting point.
inline KlyshkoFitResult refine_klyshko(const KlyshkoDataset& dataset,
                                       std::array<double, 3> start,
                                       const KlyshkoFitOptions& options = {}) {
  dataset.validate();
  if (dataset.points.size() < 4) {
    throw ConfigError("fit requires at least 4 points");
  }
  if (dataset.distinct_powers() < 2 || dataset.distinct_lengths() < 2) {
    throw ConfigError(
        "fit requires at least 2 distinct pump powers and 2 distinct fiber "
        "lengths; the parameters are degenerate otherwise");
  }

  // Characteristic magnitudes of (eta_s, alpha, beta) used for numerical
  // differentiation steps near zero.
  double sum_pl = 0.0;
  double sum_p = 0.0;
  for (const auto& point : dataset.points) {
    sum_pl += point.pump_power_mw * point.fiber_length_m;
    sum_p += point.pump_power_mw;
  }
  const double mean_pl = sum_pl / static_cast<double>(dataset.points.size());
  const double mean_p = sum_p / static_cast<double>(dataset.points.size());
  const std::array<double, 3> scales{1.0, mean_pl, mean_p};

  const detail::FitWork work{dataset, options.weighted};
  auto params = detail::clip_params(start);
  double ssr = work.ssr(params);
  double lambda = 1e-3;

  std::vector<double> residuals;
  std::vector<double> jac;
  bool converged = false;
  int iteration = 0;
  while (iteration < options.max_iterations) {
    ++iteration;
    work.jacobian(params, scales, residuals, jac);

    detail::Mat3 normal;
    std::array<double, 3> gradient{};
    const std::size_t n = dataset.points.size();
    for (std::size_t i = 0; i < n; ++i) {
      for (int a = 0; a < 3; ++a) {
        gradient[a] += jac[i * 3 + a] * residuals[i];
        for (int b = 0; b < 3; ++b) {
          normal(a, b) += jac[i * 3 + a] * jac[i * 3 + b];
        }
      }
    }

    // Parameters sitting on a bound with the descent direction pointing
    // outside the feasible region are frozen for this iteration, otherwise
    // the clipped step distorts the remaining components and the
    // iteration stalls against the bound.
    std::array<bool, 3> frozen{};
    frozen[0] = (params[0] >= 1.0 && gradient[0] > 0.0) ||
                (params[0] <= 1e-12 && gradient[0] < 0.0);
    frozen[1] = params[1] <= 0.0 && gradient[1] < 0.0;
    frozen[2] = params[2] <= 0.0 && gradient[2] < 0.0;

    bool stepped = false;
    while (lambda < 1e14) {
      detail::Mat3 damped = normal;
      std::array<double, 3> rhs = gradient;
      for (int a = 0; a < 3; ++a) {
        damped(a, a) += lambda * std::max(normal(a, a), 1e-30);
        if (frozen[a]) {
          for (int b = 0; b < 3; ++b) {
            damped(a, b) = 0.0;
            damped(b, a) = 0.0;
          }
          damped(a, a) = 1.0;
          rhs[a] = 0.0;
        }
      }
      std::array<double, 3> step{};
      if (detail::solve3(damped, rhs, step)) {
        const auto candidate = detail::clip_params(
            {params[0] + step[0], params[1] + step[1], params[2] + step[2]});
        const double candidate_ssr = work.ssr(candidate);
        if (candidate_ssr <= ssr * (1.0 + 1e-15) + 1e-300) {
          const double drop = ssr - candidate_ssr;
          params = candidate;
          const double previous = ssr;
          ssr = candidate_ssr;
          lambda = std::max(lambda / 3.0, 1e-12);
          stepped = true;
          if (drop <= options.tolerance * (previous + 1e-300)) converged = true;
          break;
        }
      }
      lambda *= 10.0;
    }
    if (!stepped) converged = true;  // no descent direction improves: at a minimum
    if (converged) break;
  }
  if (!converged) {
    throw ConvergenceError(
        "Klyshko fit did not converge within the iteration budget (degenerate "
        "data?)");
  }

  KlyshkoFitResult result;
  result.eta_s = params[0];
  result.alpha = params[1];
  result.beta = params[2];
  result.residual_norm = std::sqrt(ssr);
  result.iterations = iteration;
  result.boundary_alpha = params[1] == 0.0;
  result.boundary_beta = params[2] == 0.0;
  result.boundary_eta_s = params[0] == 1.0;

  // Parameter covariance from the final linearization, (J^T J)^-1 through
  // an eigendecomposition so degenerate directions surface as very large
  // variances instead of garbage.
  work.jacobian(params, scales, residuals, jac);
  detail::Mat3 normal;
  for (std::size_t i = 0; i < dataset.points.size(); ++i) {
    for (int a = 0; a < 3; ++a) {
      for (int b = 0; b < 3; ++b) {
        normal(a, b) += jac[i * 3 + a] * jac[i * 3 + b];
      }
    }
  }
  std::array<double, 3> eigenvalues{};
  detail::Mat3 eigenvectors;
  detail::eigen_sym3(normal, eigenvalues, eigenvectors);
  const double max_eigen =
      std::max({eigenvalues[0], eigenvalues[1], eigenvalues[2], 0.0});
  const double floor_eigen = std::max(max_eigen, 1e-300) * 1e-14;
  detail::Mat3 covariance;
  for (int a = 0; a < 3; ++a) {
    for (int b = 0; b < 3; ++b) {
      double value = 0.0;
      for (int k = 0; k < 3; ++k) {
        value += eigenvectors(a, k) * eigenvectors(b, k) /
                 std::max(eigenvalues[k], floor_eigen);
      }
      covariance(a, b) = value;
    }
  }
  // For the unweighted fit the residual scale estimates the noise level.
  if (!options.weighted && dataset.points.size() > 3) {
    const double scale = ssr / static_cast<double>(dataset.points.size() - 3);
    for (auto& value : covariance.m) value *= scale;
  }
  result.covariance = covariance.m;
  return result;
}

/// Weighted least-squares fit of the noise model with multi-start over a
/// coarse log grid in (alpha, beta).
inline KlyshkoFitResult fit_klyshko(const KlyshkoDataset& dataset,
                                    const KlyshkoFitOptions& options = {}) {
  dataset.validate();
  if (dataset.points.size() < 4) {
    throw ConfigError("fit requires at least 4 points");
  }

  double eta_high = 0.0;
  double sum_pl = 0.0;
  double sum_p = 0.0;
  for (const auto& point : dataset.points) {
    eta_high = std::max(eta_high, point.eta_k);
    sum_pl += point.pump_power_mw * point.fiber_length_m;
    sum_p += point.pump_power_mw;
  }
  const double mean_pl = sum_pl / static_cast<double>(dataset.points.size());
  const double mean_p = sum_p / static_cast<double>(dataset.points.size());
  const double eta_start = std::clamp(eta_high, 0.01, 1.0);

  std::vector<double> alpha_starts{0.0};
  for (int exponent = -2; exponent <= 2; ++exponent) {
    alpha_starts.push_back(mean_pl * std::pow(10.0, exponent));
  }
  std::vector<double> beta_starts{0.0};
  for (int exponent : {-6, -3, -1, 0}) {
    beta_starts.push_back(mean_p * std::pow(10.0, exponent));
  }
  if (!options.multistart) {
    alpha_starts = {0.0};
    beta_starts = {0.0};
  }

  bool have_result = false;
  KlyshkoFitResult best;
  double best_ssr = 0.0;
  for (double alpha : alpha_starts) {
    for (double beta : beta_starts) {
      KlyshkoFitResult candidate;
      try {
        candidate = refine_klyshko(dataset, {eta_start, alpha, beta}, options);
      } catch (const ConvergenceError&) {
        continue;
      }
      const double candidate_ssr =
          candidate.residual_norm * candidate.residual_norm;
      if (!have_result || candidate_ssr < best_ssr) {
        best = candidate;
        best_ssr = candidate_ssr;
        have_result = true;
      }
    }
  }
  if (!have_result) {
    throw ConvergenceError("Klyshko fit failed from every starting point");
  }
  return best;
}

/// Relative weight of the pair, scattering, and pump-leak terms in the
/// model denominator at a given operating point; sums to 1.
struct NoiseBudget {
  double frac_pair = 0.0;
  double frac_raman = 0.0;
  double frac_pump = 0.0;
};

inline NoiseBudget noise_budget(const KlyshkoFitResult& fit,
                                double pump_power_mw, double fiber_length_m) {
  if (!(pump_power_mw > 0.0)) throw ConfigError("pump power must be > 0");
  if (!(fiber_length_m > 0.0)) throw ConfigError("fiber length must be > 0");
  const double pair_term = pump_power_mw * pump_power_mw * fiber_length_m;
  const double raman_term = fit.beta * pump_power_mw * fiber_length_m;
  const double pump_term = fit.alpha * pump_power_mw;
  const double total = pair_term + raman_term + pump_term;
  NoiseBudget budget;
  budget.frac_pair = pair_term / total;
  budget.frac_raman = raman_term / total;
  budget.frac_pump = 1.0 - budget.frac_pair - budget.frac_raman;
  return budget;
}

}  // namespace hpl
