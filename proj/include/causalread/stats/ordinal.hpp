#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

#include "causalread/corpus.hpp"
#include "causalread/stats/trial_table.hpp"

namespace causalread::stats {

struct OrdinalCoefficient {
  std::string name;
  double b = 0.0;
  double se = 0.0;
  double z = 0.0;
  double p = 1.0;
};

/// Cumulative-logit model P(Y <= k | x) = logistic(tau_k - x'beta) over the
/// observed categories.
struct OrdinalFit {
  std::vector<int> categories;  ///< observed response values, ascending
  Eigen::VectorXd thresholds;   ///< K-1, strictly increasing
  std::vector<OrdinalCoefficient> coefficients;
  Eigen::MatrixXd covariance;  ///< of (thresholds, beta), from the observed information
  double log_likelihood = 0.0;
  bool converged = false;
  int iterations = 0;
  std::size_t n_obs = 0;

  /// Probabilities of each observed category at covariate vector x.
  [[nodiscard]] Eigen::VectorXd category_probabilities(const Eigen::VectorXd& x) const;
};

struct OrdinalOptions {
  int max_iterations = 200;
  double gradient_tolerance = 1e-10;
  /// |b| * sd(x) above this is treated as a diverging (separated) estimate.
  double separation_bound = 10.0;
};

/// `y` holds integer category values, `x` the predictors (no intercept column).
/// Throws InvalidTable (fewer than two categories, size mismatch), Separation,
/// NonConvergence.
OrdinalFit fit_clm_ordinal(const std::vector<int>& y, const Eigen::MatrixXd& x, const std::vector<std::string>& names,
                           const OrdinalOptions& options = {});

/// Likert table with treatment-coded condition predictors against `reference`.
OrdinalFit fit_clm_ordinal(const TrialTable& table, Condition reference, const OrdinalOptions& options = {});

/// "b = -2.03, se = 0.24, z = -8.67, p < .001"
std::string format_ordinal_coefficient(const OrdinalCoefficient& c);

}  // namespace causalread::stats
