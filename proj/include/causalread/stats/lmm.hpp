#pragma once

#include <Eigen/Dense>

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "causalread/corpus.hpp"
#include "causalread/stats/nelder_mead.hpp"
#include "causalread/stats/trial_table.hpp"

namespace causalread::stats {

// ---------------------------------------------------------------------------
// Model formulas

enum class ResponseTransform { Log, Identity };
enum class Grouping { Subject, Item };

std::string_view to_string(Grouping g);

/// "condition" names the treatment-coded story condition; any other name is
/// a numeric covariate column of the trial table.
struct FixedTerm {
  std::string name = "condition";
  Condition reference = Condition::AffirmedAB;

  bool operator==(const FixedTerm&) const = default;
};

struct RandomTerm {
  Grouping grouping = Grouping::Item;
  bool intercept = true;
  std::vector<std::string> slopes;

  bool operator==(const RandomTerm&) const = default;
};

struct ModelSpec {
  ResponseTransform response_transform = ResponseTransform::Log;
  std::vector<FixedTerm> fixed_terms{FixedTerm{}};
  std::vector<RandomTerm> random_terms;

  /// lme4-style formula, e.g. "log(response) ~ condition + (1 | item)".
  [[nodiscard]] std::string formula() const;
  bool operator==(const ModelSpec&) const = default;
};

/// log(response) ~ condition + (1 | subject) + (1 + condition | item)
ModelSpec maximal_spec(Condition reference = Condition::AffirmedAB);
/// log(response) ~ condition + (1 | item)
ModelSpec item_intercept_spec(Condition reference = Condition::AffirmedAB);

/// The maximal spec followed by: slopes dropped, subject terms dropped,
/// by-item intercept only. Rungs identical to their predecessor are skipped.
std::vector<ModelSpec> simplification_ladder(const ModelSpec& maximal);

// ---------------------------------------------------------------------------
// Profiled REML on matrices

/// One random-effects term: a grouping factor with `n_levels` levels and the
/// per-observation model columns (intercept and slopes) it multiplies.
struct RandomBlock {
  std::string name;
  std::vector<std::string> component_names;
  Eigen::VectorXi levels;     ///< n, values in [0, n_levels)
  Eigen::MatrixXd columns;    ///< n x k
  Eigen::Index n_levels = 0;

  [[nodiscard]] Eigen::Index n_components() const { return columns.cols(); }
  [[nodiscard]] Eigen::Index n_theta() const { return n_components() * (n_components() + 1) / 2; }
};

struct RemlSolution {
  Eigen::VectorXd beta;
  Eigen::MatrixXd beta_covariance;
  Eigen::VectorXd random_effects;  ///< b = Lambda u
  double sigma2 = 0.0;
  double criterion = 0.0;
};

/// The REML criterion of a linear mixed model as a function of the relative
/// covariance parameters theta, with beta and sigma^2 profiled out through a
/// penalized least-squares solve. Each block's relative covariance factor is
/// lower triangular; theta lists its entries column by column.
class RemlProblem {
 public:
  RemlProblem(Eigen::VectorXd y, Eigen::MatrixXd x, std::vector<RandomBlock> blocks);

  [[nodiscard]] double criterion(const Eigen::VectorXd& theta) const;
  [[nodiscard]] RemlSolution solve(const Eigen::VectorXd& theta) const;

  [[nodiscard]] Eigen::Index n_theta() const { return n_theta_; }
  [[nodiscard]] Eigen::VectorXd lower_bounds() const;
  [[nodiscard]] Eigen::VectorXd initial_theta() const;
  /// Relative covariance factor T of block `b` at theta.
  [[nodiscard]] Eigen::MatrixXd block_factor(const Eigen::VectorXd& theta, std::size_t b) const;
  [[nodiscard]] const std::vector<RandomBlock>& blocks() const { return blocks_; }
  [[nodiscard]] const Eigen::MatrixXd& x() const { return x_; }
  [[nodiscard]] const Eigen::VectorXd& y() const { return y_; }

 private:
  struct Workspace;
  bool factorize(const Eigen::VectorXd& theta, Workspace& ws) const;

  Eigen::VectorXd y_;
  Eigen::MatrixXd x_;
  std::vector<RandomBlock> blocks_;
  Eigen::Index q_ = 0;
  Eigen::Index n_theta_ = 0;
  std::vector<Eigen::Index> block_offset_;
  std::vector<Eigen::Index> theta_offset_;
  Eigen::MatrixXd ztz_;
  Eigen::MatrixXd ztx_;
  Eigen::VectorXd zty_;
  Eigen::MatrixXd xtx_;
  Eigen::VectorXd xty_;
};

struct ThetaOptimum {
  Eigen::VectorXd theta;
  double criterion = 0.0;
  double initial_criterion = 0.0;
  int evaluations = 0;
  bool converged = false;
  double max_free_gradient = 0.0;
};

/// Bounded Nelder-Mead with restarts, then a finite-difference Newton polish
/// of the free coordinates.
ThetaOptimum optimize_theta(const RemlProblem& problem, const NelderMeadOptions<double>& options = {});

// ---------------------------------------------------------------------------
// Fits on trial tables

enum class PMethod { Normal };

std::string_view to_string(PMethod m);

struct FixedEffectEstimate {
  std::string name;
  double b = 0.0;
  double se = 0.0;
  double t = 0.0;
  double p = 1.0;
  std::string sign_code;
};

struct VarianceComponent {
  std::string group;
  std::vector<std::string> terms;
  Eigen::MatrixXd covariance;  ///< sigma^2 T T'
};

struct MixedModelFit {
  ModelSpec spec;
  std::vector<std::string> coefficient_names;
  Eigen::VectorXd beta;
  Eigen::MatrixXd beta_covariance;
  double sigma2 = 0.0;
  Eigen::VectorXd theta;
  std::vector<VarianceComponent> variance_components;
  double reml_criterion = 0.0;
  double initial_criterion = 0.0;
  bool converged = false;
  bool singular = false;
  int evaluations = 0;
  std::size_t n_obs = 0;
  std::map<std::string, std::size_t> n_groups;
  std::vector<FixedEffectEstimate> estimates;
  std::vector<ModelSpec> simplification_trace;
  PMethod p_method = PMethod::Normal;

  /// Throws std::out_of_range for unknown names.
  [[nodiscard]] const FixedEffectEstimate& estimate(std::string_view name) const;
};

struct LmmOptions {
  PMethod p_method = PMethod::Normal;
  std::optional<Eigen::VectorXd> fixed_theta;  ///< skip optimization, evaluate here
  NelderMeadOptions<double> optimizer{};
  double singular_tolerance = 1e-4;
  double gradient_tolerance = 1e-3;
};

/// Name of the treatment-coded coefficient, e.g. "condition[notA->B]".
std::string condition_coefficient(Condition level);

MixedModelFit fit_lmm(const TrialTable& table, const ModelSpec& spec, const LmmOptions& options = {});

/// Walks simplification_ladder(maximal) and returns the first rung that
/// converges without a singular covariance; the last rung only needs to
/// converge. simplification_trace lists every spec attempted.
MixedModelFit fit_with_simplification(const TrialTable& table, const ModelSpec& maximal, const LmmOptions& options = {});

struct ContrastResult {
  FixedEffectEstimate estimate;
  MixedModelFit fit;
};

/// Fits the two-condition subset with `reference` as the treatment baseline and
/// returns the comparison coefficient (positive: comparison responds higher).
ContrastResult contrast(const TrialTable& table, Condition reference, Condition comparison, const ModelSpec& spec,
                        bool simplify = false, const LmmOptions& options = {});

/// Fit report JSON: spec echo, beta, sigma2, theta, reml_criterion, estimates,
/// p_method, simplification_trace.
std::string fit_report_json(const MixedModelFit& fit, std::string_view label = {});

}  // namespace causalread::stats
