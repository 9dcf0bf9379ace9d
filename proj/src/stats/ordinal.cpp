#include "causalread/stats/ordinal.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "causalread/errors.hpp"
#include "causalread/stats/distributions.hpp"
#include "causalread/stats/lmm.hpp"

namespace causalread::stats {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

Eigen::VectorXd OrdinalFit::category_probabilities(const Eigen::VectorXd& x) const {
  VectorXd beta(static_cast<Index>(coefficients.size()));
  for (std::size_t j = 0; j < coefficients.size(); ++j) beta(static_cast<Index>(j)) = coefficients[j].b;
  const double eta = x.dot(beta);
  const Index k = thresholds.size() + 1;
  VectorXd p(k);
  double prev = 0.0;
  for (Index c = 0; c < k - 1; ++c) {
    const double cum = logistic(thresholds(c) - eta);
    p(c) = cum - prev;
    prev = cum;
  }
  p(k - 1) = 1.0 - prev;
  return p;
}

namespace {

struct Evaluation {
  double loglik = -std::numeric_limits<double>::infinity();
  VectorXd gradient;  ///< in (tau, beta)
  MatrixXd hessian;   ///< in (tau, beta)
};

// Log-likelihood and derivatives with respect to phi = (tau_0..tau_{K-2}, beta).
Evaluation evaluate(const std::vector<int>& cat, const MatrixXd& x, const VectorXd& tau, const VectorXd& beta,
                    bool derivatives) {
  const Index m = tau.size();
  const Index p = beta.size();
  Evaluation ev;
  ev.loglik = 0.0;
  if (derivatives) {
    ev.gradient = VectorXd::Zero(m + p);
    ev.hessian = MatrixXd::Zero(m + p, m + p);
  }
  VectorXd da(m + p), db(m + p);
  for (Index i = 0; i < x.rows(); ++i) {
    const int c = cat[static_cast<std::size_t>(i)];
    const double eta = x.row(i).dot(beta);
    const bool has_upper = c < m;
    const bool has_lower = c > 0;
    const double fa_cum = has_upper ? logistic(tau(c) - eta) : 1.0;
    const double fb_cum = has_lower ? logistic(tau(c - 1) - eta) : 0.0;
    // P = F(a) - F(b), computed from the complementary side when both are near 1.
    double prob = fa_cum - fb_cum;
    if (has_lower && has_upper && fb_cum > 0.5) prob = logistic(eta - tau(c - 1)) - logistic(eta - tau(c));
    else if (has_lower && !has_upper) prob = logistic(eta - tau(c - 1));
    if (!(prob > 0.0)) {
      ev.loglik = -std::numeric_limits<double>::infinity();
      return ev;
    }
    ev.loglik += std::log(prob);
    if (!derivatives) continue;
    const double fa = fa_cum * (1.0 - fa_cum);
    const double fb = fb_cum * (1.0 - fb_cum);
    const double dfa = fa * (1.0 - 2.0 * fa_cum);
    const double dfb = fb * (1.0 - 2.0 * fb_cum);
    da.setZero();
    db.setZero();
    if (has_upper) {
      da(c) = 1.0;
      da.tail(p) = -x.row(i).transpose();
    }
    if (has_lower) {
      db(c - 1) = 1.0;
      db.tail(p) = -x.row(i).transpose();
    }
    const double la = fa / prob, lb = -fb / prob;
    ev.gradient += la * da + lb * db;
    const double laa = dfa / prob - la * la;
    const double lbb = -dfb / prob - lb * lb;
    const double lab = -la * lb;
    ev.hessian += laa * da * da.transpose() + lbb * db * db.transpose() + lab * (da * db.transpose() + db * da.transpose());
  }
  return ev;
}

// psi = (tau_0, delta_1..delta_{K-2}, beta) with tau_k = tau_0 + sum_{j<=k} exp(delta_j).
VectorXd thresholds_from(const VectorXd& psi, Index m) {
  VectorXd tau(m);
  tau(0) = psi(0);
  for (Index k = 1; k < m; ++k) tau(k) = tau(k - 1) + std::exp(psi(k));
  return tau;
}

}  // namespace

OrdinalFit fit_clm_ordinal(const std::vector<int>& y, const MatrixXd& x, const std::vector<std::string>& names,
                           const OrdinalOptions& options) {
  if (static_cast<Index>(y.size()) != x.rows()) throw InvalidTable("response and predictors differ in length");
  if (static_cast<Index>(names.size()) != x.cols()) throw InvalidTable("one name per predictor column required");
  const std::set<int> observed(y.begin(), y.end());
  if (observed.size() < 2) throw InvalidTable(fmt::format("need at least 2 observed categories, found {}", observed.size()));

  OrdinalFit fit;
  fit.categories.assign(observed.begin(), observed.end());
  fit.n_obs = y.size();
  std::vector<int> cat(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    cat[i] = static_cast<int>(std::lower_bound(fit.categories.begin(), fit.categories.end(), y[i]) - fit.categories.begin());
  }
  const Index m = static_cast<Index>(fit.categories.size()) - 1;
  const Index p = x.cols();

  // Start from the marginal cumulative logits with beta = 0.
  VectorXd psi = VectorXd::Zero(m + p);
  {
    std::vector<double> counts(static_cast<std::size_t>(m + 1), 0.0);
    for (int c : cat) counts[static_cast<std::size_t>(c)] += 1.0;
    double cum = 0.0;
    VectorXd tau(m);
    for (Index k = 0; k < m; ++k) {
      cum += counts[static_cast<std::size_t>(k)];
      const double q = cum / static_cast<double>(y.size());
      tau(k) = std::log(q / (1.0 - q));
    }
    psi(0) = tau(0);
    for (Index k = 1; k < m; ++k) psi(k) = std::log(tau(k) - tau(k - 1));
  }

  // Derivatives in psi via the chain rule through tau(psi).
  auto eval_psi = [&](const VectorXd& ps, bool derivatives, VectorXd* grad, MatrixXd* hess) {
    const VectorXd tau = thresholds_from(ps, m);
    Evaluation ev = evaluate(cat, x, tau, ps.tail(p), derivatives);
    if (!derivatives || !std::isfinite(ev.loglik)) return ev;
    MatrixXd jac = MatrixXd::Identity(m + p, m + p);
    for (Index k = 0; k < m; ++k) {
      jac(k, 0) = 1.0;
      for (Index j = 1; j <= k; ++j) jac(k, j) = std::exp(ps(j));
    }
    *grad = jac.transpose() * ev.gradient;
    *hess = jac.transpose() * ev.hessian * jac;
    for (Index j = 1; j < m; ++j) (*hess)(j, j) += std::exp(ps(j)) * ev.gradient.segment(j, m - j).sum();
    return ev;
  };

  VectorXd sd(p);
  for (Index j = 0; j < p; ++j) {
    const double mean = x.col(j).mean();
    sd(j) = std::max(1e-12, std::sqrt((x.col(j).array() - mean).square().sum() / std::max<Index>(1, x.rows() - 1)));
  }
  auto diverged = [&] { return ((psi.tail(p).array().abs() * sd.array()) > options.separation_bound).any(); };

  VectorXd grad;
  MatrixXd hess;
  Evaluation cur = eval_psi(psi, true, &grad, &hess);
  double lambda = 0.0;
  bool converged = false;
  int it = 0;
  for (; it < options.max_iterations; ++it) {
    if (grad.lpNorm<Eigen::Infinity>() < options.gradient_tolerance * (1.0 + std::abs(cur.loglik))) {
      converged = true;
      break;
    }
    bool improved = false;
    for (int attempt = 0; attempt < 40; ++attempt) {
      MatrixXd info = -hess;
      info.diagonal().array() += lambda;
      Eigen::LDLT<MatrixXd> ldlt(info);
      if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || (ldlt.vectorD().array() <= 0).any()) {
        lambda = std::max(1e-6, lambda * 10.0);
        continue;
      }
      const VectorXd step = ldlt.solve(grad);
      const VectorXd trial = psi + step;
      const Evaluation next = eval_psi(trial, false, nullptr, nullptr);
      if (std::isfinite(next.loglik) && next.loglik >= cur.loglik - 1e-12 * std::abs(cur.loglik)) {
        const bool tiny = step.lpNorm<Eigen::Infinity>() < 1e-14 * (1.0 + psi.lpNorm<Eigen::Infinity>());
        psi = trial;
        cur = eval_psi(psi, true, &grad, &hess);
        lambda = lambda / 10.0 < 1e-8 ? 0.0 : lambda / 10.0;
        improved = true;
        if (tiny) converged = true;
        break;
      }
      lambda = std::max(1e-6, lambda * 10.0);
    }
    if (converged || diverged()) break;
    if (!improved) {
      converged = grad.lpNorm<Eigen::Infinity>() < 1e-6 * (1.0 + std::abs(cur.loglik));
      break;
    }
  }
  fit.iterations = it;

  const VectorXd tau = thresholds_from(psi, m);
  const VectorXd beta = psi.tail(p);
  for (Index j = 0; j < p; ++j) {
    if (std::abs(beta(j)) * sd(j) > options.separation_bound) {
      throw Separation(fmt::format("coefficient '{}' diverges (b = {:.3g}); the predictor separates the categories",
                                   names[static_cast<std::size_t>(j)], beta(j)));
    }
  }
  if (!converged) {
    throw NonConvergence(fmt::format("ordinal fit did not converge in {} iterations", options.max_iterations));
  }
  const Evaluation at = evaluate(cat, x, tau, beta, true);
  Eigen::LDLT<MatrixXd> info(-at.hessian);
  if (info.info() != Eigen::Success || !info.isPositive() || (info.vectorD().array() <= 0).any()) {
    throw Separation("observed information is singular; the likelihood has no finite maximum");
  }
  fit.covariance = info.solve(MatrixXd::Identity(m + p, m + p));
  fit.thresholds = tau;
  fit.log_likelihood = at.loglik;
  fit.converged = true;
  for (Index j = 0; j < p; ++j) {
    OrdinalCoefficient c;
    c.name = names[static_cast<std::size_t>(j)];
    c.b = beta(j);
    c.se = std::sqrt(fit.covariance(m + j, m + j));
    c.z = c.b / c.se;
    c.p = two_sided_normal_p(c.z);
    fit.coefficients.push_back(std::move(c));
  }
  return fit;
}

OrdinalFit fit_clm_ordinal(const TrialTable& table, Condition reference, const OrdinalOptions& options) {
  if (table.response_kind != ResponseKind::Likert0to7) throw InvalidTable("ordinal fits need a Likert table");
  validate(table);
  if (!table.has_condition(reference)) {
    throw MissingCondition(fmt::format("reference level {} absent from the data", to_label(reference)));
  }
  std::vector<Condition> levels;
  for (Condition c : kAllConditions) {
    if (c != reference && table.has_condition(c)) levels.push_back(c);
  }
  std::vector<int> y;
  MatrixXd x(static_cast<Index>(table.rows.size()), static_cast<Index>(levels.size()));
  std::vector<std::string> names;
  for (Condition c : levels) names.push_back(condition_coefficient(c));
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    y.push_back(static_cast<int>(table.rows[i].response));
    for (std::size_t l = 0; l < levels.size(); ++l) {
      x(static_cast<Index>(i), static_cast<Index>(l)) = table.rows[i].condition == levels[l] ? 1.0 : 0.0;
    }
  }
  return fit_clm_ordinal(y, x, names, options);
}

std::string format_ordinal_coefficient(const OrdinalCoefficient& c) {
  std::string p;
  if (c.p < 0.001) {
    p = "p < .001";
  } else {
    std::string digits = fmt::format("{:.3f}", c.p);
    if (digits.starts_with("0")) digits.erase(0, 1);
    p = "p = " + digits;
  }
  return fmt::format("b = {:.2f}, se = {:.2f}, z = {:.2f}, {}", c.b, c.se, c.z, p);
}

}  // namespace causalread::stats
