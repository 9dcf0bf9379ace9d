#include "causalread/stats/lmm.hpp"

#include <Eigen/Sparse>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <set>
#include <tuple>
#include <json.hpp>

#include "causalread/errors.hpp"
#include "causalread/report.hpp"
#include "causalread/stats/distributions.hpp"

namespace causalread::stats {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

std::string_view to_string(Grouping g) { return g == Grouping::Subject ? "subject" : "item"; }

std::string_view to_string(PMethod) { return "normal"; }

std::string ModelSpec::formula() const {
  std::string out = response_transform == ResponseTransform::Log ? "log(response) ~ " : "response ~ ";
  for (std::size_t i = 0; i < fixed_terms.size(); ++i) {
    if (i) out += " + ";
    out += fixed_terms[i].name;
  }
  for (const RandomTerm& r : random_terms) {
    std::vector<std::string> parts;
    parts.emplace_back(r.intercept ? "1" : "0");
    parts.insert(parts.end(), r.slopes.begin(), r.slopes.end());
    std::string lhs;
    for (std::size_t i = 0; i < parts.size(); ++i) lhs += (i ? " + " : "") + parts[i];
    out += fmt::format(" + ({} | {})", lhs, to_string(r.grouping));
  }
  return out;
}

ModelSpec maximal_spec(Condition reference) {
  ModelSpec s;
  s.fixed_terms = {FixedTerm{"condition", reference}};
  s.random_terms = {RandomTerm{Grouping::Subject, true, {}}, RandomTerm{Grouping::Item, true, {"condition"}}};
  return s;
}

ModelSpec item_intercept_spec(Condition reference) {
  ModelSpec s;
  s.fixed_terms = {FixedTerm{"condition", reference}};
  s.random_terms = {RandomTerm{Grouping::Item, true, {}}};
  return s;
}

std::vector<ModelSpec> simplification_ladder(const ModelSpec& maximal) {
  std::vector<ModelSpec> ladder{maximal};
  auto push = [&](ModelSpec s) {
    if (!(s == ladder.back())) ladder.push_back(std::move(s));
  };
  ModelSpec no_slopes = maximal;
  for (RandomTerm& r : no_slopes.random_terms) {
    r.slopes.clear();
    r.intercept = true;
  }
  push(no_slopes);
  ModelSpec no_subject = no_slopes;
  std::erase_if(no_subject.random_terms, [](const RandomTerm& r) { return r.grouping == Grouping::Subject; });
  push(no_subject);
  ModelSpec item_only = maximal;
  item_only.random_terms = {RandomTerm{Grouping::Item, true, {}}};
  push(item_only);
  return ladder;
}

// ---------------------------------------------------------------------------

struct RemlProblem::Workspace {
  Eigen::SparseMatrix<double> lambda;
  Eigen::LLT<MatrixXd> l;
  MatrixXd rzx;
  VectorXd cu;
  Eigen::LLT<MatrixXd> rx;
};

RemlProblem::RemlProblem(VectorXd y, MatrixXd x, std::vector<RandomBlock> blocks)
    : y_(std::move(y)), x_(std::move(x)), blocks_(std::move(blocks)) {
  const Index n = y_.size();
  if (x_.rows() != n) throw std::invalid_argument("design and response differ in length");
  for (const RandomBlock& b : blocks_) {
    if (b.levels.size() != n || b.columns.rows() != n) throw std::invalid_argument("random block size mismatch");
    block_offset_.push_back(q_);
    theta_offset_.push_back(n_theta_);
    q_ += b.n_levels * b.n_components();
    n_theta_ += b.n_theta();
  }
  std::vector<Eigen::Triplet<double>> triplets;
  for (std::size_t bi = 0; bi < blocks_.size(); ++bi) {
    const RandomBlock& b = blocks_[bi];
    const Index k = b.n_components();
    for (Index i = 0; i < n; ++i) {
      for (Index c = 0; c < k; ++c) {
        const double v = b.columns(i, c);
        if (v != 0.0) triplets.emplace_back(i, block_offset_[bi] + b.levels(i) * k + c, v);
      }
    }
  }
  Eigen::SparseMatrix<double> z(n, q_);
  z.setFromTriplets(triplets.begin(), triplets.end());
  ztz_ = MatrixXd(z.transpose() * z);
  ztx_ = z.transpose() * x_;
  zty_ = z.transpose() * y_;
  xtx_ = x_.transpose() * x_;
  xty_ = x_.transpose() * y_;
}

MatrixXd RemlProblem::block_factor(const VectorXd& theta, std::size_t b) const {
  const Index k = blocks_[b].n_components();
  MatrixXd t = MatrixXd::Zero(k, k);
  Index pos = theta_offset_[b];
  for (Index j = 0; j < k; ++j) {
    for (Index i = j; i < k; ++i) t(i, j) = theta(pos++);
  }
  return t;
}

VectorXd RemlProblem::lower_bounds() const {
  VectorXd lb(n_theta_);
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    const Index k = blocks_[b].n_components();
    Index pos = theta_offset_[b];
    for (Index j = 0; j < k; ++j) {
      for (Index i = j; i < k; ++i) lb(pos++) = i == j ? 0.0 : -std::numeric_limits<double>::infinity();
    }
  }
  return lb;
}

VectorXd RemlProblem::initial_theta() const {
  VectorXd lb = lower_bounds();
  return lb.unaryExpr([](double v) { return v == 0.0 ? 1.0 : 0.0; });
}

bool RemlProblem::factorize(const VectorXd& theta, Workspace& ws) const {
  std::vector<Eigen::Triplet<double>> triplets;
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    const MatrixXd t = block_factor(theta, b);
    const Index k = t.rows();
    for (Index l = 0; l < blocks_[b].n_levels; ++l) {
      const Index base = block_offset_[b] + l * k;
      for (Index j = 0; j < k; ++j) {
        for (Index i = j; i < k; ++i) triplets.emplace_back(base + i, base + j, t(i, j));
      }
    }
  }
  ws.lambda.resize(q_, q_);
  ws.lambda.setFromTriplets(triplets.begin(), triplets.end());
  MatrixXd a = ws.lambda.transpose() * (ztz_ * ws.lambda);
  a.diagonal().array() += 1.0;
  ws.l.compute(a);
  if (ws.l.info() != Eigen::Success) return false;
  ws.cu = ws.l.matrixL().solve(VectorXd(ws.lambda.transpose() * zty_));
  ws.rzx = ws.l.matrixL().solve(MatrixXd(ws.lambda.transpose() * ztx_));
  ws.rx.compute(xtx_ - ws.rzx.transpose() * ws.rzx);
  return ws.rx.info() == Eigen::Success;
}

RemlSolution RemlProblem::solve(const VectorXd& theta) const {
  Workspace ws;
  if (!factorize(theta, ws)) throw RankDeficient("fixed-effects design is singular given the random effects");
  const Index n = y_.size();
  const Index p = x_.cols();
  RemlSolution s;
  s.beta = ws.rx.solve(xty_ - ws.rzx.transpose() * ws.cu);
  const VectorXd u = ws.l.matrixU().solve(ws.cu - ws.rzx * s.beta);
  s.random_effects = ws.lambda * u;

  // Penalized residual sum of squares, evaluated directly rather than through
  // the yty - |cu|^2 - |cbeta|^2 identity to avoid cancellation.
  VectorXd fitted = x_ * s.beta;
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    const RandomBlock& blk = blocks_[b];
    const Index k = blk.n_components();
    for (Index i = 0; i < n; ++i) {
      fitted(i) += blk.columns.row(i).dot(s.random_effects.segment(block_offset_[b] + blk.levels(i) * k, k));
    }
  }
  const double pwrss = (y_ - fitted).squaredNorm() + u.squaredNorm();
  const auto dof = static_cast<double>(n - p);
  s.sigma2 = pwrss / dof;
  double logdet = 0.0;
  for (Index i = 0; i < q_; ++i) logdet += 2.0 * std::log(ws.l.matrixLLT()(i, i));
  for (Index i = 0; i < p; ++i) logdet += 2.0 * std::log(ws.rx.matrixLLT()(i, i));
  s.criterion = logdet + dof * (1.0 + std::log(2.0 * std::numbers::pi * pwrss / dof));
  s.beta_covariance = s.sigma2 * ws.rx.solve(MatrixXd::Identity(p, p));
  return s;
}

double RemlProblem::criterion(const VectorXd& theta) const {
  Workspace ws;
  if (!factorize(theta, ws)) return std::numeric_limits<double>::infinity();
  try {
    return solve(theta).criterion;
  } catch (const RankDeficient&) {
    return std::numeric_limits<double>::infinity();
  }
}

namespace {

struct Derivatives {
  VectorXd gradient;
  MatrixXd hessian;
};

Derivatives finite_differences(const std::function<double(const VectorXd&)>& f, const VectorXd& x, double fx) {
  const Index m = x.size();
  Derivatives d{VectorXd::Zero(m), MatrixXd::Zero(m, m)};
  VectorXd h(m);
  for (Index i = 0; i < m; ++i) h(i) = 1e-4 * std::max(1.0, std::abs(x(i)));
  auto at = [&](Index i, double si, Index j, double sj) {
    VectorXd y = x;
    y(i) += si * h(i);
    if (j >= 0) y(j) += sj * h(j);
    return f(y);
  };
  for (Index i = 0; i < m; ++i) {
    const double fp = at(i, 1, -1, 0), fm = at(i, -1, -1, 0);
    d.gradient(i) = (fp - fm) / (2 * h(i));
    d.hessian(i, i) = (fp - 2 * fx + fm) / (h(i) * h(i));
    for (Index j = 0; j < i; ++j) {
      const double v = (at(i, 1, j, 1) - at(i, 1, j, -1) - at(i, -1, j, 1) + at(i, -1, j, -1)) / (4 * h(i) * h(j));
      d.hessian(i, j) = d.hessian(j, i) = v;
    }
  }
  return d;
}

}  // namespace

ThetaOptimum optimize_theta(const RemlProblem& problem, const NelderMeadOptions<double>& options) {
  int evaluations = 0;
  std::function<double(const VectorXd&)> f = [&](const VectorXd& th) {
    ++evaluations;
    return problem.criterion(th);
  };
  const VectorXd lower = problem.lower_bounds();
  const VectorXd upper = VectorXd::Constant(lower.size(), std::numeric_limits<double>::infinity());
  ThetaOptimum out;
  out.initial_criterion = problem.criterion(problem.initial_theta());
  const auto nm = minimize_nelder_mead<double>(f, problem.initial_theta(), lower, upper, options);
  VectorXd x = nm.x;
  double fx = nm.value;

  // Newton polish on the free coordinates. Coordinates sitting on their bound
  // with a non-negative outward slope are held there.
  auto active_set = [&](const VectorXd& at, double f_at) {
    std::vector<bool> active(static_cast<std::size_t>(at.size()), false);
    for (Index i = 0; i < at.size(); ++i) {
      const double h = 1e-4 * std::max(1.0, std::abs(at(i)));
      if (std::isfinite(lower(i)) && at(i) - lower(i) < h) {
        VectorXd y = at;
        y(i) = lower(i) + h;
        VectorXd z = at;
        z(i) = lower(i);
        const double f_bound = f(z);
        if (f(y) >= f_bound) active[static_cast<std::size_t>(i)] = true;
        (void)f_at;
      }
    }
    return active;
  };
  for (int iter = 0; iter < 25 && x.size() > 0; ++iter) {
    const std::vector<bool> active = active_set(x, fx);
    VectorXd snapped = x;
    for (Index i = 0; i < x.size(); ++i) {
      if (active[static_cast<std::size_t>(i)]) snapped(i) = lower(i);
    }
    if (const double fs = f(snapped); fs <= fx) {
      x = snapped;
      fx = fs;
    }
    std::vector<Index> free;
    for (Index i = 0; i < x.size(); ++i) {
      if (!active[static_cast<std::size_t>(i)]) free.push_back(i);
    }
    if (free.empty()) break;
    std::function<double(const VectorXd&)> fsub = [&](const VectorXd& v) {
      VectorXd y = x;
      for (std::size_t k = 0; k < free.size(); ++k) y(free[k]) = v(static_cast<Index>(k));
      return f(y);
    };
    VectorXd v(static_cast<Index>(free.size()));
    for (std::size_t k = 0; k < free.size(); ++k) v(static_cast<Index>(k)) = x(free[k]);
    const Derivatives d = finite_differences(fsub, v, fx);
    Eigen::LDLT<MatrixXd> ldlt(d.hessian);
    VectorXd step;
    if (ldlt.info() == Eigen::Success && ldlt.isPositive() && (ldlt.vectorD().array() > 0).all()) {
      step = -ldlt.solve(d.gradient);
    } else {
      step = -d.gradient / std::max(1.0, d.hessian.diagonal().cwiseAbs().maxCoeff());
    }
    bool accepted = false;
    for (double t = 1.0; t > 1e-4; t *= 0.5) {
      VectorXd y = x;
      for (std::size_t k = 0; k < free.size(); ++k) {
        y(free[k]) = std::max(lower(free[k]), x(free[k]) + t * step(static_cast<Index>(k)));
      }
      const double fy = f(y);
      if (fy < fx) {
        accepted = true;
        const double moved = (y - x).lpNorm<Eigen::Infinity>();
        x = y;
        fx = fy;
        if (moved < 1e-12) accepted = false;
        break;
      }
    }
    if (!accepted) break;
  }

  // Projected gradient at the final point.
  const std::vector<bool> active = active_set(x, fx);
  double max_grad = 0.0;
  for (Index i = 0; i < x.size(); ++i) {
    if (active[static_cast<std::size_t>(i)]) continue;
    const double h = 1e-5 * std::max(1.0, std::abs(x(i)));
    VectorXd a = x, b = x;
    a(i) += h;
    b(i) -= h;
    max_grad = std::max(max_grad, std::abs((f(a) - f(b)) / (2 * h)));
  }
  out.theta = x;
  out.criterion = fx;
  out.evaluations = evaluations;
  out.max_free_gradient = max_grad;
  out.converged = nm.converged && std::isfinite(fx);
  return out;
}

// ---------------------------------------------------------------------------

std::string condition_coefficient(Condition level) { return fmt::format("condition[{}]", to_label(level)); }

const FixedEffectEstimate& MixedModelFit::estimate(std::string_view name) const {
  for (const FixedEffectEstimate& e : estimates) {
    if (e.name == name) return e;
  }
  throw std::out_of_range(fmt::format("no fixed effect named '{}'", name));
}

namespace {

struct Design {
  VectorXd y;
  MatrixXd x;
  std::vector<std::string> names;
  std::vector<RandomBlock> blocks;
  std::map<std::string, std::size_t> n_groups;
};

Design build_design(const TrialTable& table, const ModelSpec& spec) {
  validate(table);
  if (spec.fixed_terms.empty()) throw InvalidTable("model needs at least one fixed term");
  std::set<Grouping> seen;
  for (const RandomTerm& r : spec.random_terms) {
    if (!seen.insert(r.grouping).second) throw InvalidTable("grouping factors must be distinct across random terms");
    if (!r.intercept && r.slopes.empty()) throw InvalidTable("random term without intercept or slopes");
  }

  // Canonical row order makes every estimate independent of input order.
  std::vector<std::size_t> order(table.rows.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const TrialRow& ra = table.rows[a];
    const TrialRow& rb = table.rows[b];
    return std::tie(ra.item_id, ra.subject_id, ra.condition, ra.response, ra.covariates) <
           std::tie(rb.item_id, rb.subject_id, rb.condition, rb.response, rb.covariates);
  });
  const auto n = static_cast<Index>(order.size());

  Design d;
  d.y.resize(n);
  for (Index i = 0; i < n; ++i) {
    const double r = table.rows[order[static_cast<std::size_t>(i)]].response;
    if (spec.response_transform == ResponseTransform::Log) {
      if (!(r > 0.0)) throw InvalidTable(fmt::format("log transform needs positive responses, found {}", r));
      d.y(i) = std::log(r);
    } else {
      d.y(i) = r;
    }
  }

  // Named predictor columns: condition dummies and covariates.
  std::map<std::string, std::pair<std::vector<std::string>, MatrixXd>> predictors;
  for (const FixedTerm& term : spec.fixed_terms) {
    if (term.name == "condition") {
      if (!table.has_condition(term.reference)) {
        throw MissingCondition(fmt::format("reference level {} absent from the data", to_label(term.reference)));
      }
      std::vector<Condition> levels;
      for (Condition c : kAllConditions) {
        if (c != term.reference && table.has_condition(c)) levels.push_back(c);
      }
      MatrixXd cols(n, static_cast<Index>(levels.size()));
      std::vector<std::string> names;
      for (std::size_t l = 0; l < levels.size(); ++l) {
        names.push_back(condition_coefficient(levels[l]));
        for (Index i = 0; i < n; ++i) {
          cols(i, static_cast<Index>(l)) = table.rows[order[static_cast<std::size_t>(i)]].condition == levels[l] ? 1.0 : 0.0;
        }
      }
      predictors[term.name] = {names, cols};
    } else {
      MatrixXd col(n, 1);
      for (Index i = 0; i < n; ++i) {
        const auto& cov = table.rows[order[static_cast<std::size_t>(i)]].covariates;
        auto it = cov.find(term.name);
        if (it == cov.end()) throw InvalidTable(fmt::format("covariate '{}' missing from a row", term.name));
        col(i, 0) = it->second;
      }
      predictors[term.name] = {{term.name}, col};
    }
  }

  Index p = 1;
  for (const FixedTerm& term : spec.fixed_terms) p += predictors[term.name].second.cols();
  d.x.resize(n, p);
  d.x.col(0).setOnes();
  d.names.push_back("(Intercept)");
  Index col = 1;
  for (const FixedTerm& term : spec.fixed_terms) {
    const auto& [names, cols] = predictors[term.name];
    d.x.middleCols(col, cols.cols()) = cols;
    d.names.insert(d.names.end(), names.begin(), names.end());
    col += cols.cols();
  }
  if (n <= p) throw RankDeficient(fmt::format("{} observations for {} fixed effects", n, p));
  if (Eigen::ColPivHouseholderQR<MatrixXd>(d.x).rank() < p) {
    throw RankDeficient("fixed-effects design matrix is rank deficient");
  }

  for (const RandomTerm& term : spec.random_terms) {
    RandomBlock blk;
    blk.name = std::string(to_string(term.grouping));
    std::map<std::string, int> level_index;
    for (const TrialRow& r : table.rows) {
      const std::string& id = term.grouping == Grouping::Subject ? r.subject_id : r.item_id;
      if (id.empty()) throw TooFewGroups(fmt::format("rows without a {} id", blk.name));
      level_index.emplace(id, 0);
    }
    if (level_index.size() < 2) {
      throw TooFewGroups(fmt::format("random term for {} needs at least 2 groups, found {}", blk.name, level_index.size()));
    }
    int next = 0;
    for (auto& [id, idx] : level_index) idx = next++;
    blk.n_levels = next;
    d.n_groups[blk.name] = level_index.size();
    blk.levels.resize(n);
    for (Index i = 0; i < n; ++i) {
      const TrialRow& r = table.rows[order[static_cast<std::size_t>(i)]];
      blk.levels(i) = level_index.at(term.grouping == Grouping::Subject ? r.subject_id : r.item_id);
    }
    std::vector<VectorXd> cols;
    if (term.intercept) {
      cols.push_back(VectorXd::Ones(n));
      blk.component_names.push_back("(Intercept)");
    }
    for (const std::string& slope : term.slopes) {
      auto it = predictors.find(slope);
      if (it == predictors.end()) throw InvalidTable(fmt::format("random slope '{}' is not a fixed term", slope));
      for (Index c = 0; c < it->second.second.cols(); ++c) {
        cols.push_back(it->second.second.col(c));
        blk.component_names.push_back(it->second.first[static_cast<std::size_t>(c)]);
      }
    }
    blk.columns.resize(n, static_cast<Index>(cols.size()));
    for (std::size_t c = 0; c < cols.size(); ++c) blk.columns.col(static_cast<Index>(c)) = cols[c];
    d.blocks.push_back(std::move(blk));
  }
  return d;
}

}  // namespace

MixedModelFit fit_lmm(const TrialTable& table, const ModelSpec& spec, const LmmOptions& options) {
  Design d = build_design(table, spec);
  MixedModelFit fit;
  fit.spec = spec;
  fit.coefficient_names = d.names;
  fit.n_obs = static_cast<std::size_t>(d.y.size());
  fit.n_groups = d.n_groups;
  fit.p_method = options.p_method;
  fit.simplification_trace = {spec};

  const RemlProblem problem(d.y, d.x, d.blocks);
  if (options.fixed_theta) {
    if (options.fixed_theta->size() != problem.n_theta()) {
      throw InvalidTable(fmt::format("fixed theta has {} entries, model needs {}", options.fixed_theta->size(),
                                     problem.n_theta()));
    }
    fit.theta = *options.fixed_theta;
    fit.converged = true;
    fit.initial_criterion = problem.criterion(fit.theta);
  } else {
    const ThetaOptimum opt = optimize_theta(problem, options.optimizer);
    fit.theta = opt.theta;
    fit.evaluations = opt.evaluations;
    fit.initial_criterion = opt.initial_criterion;
    fit.converged = opt.converged && opt.max_free_gradient < options.gradient_tolerance;
    if (!fit.converged) {
      throw NonConvergence(fmt::format("REML optimization for '{}' did not converge ({} evaluations, gradient {:.3g})",
                                       spec.formula(), opt.evaluations, opt.max_free_gradient));
    }
  }
  const RemlSolution sol = problem.solve(fit.theta);
  if (!std::isfinite(sol.criterion)) throw NonConvergence(fmt::format("REML criterion not finite for '{}'", spec.formula()));
  fit.beta = sol.beta;
  fit.beta_covariance = sol.beta_covariance;
  fit.sigma2 = sol.sigma2;
  fit.reml_criterion = sol.criterion;

  for (std::size_t b = 0; b < d.blocks.size(); ++b) {
    const MatrixXd t = problem.block_factor(fit.theta, b);
    if ((t.diagonal().array().abs() < options.singular_tolerance).any()) fit.singular = true;
    fit.variance_components.push_back({d.blocks[b].name, d.blocks[b].component_names, sol.sigma2 * t * t.transpose()});
  }
  for (Index j = 0; j < fit.beta.size(); ++j) {
    FixedEffectEstimate e;
    e.name = d.names[static_cast<std::size_t>(j)];
    e.b = fit.beta(j);
    e.se = std::sqrt(fit.beta_covariance(j, j));
    e.t = e.b / e.se;
    e.p = two_sided_normal_p(e.t);
    e.sign_code = std::string(report::significance_code(e.p));
    fit.estimates.push_back(std::move(e));
  }
  return fit;
}

MixedModelFit fit_with_simplification(const TrialTable& table, const ModelSpec& maximal, const LmmOptions& options) {
  const std::vector<ModelSpec> ladder = simplification_ladder(maximal);
  std::vector<ModelSpec> trace;
  std::optional<MixedModelFit> fallback;
  std::string last_error;
  for (std::size_t i = 0; i < ladder.size(); ++i) {
    trace.push_back(ladder[i]);
    try {
      MixedModelFit fit = fit_lmm(table, ladder[i], options);
      const bool last = i + 1 == ladder.size();
      if (!fit.singular || last) {
        fit.simplification_trace = trace;
        return fit;
      }
      if (!fallback) fallback = std::move(fit);
    } catch (const NonConvergence& e) {
      last_error = e.what();
    }
  }
  if (fallback) {
    fallback->simplification_trace = trace;
    return *std::move(fallback);
  }
  throw NonConvergence("every simplification rung failed: " + last_error);
}

ContrastResult contrast(const TrialTable& table, Condition reference, Condition comparison, const ModelSpec& spec,
                        bool simplify, const LmmOptions& options) {
  for (Condition c : {reference, comparison}) {
    if (!table.has_condition(c)) throw MissingCondition(fmt::format("no rows for condition {}", to_label(c)));
  }
  const std::array<Condition, 2> pair{reference, comparison};
  const TrialTable sub = subset(table, pair);
  ModelSpec s = spec;
  bool has_condition = false;
  for (FixedTerm& f : s.fixed_terms) {
    if (f.name == "condition") {
      f.reference = reference;
      has_condition = true;
    }
  }
  if (!has_condition) s.fixed_terms.insert(s.fixed_terms.begin(), FixedTerm{"condition", reference});
  MixedModelFit fit = simplify ? fit_with_simplification(sub, s, options) : fit_lmm(sub, s, options);
  ContrastResult out{fit.estimate(condition_coefficient(comparison)), std::move(fit)};
  return out;
}

namespace {

nlohmann::json spec_json(const ModelSpec& s) {
  nlohmann::json j;
  j["formula"] = s.formula();
  j["response_transform"] = s.response_transform == ResponseTransform::Log ? "log" : "identity";
  j["fixed_terms"] = nlohmann::json::array();
  for (const FixedTerm& f : s.fixed_terms) {
    nlohmann::json jf = {{"name", f.name}};
    if (f.name == "condition") jf["reference"] = std::string(to_label(f.reference));
    j["fixed_terms"].push_back(jf);
  }
  j["random_terms"] = nlohmann::json::array();
  for (const RandomTerm& r : s.random_terms) {
    j["random_terms"].push_back(
        {{"grouping", std::string(to_string(r.grouping))}, {"intercept", r.intercept}, {"slopes", r.slopes}});
  }
  return j;
}

nlohmann::json vec_json(const VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

}  // namespace

std::string fit_report_json(const MixedModelFit& fit, std::string_view label) {
  nlohmann::json j;
  if (!label.empty()) j["label"] = std::string(label);
  j["spec"] = spec_json(fit.spec);
  j["coefficient_names"] = fit.coefficient_names;
  j["beta"] = vec_json(fit.beta);
  j["sigma2"] = fit.sigma2;
  j["theta"] = vec_json(fit.theta);
  j["reml_criterion"] = fit.reml_criterion;
  j["converged"] = fit.converged;
  j["singular"] = fit.singular;
  j["n_obs"] = fit.n_obs;
  j["n_groups"] = fit.n_groups;
  j["p_method"] = std::string(to_string(fit.p_method));
  j["estimates"] = nlohmann::json::array();
  for (const FixedEffectEstimate& e : fit.estimates) {
    j["estimates"].push_back({{"name", e.name}, {"b", e.b}, {"se", e.se}, {"t", e.t}, {"p", e.p}, {"sign", e.sign_code}});
  }
  j["variance_components"] = nlohmann::json::array();
  for (const VarianceComponent& vc : fit.variance_components) {
    std::vector<std::vector<double>> cov;
    for (Index r = 0; r < vc.covariance.rows(); ++r) {
      cov.emplace_back(vc.covariance.row(r).data(), vc.covariance.row(r).data() + vc.covariance.cols());
      for (Index c = 0; c < vc.covariance.cols(); ++c) cov.back()[static_cast<std::size_t>(c)] = vc.covariance(r, c);
    }
    j["variance_components"].push_back({{"group", vc.group}, {"terms", vc.terms}, {"covariance", cov}});
  }
  j["simplification_trace"] = nlohmann::json::array();
  for (const ModelSpec& s : fit.simplification_trace) j["simplification_trace"].push_back(s.formula());
  j["caveat"] = "p-values use a normal approximation to t; no multiple-testing correction applied";
  return j.dump(2);
}

}  // namespace causalread::stats
