#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

namespace causalread::stats {

template <typename Scalar>
struct NelderMeadOptions {
  Scalar ftol = Scalar(1e-8);  ///< stop when the simplex's criterion range drops below this
  Scalar xtol = Scalar(1e-10);
  int max_evaluations = 10000;
  Scalar initial_step = Scalar(0.5);
  /// Seeds for the randomly oriented restart simplices; the first run uses an
  /// axis-aligned simplex.
  std::vector<std::uint64_t> restart_seeds{1, 2};
};

template <typename Scalar>
struct NelderMeadResult {
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> x;
  Scalar value = std::numeric_limits<Scalar>::infinity();
  int evaluations = 0;
  int runs = 0;
  bool converged = false;  ///< false when the evaluation cap was hit
};

/// Box-constrained Nelder-Mead. Trial points are projected onto
/// [lower, upper] before evaluation. After the first run the search restarts
/// from the incumbent with a freshly oriented, smaller simplex, once per seed;
/// restarts stop early when one fails to improve by more than ftol.
template <typename Scalar>
NelderMeadResult<Scalar> minimize_nelder_mead(
    const std::function<Scalar(const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>&)>& f,
    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& x0, const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& lower,
    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& upper, const NelderMeadOptions<Scalar>& opt = {}) {
  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  const Eigen::Index n = x0.size();
  NelderMeadResult<Scalar> result;

  auto project = [&](Vec x) { return x.cwiseMax(lower).cwiseMin(upper).eval(); };
  auto eval = [&](const Vec& x) {
    ++result.evaluations;
    const Scalar v = f(x);
    return std::isnan(v) ? std::numeric_limits<Scalar>::infinity() : v;
  };

  result.x = project(x0);
  result.value = eval(result.x);
  if (n == 0) {
    result.converged = true;
    return result;
  }

  // One Nelder-Mead run from `start` with simplex edges given by the columns of `dirs`.
  auto run = [&](const Vec& start, Scalar start_value, const Mat& dirs) -> bool {
    Mat pts(n, n + 1);
    Vec vals(n + 1);
    pts.col(0) = start;
    vals(0) = start_value;
    for (Eigen::Index j = 0; j < n; ++j) {
      Vec p = project(start + dirs.col(j));
      if ((p - start).norm() == Scalar(0)) p = project(start - dirs.col(j));
      pts.col(j + 1) = p;
      vals(j + 1) = eval(p);
    }
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n + 1));
    for (;;) {
      std::iota(order.begin(), order.end(), Eigen::Index{0});
      std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return vals(a) < vals(b); });
      const Eigen::Index best = order.front(), worst = order.back(), second = order[order.size() - 2];
      Scalar diameter = 0;
      for (Eigen::Index j = 0; j <= n; ++j) diameter = std::max(diameter, (pts.col(j) - pts.col(best)).template lpNorm<Eigen::Infinity>());
      const bool flat = std::isfinite(vals(worst)) && vals(worst) - vals(best) < opt.ftol;
      if (flat || diameter < opt.xtol) {
        if (vals(best) < result.value) {
          result.value = vals(best);
          result.x = pts.col(best);
        }
        return true;
      }
      if (result.evaluations >= opt.max_evaluations) {
        if (vals(best) < result.value) {
          result.value = vals(best);
          result.x = pts.col(best);
        }
        return false;
      }
      Vec centroid = (pts.rowwise().sum() - pts.col(worst)) / Scalar(n);
      const Vec xr = project(centroid + (centroid - pts.col(worst)));
      const Scalar fr = eval(xr);
      if (fr < vals(best)) {
        const Vec xe = project(centroid + Scalar(2) * (centroid - pts.col(worst)));
        const Scalar fe = eval(xe);
        if (fe < fr) {
          pts.col(worst) = xe;
          vals(worst) = fe;
        } else {
          pts.col(worst) = xr;
          vals(worst) = fr;
        }
        continue;
      }
      if (fr < vals(second)) {
        pts.col(worst) = xr;
        vals(worst) = fr;
        continue;
      }
      const bool outside = fr < vals(worst);
      const Vec xc = outside ? project(centroid + Scalar(0.5) * (xr - centroid))
                             : project(centroid + Scalar(0.5) * (pts.col(worst) - centroid));
      const Scalar fc = eval(xc);
      if (fc < (outside ? fr : vals(worst))) {
        pts.col(worst) = xc;
        vals(worst) = fc;
        continue;
      }
      for (Eigen::Index j = 0; j <= n; ++j) {
        if (j == best) continue;
        pts.col(j) = project(pts.col(best) + Scalar(0.5) * (pts.col(j) - pts.col(best)));
        vals(j) = eval(pts.col(j));
      }
    }
  };

  result.converged = run(result.x, result.value, Mat::Identity(n, n) * opt.initial_step);
  result.runs = 1;
  Scalar step = opt.initial_step;
  for (std::uint64_t seed : opt.restart_seeds) {
    if (!result.converged) break;
    step *= Scalar(0.2);
    // Random orthonormal orientation from a fixed seed; raw engine output keeps
    // it identical across standard libraries.
    std::mt19937_64 rng(seed);
    Mat g(n, n);
    for (Eigen::Index i = 0; i < g.size(); ++i) {
      g.data()[i] = static_cast<Scalar>(rng() >> 11) * Scalar(0x1.0p-53) - Scalar(0.5);
    }
    Mat q = Eigen::HouseholderQR<Mat>(g).householderQ();
    const Scalar before = result.value;
    result.converged = run(result.x, result.value, q * step);
    ++result.runs;
    if (before - result.value <= opt.ftol) break;
  }
  return result;
}

}  // namespace causalread::stats
