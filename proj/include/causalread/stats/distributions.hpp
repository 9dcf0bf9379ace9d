#pragma once

#include <cmath>

namespace causalread::stats {

template <typename Scalar>
Scalar normal_cdf(Scalar x) {
  using std::erfc;
  using std::sqrt;
  return Scalar(0.5) * erfc(-x / sqrt(Scalar(2)));
}

/// Two-sided p-value of a standard-normal statistic.
template <typename Scalar>
Scalar two_sided_normal_p(Scalar z) {
  using std::abs;
  using std::erfc;
  using std::sqrt;
  return erfc(abs(z) / sqrt(Scalar(2)));
}

template <typename Scalar>
Scalar logistic(Scalar x) {
  using std::exp;
  if (x >= Scalar(0)) return Scalar(1) / (Scalar(1) + exp(-x));
  const Scalar e = exp(x);
  return e / (Scalar(1) + e);
}

}  // namespace causalread::stats
