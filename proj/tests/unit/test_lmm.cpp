#include <doctest.h>

#include <fmt/format.h>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <random>

#include "causalread/errors.hpp"
#include "causalread/stats/lmm.hpp"
#include "fixtures.hpp"

using namespace causalread;
using namespace causalread::stats;
using causalread::testing::standard_normal;
using causalread::testing::uniform_int;

namespace {

// Crossed subjects x items, conditions rotating through all three levels.
TrialTable crossed_table(std::uint64_t seed, int subjects, int items, double item_sd, double subject_sd, double effect) {
  std::mt19937_64 rng(seed);
  std::vector<double> item_eff, subj_eff;
  for (int i = 0; i < items; ++i) item_eff.push_back(item_sd * standard_normal(rng));
  for (int s = 0; s < subjects; ++s) subj_eff.push_back(subject_sd * standard_normal(rng));
  TrialTable t{ResponseKind::RtMsPerChar, {}};
  for (int s = 0; s < subjects; ++s) {
    for (int i = 0; i < items; ++i) {
      const Condition c = kAllConditions[static_cast<std::size_t>((s + i) % 3)];
      const double shift = c == Condition::NegatedAB ? effect : (c == Condition::OmittedNilB ? effect / 2 : 0.0);
      const double log_rt = std::log(50.0) + shift + item_eff[static_cast<std::size_t>(i)] +
                            subj_eff[static_cast<std::size_t>(s)] + 0.3 * standard_normal(rng);
      t.rows.push_back({fmt::format("P{:03d}", s), fmt::format("I{:03d}", i), c, std::exp(log_rt), {}});
    }
  }
  return t;
}

ModelSpec identity_item_spec() {
  ModelSpec s;
  s.response_transform = ResponseTransform::Identity;
  s.random_terms = {RandomTerm{Grouping::Item, true, {}}};
  return s;
}

}  // namespace

TEST_CASE("formulas and the simplification ladder") {
  CHECK(item_intercept_spec().formula() == "log(response) ~ condition + (1 | item)");
  CHECK(maximal_spec().formula() == "log(response) ~ condition + (1 | subject) + (1 + condition | item)");
  const auto ladder = simplification_ladder(maximal_spec());
  // Dropping the subject intercept already leaves the intercept-only item model, so that rung is not repeated.
  REQUIRE(ladder.size() == 3);
  CHECK(ladder[1].formula() == "log(response) ~ condition + (1 | subject) + (1 | item)");
  CHECK(ladder[2].formula() == "log(response) ~ condition + (1 | item)");
  CHECK(simplification_ladder(item_intercept_spec()).size() == 1);
}

TEST_CASE("balanced one-way REML equals the ANOVA estimator") {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 25; ++trial) {
    const int g = uniform_int(rng, 5, 20);
    const int n = uniform_int(rng, 3, 10);
    const double tau = 0.2 + 1.5 * static_cast<double>(rng() % 1000) / 1000.0;
    std::vector<std::vector<double>> groups(static_cast<std::size_t>(g));
    for (auto& grp : groups) {
      const double u = tau * standard_normal(rng);
      for (int j = 0; j < n; ++j) grp.push_back(3.0 + u + standard_normal(rng));
    }
    const double expected = causalread::testing::anova_between_variance(groups);
    const MixedModelFit fit = fit_lmm(causalread::testing::one_way_table(groups), identity_item_spec());
    const double got = fit.variance_components.at(0).covariance(0, 0);
    if (expected > 0.0) {
      CHECK(std::abs(got - expected) <= 1e-6 * expected);
    } else {
      CHECK(got <= 1e-8);
    }
  }
}

TEST_CASE("zero random-effect variance reduces to ordinary least squares") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const TrialTable t = crossed_table(seed, 6, 9, 0.2, 0.1, 0.15);
    LmmOptions opts;
    opts.fixed_theta = Eigen::VectorXd::Zero(2);
    ModelSpec spec = item_intercept_spec();
    spec.random_terms.insert(spec.random_terms.begin(), RandomTerm{Grouping::Subject, true, {}});
    const MixedModelFit fit = fit_lmm(t, spec, opts);

    Eigen::MatrixXd x(static_cast<Eigen::Index>(t.rows.size()), 3);
    Eigen::VectorXd y(x.rows());
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      x(r, 0) = 1.0;
      x(r, 1) = t.rows[i].condition == Condition::NegatedAB ? 1.0 : 0.0;
      x(r, 2) = t.rows[i].condition == Condition::OmittedNilB ? 1.0 : 0.0;
      y(r) = std::log(t.rows[i].response);
    }
    const Eigen::VectorXd b = causalread::testing::ols(x, y);
    for (Eigen::Index j = 0; j < 3; ++j) CHECK(std::abs(fit.beta(j) - b(j)) <= 1e-8 * (1.0 + std::abs(b(j))));
    const Eigen::VectorXd resid = y - x * b;
    CHECK(fit.sigma2 == doctest::Approx(resid.squaredNorm() / static_cast<double>(x.rows() - 3)).epsilon(1e-10));
  }
}

TEST_CASE("rescaling reading times only shifts the intercept") {
  const TrialTable t = crossed_table(3, 12, 12, 0.2, 0.15, 0.2);
  TrialTable scaled = t;
  for (TrialRow& r : scaled.rows) r.response *= 7.5;
  const MixedModelFit a = fit_lmm(t, item_intercept_spec());
  const MixedModelFit b = fit_lmm(scaled, item_intercept_spec());
  CHECK(std::abs(a.beta(1) - b.beta(1)) <= 1e-8);
  CHECK(std::abs(a.beta(2) - b.beta(2)) <= 1e-8);
  CHECK(std::abs(b.beta(0) - a.beta(0) - std::log(7.5)) <= 1e-8);
}

TEST_CASE("row order does not change the fit") {
  const TrialTable t = crossed_table(5, 10, 12, 0.25, 0.2, 0.1);
  const MixedModelFit ref = fit_lmm(t, simplification_ladder(maximal_spec())[1]);
  std::mt19937_64 rng(9);
  for (int k = 0; k < 3; ++k) {
    TrialTable shuffled = t;
    std::shuffle(shuffled.rows.begin(), shuffled.rows.end(), rng);
    const MixedModelFit f = fit_lmm(shuffled, simplification_ladder(maximal_spec())[1]);
    CHECK((f.beta - ref.beta).lpNorm<Eigen::Infinity>() <= 1e-12);
    CHECK(std::abs(f.reml_criterion - ref.reml_criterion) <= 1e-12 * std::abs(ref.reml_criterion));
  }
}

TEST_CASE("swapping reference and comparison negates the contrast") {
  for (std::uint64_t seed = 11; seed <= 15; ++seed) {
    const TrialTable t = crossed_table(seed, 9, 15, 0.2, 0.0, 0.25);
    const auto ab = contrast(t, Condition::AffirmedAB, Condition::NegatedAB, item_intercept_spec());
    const auto ba = contrast(t, Condition::NegatedAB, Condition::AffirmedAB, item_intercept_spec());
    CHECK(ab.estimate.b == doctest::Approx(-ba.estimate.b).epsilon(1e-6));
    CHECK(ab.estimate.se == doctest::Approx(ba.estimate.se).epsilon(1e-5));
    CHECK(ab.estimate.name == "condition[notA->B]");
    CHECK(ab.fit.n_obs == 2 * t.rows.size() / 3);
  }
}

TEST_CASE("optimizer never ends above its starting criterion") {
  for (std::uint64_t seed = 20; seed <= 24; ++seed) {
    const TrialTable t = crossed_table(seed, 8, 12, 0.3, 0.2, 0.1);
    const MixedModelFit f = fit_with_simplification(t, maximal_spec());
    CHECK(f.reml_criterion <= f.initial_criterion + 1e-10);
    CHECK(f.converged);
    CHECK_FALSE(f.simplification_trace.empty());
  }
}

TEST_CASE("estimates report normal-approximation p-values") {
  const TrialTable t = crossed_table(31, 20, 24, 0.2, 0.1, 0.3);
  const MixedModelFit f = fit_lmm(t, item_intercept_spec());
  const FixedEffectEstimate& e = f.estimate("condition[notA->B]");
  CHECK(e.t == doctest::Approx(e.b / e.se));
  CHECK(e.p == doctest::Approx(std::erfc(std::abs(e.t) / std::sqrt(2.0))).epsilon(1e-9));
  CHECK(e.sign_code == "***");
  CHECK_THROWS_AS((void)f.estimate("nope"), std::out_of_range);
  const auto report = nlohmann::json::parse(fit_report_json(f, "Human"));
  CHECK(report["label"] == "Human");
  CHECK(report["p_method"] == "normal");
  CHECK(report["spec"]["formula"] == "log(response) ~ condition + (1 | item)");
}

TEST_CASE("absent item variance triggers simplification to a singular fallback") {
  // Items carry no signal at all, so every rung is singular.
  const TrialTable t = crossed_table(40, 12, 12, 0.0, 0.0, 0.1);
  const MixedModelFit f = fit_with_simplification(t, maximal_spec());
  CHECK(f.simplification_trace.size() >= 2);
  CHECK(f.simplification_trace.front() == maximal_spec());
}

TEST_CASE("fit errors") {
  const TrialTable t = crossed_table(50, 6, 6, 0.2, 0.1, 0.1);
  CHECK_THROWS_AS(fit_lmm(subset(t, std::vector{Condition::NegatedAB, Condition::OmittedNilB}), item_intercept_spec()),
                  MissingCondition);
  CHECK_THROWS_AS(contrast(subset(t, std::vector{Condition::NegatedAB}), Condition::AffirmedAB, Condition::NegatedAB,
                           item_intercept_spec()),
                  MissingCondition);

  TrialTable one_item = t;
  for (TrialRow& r : one_item.rows) r.item_id = "I";
  CHECK_THROWS_AS(fit_lmm(one_item, item_intercept_spec()), TooFewGroups);

  TrialTable collinear = t;
  for (TrialRow& r : collinear.rows) r.covariates["len"] = r.condition == Condition::NegatedAB ? 2.0 : 0.0;
  for (TrialRow& r : collinear.rows) {
    if (r.condition == Condition::OmittedNilB) r.covariates["len"] = 0.0;
  }
  ModelSpec cov = item_intercept_spec();
  cov.fixed_terms.push_back(FixedTerm{"len"});
  CHECK_THROWS_AS(fit_lmm(collinear, cov), RankDeficient);

  TrialTable negative = t;
  negative.response_kind = ResponseKind::SurprisalNats;
  negative.rows[0].response = -1.0;
  CHECK_THROWS_AS(fit_lmm(negative, item_intercept_spec()), InvalidTable);

  LmmOptions bad;
  bad.fixed_theta = Eigen::VectorXd::Zero(5);
  CHECK_THROWS_AS(fit_lmm(t, item_intercept_spec(), bad), InvalidTable);
}

TEST_CASE("REML criterion is finite on the boundary and matches the solve") {
  const TrialTable t = crossed_table(60, 8, 10, 0.2, 0.2, 0.1);
  LmmOptions opts;
  opts.fixed_theta = Eigen::VectorXd::Constant(1, 0.5);
  const MixedModelFit f = fit_lmm(t, item_intercept_spec(), opts);
  CHECK(std::isfinite(f.reml_criterion));
  CHECK(f.reml_criterion == doctest::Approx(f.initial_criterion));
  opts.fixed_theta = Eigen::VectorXd::Zero(1);
  CHECK(std::isfinite(fit_lmm(t, item_intercept_spec(), opts).reml_criterion));
}

TEST_CASE("Wald intervals cover the generating effect at roughly the nominal rate") {
  int covered = 0;
  const int reps = 60;
  for (int r = 0; r < reps; ++r) {
    const TrialTable t = crossed_table(1000 + static_cast<std::uint64_t>(r), 9, 12, 0.2, 0.0, 0.2);
    const auto c = contrast(t, Condition::AffirmedAB, Condition::NegatedAB, item_intercept_spec());
    if (std::abs(c.estimate.b - 0.2) <= 1.959963984540054 * c.estimate.se) ++covered;
  }
  CHECK(covered >= 50);
}
