// Acceptance suite: one PASS/FAIL line per primary criterion.

#include <fmt/format.h>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>

#include "causalread/cli.hpp"
#include "causalread/csv.hpp"
#include "causalread/errors.hpp"
#include "causalread/reference_backend.hpp"
#include "causalread/report.hpp"
#include "causalread/scoring.hpp"
#include "causalread/stats/lmm.hpp"
#include "causalread/stats/ordinal.hpp"
#include "causalread/stats/prepare.hpp"
#include "fixtures.hpp"

using namespace causalread;
using namespace causalread::stats;
namespace t = causalread::testing;

namespace {

const std::string kData = CAUSALREAD_DATA_DIR;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

Outcome anova_oracle() {
  const auto start = std::chrono::steady_clock::now();
  std::mt19937_64 rng(2024);
  double worst = 0.0;
  int failures = 0;
  for (int d = 0; d < 50; ++d) {
    const int g = t::uniform_int(rng, 5, 20);
    const int n = t::uniform_int(rng, 3, 10);
    const double tau = 0.1 + 2.0 * static_cast<double>(rng() % 1000) / 1000.0;
    std::vector<std::vector<double>> groups(static_cast<std::size_t>(g));
    for (auto& grp : groups) {
      const double u = tau * t::standard_normal(rng);
      for (int j = 0; j < n; ++j) grp.push_back(10.0 + u + t::standard_normal(rng));
    }
    const double expected = t::anova_between_variance(groups);
    ModelSpec spec;
    spec.response_transform = ResponseTransform::Identity;
    spec.random_terms = {RandomTerm{Grouping::Item, true, {}}};
    double got = 0.0;
    try {
      got = fit_lmm(t::one_way_table(groups), spec).variance_components.at(0).covariance(0, 0);
    } catch (const std::exception&) {
      ++failures;
      continue;
    }
    // A zero estimate has no relative scale; the boundary is compared absolutely.
    const double err = expected > 0.0 ? std::abs(got - expected) / expected : std::abs(got);
    worst = std::max(worst, err);
  }
  const double secs = seconds_since(start);
  return {failures == 0 && worst <= 1e-6 && secs < 10.0,
          fmt::format("50 designs, max relative error {:.2e} (tol 1e-6), {} fit failures, {:.2f} s (limit 10 s)", worst,
                      failures, secs)};
}

Outcome ols_degeneration() {
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    std::mt19937_64 rng(seed);
    const int items = t::uniform_int(rng, 6, 15);
    const int subjects = t::uniform_int(rng, 4, 12);
    TrialTable tab{ResponseKind::RtMsPerChar, {}};
    for (int s = 0; s < subjects; ++s) {
      for (int i = 0; i < items; ++i) {
        const Condition c = kAllConditions[static_cast<std::size_t>((s + i) % 3)];
        const double v = std::exp(3.5 + 0.2 * static_cast<int>(c) + 0.3 * t::standard_normal(rng));
        tab.rows.push_back({fmt::format("P{}", s), fmt::format("I{}", i), c, v, {}});
      }
    }
    ModelSpec spec = maximal_spec();
    LmmOptions opts;
    opts.fixed_theta = Eigen::VectorXd::Zero(7);  // subject intercept, 3x3 item factor
    const MixedModelFit fit = fit_lmm(tab, spec, opts);

    Eigen::MatrixXd x(static_cast<Eigen::Index>(tab.rows.size()), 3);
    Eigen::VectorXd y(x.rows());
    for (std::size_t r = 0; r < tab.rows.size(); ++r) {
      const auto i = static_cast<Eigen::Index>(r);
      x(i, 0) = 1.0;
      x(i, 1) = tab.rows[r].condition == Condition::NegatedAB;
      x(i, 2) = tab.rows[r].condition == Condition::OmittedNilB;
      y(i) = std::log(tab.rows[r].response);
    }
    const Eigen::VectorXd b = t::ols(x, y);
    worst = std::max(worst, (fit.beta - b).lpNorm<Eigen::Infinity>());
  }
  return {worst <= 1e-8, fmt::format("20 datasets, max |beta - beta_ols| = {:.2e} (tol 1e-8)", worst)};
}

struct RecoveryRun {
  double b = 0.0;
  double t = 0.0;
};

RecoveryRun simulate_and_fit(const t::TempDir& dir, std::uint64_t seed, double b) {
  const auto run_dir = dir / fmt::format("seed{}_{}", seed, b);
  const auto sim = t::run_cli({"simulate", "--seed", std::to_string(seed), "--b", fmt::format("{}", b), "--item-sd",
                               "0.1", "--residual-sd", "0.3", "--items", "20", "--subjects", "80", "--out",
                               run_dir.string()});
  if (sim.code != 0) throw std::runtime_error("simulate failed: " + sim.err);
  const auto fit = t::run_cli({"analyze", "--table", (run_dir / "trials.csv").string(), "--random", "item",
                               "--contrast", "rq1", "--out", (run_dir / "fit").string()});
  if (fit.code != 0) throw std::runtime_error("analyze failed: " + fit.err);
  const auto rows = report::parse_contrast_csv(t::read_text(run_dir / "fit" / "rq1.csv"));
  if (rows.size() != 1 || rows[0].failure) throw std::runtime_error("no contrast row");
  return {rows[0].b, rows[0].t};
}

Outcome parameter_recovery() {
  const auto start = std::chrono::steady_clock::now();
  t::TempDir dir("recovery");
  double sum_b = 0.0;
  int significant = 0, null_significant = 0;
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    const RecoveryRun r = simulate_and_fit(dir, seed, 0.21);
    sum_b += r.b;
    if (r.t > 2.0) ++significant;
    const RecoveryRun n = simulate_and_fit(dir, 1000 + seed, 0.0);
    if (std::abs(n.t) > 2.0) ++null_significant;
  }
  const double mean_b = sum_b / 100.0;
  const double secs = seconds_since(start);
  return {std::abs(mean_b - 0.21) <= 0.02 && significant >= 95 && null_significant <= 10 && secs < 120.0,
          fmt::format("mean b = {:.4f} (truth 0.21 +/- 0.02), t > 2 in {}/100 (need >= 95), null |t| > 2 in {}/100 "
                      "(need <= 10), {:.1f} s (limit 120 s)",
                      mean_b, significant, null_significant, secs)};
}

std::vector<std::string> split_ws(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

Outcome surprisal_oracle() {
  const Corpus c = load_corpus(kData + "/csk_mini.json", CorpusFormat::CSKJson);
  std::vector<std::string> seed;
  for (const StoryTemplate& st : c.stories) seed.push_back(realize(st, Condition::AffirmedAB).full_text);

  // Bigram counts from plain whitespace splitting.
  std::map<std::pair<std::string, std::string>, double> pair;
  std::map<std::string, double> context;
  std::map<std::string, int> types;
  for (const std::string& text : seed) {
    std::string prev = "<s>";
    for (const std::string& w : split_ws(text)) {
      pair[{prev, w}] += 1.0;
      context[prev] += 1.0;
      types[w] = 1;
      prev = w;
    }
  }
  const double v = static_cast<double>(types.size()) + 1.0;
  auto nll = [&](const std::string& prev, const std::string& w) {
    const auto p = pair.find({prev, w});
    const auto ctx = context.find(prev);
    return -std::log(((p == pair.end() ? 0.0 : p->second) + 1.0) / ((ctx == context.end() ? 0.0 : ctx->second) + v));
  };

  ReferenceBackend ref(seed);
  double worst_total = 0.0, worst_word = 0.0;
  int pairs = 0;
  for (const StoryTemplate& st : c.stories) {
    for (Condition cond : kAllConditions) {
      const RealizedStory r = realize(st, cond);
      const RegionScore s = score_clm(ref, r);
      const std::vector<std::string> before = split_ws(r.context_before_b);
      std::string prev = before.empty() ? "<s>" : before.back();
      double total = 0.0;
      for (const std::string& w : split_ws(r.region_b_text())) {
        total += nll(prev, w);
        prev = w;
      }
      worst_total = std::max(worst_total, std::abs(s.total_nll - total));

      // Per-word mean rebuilt from raw token rows: a token belongs to the
      // region word containing its first character.
      const std::u32string cps = utf8::decode(r.full_text);
      std::vector<std::pair<std::size_t, std::size_t>> words;
      std::size_t k = r.region_b_abs.start;
      while (k < r.region_b_abs.end) {
        while (k < r.region_b_abs.end && cps[k] == U' ') ++k;
        if (k == r.region_b_abs.end) break;
        const std::size_t w0 = k;
        while (k < r.region_b_abs.end && cps[k] != U' ') ++k;
        words.emplace_back(w0, k);
      }
      std::vector<double> word_sum(words.size(), 0.0);
      for (const TokenScore& tok : s.token_scores) {
        for (std::size_t w = 0; w < words.size(); ++w) {
          if (tok.char_span.start >= words[w].first && tok.char_span.start < words[w].second) word_sum[w] += tok.surprisal_nats;
        }
      }
      double mean = 0.0;
      for (double x : word_sum) mean += x;
      mean /= static_cast<double>(words.size());
      worst_word = std::max(worst_word, std::abs(s.mean_per_word_surprisal - mean));
      ++pairs;
    }
  }
  return {pairs == 6 && worst_total <= 1e-12 && worst_word <= 1e-12,
          fmt::format("{} story x condition regions, max |total_nll - oracle| = {:.1e}, max per-word deviation {:.1e} "
                      "(tol 1e-12)",
                      pairs, worst_total, worst_word)};
}

Outcome directional() {
  t::TempDir dir("directional");
  const Corpus corpus = t::directional_corpus(21, 77);
  t::write_text(dir / "corpus.json", write_corpus(corpus));
  const auto scored = t::run_cli({"score", "--corpus", (dir / "corpus.json").string(), "--backend", "ref", "--out",
                                  (dir / "scores").string()});
  if (scored.code != 0) return {false, "score failed: " + scored.err};
  auto rq1 = [&](const std::filesystem::path& summary, const std::string& tag) -> report::ContrastRow {
    const auto r = t::run_cli({"analyze", "--scores", summary.string(), "--contrast", "rq1", "--out", (dir / tag).string()});
    if (r.code != 0) throw std::runtime_error("analyze failed: " + r.err);
    return report::parse_contrast_csv(t::read_text(dir / tag / "rq1.csv")).at(0);
  };
  const report::ContrastRow real = rq1(dir / "scores" / "summary.csv", "fit");
  const bool real_ok = real.b > 0 && report::significance_rank(real.sign_code) >= report::significance_rank("*");

  // Permute condition labels among each story's rows.
  const std::string summary_text = t::read_text(dir / "scores" / "summary.csv");
  csv::Table table = csv::parse(summary_text);
  const std::size_t c_story = table.column("story_id"), c_cond = table.column("condition");
  int ns = 0;
  std::vector<std::string> codes;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    std::mt19937_64 rng(seed);
    csv::Table perm = table;
    std::map<std::string, std::vector<std::size_t>> by_story;
    for (std::size_t i = 0; i < perm.rows.size(); ++i) by_story[perm.rows[i][c_story]].push_back(i);
    for (auto& [story, idx] : by_story) {
      std::vector<std::string> labels;
      for (std::size_t i : idx) labels.push_back(table.rows[i][c_cond]);
      for (std::size_t i = labels.size() - 1; i > 0; --i) std::swap(labels[i], labels[rng() % (i + 1)]);
      for (std::size_t j = 0; j < idx.size(); ++j) perm.rows[idx[j]][c_cond] = labels[j];
    }
    std::string text = csv::row(perm.header);
    for (const auto& r : perm.rows) text += csv::row(r);
    const auto path = dir / fmt::format("perm{}.csv", seed);
    t::write_text(path, text);
    const report::ContrastRow row = rq1(path, fmt::format("perm{}", seed));
    codes.push_back(row.sign_code);
    if (row.sign_code == "n.s.") ++ns;
  }
  std::string code_list;
  for (const std::string& c : codes) code_list += (code_list.empty() ? "" : " ") + c;
  return {real_ok && ns >= 18,
          fmt::format("RQ1 b = {:.3f}, t = {:.2f}, code {} (need b > 0 and * or better); permuted n.s. in {}/20 "
                      "(need >= 18) [{}]",
                      real.b, real.t, real.sign_code, ns, code_list)};
}

Outcome significance_codes() {
  struct Case {
    double p;
    const char* code;
  };
  const std::vector<Case> cases{{0.1, "n.s."},    {0.0999999, "."}, {0.05, "."},      {0.0499999, "*"},
                                {0.01, "*"},      {0.0099999, "**"}, {0.001, "**"},   {0.0009999, "***"},
                                {0.0, "***"},     {1.0, "n.s."}};
  int bad = 0;
  for (const Case& c : cases) {
    if (report::significance_code(c.p) != c.code) ++bad;
  }
  return {bad == 0, fmt::format("{} boundary values checked, {} mismatches", cases.size(), bad)};
}

Outcome exclusion_filter() {
  const Corpus corpus = t::synthetic_corpus(3, 5);
  auto events_for = [&](const std::vector<std::int64_t>& rts, std::vector<SessionPlan>& plans) {
    std::vector<ChunkEvent> events;
    for (std::size_t i = 0; i < rts.size(); ++i) {
      if (i % 3 == 0) {
        const std::string id = fmt::format("S{:05d}", i / 3 + 1);
        plans.push_back({id, fmt::format("P{}", i / 3), 0, static_cast<std::int64_t>(i / 3),
                         plan_trials(corpus, static_cast<std::int64_t>(i / 3), 1), 0});
      }
      const SessionPlan& plan = plans.back();
      const TrialAssignment& tr = plan.trials[i % 3];
      const RealizedStory r = realize(*corpus.find(tr.story_id), tr.condition);
      events.push_back({plan.session_id, i % 3, r.chunk_b_index(), 0, rts[i], rts[i], 0});
    }
    return events;
  };

  std::vector<SessionPlan> p1;
  const std::vector<std::int64_t> edge{99, 100, 50000, 50001, 100, 50000};
  const auto e1 = events_for(edge, p1);
  const RtPreparation r1 = prepare_rt_table(e1, p1, corpus);
  const bool partition_ok = r1.rt_excluded == 2 && r1.table.rows.size() == 4 && r1.total_trials == 6;

  std::vector<std::int64_t> rts(717, 2500);
  for (std::size_t i = 0; i < 13; ++i) rts[i * 50] = i % 2 ? 99 : 50001;
  rts[3] = 100;
  rts[4] = 50000;
  std::vector<SessionPlan> p2;
  const auto e2 = events_for(rts, p2);
  const RtPreparation r2 = prepare_rt_table(e2, p2, corpus);
  const std::string loss = fmt::format("{:.2f}", r2.loss_percent);
  const bool loss_ok = r2.rt_excluded == 13 && r2.table.rows.size() == 704 && loss == "1.81";
  return {partition_ok && loss_ok,
          fmt::format("99/100/50000/50001 set: kept {} of {}, excluded {}; 717-trial set: excluded {}, kept {}, loss {}% "
                      "(expect 1.81%)",
                      r1.table.rows.size(), r1.total_trials, r1.rt_excluded, r2.rt_excluded, r2.table.rows.size(), loss)};
}

Outcome ordinal_oracle() {
  std::mt19937_64 rng(99);
  auto logistic_noise = [&] {
    const double u = (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
    return std::log(u / (1.0 - u));
  };
  double worst = 0.0;
  for (int d = 0; d < 20; ++d) {
    const int n = t::uniform_int(rng, 60, 300);
    Eigen::MatrixXd x(n, 2);
    std::vector<int> y;
    for (int i = 0; i < n; ++i) {
      x(i, 0) = t::standard_normal(rng);
      x(i, 1) = i % 3 == 0;
      y.push_back(0.7 * x(i, 0) - 0.4 * x(i, 1) + logistic_noise() > 0.3 ? 1 : 0);
    }
    const OrdinalFit fit = fit_clm_ordinal(y, x, {"x1", "x2"});
    const Eigen::VectorXd irls = t::logistic_irls(x, y);
    worst = std::max({worst, std::abs(-fit.thresholds(0) - irls(0)), std::abs(fit.coefficients[0].b - irls(1)),
                      std::abs(fit.coefficients[1].b - irls(2))});
  }
  int increasing = 0;
  const int sims = 20;
  const std::vector<double> cuts{-2.0, -1.2, -0.5, 0.0, 0.5, 1.1, 1.9};
  for (int d = 0; d < sims; ++d) {
    TrialTable tab{ResponseKind::Likert0to7, {}};
    for (int i = 0; i < 240; ++i) {
      const Condition c = kAllConditions[static_cast<std::size_t>(i % 3)];
      const double latent = (c == Condition::NegatedAB ? -1.0 : 0.0) + logistic_noise();
      int k = 0;
      while (k < 7 && latent > cuts[static_cast<std::size_t>(k)]) ++k;
      tab.rows.push_back({fmt::format("P{}", i / 3), "x", c, static_cast<double>(k), {}});
    }
    const OrdinalFit fit = fit_clm_ordinal(tab, Condition::AffirmedAB);
    bool ok = fit.thresholds.size() >= 1;
    for (Eigen::Index k = 1; k < fit.thresholds.size(); ++k) ok = ok && fit.thresholds(k) > fit.thresholds(k - 1);
    if (ok) ++increasing;
  }
  return {worst <= 1e-6 && increasing == sims,
          fmt::format("2-category max |clm - logistic| = {:.2e} over 20 datasets (tol 1e-6); strictly increasing "
                      "thresholds in {}/{} Likert fits",
                      worst, increasing, sims)};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"mixed-model oracle equivalence", anova_oracle},
      {"OLS degeneration", ols_degeneration},
      {"parameter recovery", parameter_recovery},
      {"surprisal pipeline oracle", surprisal_oracle},
      {"end-to-end directional test", directional},
      {"significance codes", significance_codes},
      {"exclusion filter", exclusion_filter},
      {"ordinal oracle", ordinal_oracle},
  };
  int failed = 0;
  for (const auto& [name, check] : criteria) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::cout << (o.pass ? "PASS" : "FAIL") << " " << name << ": " << o.detail << std::endl;
  }
  std::cout << fmt::format("{} of {} criteria passed", criteria.size() - static_cast<std::size_t>(failed), criteria.size())
            << std::endl;
  return failed == 0 ? 0 : 1;
}
