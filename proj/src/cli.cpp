#include "causalread/cli.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <pthread.h>

#include <algorithm>
#include <cmath>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <thread>
#include <json.hpp>

#include "causalread/corpus.hpp"
#include "causalread/csv.hpp"
#include "causalread/errors.hpp"
#include "causalread/experiment.hpp"
#include "causalread/experiment_server.hpp"
#include "causalread/hash.hpp"
#include "causalread/http_backend.hpp"
#include "causalread/reference_backend.hpp"
#include "causalread/report.hpp"
#include "causalread/scoring.hpp"
#include "causalread/stats/lmm.hpp"
#include "causalread/stats/ordinal.hpp"
#include "causalread/stats/prepare.hpp"

namespace causalread::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

/// Bad flags, missing inputs and other invocation mistakes (exit 2).
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

constexpr std::string_view kBackends = "ref, remote, completions";

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError(fmt::format("cannot read '{}'", path));
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << content;
  if (!out) throw std::runtime_error(fmt::format("cannot write '{}'", path.string()));
}

void require_file(const std::string& path, std::string_view flag) {
  if (path.empty()) throw UsageError(fmt::format("{} is required", flag));
  if (!fs::exists(path)) throw UsageError(fmt::format("{} '{}' does not exist", flag, path));
}

Corpus load_any_corpus(const std::string& path) {
  const CorpusFormat format = fs::path(path).extension() == ".jsonl" ? CorpusFormat::TRIPJson : CorpusFormat::CSKJson;
  return load_corpus(path, format);
}

std::vector<Condition> parse_conditions(const std::string& text) {
  if (text.empty()) return {kAllConditions.begin(), kAllConditions.end()};
  std::vector<Condition> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      const Condition c = parse_condition(item);
      if (std::find(out.begin(), out.end(), c) == out.end()) out.push_back(c);
    } catch (const ParseError&) {
      throw UsageError(fmt::format("unknown condition '{}' (expected A->B, notA->B, nil->B)", item));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// score

struct ScoreArgs {
  std::string corpus;
  std::string backend = "ref";
  std::string endpoint;
  std::string model;
  std::string mode = "clm";
  std::string conditions;
  std::string cache;
  std::string out = ".";
  std::string seed_corpus;
  std::uint64_t seed = 0;
  bool shorten = false;
  std::size_t max_in_flight = 4;
  double rate_limit = 0.0;
};

int cmd_score(const ScoreArgs& a, std::ostream& out, std::ostream& err) {
  if (a.backend != "ref" && a.backend != "remote" && a.backend != "completions") {
    throw UsageError(fmt::format("unknown backend '{}'; available backends: {}", a.backend, kBackends));
  }
  require_file(a.corpus, "--corpus");
  ScoringMode mode;
  try {
    mode = parse_scoring_mode(a.mode);
  } catch (const Error&) {
    throw UsageError(fmt::format("unknown mode '{}' (expected clm or mlm)", a.mode));
  }
  const Corpus corpus = load_any_corpus(a.corpus);

  std::unique_ptr<ScoringBackend> backend;
  if (a.backend == "ref") {
    const Corpus seed_source = a.seed_corpus.empty() ? corpus : load_any_corpus(a.seed_corpus);
    backend = std::make_unique<ReferenceBackend>(reference_seed(seed_source));
  } else {
    if (a.endpoint.empty()) throw UsageError(fmt::format("backend '{}' needs --endpoint", a.backend));
    BackendDescriptor d;
    d.name = a.model.empty() ? a.backend : a.model;
    d.endpoint.base_url = a.endpoint;
    d.endpoint.max_in_flight = std::max<std::size_t>(1, a.max_in_flight);
    d.endpoint.rate_limit_per_second = a.rate_limit;
    if (a.backend == "remote") {
      d.supports_mlm = true;
      backend = std::make_unique<RemoteBackend>(d);
    } else {
      backend = std::make_unique<CompletionsBackend>(d, a.model);
    }
  }
  if (mode == ScoringMode::MLM && !backend->descriptor().supports_mlm) {
    throw UsageError(fmt::format("backend '{}' does not support mlm scoring", backend->descriptor().name));
  }

  ScoreCorpusOptions opts;
  opts.conditions = parse_conditions(a.conditions);
  opts.mode = mode;
  opts.shorten = a.shorten;
  if (!a.cache.empty()) opts.cache_dir = a.cache;

  const json config = {{"command", "score"},  {"corpus", a.corpus},         {"backend", a.backend},
                       {"endpoint", a.endpoint}, {"model", a.model},        {"mode", a.mode},
                       {"conditions", a.conditions}, {"shorten", a.shorten}, {"seed_corpus", a.seed_corpus},
                       {"fingerprint", backend->fingerprint()}};
  const std::string meta = metadata_comment(config.dump(), a.seed);

  const CorpusScores result = score_corpus(*backend, corpus, opts);
  const std::string dataset = a.shorten ? shorten_distance(corpus).name : corpus.name;
  write_file(fs::path(a.out) / "summary.csv", region_summary_csv(result.scores, dataset, meta));
  write_file(fs::path(a.out) / "token_scores.csv", token_scores_csv(result.scores, meta));
  out << fmt::format("scored {} regions of '{}' with {} ({}); {} failures\n", result.scores.size(), dataset,
                     backend->descriptor().name, to_string(mode), result.failures.size());
  for (const ScoreFailure& f : result.failures) {
    err << fmt::format("failed: {} {}: {}\n", f.story_id, to_label(f.condition), f.error);
  }
  return result.failures.empty() ? kExitOk : kExitRuntime;
}

// ---------------------------------------------------------------------------
// analyze

struct AnalyzeArgs {
  std::string scores;
  std::string trials;
  std::string corpus;
  std::string table;
  std::string ratings;
  std::string aggregate = "per_word";
  std::string random = "maximal";
  std::string contrast = "all";
  std::string p_method = "normal";
  std::string out = ".";
  std::string label;
  std::uint64_t seed = 0;
};

struct ContrastPlan {
  Condition reference;
  Condition comparison;
  bool rq1;
};

std::vector<ContrastPlan> contrast_plans(const std::string& which) {
  const ContrastPlan rq1{Condition::AffirmedAB, Condition::NegatedAB, true};
  const std::vector<ContrastPlan> rq2{{Condition::OmittedNilB, Condition::NegatedAB, false},
                                     {Condition::OmittedNilB, Condition::AffirmedAB, false}};
  if (which == "rq1") return {rq1};
  if (which == "rq2") return rq2;
  if (which == "all") return {rq1, rq2[0], rq2[1]};
  throw UsageError(fmt::format("unknown --contrast '{}' (expected rq1, rq2 or all)", which));
}

struct AnalysisOutput {
  std::vector<report::ContrastRow> rq1;
  std::vector<report::ContrastRow> rq2;
  json fits = json::array();
  bool failed = false;
};

void run_contrasts(const stats::TrialTable& table, const std::string& model, const std::string& dataset,
                   const std::vector<ContrastPlan>& plans, const stats::ModelSpec& spec, bool simplify,
                   AnalysisOutput& output) {
  for (const ContrastPlan& plan : plans) {
    if (!table.has_condition(plan.reference) || !table.has_condition(plan.comparison)) continue;
    const std::string label = report::contrast_label(plan.reference, plan.comparison);
    report::ContrastRow row;
    try {
      const stats::ContrastResult r = stats::contrast(table, plan.reference, plan.comparison, spec, simplify);
      row = report::make_contrast_row(model, dataset, label, r.estimate.b, r.estimate.se, r.estimate.t, r.estimate.p);
      json fit = json::parse(stats::fit_report_json(r.fit, fmt::format("{} / {} / {}", dataset, model, label)));
      output.fits.push_back(std::move(fit));
    } catch (const AnalysisError& e) {
      row = report::failed_contrast_row(model, dataset, label, e.what());
      output.failed = true;
    }
    (plan.rq1 ? output.rq1 : output.rq2).push_back(std::move(row));
  }
}

stats::ModelSpec random_spec(const std::string& which) {
  if (which == "maximal") return stats::maximal_spec();
  if (which == "item") return stats::item_intercept_spec();
  if (which == "subject+item") {
    stats::ModelSpec s = stats::item_intercept_spec();
    s.random_terms.insert(s.random_terms.begin(), stats::RandomTerm{stats::Grouping::Subject, true, {}});
    return s;
  }
  throw UsageError(fmt::format("unknown --random '{}' (expected maximal, item or subject+item)", which));
}

int cmd_analyze(const AnalyzeArgs& a, std::ostream& out, std::ostream& err) {
  if (a.p_method != "normal") throw UsageError(fmt::format("unknown --p-method '{}' (available: normal)", a.p_method));
  const int inputs = !a.scores.empty() + !a.trials.empty() + !a.table.empty() + !a.ratings.empty();
  if (inputs != 1) throw UsageError("give exactly one of --scores, --trials, --table, --ratings");
  const std::vector<ContrastPlan> plans = contrast_plans(a.contrast);
  json config = {{"command", "analyze"}, {"scores", a.scores},   {"trials", a.trials},       {"corpus", a.corpus},
                 {"table", a.table},     {"ratings", a.ratings}, {"aggregate", a.aggregate}, {"random", a.random},
                 {"contrast", a.contrast}, {"p_method", a.p_method}, {"label", a.label}};
  const std::string meta = metadata_comment(config.dump(), a.seed);
  const fs::path out_dir(a.out);
  AnalysisOutput output;

  if (!a.ratings.empty()) {
    require_file(a.ratings, "--ratings");
    const std::vector<RatingRecord> records = parse_ratings_csv(read_file(a.ratings));
    std::string csv_out = "# " + meta + "\n" +
                          csv::row({"question", "reference", "coefficient", "b", "se", "z", "p", "thresholds", "n"});
    bool failed = false;
    for (RatingQuestion q : {RatingQuestion::EventA, RatingQuestion::EventB}) {
      stats::TrialTable t{stats::ResponseKind::Likert0to7, {}};
      for (const RatingRecord& r : records) {
        if (r.question == q) t.rows.push_back({r.participant_id, r.story_id, r.condition, double(r.value), {}});
      }
      if (t.rows.empty()) continue;
      try {
        const stats::OrdinalFit fit = stats::fit_clm_ordinal(t, Condition::AffirmedAB);
        std::string thresholds;
        for (Eigen::Index k = 0; k < fit.thresholds.size(); ++k) {
          thresholds += (k ? ";" : "") + csv::number(fit.thresholds(k));
        }
        for (const stats::OrdinalCoefficient& c : fit.coefficients) {
          out << fmt::format("{} {}: {}\n", to_string(q), c.name, stats::format_ordinal_coefficient(c));
          csv_out += csv::row({std::string(to_string(q)), "A->B", c.name, csv::number(c.b), csv::number(c.se),
                               csv::number(c.z), csv::number(c.p), thresholds, std::to_string(fit.n_obs)});
        }
      } catch (const AnalysisError& e) {
        err << fmt::format("{}: {}\n", to_string(q), e.what());
        failed = true;
      }
    }
    write_file(out_dir / "ordinal.csv", csv_out);
    return failed ? kExitAnalysis : kExitOk;
  }

  if (!a.scores.empty()) {
    require_file(a.scores, "--scores");
    stats::SurprisalAggregate aggregate;
    try {
      aggregate = stats::parse_surprisal_aggregate(a.aggregate);
    } catch (const ParseError& e) {
      throw UsageError(e.what());
    }
    const std::vector<RegionSummary> summaries = parse_region_summary_csv(read_file(a.scores));
    // One analysis per (dataset, backend, mode), in first-appearance order.
    std::vector<std::tuple<std::string, std::string, ScoringMode>> keys;
    for (const RegionSummary& s : summaries) {
      auto key = std::make_tuple(s.dataset, s.backend_name, s.mode);
      if (std::find(keys.begin(), keys.end(), key) == keys.end()) keys.push_back(key);
    }
    for (const auto& [dataset, backend, mode] : keys) {
      std::vector<RegionSummary> group;
      for (const RegionSummary& s : summaries) {
        if (std::tie(s.dataset, s.backend_name, s.mode) == std::tie(dataset, backend, mode)) group.push_back(s);
      }
      const stats::TrialTable table = stats::prepare_surprisal_table(std::span<const RegionSummary>(group), aggregate);
      const std::string model =
          a.label.empty() ? (mode == ScoringMode::MLM ? backend + " (mlm)" : backend) : a.label;
      run_contrasts(table, model, dataset, plans, stats::item_intercept_spec(), false, output);
    }
  } else if (!a.trials.empty()) {
    require_file(a.trials, "--trials");
    require_file(a.corpus, "--corpus");
    const Corpus corpus = load_any_corpus(a.corpus);
    const ChunkEventExport exported = parse_trials_csv(read_file(a.trials));
    const stats::RtPreparation prep = stats::prepare_rt_table(exported.events, exported.sessions, corpus);
    out << fmt::format("chunk-B trials: {} total, {} on excluded stories, {} outside [{}, {}] ms; data loss {:.2f}%\n",
                       prep.total_trials, prep.story_excluded, prep.rt_excluded, stats::kMinReadingTimeMs,
                       stats::kMaxReadingTimeMs, prep.loss_percent);
    write_file(out_dir / "rt_table.csv", stats::write_trial_table_csv(prep.table, meta));
    std::vector<Condition> present;
    for (Condition c : kAllConditions) {
      if (prep.table.has_condition(c)) present.push_back(c);
    }
    if (!present.empty()) {
      write_file(out_dir / "condition_means.csv", report::emit_condition_means(prep.table, true, present, meta));
    }
    const std::string model = a.label.empty() ? "Human" : a.label;
    run_contrasts(prep.table, model, corpus.name, plans, random_spec(a.random), true, output);
  } else {
    require_file(a.table, "--table");
    const stats::TrialTable table = stats::parse_trial_table_csv(read_file(a.table));
    const std::string model = a.label.empty() ? "table" : a.label;
    run_contrasts(table, model, fs::path(a.table).stem().string(), plans, random_spec(a.random), a.random == "maximal",
                  output);
  }

  if (output.rq1.empty() && output.rq2.empty()) {
    throw MissingCondition("no contrast has both of its conditions in the data");
  }
  if (!output.rq1.empty()) {
    const report::RenderedTable t = report::render_contrast_table(output.rq1, meta);
    write_file(out_dir / "rq1.csv", t.csv);
    out << "RQ1\n" << t.text;
  }
  if (!output.rq2.empty()) {
    const report::RenderedTable t = report::render_contrast_table(output.rq2, meta);
    write_file(out_dir / "rq2.csv", t.csv);
    out << (output.rq1.empty() ? "" : "\n") << "RQ2\n" << t.text;
  }
  json fits = {{"meta", meta}, {"fits", output.fits}};
  write_file(out_dir / "fits.json", fits.dump(2) + "\n");
  return output.failed ? kExitAnalysis : kExitOk;
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateArgs {
  std::uint64_t seed = 0;
  double b = 0.21;
  double intercept = std::log(50.0);
  double item_sd = 0.1;
  double subject_sd = 0.0;
  double slope_sd = 0.0;
  double residual_sd = 0.3;
  int items = 20;
  int subjects = 80;
  std::string out = ".";
};

/// Standard normal draws by Box-Muller on raw 64-bit engine output, so a seed
/// yields the same numbers with any standard library.
class NormalSource {
 public:
  explicit NormalSource(std::uint64_t seed) : rng_(seed) {}
  double operator()() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform(), u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    constexpr double kTwoPi = 6.283185307179586;
    spare_ = r * std::sin(kTwoPi * u2);
    has_spare_ = true;
    return r * std::cos(kTwoPi * u2);
  }

 private:
  double uniform() { return (static_cast<double>(rng_() >> 11) + 0.5) * 0x1.0p-53; }
  std::mt19937_64 rng_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

int cmd_simulate(const SimulateArgs& a, std::ostream& out) {
  if (a.items < 2 || a.subjects < 1) throw UsageError("need at least 2 items and 1 subject");
  for (double sd : {a.item_sd, a.subject_sd, a.slope_sd, a.residual_sd}) {
    if (sd < 0.0) throw UsageError("standard deviations must be non-negative");
  }
  const json config = {{"command", "simulate"},     {"b", a.b},
                       {"intercept", a.intercept},  {"item_sd", a.item_sd},
                       {"subject_sd", a.subject_sd}, {"slope_sd", a.slope_sd},
                       {"residual_sd", a.residual_sd}, {"items", a.items},
                       {"subjects", a.subjects}};
  const std::string meta = metadata_comment(config.dump(), a.seed);
  NormalSource normal(a.seed);
  std::vector<double> item_intercept(a.items), item_slope(a.items), subject_intercept(a.subjects);
  for (double& v : item_intercept) v = a.item_sd * normal();
  for (double& v : item_slope) v = a.slope_sd * normal();
  for (double& v : subject_intercept) v = a.subject_sd * normal();

  stats::TrialTable table{stats::ResponseKind::RtMsPerChar, {}};
  for (int s = 0; s < a.subjects; ++s) {
    for (int i = 0; i < a.items; ++i) {
      // Alternating assignment balances conditions within subjects and items.
      const bool treated = (s + i) % 2 == 1;
      const double x = treated ? 1.0 : 0.0;
      const double eta = a.intercept + a.b * x + item_intercept[i] + item_slope[i] * x + subject_intercept[s] +
                         a.residual_sd * normal();
      table.rows.push_back({fmt::format("P{:03d}", s + 1), fmt::format("I{:03d}", i + 1),
                            treated ? Condition::NegatedAB : Condition::AffirmedAB, std::exp(eta), {}});
    }
  }
  const fs::path dir(a.out);
  write_file(dir / "trials.csv", stats::write_trial_table_csv(table, meta));
  json truth = config;
  truth.erase("command");
  truth["seed"] = a.seed;
  truth["reference"] = "A->B";
  truth["comparison"] = "notA->B";
  truth["response_transform"] = "log";
  truth["meta"] = meta;
  write_file(dir / "truth.json", truth.dump(2) + "\n");
  out << fmt::format("wrote {} trials to {}\n", table.rows.size(), (dir / "trials.csv").string());
  return kExitOk;
}

// ---------------------------------------------------------------------------
// transform

int cmd_transform(const std::string& kind, const std::string& in, const std::string& out_path, std::ostream& out) {
  require_file(in, "--in");
  if (out_path.empty()) throw UsageError("--out is required");
  Corpus result;
  if (kind == "shorten") {
    result = shorten_distance(load_any_corpus(in));
  } else {
    result = adapt_trip(parse_trip_jsonl(read_file(in)), fs::path(in).stem().string());
  }
  write_file(out_path, write_corpus(result));
  out << fmt::format("wrote corpus '{}' ({} stories) to {}\n", result.name, result.stories.size(), out_path);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// serve

struct ServeArgs {
  std::string corpus;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string log = "events.jsonl";
};

int cmd_serve(const ServeArgs& a, std::ostream& out, std::ostream& err) {
  require_file(a.corpus, "--corpus");
  ExperimentService service(load_any_corpus(a.corpus), a.log);
  ExperimentServer server(service);
  const int port = server.bind(a.host, a.port);
  if (port < 0) {
    err << fmt::format("cannot listen on {}:{}: address unavailable\n", a.host, a.port);
    return kExitRuntime;
  }

  // Signals are taken by a dedicated thread so shutdown goes through stop()
  // rather than interrupting a request mid-write.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  sigaddset(&signals, SIGUSR1);
  sigset_t previous;
  pthread_sigmask(SIG_BLOCK, &signals, &previous);
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&signals, &sig);
    server.stop();
  });
  out << fmt::format("listening on http://{}:{}\n", a.host, port) << std::flush;
  server.listen();
  server.stop();
  pthread_kill(waiter.native_handle(), SIGUSR1);
  waiter.join();
  pthread_sigmask(SIG_SETMASK, &previous, nullptr);
  out << "stopped; event log " << a.log << " is complete\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// report

struct ReportArgs {
  std::string contrasts;
  std::string means;
  bool log_scale = false;
  std::string out;
  std::uint64_t seed = 0;
};

int cmd_report(const ReportArgs& a, std::ostream& out) {
  if (a.contrasts.empty() == a.means.empty()) throw UsageError("give exactly one of --contrasts, --means");
  std::string text;
  if (!a.contrasts.empty()) {
    require_file(a.contrasts, "--contrasts");
    const std::vector<report::ContrastRow> rows = report::parse_contrast_csv(read_file(a.contrasts));
    if (rows.empty()) throw UsageError("contrast CSV has no rows");
    text = report::render_contrast_table(rows).text;
  } else {
    require_file(a.means, "--means");
    const stats::TrialTable table = stats::parse_trial_table_csv(read_file(a.means));
    std::vector<Condition> present;
    for (Condition c : kAllConditions) {
      if (table.has_condition(c)) present.push_back(c);
    }
    const json config = {{"command", "report"}, {"means", a.means}, {"log", a.log_scale}};
    text = report::emit_condition_means(table, a.log_scale, present, metadata_comment(config.dump(), a.seed));
  }
  if (a.out.empty()) {
    out << text;
  } else {
    write_file(a.out, text);
  }
  return kExitOk;
}

}  // namespace

std::string metadata_comment(const std::string& canonical_config, unsigned long long seed) {
  return fmt::format("tool_version={} config_hash={} seed={}", CAUSALREAD_VERSION,
                     sha256_hex(canonical_config).substr(0, 16), seed);
}

int run(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Causal-coherence reading experiments: scoring, analysis, serving"};
  app.name("causalread");
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(CAUSALREAD_VERSION));

  ScoreArgs score;
  CLI::App* c_score = app.add_subcommand("score", "Compute region-B surprisal for every story and condition");
  c_score->add_option("--corpus", score.corpus, "Corpus file (.json CSK schema, .jsonl TRIP pairs)")->required();
  c_score->add_option("--backend", score.backend, fmt::format("Scoring backend: {}", kBackends));
  c_score->add_option("--endpoint", score.endpoint, "Endpoint URL for remote backends");
  c_score->add_option("--model", score.model, "Model name sent to the endpoint");
  c_score->add_option("--mode", score.mode, "clm or mlm");
  c_score->add_option("--conditions", score.conditions, "Comma-separated subset of A->B,notA->B,nil->B");
  c_score->add_option("--cache", score.cache, "Response cache directory");
  c_score->add_option("--out", score.out, "Output directory");
  c_score->add_option("--seed-corpus", score.seed_corpus, "Corpus whose A->B texts train the reference backend");
  c_score->add_option("--seed", score.seed, "Seed recorded in output metadata");
  c_score->add_flag("--shorten", score.shorten, "Score realizations with intervening chunks removed");
  c_score->add_option("--max-in-flight", score.max_in_flight, "Concurrent requests for remote backends");
  c_score->add_option("--rate-limit", score.rate_limit, "Requests per second for remote backends (0 = unlimited)");

  AnalyzeArgs analyze;
  CLI::App* c_analyze = app.add_subcommand("analyze", "Fit contrasts on scores, reading times or ratings");
  c_analyze->add_option("--scores", analyze.scores, "summary.csv from score");
  c_analyze->add_option("--trials", analyze.trials, "trials.csv exported by the experiment service");
  c_analyze->add_option("--corpus", analyze.corpus, "Corpus the trials were run on");
  c_analyze->add_option("--table", analyze.table, "Trial table CSV");
  c_analyze->add_option("--ratings", analyze.ratings, "ratings.csv exported by the experiment service");
  c_analyze->add_option("--aggregate", analyze.aggregate, "per_word or per_token");
  c_analyze->add_option("--random", analyze.random, "Random effects for --trials/--table: maximal, item, subject+item");
  c_analyze->add_option("--contrast", analyze.contrast, "rq1, rq2 or all");
  c_analyze->add_option("--p-method", analyze.p_method, "normal");
  c_analyze->add_option("--label", analyze.label, "Model name shown in the table");
  c_analyze->add_option("--out", analyze.out, "Output directory");
  c_analyze->add_option("--seed", analyze.seed, "Seed recorded in output metadata");

  SimulateArgs sim;
  CLI::App* c_sim = app.add_subcommand("simulate", "Generate a crossed subjects x items reading-time table");
  c_sim->add_option("--seed", sim.seed, "RNG seed")->required();
  c_sim->add_option("--b", sim.b, "Condition effect on the log scale");
  c_sim->add_option("--intercept", sim.intercept, "Log-scale intercept");
  c_sim->add_option("--item-sd", sim.item_sd, "By-item intercept sd");
  c_sim->add_option("--subject-sd", sim.subject_sd, "By-subject intercept sd");
  c_sim->add_option("--slope-sd", sim.slope_sd, "By-item condition slope sd");
  c_sim->add_option("--residual-sd", sim.residual_sd, "Residual sd");
  c_sim->add_option("--items", sim.items, "Number of items");
  c_sim->add_option("--subjects", sim.subjects, "Number of subjects");
  c_sim->add_option("--out", sim.out, "Output directory");

  std::string transform_in, transform_out;
  CLI::App* c_transform = app.add_subcommand("transform", "Derive corpora");
  c_transform->require_subcommand(1);
  CLI::App* c_shorten = c_transform->add_subcommand("shorten", "Remove chunks between A and B");
  CLI::App* c_trip = c_transform->add_subcommand("trip", "Adapt TRIP story pairs");
  for (CLI::App* sub : {c_shorten, c_trip}) {
    sub->add_option("--in", transform_in, "Input file")->required();
    sub->add_option("--out", transform_out, "Output corpus JSON")->required();
  }

  ServeArgs serve;
  CLI::App* c_serve = app.add_subcommand("serve", "Run the self-paced reading service");
  c_serve->add_option("--corpus", serve.corpus, "Corpus file")->required();
  c_serve->add_option("--host", serve.host, "Listen address");
  c_serve->add_option("--port", serve.port, "Listen port (0 picks a free one)");
  c_serve->add_option("--log", serve.log, "Append-only event log");

  ReportArgs rep;
  CLI::App* c_report = app.add_subcommand("report", "Render contrast tables or condition means");
  c_report->add_option("--contrasts", rep.contrasts, "Contrast CSV written by analyze");
  c_report->add_option("--means", rep.means, "Trial table CSV");
  c_report->add_flag("--log", rep.log_scale, "Means of log responses");
  c_report->add_option("--out", rep.out, "Write here instead of standard output");
  c_report->add_option("--seed", rep.seed, "Seed recorded in output metadata");

  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << CAUSALREAD_VERSION << "\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (c_score->parsed()) return cmd_score(score, out, err);
    if (c_analyze->parsed()) return cmd_analyze(analyze, out, err);
    if (c_sim->parsed()) return cmd_simulate(sim, out);
    if (c_transform->parsed()) {
      return cmd_transform(c_shorten->parsed() ? "shorten" : "trip", transform_in, transform_out, out);
    }
    if (c_serve->parsed()) return cmd_serve(serve, out, err);
    if (c_report->parsed()) return cmd_report(rep, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const AnalysisError& e) {
    err << "analysis error: " << e.what() << "\n";
    return kExitAnalysis;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace causalread::cli
