#include "fixtures.hpp"

#include <fmt/format.h>

#include <atomic>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include "causalread/cli.hpp"

namespace causalread::testing {

namespace fs = std::filesystem;

TempDir::TempDir(const std::string& tag) {
  static std::atomic<int> counter{0};
  path_ = fs::temp_directory_path() / fmt::format("causalread-{}-{}-{}", tag, ::getpid(), counter++);
  fs::remove_all(path_);
  fs::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
}

CliResult run_cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  CliResult r;
  r.code = cli::run(std::move(args), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  return lo + static_cast<int>(rng() % static_cast<std::uint64_t>(hi - lo + 1));
}

double standard_normal(std::mt19937_64& rng) {
  const double u1 = (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
  const double u2 = (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

std::string nonce_word(std::mt19937_64& rng) {
  static const char* onsets[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "st"};
  static const char* vowels[] = {"a", "e", "i", "o", "u", "ai", "ou"};
  std::string w;
  const int syllables = uniform_int(rng, 2, 3);
  for (int s = 0; s < syllables; ++s) {
    w += onsets[rng() % std::size(onsets)];
    w += vowels[rng() % std::size(vowels)];
  }
  return w;
}

std::string nonce_sentence(std::mt19937_64& rng, int words) {
  std::string s;
  for (int i = 0; i < words; ++i) s += (i ? " " : "") + nonce_word(rng);
  return s + ".";
}

namespace {

StoryTemplate build_story(std::mt19937_64& rng, std::size_t i, std::size_t a_position, bool directional) {
  StoryTemplate st;
  st.story_id = fmt::format("s{:02d}", i + 1);
  st.topic = fmt::format("topic {}", i + 1);
  std::vector<std::pair<ChunkRole, std::string>> chunks{
      {ChunkRole::Initiation, nonce_sentence(rng, 8)},
      {ChunkRole::Intermediate, nonce_sentence(rng, 7)},
      {ChunkRole::Intermediate, nonce_sentence(rng, 9)},
  };
  const std::string region = nonce_word(rng) + " " + nonce_word(rng) + " " + nonce_word(rng);
  chunks.emplace_back(ChunkRole::ChunkB, region + " " + nonce_sentence(rng, 5));
  chunks.emplace_back(ChunkRole::PostB, nonce_sentence(rng, 6));
  for (std::size_t c = 0; c < chunks.size(); ++c) st.shared_chunks.push_back(make_chunk(c, chunks[c].second, chunks[c].first));
  st.region_b_chunk = 3;
  st.region_b_span = {0, utf8::length(region)};
  st.chunk_a.position = a_position;
  const std::string a_body = nonce_sentence(rng, 6);
  st.chunk_a.affirmed = a_body.substr(0, a_body.size() - 1) + " " + nonce_word(rng) + ".";
  if (directional) {
    // "zzq" never appears in the affirmed texts, so it has no bigram counts.
    st.chunk_a.negated = a_body.substr(0, a_body.size() - 1) + " zzq" + std::to_string(i) + "x";
  } else {
    st.chunk_a.negated = a_body.substr(0, a_body.size() - 1) + " not " + nonce_word(rng) + ".";
  }
  st.event_a_text = "event A " + std::to_string(i + 1);
  st.event_b_text = "event B " + std::to_string(i + 1);
  return st;
}

}  // namespace

Corpus synthetic_corpus(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Corpus c;
  c.name = "synthetic";
  c.source = CorpusSource::CSK;
  for (std::size_t i = 0; i < n; ++i) c.stories.push_back(build_story(rng, i, 2, false));
  validate(c);
  return c;
}

Corpus directional_corpus(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Corpus c;
  c.name = "directional";
  c.source = CorpusSource::CSK;
  for (std::size_t i = 0; i < n; ++i) c.stories.push_back(build_story(rng, i, 3, true));
  validate(c);
  return c;
}

Eigen::VectorXd ols(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
  const Eigen::MatrixXd xtx = x.transpose() * x;
  const Eigen::VectorXd xty = x.transpose() * y;
  return xtx.fullPivLu().solve(xty);
}

double anova_between_variance(const std::vector<std::vector<double>>& groups) {
  const double g = static_cast<double>(groups.size());
  const double n = static_cast<double>(groups.front().size());
  double grand = 0.0;
  std::vector<double> means;
  for (const auto& grp : groups) {
    double m = 0.0;
    for (double v : grp) m += v;
    m /= n;
    means.push_back(m);
    grand += m;
  }
  grand /= g;
  double ssb = 0.0, ssw = 0.0;
  for (std::size_t k = 0; k < groups.size(); ++k) {
    ssb += n * (means[k] - grand) * (means[k] - grand);
    for (double v : groups[k]) ssw += (v - means[k]) * (v - means[k]);
  }
  const double msb = ssb / (g - 1.0);
  const double msw = ssw / (g * (n - 1.0));
  return std::max(0.0, (msb - msw) / n);
}

Eigen::VectorXd logistic_irls(const Eigen::MatrixXd& x, const std::vector<int>& y) {
  const Eigen::Index n = x.rows();
  Eigen::MatrixXd design(n, x.cols() + 1);
  design.col(0).setOnes();
  design.rightCols(x.cols()) = x;
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(design.cols());
  for (int it = 0; it < 100; ++it) {
    const Eigen::VectorXd eta = design * beta;
    Eigen::VectorXd mu(n), w(n), z(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      mu(i) = 1.0 / (1.0 + std::exp(-eta(i)));
      w(i) = mu(i) * (1.0 - mu(i));
      z(i) = eta(i) + (y[static_cast<std::size_t>(i)] - mu(i)) / w(i);
    }
    const Eigen::MatrixXd xtw = design.transpose() * w.asDiagonal();
    const Eigen::VectorXd next = (xtw * design).ldlt().solve(xtw * z);
    const double change = (next - beta).lpNorm<Eigen::Infinity>();
    beta = next;
    if (change < 1e-13) break;
  }
  return beta;
}

stats::TrialTable one_way_table(const std::vector<std::vector<double>>& groups) {
  stats::TrialTable t{stats::ResponseKind::SurprisalNats, {}};
  for (std::size_t g = 0; g < groups.size(); ++g) {
    for (double v : groups[g]) t.rows.push_back({"", fmt::format("g{:02d}", g), Condition::AffirmedAB, v, {}});
  }
  return t;
}

}  // namespace causalread::testing
