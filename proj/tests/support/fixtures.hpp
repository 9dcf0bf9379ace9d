#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "causalread/corpus.hpp"
#include "causalread/stats/trial_table.hpp"

namespace causalread::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  [[nodiscard]] const std::filesystem::path& path() const { return path_; }
  [[nodiscard]] std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

struct CliResult {
  int code = 0;
  std::string out;
  std::string err;
};
CliResult run_cli(std::vector<std::string> args);

/// Pronounceable nonce word, unique per (seed, index) with high probability.
std::string nonce_word(std::mt19937_64& rng);
std::string nonce_sentence(std::mt19937_64& rng, int words);

/// `n` stories with distinct topics: Initiation, 2 Intermediate chunks, ChunkB
/// (region = its first three words), PostB. A is inserted before chunk 2.
Corpus synthetic_corpus(std::size_t n, std::uint64_t seed);

/// Like synthetic_corpus, but A sits immediately before B and the negated A
/// chunk ends in a word that never occurs in any affirmed text, so a bigram
/// model trained on affirmed texts finds region B less predictable after it.
Corpus directional_corpus(std::size_t n, std::uint64_t seed);

/// Uniform integer in [lo, hi] from raw engine output.
int uniform_int(std::mt19937_64& rng, int lo, int hi);
double standard_normal(std::mt19937_64& rng);

// ---------------------------------------------------------------------------
// Independent oracles

/// Ordinary least squares by normal equations solved with a full-pivot LU.
Eigen::VectorXd ols(const Eigen::MatrixXd& x, const Eigen::VectorXd& y);

/// Closed-form one-way ANOVA variance estimate max(0, (MSB - MSW) / n) for a
/// balanced design; `groups[g]` holds the n responses of group g.
double anova_between_variance(const std::vector<std::vector<double>>& groups);

/// Logistic regression MLE with intercept by iteratively reweighted least
/// squares. Returns (intercept, slopes...).
Eigen::VectorXd logistic_irls(const Eigen::MatrixXd& x, const std::vector<int>& y);

/// Balanced one-way table: g groups (items) of n observations, identity scale.
stats::TrialTable one_way_table(const std::vector<std::vector<double>>& groups);

}  // namespace causalread::testing
