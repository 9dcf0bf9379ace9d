#include <doctest.h>

// Eigen first: <resolv.h>, pulled in by httplib, defines a _res macro.
#include <Eigen/Dense>
#include <httplib.h>
#include <json.hpp>

#include <atomic>
#include <cmath>
#include <map>
#include <sstream>
#include <thread>

#include "causalread/errors.hpp"
#include "causalread/http_backend.hpp"
#include "causalread/reference_backend.hpp"
#include "causalread/scoring.hpp"
#include "fixtures.hpp"

using namespace causalread;
using causalread::testing::TempDir;

namespace {

const std::string kData = CAUSALREAD_DATA_DIR;

std::vector<std::string> split_ws(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

// Bigram counts rebuilt from scratch with plain string splitting.
struct BigramOracle {
  std::map<std::pair<std::string, std::string>, double> pair;
  std::map<std::string, double> context;
  double v = 0.0;

  explicit BigramOracle(const std::vector<std::string>& seed) {
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
    v = static_cast<double>(types.size()) + 1.0;
  }

  double nll(const std::string& prev, const std::string& w) const {
    const auto p = pair.find({prev, w});
    const auto c = context.find(prev);
    const double num = (p == pair.end() ? 0.0 : p->second) + 1.0;
    const double den = (c == context.end() ? 0.0 : c->second) + v;
    return -std::log(num / den);
  }

  // Region words with the word preceding each.
  std::vector<double> region_word_nll(const RealizedStory& r) const {
    const std::vector<std::string> before = split_ws(r.context_before_b);
    std::string prev = before.empty() ? "<s>" : before.back();
    std::vector<double> out;
    for (const std::string& w : split_ws(r.region_b_text())) {
      out.push_back(nll(prev, w));
      prev = w;
    }
    return out;
  }
};

// Splits each word into two-character pieces, each with log-probability
// -(1 + position in word).
class SubwordBackend : public ScoringBackend {
 public:
  SubwordBackend() { desc_.name = "subword"; desc_.supports_mlm = true; desc_.endpoint.max_in_flight = 1; }
  const BackendDescriptor& descriptor() const override { return desc_; }
  std::vector<BackendToken> query(const BackendRequest& request) override {
    ++calls;
    if (request.mask_index) ++masked_calls;
    std::vector<BackendToken> out;
    for (const CharSpan& w : utf8::word_spans(request.text)) {
      int k = 0;
      for (std::size_t s = w.start; s < w.end; s += 2, ++k) {
        const std::size_t e = std::min(s + 2, w.end);
        out.push_back({utf8::substr(request.text, {s, e}), s, e, -(1.0 + k)});
      }
    }
    return out;
  }
  std::atomic<int> calls{0};
  std::atomic<int> masked_calls{0};

 private:
  BackendDescriptor desc_;
};

class FailingBackend : public ScoringBackend {
 public:
  FailingBackend() { desc_.name = "failing"; desc_.endpoint.max_in_flight = 3; }
  const BackendDescriptor& descriptor() const override { return desc_; }
  std::vector<BackendToken> query(const BackendRequest& request) override {
    if (request.text.find("sprinkles") != std::string::npos) throw BackendUnavailable("down");
    return ReferenceBackend(std::vector<std::string>{"a b"}).query(request);
  }

 private:
  BackendDescriptor desc_;
};

}  // namespace

TEST_CASE("reference backend matches an independent bigram oracle") {
  const Corpus c = load_corpus(kData + "/csk_mini.json", CorpusFormat::CSKJson);
  const std::vector<std::string> seed = reference_seed(c);
  ReferenceBackend ref(seed);
  const BigramOracle oracle(seed);
  CHECK(static_cast<double>(ref.vocabulary_size()) == oracle.v);
  for (const StoryTemplate& st : c.stories) {
    for (Condition cond : kAllConditions) {
      const RealizedStory r = realize(st, cond);
      const RegionScore s = score_clm(ref, r);
      const std::vector<double> words = oracle.region_word_nll(r);
      double total = 0.0;
      for (double w : words) total += w;
      CHECK(std::abs(s.total_nll - total) <= 1e-12);
      CHECK(std::abs(s.mean_per_word_surprisal - total / static_cast<double>(words.size())) <= 1e-12);
      REQUIRE(s.word_groups.size() == words.size());
      for (std::size_t w = 0; w < words.size(); ++w) {
        CHECK(std::abs(s.token_scores[s.word_groups[w].front()].surprisal_nats - words[w]) <= 1e-12);
      }
    }
  }
}

TEST_CASE("clm scores ignore text after region B") {
  const Corpus c = load_corpus(kData + "/csk_mini.json", CorpusFormat::CSKJson);
  ReferenceBackend ref(reference_seed(c));
  RealizedStory r = realize(c.stories[0], Condition::NegatedAB);
  const RegionScore a = score_clm(ref, r);
  r.full_text += " Something else happened later.";
  const RegionScore b = score_clm(ref, r);
  CHECK(a.total_nll == b.total_nll);
  CHECK(a.context_chars == r.region_b_abs.end);
}

TEST_CASE("surprisal and clamping") {
  CHECK(surprisal(1.0) == 0.0);
  CHECK(surprisal(std::exp(-2.5)) == doctest::Approx(2.5));
  CHECK_THROWS_AS(surprisal(0.0), DomainError);
  CHECK_THROWS_AS(surprisal(1.5), DomainError);
  CHECK_THROWS_AS(surprisal(-0.1), DomainError);

  const TokenScore low = make_token_score("x", {0, 1}, -1000.0);
  CHECK(low.clamped);
  CHECK(low.surprisal_nats == doctest::Approx(-std::log(kProbabilityFloor)));
  const TokenScore high = make_token_score("x", {0, 1}, 0.25);
  CHECK(high.clamped);
  CHECK(high.surprisal_nats == 0.0);
  const TokenScore ok = make_token_score("x", {0, 1}, -0.7);
  CHECK_FALSE(ok.clamped);
  CHECK(ok.surprisal_nats == doctest::Approx(0.7));
  CHECK_THROWS_AS(make_token_score("x", {0, 1}, std::nan("")), AlignmentError);
}

TEST_CASE("region tokens are chosen by span midpoint and clipped") {
  const std::string text = "ab cdef gh";
  // Token "b cd" spans [1, 5) with midpoint 3: inside region [3, 7).
  const std::vector<BackendToken> tokens{{"a", 0, 1, -1.0}, {"b cd", 1, 5, -2.0}, {"ef", 5, 7, -3.0}, {" gh", 7, 10, -4.0}};
  const auto sel = select_region_tokens(tokens, text, {3, 7});
  REQUIRE(sel.size() == 2);
  CHECK(sel[0].backend_index == 1);
  CHECK(sel[0].span == CharSpan{3, 5});
  CHECK(sel[0].text == "cd");
  CHECK(sel[1].backend_index == 2);
  // Midpoint of [7, 10) is 8.5, outside [3, 8).
  CHECK(select_region_tokens(tokens, text, {3, 8}).size() == 2);
}

TEST_CASE("misaligned token spans are rejected") {
  const std::string text = "ab cd";
  CHECK_THROWS_AS(select_region_tokens(std::vector<BackendToken>{{"ab", 0, 2, -1}, {"b c", 1, 4, -1}}, text, {3, 5}),
                  AlignmentError);
  CHECK_THROWS_AS(select_region_tokens(std::vector<BackendToken>{{"ab", 0, 2, -1}, {"d", 4, 5, -1}}, text, {3, 5}),
                  AlignmentError);
  CHECK_THROWS_AS(select_region_tokens(std::vector<BackendToken>{{"ab", 0, 2, -1}, {"cd", 3, 9, -1}}, text, {3, 5}),
                  AlignmentError);
  CHECK_THROWS_AS(select_region_tokens(std::vector<BackendToken>{{"ab", 0, 2, -1}, {"xy", 3, 5, -1}}, text, {3, 5}),
                  AlignmentError);
  CHECK_NOTHROW(select_region_tokens(std::vector<BackendToken>{{"ab", 0, 2, -1}, {"cd", 3, 5, -1}}, text, {3, 5}));
}

TEST_CASE("offsets count Unicode scalars, not bytes") {
  const std::string text = "café crème";
  ReferenceBackend ref(std::vector<std::string>{text});
  const auto tokens = ref.query({text, ScoringMode::CLM, std::nullopt});
  REQUIRE(tokens.size() == 2);
  CHECK(tokens[1].start == 5);
  CHECK(tokens[1].end == 10);
  const auto sel = select_region_tokens(tokens, text, {5, 10});
  REQUIRE(sel.size() == 1);
  CHECK(sel[0].text == "crème");
}

TEST_CASE("per-word aggregation sums subword pieces") {
  const Corpus c = load_corpus(kData + "/csk_mini.json", CorpusFormat::CSKJson);
  SubwordBackend sub;
  const RealizedStory r = realize(*c.find("cake"), Condition::AffirmedAB);
  const RegionScore s = score_clm(sub, r);
  // "added star-shaped sprinkles": pieces 3, 6, 5.
  REQUIRE(s.word_groups.size() == 3);
  CHECK(s.word_groups[0].size() == 3);
  CHECK(s.word_groups[1].size() == 6);
  CHECK(s.word_groups[2].size() == 5);
  const double added = 1 + 2 + 3, star = 1 + 2 + 3 + 4 + 5 + 6, sprinkles = 1 + 2 + 3 + 4 + 5;
  CHECK(s.total_nll == doctest::Approx(added + star + sprinkles));
  CHECK(s.mean_per_word_surprisal == doctest::Approx((added + star + sprinkles) / 3.0));
  CHECK(s.mean_per_token_surprisal == doctest::Approx((added + star + sprinkles) / 14.0));
  CHECK(s.mean_per_word_surprisal != doctest::Approx(s.mean_per_token_surprisal));
}

TEST_CASE("mlm scoring issues one masked query per region token") {
  const Corpus c = load_corpus(kData + "/csk_mini.json", CorpusFormat::CSKJson);
  SubwordBackend sub;
  const RealizedStory r = realize(*c.find("cake"), Condition::AffirmedAB);
  const RegionScore s = score_mlm(sub, r);
  CHECK(sub.masked_calls == 14);
  CHECK(sub.calls == 15);
  CHECK(s.context_chars == utf8::length(r.full_text));
  CHECK(s.mode == ScoringMode::MLM);

  BackendDescriptor d{"clm-only", true, false, {}};
  d.endpoint.base_url = "http://127.0.0.1:1/score";
  CompletionsBackend comp(d, "m");
  CHECK_THROWS_AS(score_mlm(comp, r), MaskUnsupported);
  ScoreCorpusOptions opts;
  opts.mode = ScoringMode::MLM;
  CHECK_THROWS_AS(score_corpus(comp, c, opts), MaskUnsupported);
}

TEST_CASE("caching serves repeated requests from disk") {
  TempDir dir("cache");
  const Corpus c = load_corpus(kData + "/csk_mini.json", CorpusFormat::CSKJson);
  SubwordBackend sub;
  CachingBackend cache(sub, dir.path());
  const RealizedStory r = realize(c.stories[1], Condition::NegatedAB);
  const RegionScore first = score_clm(cache, r);
  CHECK(cache.misses() == 1);
  CHECK(cache.hits() == 0);
  const RegionScore second = score_clm(cache, r);
  CHECK(cache.hits() == 1);
  CHECK(sub.calls == 1);
  CHECK(first == second);

  // A corrupt entry is refetched.
  const BackendRequest req{utf8::substr(r.full_text, {0, r.region_b_abs.end}), ScoringMode::CLM, std::nullopt};
  causalread::testing::write_text(cache.entry_path(req), "garbage");
  CHECK(score_clm(cache, r) == first);
  CHECK(sub.calls == 2);
}

TEST_CASE("request and token json round-trip") {
  const BackendRequest r{"some text", ScoringMode::MLM, 3};
  const BackendRequest back = BackendRequest::from_json(r.to_json());
  CHECK(back.text == r.text);
  CHECK(back.mode == ScoringMode::MLM);
  CHECK(back.mask_index == 3u);
  CHECK_THROWS_AS(BackendRequest::from_json("{\"mode\":\"clm\"}"), ParseError);
  CHECK_THROWS_AS(BackendRequest::from_json("{\"text\":\"a\",\"mask_index\":-1}"), ParseError);

  const std::vector<BackendToken> tokens{{"a", 0, 1, std::nan("")}, {"b", 2, 3, -0.5}};
  const auto parsed = tokens_from_json(tokens_to_json(tokens));
  REQUIRE(parsed.size() == 2);
  CHECK(std::isnan(parsed[0].logprob));
  CHECK(parsed[1] == tokens[1]);
  CHECK_THROWS_AS(tokens_from_json("{\"tokens\":[{\"text\":\"a\"}]}"), AlignmentError);
}

TEST_CASE("completions responses convert to tokens") {
  const std::string body = R"({"choices":[{"logprobs":{
      "tokens":["The"," cat"," sat"],
      "token_logprobs":[null,-2.0,-0.5],
      "text_offset":[0,3,7]}}]})";
  const auto tokens = CompletionsBackend::parse_response(body);
  REQUIRE(tokens.size() == 3);
  CHECK(std::isnan(tokens[0].logprob));
  CHECK(tokens[1].start == 3);
  CHECK(tokens[1].end == 7);
  const auto sel = select_region_tokens(tokens, "The cat sat", {4, 7});
  REQUIRE(sel.size() == 1);
  CHECK(sel[0].text == "cat");
  CHECK(sel[0].logprob == -2.0);
  CHECK_THROWS_AS(CompletionsBackend::parse_response("{\"choices\":[]}"), AlignmentError);

  BackendDescriptor d{"c", true, false, {}};
  const auto req = nlohmann::json::parse(CompletionsBackend(d, "gpt").request_body("hi"));
  CHECK(req["echo"] == true);
  CHECK(req["max_tokens"] == 0);
  CHECK(req["model"] == "gpt");
}

TEST_CASE("remote backend retries server errors and gives up on auth failures") {
  httplib::Server server;
  std::atomic<int> hits{0};
  server.Post("/score", [&](const httplib::Request& req, httplib::Response& res) {
    if (hits++ == 0) {
      res.status = 503;
      return;
    }
    const BackendRequest r = BackendRequest::from_json(req.body);
    ReferenceBackend ref(std::vector<std::string>{r.text});
    res.set_content(tokens_to_json(ref.query(r)), "application/json");
  });
  server.Post("/deny", [](const httplib::Request&, httplib::Response& res) { res.status = 401; });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread t([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  BackendDescriptor d{"remote", true, true, {}};
  d.endpoint.base_url = "http://127.0.0.1:" + std::to_string(port) + "/score";
  d.endpoint.max_retries = 2;
  RemoteBackend remote(d);
  const auto tokens = remote.query({"one two three", ScoringMode::CLM, std::nullopt});
  CHECK(tokens.size() == 3);
  CHECK(hits == 2);

  d.endpoint.base_url = "http://127.0.0.1:" + std::to_string(port) + "/deny";
  RemoteBackend denied(d);
  CHECK_THROWS_AS(denied.query({"x", ScoringMode::CLM, std::nullopt}), BackendUnavailable);

  server.stop();
  t.join();

  d.endpoint.base_url = "http://127.0.0.1:" + std::to_string(port) + "/score";
  d.endpoint.max_retries = 0;
  d.endpoint.timeout_seconds = 1.0;
  RemoteBackend gone(d);
  CHECK_THROWS_AS(gone.query({"x", ScoringMode::CLM, std::nullopt}), BackendUnavailable);
}

TEST_CASE("corpus scoring collects per-item failures in order") {
  const Corpus c = load_corpus(kData + "/csk_mini.json", CorpusFormat::CSKJson);
  FailingBackend failing;
  const CorpusScores out = score_corpus(failing, c, {});
  CHECK(out.scores.size() + out.failures.size() == 6);
  CHECK(out.failures.size() == 3);
  for (const ScoreFailure& f : out.failures) CHECK(f.story_id == "cake");
  CHECK(out.failures[0].condition == Condition::AffirmedAB);
  CHECK(out.failures[2].condition == Condition::OmittedNilB);
}

TEST_CASE("corpus scoring skips conditions a story cannot realize") {
  const Corpus c = load_corpus(kData + "/trip_mini.jsonl", CorpusFormat::TRIPJson);
  ReferenceBackend ref(reference_seed(c));
  const CorpusScores out = score_corpus(ref, c, {});
  CHECK(out.failures.empty());
  CHECK(out.scores.size() == 2 * c.stories.size());
}

TEST_CASE("summary csv round-trips the aggregates") {
  const Corpus c = load_corpus(kData + "/csk_mini.json", CorpusFormat::CSKJson);
  ReferenceBackend ref(reference_seed(c));
  const CorpusScores out = score_corpus(ref, c, {});
  const auto rows = parse_region_summary_csv(region_summary_csv(out.scores, "csk_mini", "tool_version=0"));
  REQUIRE(rows.size() == out.scores.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const RegionSummary expect = summarize(out.scores[i], "csk_mini");
    CHECK(rows[i].story_id == expect.story_id);
    CHECK(rows[i].condition == expect.condition);
    CHECK(rows[i].total_nll == expect.total_nll);
    CHECK(rows[i].mean_per_word_surprisal == expect.mean_per_word_surprisal);
  }
  const std::string tokens = token_scores_csv(out.scores);
  CHECK(tokens.rfind("story_id,condition,mode,backend,token_index", 0) == 0);
}
