// Copyright 2026 the acap authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//
// The oracle namespace re-implements every metric from its published
// definition with different data structures (n-grams as token vectors, full
// DP tables) so agreement is meaningful.

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <vector>

#include "acap/metrics.hpp"

using namespace acap;

#include "metric_oracles.hpp"

namespace {

std::vector<std::string> words(const std::string& s) {
  return normalize_and_tokenize(s);
}

EvalCorpus fixture_corpus() {
  EvalCorpus corpus;
  corpus.push_back({words("a low tone followed by noise"),
                    {words("a low tone followed by noise"),
                     words("a deep hum then static noise"),
                     words("low tone and then some noise")}});
  corpus.push_back({words("water drips into a metal sink"),
                    {words("water drips into a sink"),
                     words("slow dripping of water on metal"),
                     words("drops of water hit a basin")}});
  corpus.push_back({words("a dog barks twice in the distance"),
                    {words("a dog barks in the distance"),
                     words("two dog barks far away"),
                     words("distant barking of a dog")}});
  corpus.push_back({words("wind blows through trees"),
                    {words("strong wind moves the trees"),
                     words("wind rustles leaves loudly"),
                     words("a gust of wind in a forest")}});
  return corpus;
}

EvalCorpus random_corpus(Rng& rng, int items) {
  std::vector<std::string> pool = {"a",    "dog",   "water", "wind",  "noise",
                                   "tone", "barks", "low",   "high",  "runs",
                                   "hits", "metal", "soft",  "loud",  "hum"};
  auto sentence = [&](int len) {
    std::vector<std::string> w;
    for (int i = 0; i < len; ++i)
      w.push_back(pool[static_cast<size_t>(rng.uniform_int(0, 14))]);
    return w;
  };
  EvalCorpus corpus;
  for (int i = 0; i < items; ++i) {
    EvalItem item;
    item.candidate = sentence(rng.uniform_int(1, 9));
    int n_refs = rng.uniform_int(1, 5);
    for (int r = 0; r < n_refs; ++r)
      item.references.push_back(sentence(rng.uniform_int(1, 9)));
    corpus.push_back(std::move(item));
  }
  return corpus;
}

}  // namespace

TEST_CASE("bleu analytic fixtures", "[metrics]") {
  // candidate equals one reference everywhere -> 1.0 up to min length
  EvalCorpus perfect;
  perfect.push_back({words("a dog barks in the park"),
                     {words("a dog barks in the park"), words("dog barking")}});
  perfect.push_back({words("water runs down the drain"),
                     {words("water runs down the drain")}});
  for (int n = 1; n <= 4; ++n)
    REQUIRE(bleu(perfect, n) == Catch::Approx(1.0).margin(1e-12));

  // brevity penalty fixture: exp(1 - 3/2)
  EvalCorpus bp;
  bp.push_back({words("the cat"), {words("the cat sat")}});
  REQUIRE(bleu(bp, 1) == Catch::Approx(std::exp(-0.5)).margin(1e-12));

  // disjoint vocabulary -> 0
  EvalCorpus disjoint;
  disjoint.push_back({words("alpha beta"), {words("gamma delta")}});
  REQUIRE(bleu(disjoint, 1) == 0.0);
}

TEST_CASE("rouge_l analytic fixtures", "[metrics]") {
  EvalCorpus same;
  same.push_back({words("a dog barks"), {words("a dog barks")}});
  REQUIRE(rouge_l(same) == Catch::Approx(1.0).margin(1e-12));

  EvalCorpus abc;
  abc.push_back({{"a", "b", "c"}, {{"a", "c", "d"}}});
  REQUIRE(rouge_l(abc) == Catch::Approx(2.0 / 3.0).margin(1e-12));

  // appending a reference can never lower an item's score
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    EvalCorpus c = random_corpus(rng, 1);
    double before = rouge_l(c);
    c[0].references.push_back(c[0].references[0]);
    c[0].references.back().push_back("extra");
    REQUIRE(rouge_l(c) >= before - 1e-15);
  }
}

TEST_CASE("cider_d analytic fixtures", "[metrics]") {
  // identical candidate and sole reference in a multi-item corpus -> 10
  EvalCorpus c;
  c.push_back({words("a low tone followed by noise"),
               {words("a low tone followed by noise")}});
  c.push_back({words("water drips into a metal sink"),
               {words("water drips into a metal sink")}});
  c.push_back({words("wind blows through tall trees"),
               {words("wind blows through tall trees")}});
  c.push_back({words("a dog barks in the distance"),
               {words("a dog barks in the distance")}});
  double score = cider_d(c);
  REQUIRE(score == Catch::Approx(10.0).margin(1e-6));

  EvalCorpus disjoint;
  disjoint.push_back({words("alpha beta gamma delta"), {words("eps zeta eta theta")}});
  disjoint.push_back({words("one two three four"), {words("five six seven eight")}});
  REQUIRE(cider_d(disjoint) == 0.0);
}

TEST_CASE("metrics match their brute-force oracles on the fixture corpus", "[metrics]") {
  EvalCorpus fix = fixture_corpus();
  for (int n = 1; n <= 4; ++n)
    REQUIRE(std::fabs(bleu(fix, n) - oracle::bleu(fix, n)) < 1e-10);
  REQUIRE(std::fabs(rouge_l(fix) - oracle::rouge_l(fix)) < 1e-10);
  REQUIRE(std::fabs(cider_d(fix) - oracle::cider_d(fix)) < 1e-10);

  Rng rng(99);
  for (int trial = 0; trial < 20; ++trial) {
    EvalCorpus c = random_corpus(rng, rng.uniform_int(2, 7));
    for (int n = 1; n <= 4; ++n)
      REQUIRE(std::fabs(bleu(c, n) - oracle::bleu(c, n)) < 1e-10);
    REQUIRE(std::fabs(rouge_l(c) - oracle::rouge_l(c)) < 1e-10);
    REQUIRE(std::fabs(cider_d(c) - oracle::cider_d(c)) < 1e-10);
  }
}

TEST_CASE("metrics are permutation-invariant and range-bounded", "[metrics]") {
  Rng rng(123);
  EvalCorpus c = random_corpus(rng, 6);
  MetricReport a = score_corpus(c);
  EvalCorpus shuffled = {c[4], c[2], c[0], c[5], c[1], c[3]};
  MetricReport b = score_corpus(shuffled);
  REQUIRE(a.bleu1 == b.bleu1);
  REQUIRE(a.bleu4 == b.bleu4);
  REQUIRE(a.rouge_l == Catch::Approx(b.rouge_l).margin(1e-15));
  REQUIRE(a.cider_d == Catch::Approx(b.cider_d).margin(1e-12));

  for (int trial = 0; trial < 30; ++trial) {
    EvalCorpus r = random_corpus(rng, rng.uniform_int(1, 6));
    MetricReport rep = score_corpus(r);
    for (double v : {rep.bleu1, rep.bleu2, rep.bleu3, rep.bleu4, rep.rouge_l}) {
      REQUIRE(v >= 0.0);
      REQUIRE(v <= 1.0);
    }
    REQUIRE(rep.cider_d >= 0.0);
    REQUIRE(rep.cider_d <= 10.0);
    // bleu is monotone non-increasing in n
    REQUIRE(rep.bleu2 <= rep.bleu1 + 1e-12);
    REQUIRE(rep.bleu3 <= rep.bleu2 + 1e-12);
    REQUIRE(rep.bleu4 <= rep.bleu3 + 1e-12);
  }
}

TEST_CASE("eval corpus files load and validate", "[metrics]") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "acap_metrics_tests";
  fs::create_directories(dir);
  {
    std::ofstream cand(dir / "cands.txt");
    cand << "a dog barks\nwater runs\n";
    std::ofstream refs(dir / "refs.csv");
    refs << "caption_1,caption_2\n";
    refs << "a dog barks,the dog barked\n";
    refs << "water runs,water is running\n";
  }
  EvalCorpus c = load_eval_corpus((dir / "cands.txt").string(),
                                  (dir / "refs.csv").string());
  REQUIRE(c.size() == 2);
  REQUIRE(c[0].candidate == words("a dog barks"));
  REQUIRE(c[1].references[1] == words("water is running"));

  {
    std::ofstream cand(dir / "empty.txt");
    cand << "a dog barks\n\n";
    std::ofstream refs(dir / "refs1.csv");
    refs << "caption_1\nx y\nz w\n";
  }
  REQUIRE_THROWS_AS(load_eval_corpus((dir / "empty.txt").string(),
                                     (dir / "refs1.csv").string()),
                    data_error);

  MetricReport rep = score_corpus(c);
  nlohmann::json j = rep.to_json();
  REQUIRE(j["n_items"] == 2);
  REQUIRE(j.contains("cider_d"));
}
