#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "oracles.hpp"
#include "snd/evaluate.hpp"

using namespace snd;

TEST_SUITE("evaluate") {

TEST_CASE("perfect hypothesis scores zero") {
  Rng rng(61);
  const auto ref = test::random_result(rng, 3, 20.0);
  if (ref.total_speech() <= 0) return;
  const auto rep = score_der(ref, ref);
  CHECK(rep.der == 0.0);
  CHECK(rep.missed == 0.0);
  CHECK(rep.false_alarm == 0.0);
  CHECK(rep.confusion == 0.0);
}

TEST_CASE("renaming speakers does not change DER") {
  DiarizationResult ref;
  ref.segments = {{"A", 0.0, 5.0}, {"B", 3.0, 4.0}, {"C", 8.0, 2.0}};
  DiarizationResult hyp = ref;
  hyp.segments[0].speaker = "x9";
  hyp.segments[1].speaker = "q2";
  hyp.segments[2].speaker = "z1";
  const auto rep = score_der(ref, hyp);
  CHECK(rep.der == 0.0);
  REQUIRE(rep.mapping.size() == 3);
}

TEST_CASE("hand-computed 20 percent miss") {
  DiarizationResult ref, hyp;
  ref.segments = {{"A", 0.0, 10.0}};
  hyp.segments = {{"A", 0.0, 8.0}};
  const auto rep = score_der(ref, hyp);
  CHECK(rep.der == doctest::Approx(0.20));
  CHECK(rep.missed == doctest::Approx(0.20));
  CHECK(rep.false_alarm == 0.0);
  CHECK(rep.confusion == 0.0);
  CHECK(rep.scored_time == doctest::Approx(10.0));
  CHECK(format_der(rep) == "DER 20.00% (miss 20.00%, fa 0.00%, conf 0.00%)");
}

TEST_CASE("confusion with swapped speakers") {
  DiarizationResult ref, hyp;
  ref.segments = {{"A", 0.0, 4.0}, {"B", 4.0, 4.0}};
  hyp.segments = {{"X", 0.0, 4.0}, {"Y", 4.0, 2.0}, {"X", 6.0, 2.0}};
  const auto rep = score_der(ref, hyp);
  // Best mapping X->A, Y->B: X's last 2 s inside B's turn are confusion.
  CHECK(rep.confusion == doctest::Approx(0.25));
  CHECK(rep.der == doctest::Approx(0.25));
}

TEST_CASE("zero reference speech is an error") {
  DiarizationResult ref, hyp;
  hyp.segments = {{"A", 0.0, 1.0}};
  CHECK_THROWS(score_der(ref, hyp));
}

TEST_CASE("empty hypothesis is all miss") {
  DiarizationResult ref, hyp;
  ref.segments = {{"A", 0.0, 2.0}, {"B", 1.0, 2.0}};
  const auto rep = score_der(ref, hyp);
  CHECK(rep.der == doctest::Approx(1.0));
  CHECK(rep.missed == doctest::Approx(1.0));
}

TEST_CASE("components always sum to DER") {
  Rng rng(67);
  for (int trial = 0; trial < 100; ++trial) {
    const auto ref = test::random_result(rng, 4, 15.0);
    const auto hyp = test::random_result(rng, 4, 15.0);
    if (ref.total_speech() <= 0) continue;
    const auto rep = score_der(ref, hyp);
    CHECK(std::abs(rep.der - (rep.missed + rep.false_alarm + rep.confusion)) < 1e-12);
    CHECK(rep.missed >= 0.0);
    CHECK(rep.false_alarm >= 0.0);
    CHECK(rep.confusion >= 0.0);
  }
}

TEST_CASE("matches the brute-force oracle") {
  Rng rng(71);
  int scored = 0;
  for (int trial = 0; trial < 120; ++trial) {
    const auto ref = test::random_result(rng, 4, 25.0);
    const auto hyp = test::random_result(rng, 4, 25.0);
    if (ref.total_speech() <= 0) continue;
    const auto rep = score_der(ref, hyp);
    const auto expect = test::oracle_der(ref, hyp);
    ++scored;
    CHECK(rep.der == doctest::Approx(expect.der()).epsilon(1e-12));
    const double denom = static_cast<double>(expect.denom);
    CHECK(rep.missed == doctest::Approx(static_cast<double>(expect.miss) / denom).epsilon(1e-12));
    CHECK(rep.false_alarm == doctest::Approx(static_cast<double>(expect.fa) / denom).epsilon(1e-12));
    CHECK(rep.confusion == doctest::Approx(static_cast<double>(expect.conf) / denom).epsilon(1e-12));
  }
  CHECK(scored > 80);
}

TEST_CASE("deleting a correct segment never helps") {
  Rng rng(73);
  for (int trial = 0; trial < 30; ++trial) {
    const auto ref = normalize_result(test::random_result(rng, 3, 15.0));
    if (ref.segments.size() < 2 || ref.total_speech() <= 0) continue;
    const double base = score_der(ref, ref).der;
    DiarizationResult hyp = ref;
    hyp.segments.erase(hyp.segments.begin() +
                       static_cast<long>(rng.uniform_int(static_cast<int>(hyp.segments.size()))));
    CHECK(score_der(ref, hyp).der >= base);
  }
}

TEST_CASE("corpus aggregation is time weighted") {
  DiarizationResult ref1, hyp1, ref2, hyp2;
  ref1.recording_id = hyp1.recording_id = "r1";
  ref2.recording_id = hyp2.recording_id = "r2";
  ref1.segments = {{"A", 0.0, 10.0}};
  hyp1.segments = {{"A", 0.0, 8.0}};   // 20% of 10 s
  ref2.segments = {{"A", 0.0, 30.0}};
  hyp2.segments = {{"A", 0.0, 30.0}};  // perfect, 30 s

  const auto single = score_corpus({{ref1, hyp1}});
  CHECK(single.der == doctest::Approx(score_der(ref1, hyp1).der));

  const auto agg = score_corpus({{ref1, hyp1}, {ref2, hyp2}});
  CHECK(agg.der == doctest::Approx(0.05));  // 200 error frames / 4000 ref frames
  CHECK(agg.scored_time == doctest::Approx(40.0));

  const auto twice = score_corpus({{ref1, hyp1}, {ref1, hyp1}});
  CHECK(twice.der == doctest::Approx(0.20));
  CHECK_THROWS(score_corpus({}));
}

TEST_CASE("corpus totals match summed oracle counts") {
  Rng rng(79);
  std::vector<std::pair<DiarizationResult, DiarizationResult>> pairs;
  int64_t err = 0, den = 0;
  for (int i = 0; i < 5; ++i) {
    const auto ref = test::random_result(rng, 3, 12.0);
    const auto hyp = test::random_result(rng, 3, 12.0);
    if (ref.total_speech() <= 0) continue;
    pairs.push_back({ref, hyp});
    const auto c = test::oracle_der(ref, hyp);
    err += c.miss + c.fa + c.conf;
    den += c.denom;
  }
  if (pairs.empty()) return;
  const auto agg = score_corpus(pairs);
  CHECK(agg.der == doctest::Approx(static_cast<double>(err) / static_cast<double>(den)).epsilon(1e-12));
}

}  // TEST_SUITE
