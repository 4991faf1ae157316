#include <cmath>
#include <random>
#include <stdexcept>

#include "doctest.h"
#include "oracles.hpp"
#include "seg2seg/metrics.hpp"
#include "seg2seg/similarity.hpp"

using namespace seg2seg;
using namespace seg2seg::metrics;

namespace {

std::vector<int> wait_k_times(int k, int J, int I) {
  std::vector<int> t;
  for (int i = 1; i <= I; ++i) t.push_back(std::min(k + i - 1, J));
  return t;
}

// Non-decreasing read counts in [1, J].
std::vector<int> random_times(int J, int I, std::mt19937_64& rng) {
  std::vector<int> t(static_cast<std::size_t>(I));
  int cur = 1 + static_cast<int>(rng() % static_cast<unsigned>(J));
  for (int& v : t) {
    v = cur;
    cur = std::min(J, cur + static_cast<int>(rng() % 3));
  }
  std::sort(t.begin(), t.end());
  return t;
}

}  // namespace

TEST_CASE("average lagging reference values") {
  CHECK(average_lagging(wait_k_times(3, 10, 10), 10, 10) == doctest::Approx(3.0).epsilon(1e-12));
  for (int k = 1; k <= 10; ++k)
    CHECK(average_lagging(wait_k_times(k, 10, 10), 10, 10) == doctest::Approx(k).epsilon(1e-12));
  const std::vector<int> offline(7, 9);
  CHECK(average_lagging(offline, 9, 7) == 9.0);
  CHECK(average_lagging(std::vector<int>{1, 2, 3, 4, 5}, 5, 5) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK_THROWS_AS(average_lagging(std::vector<int>{}, 5, 1), std::invalid_argument);
}

TEST_CASE("consecutive wait, proportion and differentiable lagging reference values") {
  const std::vector<int> offline(4, 6);
  CHECK(consecutive_wait(offline, 6) == 6.0);
  CHECK(consecutive_wait(std::vector<int>{1, 2, 3, 4}, 8) == 2.0);
  CHECK(consecutive_wait(std::vector<int>{3, 3, 6, 6}, 6) == 3.0);
  CHECK(average_proportion(offline, 6, 4) == 1.0);
  CHECK(average_proportion(std::vector<int>{1, 2, 3, 4}, 4, 4) == doctest::Approx(5.0 / 8.0).epsilon(1e-15));
  CHECK(differentiable_average_lagging(std::vector<int>{2, 4, 6}, 6, 3) == doctest::Approx(2.0).epsilon(1e-15));
  // Offline under the recursion: t' = J, J + J/I, ... so every term equals J.
  CHECK(differentiable_average_lagging(offline, 6, 4) == doctest::Approx(6.0).epsilon(1e-15));
}

TEST_CASE("latency metrics match naive loops on random traces") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 1000; ++trial) {
    const int J = 1 + static_cast<int>(rng() % 15), I = 1 + static_cast<int>(rng() % 15);
    const auto t = random_times(J, I, rng);
    CHECK(std::abs(average_lagging(t, J, I) - oracle::naive_al(t, J, I)) <= 1e-12);
    CHECK(std::abs(consecutive_wait(t, J) - oracle::naive_cw(t, J)) <= 1e-12);
    CHECK(std::abs(average_proportion(t, J, I) - oracle::naive_ap(t, J, I)) <= 1e-12);
    const double dal = differentiable_average_lagging(t, J, I);
    CHECK(std::abs(dal - oracle::naive_dal(t, J, I)) <= 1e-12);
    const double ap = average_proportion(t, J, I);
    CHECK(ap > 0.0);
    CHECK(ap <= 1.0);
    CHECK(average_lagging(t, J, I) <= J + 1e-12);
    CHECK(consecutive_wait(t, J) >= 1.0);
    // The clamp only raises t', so DAL dominates the unclipped mean lag.
    double unclipped = 0.0;
    for (int i = 0; i < I; ++i) unclipped += t[static_cast<std::size_t>(i)] - i * static_cast<double>(J) / I;
    CHECK(dal >= unclipped / I - 1e-12);
  }
}

TEST_CASE("mean alignment delay") {
  const std::vector<int> gold{1, 3, 4, 6};
  CHECK(mean_alignment_delay(gold, gold) == 0.0);
  CHECK(mean_alignment_delay(std::vector<int>{2, 4, 5, 7}, gold) == 1.0);
  std::mt19937_64 rng(32);
  for (int trial = 0; trial < 200; ++trial) {
    const auto a = random_times(10, 6, rng), b = random_times(10, 6, rng);
    double s = 0.0;
    for (std::size_t i = 0; i < 6; ++i) s += a[i] - b[i];
    CHECK(std::abs(mean_alignment_delay(a, b) - s / 6.0) <= 1e-12);
  }
}

TEST_CASE("r-value reference values") {
  CHECK(r_value(1.0, 1.0) == 1.0);
  CHECK(r_value(0.5, 0.5) == doctest::Approx(0.5732).epsilon(1e-4 / 0.5732));
  const double r1 = 0.5, r2 = -0.5 / std::sqrt(2.0);
  CHECK(std::abs(r_value(0.5, 0.5) - (1.0 - (std::abs(r1) + std::abs(r2)) / 2.0)) <= 1e-15);
  CHECK_THROWS_AS(r_value(0.0, 0.5), std::invalid_argument);
}

TEST_CASE("r-value is one exactly at perfect precision and recall") {
  for (int p = 1; p <= 20; ++p)
    for (int r = 0; r <= 20; ++r) {
      const double P = p / 20.0, R = r / 20.0;
      const double v = r_value(P, R);
      CHECK(v <= 1.0 + 1e-15);
      if (p == 20 && r == 20) {
        CHECK(v == 1.0);
      } else {
        CHECK(v < 1.0);
      }
      CHECK(std::abs(v - r_value_from_os(R / P - 1.0, R)) <= 1e-15);
    }
}

TEST_CASE("segmentation quality") {
  const std::vector<int> gold{2, 5, 8};
  SegmentationScore s = segmentation_quality(gold, gold);
  CHECK(s.precision == 1.0);
  CHECK(s.recall == 1.0);
  CHECK(s.r_value == 1.0);
  s = segmentation_quality(std::vector<int>{3, 6, 9}, gold, 0);
  CHECK(s.precision == 0.0);
  CHECK(s.recall == 0.0);
  s = segmentation_quality(std::vector<int>{3, 6, 9}, gold, 1);
  CHECK(s.recall == 1.0);
  s = segmentation_quality(std::vector<int>{}, gold);
  CHECK(s.precision_undefined);
  CHECK(s.recall == 0.0);
  // One prediction can match only one gold boundary.
  s = segmentation_quality(std::vector<int>{5}, std::vector<int>{4, 6}, 1);
  CHECK(s.matched == 1);
  CHECK(s.precision == 1.0);
  CHECK(s.recall == 0.5);
  CHECK(s.r_value == doctest::Approx(r_value(1.0, 0.5)).epsilon(1e-15));
  CHECK_THROWS_AS(segmentation_quality(gold, std::vector<int>{}), std::invalid_argument);
  CHECK_THROWS_AS(segmentation_quality(gold, gold, -1), std::invalid_argument);
}

TEST_CASE("emission accuracy") {
  const std::vector<int> align{1, 2, 2, 5};
  CHECK(emission_accuracy(align, align) == 1.0);
  CHECK(emission_accuracy(std::vector<int>(4, 5), align) == 1.0);
  CHECK(emission_accuracy(std::vector<int>{0, 1, 1, 4}, align) == 0.0);
  CHECK(emission_accuracy(std::vector<int>{1, 1, 2, 5}, align) == 0.75);
  CHECK(emission_accuracy(std::vector<int>{1, 2}, align) == 0.5);
  std::mt19937_64 rng(33);
  for (int trial = 0; trial < 200; ++trial) {
    const auto a = random_times(9, 7, rng), t = random_times(9, 7, rng);
    int hits = 0;
    for (std::size_t i = 0; i < 7; ++i) hits += a[i] <= t[i];
    CHECK(std::abs(emission_accuracy(t, a) - hits / 7.0) <= 1e-15);
  }
}

TEST_CASE("generation quality and cosine") {
  const std::vector<int> ref{1, 2, 3};
  GenerationQuality q = generation_quality(ref, ref);
  CHECK(q.token_accuracy == 1.0);
  CHECK(q.exact_match == 1);
  q = generation_quality(std::vector<int>{4, 5, 6}, ref);
  CHECK(q.token_accuracy == 0.0);
  CHECK(q.exact_match == 0);
  q = generation_quality(std::vector<int>{1, 2}, ref);
  CHECK(q.token_accuracy == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(q.exact_match == 0);
  q = generation_quality(std::vector<int>{1, 2, 3, 4}, ref);
  CHECK(q.token_accuracy == 0.75);

  const std::vector<double> a{1, 0, 0}, b{0, 2, 0}, c{3, 0, 0};
  CHECK(cosine_similarity(a, b) == 0.0);
  CHECK(cosine_similarity(a, c) == 1.0);
  CHECK(cosine_similarity(a, std::vector<double>{-2, 0, 0}) == -1.0);
  CHECK(cosine_similarity(a, std::vector<double>{0, 0, 0}) == 0.0);
  CHECK_THROWS_AS(cosine_similarity(a, std::vector<double>{1}), std::invalid_argument);
}

TEST_CASE("latency report of one trace") {
  policy::StreamTrace tr;
  tr.source_length = 4;
  tr.t = {2, 2, 4};
  const LatencyReport r = latency_report(tr, std::vector<int>{1, 2, 4});
  CHECK(r.al == doctest::Approx(oracle::naive_al(tr.t, 4, 3)).epsilon(1e-15));
  CHECK(r.cw == 2.0);
  CHECK(r.mean_alignment_delay == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK_FALSE(r.truncated);
  tr.t = {1, 2};
  CHECK(latency_report(tr, {}).truncated);
}

TEST_CASE("similarity vectors per segment") {
  model::ModelConfig cfg;
  cfg.d = 8;
  cfg.heads = 2;
  cfg.ffn = 16;
  const model::Model m = model::Model::initialize(cfg, 3);
  const std::vector<int> src = model::to_model_ids(std::vector<int>{3, 1, 4, 1});
  policy::StreamTrace tr;
  tr.source_length = 4;
  for (int j = 1; j <= 2; ++j) tr.events.push_back(policy::Event::read(j));
  tr.hypothesis = model::to_model_ids(std::vector<int>{5, 9, 2});
  tr.events.push_back(policy::Event::write(tr.hypothesis[0]));
  tr.events.push_back(policy::Event::write(tr.hypothesis[1]));
  for (int j = 3; j <= 4; ++j) tr.events.push_back(policy::Event::read(j));
  tr.events.push_back(policy::Event::write(tr.hypothesis[2]));
  tr.t = {2, 2, 4};
  tr.boundaries = {2, 4};

  using similarity::TargetRep;
  const auto q = similarity::example_vectors(m, src, tr, TargetRep::kEmissionQuery, 7);
  const auto x = similarity::example_vectors(m, src, tr, TargetRep::kInputStream);
  REQUIRE(q.size() == 2);
  REQUIRE(x.size() == 2);
  CHECK(q[0].example == 7);
  CHECK(q[1].segment == 1);
  // Projections start as the identity, so seg_k is the source sum.
  for (const auto& v : q) CHECK(cosine_similarity(v.source, v.latent) == doctest::Approx(1.0).epsilon(1e-12));
  const auto report = similarity::summarize(q);
  CHECK(report.source_segment == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(report.segments == 2);

  // The query for y_i is the input-stream row of y_{i-1}: segment 1 emits y_3,
  // so its target is the input row of y_2.
  ad::Graph g(false);
  model::Forward f(m.config(), m.params(), g);
  std::vector<int> dec{model::kBos};
  dec.insert(dec.end(), tr.hypothesis.begin(), tr.hypothesis.end());
  const Tensor inputs = f.target_inputs(dec).value();
  std::vector<double> first_two(cfg.d, 0.0);
  for (std::size_t c = 0; c < 8; ++c) {
    CHECK(q[1].target[c] == doctest::Approx(inputs[2 * 8 + c]).epsilon(1e-12));
    first_two[c] = inputs[0 * 8 + c] + inputs[1 * 8 + c];
  }
  CHECK(cosine_similarity(q[0].target, first_two) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(cosine_similarity(x[0].target, first_two) < 1.0 - 1e-6);

  CHECK(similarity::parse_target_rep("emission_query") == TargetRep::kEmissionQuery);
  CHECK(similarity::to_string(TargetRep::kDecoderState) == "decoder_state");
  CHECK_THROWS_AS(similarity::parse_target_rep("hidden"), std::invalid_argument);
  tr.source_length = 5;
  CHECK_THROWS_AS(similarity::example_vectors(m, src, tr, TargetRep::kEmissionQuery), std::invalid_argument);
}
