#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <vector>

#include "core/error.hpp"
#include "core/rng.hpp"
#include "gating/naive.hpp"

using namespace moe;

namespace {

ConcatenatedLogits make(std::vector<std::vector<float>> segs) { return concat(segs); }

std::vector<std::vector<float>> random_segments(Rng& rng, int max_experts = 4,
                                                int max_width = 8, double lo = -5.0,
                                                double hi = 5.0) {
  int experts = 2 + static_cast<int>(rng.below(max_experts - 1));
  std::vector<std::vector<float>> segs(experts);
  for (auto& s : segs) {
    int w = 2 + static_cast<int>(rng.below(max_width - 1));
    s.resize(w);
    for (auto& v : s) v = static_cast<float>(rng.uniform(lo, hi));
  }
  return segs;
}

}  // namespace

TEST_CASE("concat lays segments out in order with cumulative offsets") {
  ConcatenatedLogits c = make({{1, 5, 2}, {0, 1}});
  CHECK(c.flat == std::vector<float>{1, 5, 2, 0, 1});
  CHECK(c.offsets == std::vector<int>{0, 3});

  ConcatenatedLogits single = make({{3, 4}});
  CHECK(single.flat == std::vector<float>{3, 4});
  CHECK(single.offsets == std::vector<int>{0});

  CHECK_THROWS_AS(concat({}), Error);
  CHECK_THROWS_AS(concat({{1, 2}, {}}), Error);  // missing expert output

  // offsets equal the cumulative sum of segment widths
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    auto segs = random_segments(rng);
    ConcatenatedLogits cc = concat(segs);
    int running = 0;
    for (size_t s = 0; s < segs.size(); ++s) {
      CHECK(cc.offsets[s] == running);
      running += static_cast<int>(segs[s].size());
    }
    CHECK(static_cast<int>(cc.flat.size()) == running);
  }
}

TEST_CASE("argmax decision picks the largest logit with lowest-index ties") {
  GatingDecision d = decide_argmax(make({{1, 5, 2}, {0, 1}}));
  CHECK(d.expert_id == 0);
  CHECK(d.local_class == 1);
  CHECK(d.global_class == 1);

  d = decide_argmax(make({{0, 0}, {3, 0}}));
  CHECK(d.expert_id == 1);
  CHECK(d.local_class == 0);
  CHECK(d.global_class == 2);

  d = decide_argmax(make({{2, 2}, {2, 2}}));
  CHECK(d.global_class == 0);  // tie -> lowest flat index

  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    auto segs = random_segments(rng);
    ConcatenatedLogits c = concat(segs);
    // brute-force linear scan oracle
    int best = 0;
    for (size_t i = 1; i < c.flat.size(); ++i)
      if (c.flat[i] > c.flat[best]) best = static_cast<int>(i);
    CHECK(decide_argmax(c).global_class == best);
  }
}

TEST_CASE("argmax is invariant under strictly increasing transforms of the flat vector") {
  Rng rng(13);
  for (int trial = 0; trial < 100; ++trial) {
    auto segs = random_segments(rng);
    ConcatenatedLogits c = concat(segs);
    GatingDecision base = decide_argmax(c);

    ConcatenatedLogits affine = c;
    float a = static_cast<float>(rng.uniform(0.1, 3.0));
    float b = static_cast<float>(rng.uniform(-2.0, 2.0));
    for (auto& v : affine.flat) v = a * v + b;
    CHECK(decide_argmax(affine).global_class == base.global_class);

    ConcatenatedLogits expd = c;
    for (auto& v : expd.flat) v = std::exp(v * 0.5f);
    CHECK(decide_argmax(expd).global_class == base.global_class);
  }
}

TEST_CASE("ratio decision follows the per-segment normalized logits") {
  GatingDecision d = decide_ratio(make({{2, 2}, {8, 8}}));
  CHECK(d.expert_id == 0);  // all ratios 0.5, tie -> lowest index
  CHECK(d.local_class == 0);

  d = decide_ratio(make({{3, 1}, {1, 1}}));  // ratios .75 .25 | .5 .5
  CHECK(d.expert_id == 0);
  CHECK(d.local_class == 0);

  // zero-sum segment is excluded from the decision
  d = decide_ratio(make({{1, -1}, {2, 2}}));
  CHECK(d.expert_id == 1);
  CHECK(d.local_class == 0);

  CHECK_THROWS_AS(decide_ratio(make({{1, -1}, {3, -3}})), Error);
}

TEST_CASE("overall ratio matches argmax for positive sums and inverts for negative ones") {
  ConcatenatedLogits c = make({{1, 5, 2}, {0, 1}});  // sum 9 > 0
  CHECK(decide_overall_ratio(c).global_class == decide_argmax(c).global_class);

  CHECK_THROWS_AS(decide_overall_ratio(make({{1, -1}, {2, -2}})), Error);

  GatingDecision d = decide_overall_ratio(make({{-1, -5}, {-2, -1}}));  // sum -9
  CHECK(d.expert_id == 0);
  CHECK(d.local_class == 1);  // -5/-9 is the largest score

  Rng rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    auto segs = random_segments(rng, 4, 8, 0.05, 5.0);  // strictly positive
    ConcatenatedLogits cc = concat(segs);
    CHECK(decide_overall_ratio(cc).global_class == decide_argmax(cc).global_class);
  }
}

TEST_CASE("q3diff scores segments by max minus interpolated third quartile") {
  GatingDecision d = decide_q3diff(make({{1, 2, 3, 4, 10}, {1, 1, 1, 1, 2}}));
  CHECK(d.expert_id == 0);  // scores 6 vs 1
  CHECK(d.local_class == 4);

  // constant segment scores 0; both constant ties to expert 0, argmax class 0
  d = decide_q3diff(make({{3, 3, 3}, {5, 5, 5}}));
  CHECK(d.expert_id == 0);
  CHECK(d.local_class == 0);

  // quantile oracle: index arithmetic on sorted copies
  Rng rng(19);
  for (int trial = 0; trial < 100; ++trial) {
    int n = 2 + static_cast<int>(rng.below(9));
    std::vector<float> v(n);
    for (auto& x : v) x = static_cast<float>(rng.uniform(-4, 4));
    std::sort(v.begin(), v.end());
    double h = 0.75 * (n - 1);
    size_t lo = static_cast<size_t>(h);
    double expect = lo + 1 < v.size()
                        ? static_cast<double>(v[lo]) +
                              (h - static_cast<double>(lo)) *
                                  (static_cast<double>(v[lo + 1]) - static_cast<double>(v[lo]))
                        : static_cast<double>(v.back());
    CHECK(sorted_quantile(v, 0.75) == doctest::Approx(expect).epsilon(1e-9));
  }
}

TEST_CASE("std decision prefers the segment with the smallest population deviation") {
  GatingDecision d = decide_std(make({{1, 1, 1}, {0, 5, 0}}));
  CHECK(d.expert_id == 0);
  CHECK(d.local_class == 0);

  d = decide_std(make({{1, 2}, {5, 6}}));  // equal stds, tie -> expert 0
  CHECK(d.expert_id == 0);
  CHECK(d.local_class == 1);  // argmax inside the winner

  Rng rng(23);
  for (int trial = 0; trial < 100; ++trial) {
    auto segs = random_segments(rng);
    ConcatenatedLogits c = concat(segs);
    // two-pass double-precision oracle
    int best_seg = 0;
    double best_sd = 1e300;
    for (size_t s = 0; s < segs.size(); ++s) {
      double mean = 0;
      for (float v : segs[s]) mean += v;
      mean /= segs[s].size();
      double var = 0;
      for (float v : segs[s]) var += (v - mean) * (v - mean);
      double sd = std::sqrt(var / segs[s].size());
      if (sd < best_sd) {
        best_sd = sd;
        best_seg = static_cast<int>(s);
      }
    }
    CHECK(decide_std(c).expert_id == best_seg);
  }
}

TEST_CASE("std and q3diff expert choices are invariant to shifting one segment") {
  Rng rng(29);
  for (int trial = 0; trial < 100; ++trial) {
    auto segs = random_segments(rng);
    ConcatenatedLogits c = concat(segs);
    int e_std = decide_std(c).expert_id;
    int e_q3 = decide_q3diff(c).expert_id;

    auto shifted = segs;
    size_t target = rng.below(segs.size());
    float delta = static_cast<float>(rng.uniform(-10, 10));
    for (auto& v : shifted[target]) v += delta;
    ConcatenatedLogits cs = concat(shifted);
    CHECK(decide_std(cs).expert_id == e_std);
    CHECK(decide_q3diff(cs).expert_id == e_q3);
  }
}

TEST_CASE("every statistic produces exactly one in-range decision") {
  Rng rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    auto segs = random_segments(rng);
    ConcatenatedLogits c = concat(segs);
    for (NaiveStat stat : {NaiveStat::Argmax, NaiveStat::Ratio, NaiveStat::OverallRatio,
                           NaiveStat::Q3Diff, NaiveStat::Std}) {
      GatingDecision d;
      try {
        d = decide(c, stat);
      } catch (const Error&) {
        continue;  // zero-sum guards
      }
      CHECK(d.global_class >= 0);
      CHECK(d.global_class < static_cast<int>(c.flat.size()));
      CHECK(d.expert_id >= 0);
      CHECK(d.expert_id < c.segments());
      CHECK(d.global_class == c.seg_begin(d.expert_id) + d.local_class);
    }
  }
}

TEST_CASE("naive stat names round-trip") {
  for (NaiveStat s : {NaiveStat::Argmax, NaiveStat::Ratio, NaiveStat::OverallRatio,
                      NaiveStat::Q3Diff, NaiveStat::Std}) {
    CHECK(naive_stat_from_string(to_string(s)) == s);
  }
  CHECK_THROWS_AS(naive_stat_from_string("softmax"), Error);
}
