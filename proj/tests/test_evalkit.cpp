#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "evalkit/evalkit.hpp"

#include "testutil.hpp"

using namespace avloc;
using namespace avloc::evalkit;
using avloc::dataio::GtBox;

namespace {

// Brute-force oracles, kept deliberately independent of the library code.

double oracle_iou(const Tensor& map, double frac, const GtBox& box) {
  const int H = map.dim(0), W = map.dim(1);
  double mx = map[0];
  for (std::size_t i = 0; i < map.numel(); ++i) mx = std::max(mx, map[i]);
  if (!(mx > 0.0)) return 0.0;
  std::set<std::pair<int, int>> mask, gt;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      if (map.at(y, x) >= frac * mx) mask.insert({y, x});
      if (x >= box.x0 && x < box.x1 && y >= box.y0 && y < box.y1) gt.insert({y, x});
    }
  int inter = 0;
  for (const auto& p : mask) inter += gt.count(p) ? 1 : 0;
  const int uni = static_cast<int>(mask.size() + gt.size()) - inter;
  return uni > 0 ? static_cast<double>(inter) / uni : 0.0;
}

double oracle_ap(const std::vector<double>& conf, const std::vector<unsigned char>& succ) {
  // enumerate the PR curve naively at every rank
  const std::size_t n = conf.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return conf[a] > conf[b]; });
  std::size_t total_pos = 0;
  for (auto s : succ) total_pos += s ? 1 : 0;
  if (total_pos == 0) return 0.0;
  double ap = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    if (!succ[order[k]]) continue;
    // interpolated precision at this recall level: best precision at any
    // rank >= k
    double best = 0.0;
    for (std::size_t j = k; j < n; ++j) {
      std::size_t tp = 0;
      for (std::size_t i = 0; i <= j; ++i) tp += succ[order[i]] ? 1 : 0;
      best = std::max(best, static_cast<double>(tp) / static_cast<double>(j + 1));
    }
    ap += best / static_cast<double>(total_pos);
  }
  return ap;
}

}  // namespace

TEST_CASE("per-source intersection over union") {
  SUBCASE("mask equal to the box scores 1") {
    HeatmapPrediction pred;
    pred.maps = Tensor({1, 8, 8});
    for (int y = 2; y < 5; ++y)
      for (int x = 3; x < 6; ++x) pred.maps.at(0, y, x) = 1.0;
    pred.classes = {"circle"};
    const auto scores = ciou(pred, {{"circle", 3, 2, 6, 5}});
    CHECK(scores[0] == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("disjoint mask scores 0") {
    HeatmapPrediction pred;
    pred.maps = Tensor({1, 8, 8});
    pred.maps.at(0, 0, 0) = 1.0;
    pred.classes = {"circle"};
    CHECK(ciou(pred, {{"circle", 4, 4, 8, 8}})[0] == 0.0);
  }
  SUBCASE("hand case: inter 2, union 6") {
    HeatmapPrediction pred;
    pred.maps = Tensor({1, 4, 4});
    for (int y = 0; y < 2; ++y)
      for (int x = 1; x < 3; ++x) pred.maps.at(0, y, x) = 1.0;
    pred.classes = {"c"};
    CHECK(ciou(pred, {{"c", 0, 0, 2, 2}})[0] == doctest::Approx(1.0 / 3).epsilon(1e-12));
  }
  SUBCASE("class matching and missing classes") {
    HeatmapPrediction pred;
    pred.maps = Tensor({2, 4, 4});
    pred.maps.at(0, 0, 0) = 1.0;
    pred.maps.at(1, 3, 3) = 1.0;
    pred.classes = {"a", "b"};
    const auto scores = ciou(pred, {{"a", 0, 0, 1, 1}});
    CHECK(scores[0] == doctest::Approx(1.0));
    CHECK(scores[1] == 0.0);  // class b has no box
  }
  SUBCASE("ties broken by the best-scoring box of the class") {
    HeatmapPrediction pred;
    pred.maps = Tensor({1, 4, 4});
    pred.maps.at(0, 0, 0) = 1.0;
    pred.classes = {"a"};
    const auto scores = ciou(pred, {{"a", 2, 2, 4, 4}, {"a", 0, 0, 1, 1}});
    CHECK(scores[0] == doctest::Approx(1.0));
  }
}

TEST_CASE("success rate and sample reduction") {
  CHECK(success_rate({1.0, 1.0, 1.0}, 0.3) == doctest::Approx(1.0));
  CHECK(success_rate({0.2, 0.4}, 0.3) == doctest::Approx(0.5));
  CHECK_THROWS_AS(success_rate({}, 0.3), ValidationError);

  CHECK(reduce_sample({0.8, 0.2}, SampleRule::all_sources_pass) == doctest::Approx(0.2));
  CHECK(reduce_sample({0.8, 0.2}, SampleRule::mean_sources) == doctest::Approx(0.5));

  SUBCASE("counting oracle on random scores") {
    Rng rng(500);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<double> scores;
      for (int i = 0; i < 10; ++i) scores.push_back(rng.uniform());
      const double thr = rng.uniform();
      int count = 0;
      for (double s : scores) count += s >= thr ? 1 : 0;
      CHECK(success_rate(scores, thr) == doctest::Approx(count / 10.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("area under the success curve") {
  CHECK(auc(std::vector<double>(5, 1.0)) == doctest::Approx(1.0).epsilon(1e-12));
  // zero scores still succeed at the 0.00 threshold under the >= convention
  CHECK(auc(std::vector<double>(5, 0.0)) == doctest::Approx(0.05).epsilon(1e-12));
  // single score 0.5: thresholds 0.00..0.50 succeed -> 11/20
  CHECK(auc({0.5}) == doctest::Approx(11.0 / 20.0).epsilon(1e-12));

  SUBCASE("identity with the mean success rate over the grid") {
    Rng rng(501);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<double> scores;
      const int n = 1 + static_cast<int>(rng.next_u64() % 30);
      for (int i = 0; i < n; ++i) scores.push_back(rng.uniform());
      double mean = 0.0;
      for (int t = 0; t < 20; ++t) mean += success_rate(scores, t * 0.05);
      mean /= 20.0;
      CHECK(auc(scores) == mean);  // exact, same arithmetic
    }
  }
  SUBCASE("improving a score never lowers the area") {
    Rng rng(502);
    std::vector<double> scores;
    for (int i = 0; i < 12; ++i) scores.push_back(rng.uniform());
    const double before = auc(scores);
    scores[3] = std::min(1.0, scores[3] + 0.2);
    CHECK(auc(scores) >= before);
  }
}

TEST_CASE("average precision") {
  CHECK(average_precision({0.9, 0.8, 0.7}, {1, 1, 1}) == doctest::Approx(1.0));
  bool warn = false;
  CHECK(average_precision({0.9, 0.8}, {0, 0}, &warn) == 0.0);
  CHECK(warn);

  SUBCASE("three-sample hand case") {
    // order .9 (hit), .8 (miss), .7 (hit): precisions 1, 1/2, 2/3
    // interpolated: second hit uses max(2/3) -> AP = (1 + 2/3)/2
    CHECK(average_precision({0.9, 0.8, 0.7}, {1, 0, 1}) ==
          doctest::Approx((1.0 + 2.0 / 3.0) / 2.0).epsilon(1e-12));
  }
  SUBCASE("matches the naive PR enumeration on small random instances") {
    Rng rng(503);
    for (int trial = 0; trial < 100; ++trial) {
      const int n = 1 + static_cast<int>(rng.next_u64() % 5);
      std::vector<double> conf;
      std::vector<unsigned char> succ;
      for (int i = 0; i < n; ++i) {
        conf.push_back(rng.uniform());
        succ.push_back(rng.uniform() < 0.5 ? 1 : 0);
      }
      CHECK(average_precision(conf, succ) == doctest::Approx(oracle_ap(conf, succ)).epsilon(1e-12));
    }
  }
}

TEST_CASE("metrics equal brute-force pixel computations on random instances") {
  Rng rng(504);
  for (int trial = 0; trial < 200; ++trial) {
    const int H = 2 + static_cast<int>(rng.next_u64() % 15);
    const int W = 2 + static_cast<int>(rng.next_u64() % 15);
    Tensor map({1, H, W});
    for (std::size_t i = 0; i < map.numel(); ++i) map[i] = rng.uniform();
    GtBox box;
    box.cls = "c";
    box.x0 = static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(W));
    box.y0 = static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(H));
    box.x1 = box.x0 + 1 + static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(W - box.x0));
    box.y1 = box.y0 + 1 + static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(H - box.y0));
    HeatmapPrediction pred;
    pred.maps = map;
    pred.classes = {"c"};
    const double got = ciou(pred, {box})[0];
    Tensor flat({H, W});
    for (std::size_t i = 0; i < flat.numel(); ++i) flat[i] = map[i];
    CHECK(std::fabs(got - oracle_iou(flat, 0.5, box)) <= 1e-9);
  }
}

TEST_CASE("monotonicity: better per-source scores never hurt") {
  Rng rng(505);
  std::vector<double> scores;
  for (int i = 0; i < 30; ++i) scores.push_back(rng.uniform());
  const double sr_before = success_rate(scores, 0.3);
  const double auc_before = auc(scores);
  for (auto& s : scores) s = std::min(1.0, s + 0.1);
  CHECK(success_rate(scores, 0.3) >= sr_before);
  CHECK(auc(scores) >= auc_before);
}

TEST_CASE("report serialization") {
  MetricReport r;
  r.mode = "multi";
  r.ap = 0.5;
  r.iou_at_thr = 0.25;
  r.auc_value = 0.4;
  r.threshold = 0.3;
  r.per_sample.push_back({"clip_0", 0.31, 0.9, true, 2});
  const nlohmann::json j = metric_report_to_json(r);
  CHECK(j["cap"] == 0.5);
  CHECK(j["ciou_at_03"] == 0.25);
  CHECK(j["per_sample"].size() == 1);
  CHECK(metric_report_table(r).find("CAP") != std::string::npos);
  CHECK(metric_report_csv(r).find("clip_0,0.31") != std::string::npos);
}
