#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "avmaps/avmaps.hpp"
#include "core/ops.hpp"
#include "losses/losses.hpp"
#include "ot/ot.hpp"

#include "testutil.hpp"

using namespace avloc;
using namespace avloc::losses;

namespace {

Tensor row2(double x, double y) { return Tensor({1, 2}, {x, y}); }

losses::LossConfig tight_cfg() {
  LossConfig cfg;
  cfg.ori.sinkhorn.tol = 1e-12;
  cfg.ori.sinkhorn.max_iter = 8000;
  return cfg;
}

}  // namespace

TEST_CASE("pooled reference") {
  SUBCASE("single reference is unchanged (unit norm)") {
    Tensor refs({1, 1, 2}, {1.0, 0.0});
    const Tensor out = pooled_reference(refs);
    CHECK(out.at(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(out.at(0, 1) == doctest::Approx(0.0).epsilon(1e-12));
  }
  SUBCASE("two identical vectors pool to themselves") {
    Tensor refs({1, 2, 2}, {0.0, 1.0, 0.0, 1.0});
    const Tensor out = pooled_reference(refs);
    CHECK(out.at(0, 0) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(out.at(0, 1) == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("orthogonal unit vectors bisect: (u+v)/sqrt(2)") {
    Tensor refs({1, 2, 2}, {1.0, 0.0, 0.0, 1.0});
    const Tensor out = pooled_reference(refs);
    CHECK(out.at(0, 0) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));
    CHECK(out.at(0, 1) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));
    double norm = out.at(0, 0) * out.at(0, 0) + out.at(0, 1) * out.at(0, 1);
    CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("K=0 rejected") { CHECK_THROWS_AS(pooled_reference(Tensor({1, 0, 2})), ValidationError); }
}

TEST_CASE("foreground alignment scalar oracles") {
  SUBCASE("aligned positive, anti-aligned negative: log(1+e^-2)") {
    const double loss = oca_frg(row2(1, 0), row2(-1, 0), row2(1, 0));
    CHECK(loss == doctest::Approx(std::log(1.0 + std::exp(-2.0))).epsilon(1e-12));
    CHECK(loss == doctest::Approx(0.126928).epsilon(1e-5));
  }
  SUBCASE("fully degenerate case gives log 2") {
    const double loss = oca_frg(row2(1, 0), row2(1, 0), row2(1, 0));
    CHECK(loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }
  SUBCASE("near-duplicate reference above tau contributes no soft negative") {
    // two clips share (almost) the same reference; similarity ~0.995 > 0.7
    Tensor lvp({2, 2}, {1, 0, 0.9, 0.1});
    Tensor lvn({2, 2}, {-1, 0, -0.9, -0.1});
    Tensor lrp({2, 2}, {1, 0, 0.995, 0.0999});
    OCAConfig cfg;
    const double with_exclusion = oca_frg(lvp, lvn, lrp, cfg);
    // hand value for sample i: -log(p/(p+nh)) since soft term vanishes
    double expect = 0.0;
    for (int i = 0; i < 2; ++i) {
      Graph g;
      Tensor a = row2(lvp.at(i, 0), lvp.at(i, 1));
      Tensor n = row2(lvn.at(i, 0), lvn.at(i, 1));
      Tensor r = row2(lrp.at(i, 0), lrp.at(i, 1));
      const double p = std::exp(ops::cosine_rows(make_const(g, a), make_const(g, r)).val()[0]);
      const double nh = std::exp(ops::cosine_rows(make_const(g, n), make_const(g, r)).val()[0]);
      expect += -std::log(p / (p + nh)) / 2.0;
    }
    CHECK(with_exclusion == doctest::Approx(expect).epsilon(1e-12));
    // with tau = 1 everything is admitted and the loss strictly increases
    OCAConfig all;
    all.tau = 1.0;
    CHECK(oca_frg(lvp, lvn, lrp, all) > with_exclusion);
  }
  SUBCASE("tau=-1 drops every in-batch negative; tau=1 keeps them all") {
    Rng rng(300);
    Tensor lvp = Tensor::random_normal({4, 8}, rng);
    Tensor lvn = Tensor::random_normal({4, 8}, rng);
    Tensor lrp = Tensor::random_normal({4, 8}, rng);
    OCAConfig none, all;
    none.tau = -1.0;
    all.tau = 1.0;
    CHECK(oca_frg(lvp, lvn, lrp, none) <= oca_frg(lvp, lvn, lrp, all));
  }
}

TEST_CASE("background alignment scalar oracles") {
  SUBCASE("mirrors the aligned/anti-aligned value") {
    CHECK(oca_bkg(row2(1, 0), row2(-1, 0), row2(1, 0)) ==
          doctest::Approx(0.126928).epsilon(1e-5));
  }
  SUBCASE("identical pooled features give log 2") {
    CHECK(oca_bkg(row2(0.3, 0.4), row2(0.3, 0.4), row2(0.7, -0.1)) ==
          doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }
  SUBCASE("batch loss is the mean of the single-sample losses") {
    Rng rng(301);
    Tensor lvn = Tensor::random_normal({2, 4}, rng);
    Tensor lvp = Tensor::random_normal({2, 4}, rng);
    Tensor bg = Tensor::random_normal({2, 4}, rng);
    auto rowt = [](const Tensor& t, int r) {
      Tensor out({1, 4});
      for (int k = 0; k < 4; ++k) out.at(0, k) = t.at(r, k);
      return out;
    };
    const double batch = oca_bkg(lvn, lvp, bg);
    const double split = (oca_bkg(rowt(lvn, 0), rowt(lvp, 0), rowt(bg, 0)) +
                          oca_bkg(rowt(lvn, 1), rowt(lvp, 1), rowt(bg, 1))) /
                         2.0;
    CHECK(batch == doctest::Approx(split).epsilon(1e-12));
  }
}

TEST_CASE("combination arithmetic") {
  CHECK(oca(0.2, 0.4) == doctest::Approx(0.3).epsilon(1e-15));
  CHECK(oca(0.0, 0.0) == 0.0);
  CHECK(oca(0.126928, 0.693147) == doctest::Approx(0.410038).epsilon(1e-6));
  CHECK(total(1.0, 2.0) == doctest::Approx(1.2).epsilon(1e-12));
  CHECK(total(0.7, 123.0, 1.0, 0.0) == doctest::Approx(0.7).epsilon(1e-15));
  CHECK(total(0.41, 3.5, 1.0, 0.1) == doctest::Approx(0.76).epsilon(1e-12));
}

TEST_CASE("positivity and monotonicity of the alignment losses") {
  Rng rng(302);
  for (int trial = 0; trial < 10; ++trial) {
    const int B = 1 + static_cast<int>(rng.next_u64() % 4);
    Tensor lvp = Tensor::random_normal({B, 6}, rng);
    Tensor lvn = Tensor::random_normal({B, 6}, rng);
    Tensor lrp = Tensor::random_normal({B, 6}, rng);
    const double frg = oca_frg(lvp, lvn, lrp);
    const double bkg = oca_bkg(lvn, lvp, lrp);
    CHECK(frg > 0.0);
    CHECK(bkg > 0.0);
    CHECK(frg <= std::log(1.0 + B * std::exp(2.0)));
  }
  // raising the positive similarity lowers the loss
  Tensor lvp = row2(0.8, 0.6);
  Tensor better = row2(1.0, 0.0);  // cos=1 against the reference below
  Tensor lvn = row2(-0.3, 0.5);
  Tensor lrp = row2(1.0, 0.0);
  CHECK(oca_frg(better, lvn, lrp) < oca_frg(lvp, lvn, lrp));
}

TEST_CASE("region isolation loss") {
  SUBCASE("K=1 yields exactly two ordered pair terms per item") {
    Rng rng(303);
    Tensor feat = Tensor::random_normal({1, 2, 2, 4}, rng);
    Tensor fg = Tensor::random_normal({1, 1, 4}, rng);
    Tensor bg = Tensor::random_normal({1, 4}, rng);
    Graph g;
    LossConfig cfg = tight_cfg();
    auto lg = build_losses(g, make_const(g, feat), make_const(g, Tensor::random_normal({1, 4}, rng)),
                           make_const(g, fg), make_const(g, bg), cfg);
    int nonzero_slots = 0;
    for (int n = 0; n < 2; ++n)
      for (int m = 0; m < 2; ++m)
        if (lg.report.pairwise_ot_terms.at(n, m) != 0.0) ++nonzero_slots;
    CHECK(nonzero_slots == 2);
  }
  SUBCASE("foreground slice equal to complement of background slice") {
    // engineered feature map: cos(feat, fg_ref) = 1 - cos(feat, bg_ref) cell-wise
    // use orthogonal axes: cells point at fg or bg; maps are exact complements
    const int d1 = 2, d2 = 2, c = 2;
    Tensor feat({1, d1, d2, c});
    feat.at(0, 0, 0, 0) = 1.0;  // fg cell
    feat.at(0, 0, 1, 0) = 1.0;  // fg cell
    feat.at(0, 1, 0, 1) = 1.0;  // bg cell
    feat.at(0, 1, 1, 1) = 1.0;  // bg cell
    Tensor fg({1, 1, c});
    fg.at(0, 0, 0) = 1.0;
    Tensor bg({1, c});
    bg.at(0, 1) = 1.0;
    OriConfig cfg;
    cfg.sinkhorn.epsilon = 0.01;
    cfg.sinkhorn.max_iter = 8000;
    cfg.sinkhorn.tol = 1e-12;
    // S_fg = (1,1,0,0), S_bg = (0,0,1,1) = 1 - S_fg: each pair term compares a
    // distribution with itself, so the exact transport cost is 0 and the
    // entropic value is bounded by eps*log(n).
    const double value = ori(feat, fg, bg, cfg);
    CHECK(value >= -1e-9);
    CHECK(value <= 2 * (0.01 * std::log(4.0) + 1e-3));

    const ot::GridGeometry geom = ot::make_grid_geometry(d1, d2);
    Tensor map_fg({4}, {1, 1, 0, 0});
    const auto P = ot::normalize_to_simplex(map_fg, geom.coords);
    const auto C = ot::build_cost(map_fg, map_fg, geom.coords, cfg.cost_beta);
    CHECK(ot::exact_emd_oracle(P, P, C) == doctest::Approx(0.0).epsilon(1e-9));
  }
  SUBCASE("value matches the exact oracle on a hand-built 2x2 grid") {
    const int d1 = 2, d2 = 2, c = 2;
    Tensor feat({1, d1, d2, c});
    feat.at(0, 0, 0, 0) = 1.0;
    feat.at(0, 1, 1, 1) = 1.0;
    Tensor fg({1, 1, c});
    fg.at(0, 0, 0) = 1.0;
    Tensor bg({1, c});
    bg.at(0, 1) = 1.0;
    OriConfig cfg;
    cfg.sinkhorn.epsilon = 0.01;
    cfg.sinkhorn.max_iter = 20000;
    cfg.sinkhorn.tol = 1e-12;
    const double value = ori(feat, fg, bg, cfg);

    // reproduce the two ordered pair terms with the LP oracle
    const ot::GridGeometry geom = ot::make_grid_geometry(d1, d2);
    const avmaps::ReferenceAssociatedMaps rm = avmaps::reference_maps(feat, fg, bg);
    double exact = 0.0;
    for (int n = 0; n < 2; ++n)
      for (int m = 0; m < 2; ++m) {
        if (n == m) continue;
        Tensor ma({4}), mb({4});
        for (int i = 0; i < 4; ++i) {
          ma[static_cast<std::size_t>(i)] = rm.flattened.at(0, n, i);
          mb[static_cast<std::size_t>(i)] = 1.0 - rm.flattened.at(0, m, i);
        }
        const auto P = ot::normalize_to_simplex(ma, geom.coords);
        const auto Q = ot::normalize_to_simplex(mb, geom.coords);
        const auto C = ot::build_cost(ma, mb, geom.coords, cfg.cost_beta);
        exact += ot::exact_emd_oracle(P, Q, C);
      }
    CHECK(value >= exact - 1e-6);
    CHECK(std::fabs(value - exact) <= 2 * (0.01 * std::log(4.0)) + 1e-3);
  }
  SUBCASE("permuting foreground references leaves the value unchanged") {
    Rng rng(304);
    const int B = 2, K = 3, c = 5;
    Tensor feat = Tensor::random_normal({B, 3, 2, c}, rng);
    Tensor fg = Tensor::random_normal({B, K, c}, rng);
    Tensor bg = Tensor::random_normal({B, c}, rng);
    Tensor fg_perm({B, K, c});
    const int perm[3] = {2, 0, 1};
    for (int b = 0; b < B; ++b)
      for (int k = 0; k < K; ++k)
        for (int ch = 0; ch < c; ++ch) fg_perm.at(b, k, ch) = fg.at(b, perm[k], ch);
    OriConfig cfg;
    cfg.sinkhorn.tol = 1e-10;
    cfg.sinkhorn.max_iter = 4000;
    CHECK(ori(feat, fg, bg, cfg) == doctest::Approx(ori(feat, fg_perm, bg, cfg)).epsilon(1e-9));
  }
}

TEST_CASE("report identities hold exactly") {
  Rng rng(305);
  const int B = 2, K = 2, c = 6;
  Graph g;
  LossConfig cfg = tight_cfg();
  auto lg = build_losses(g, make_const(g, Tensor::random_normal({B, 3, 3, c}, rng)),
                         make_const(g, Tensor::random_normal({B, c}, rng)),
                         make_const(g, Tensor::random_normal({B, K, c}, rng)),
                         make_const(g, Tensor::random_normal({B, c}, rng)), cfg);
  CHECK(lg.report.l_oca == (lg.report.l_frg + lg.report.l_bkg) / 2.0);
  CHECK(lg.report.l_total == cfg.lambda1 * lg.report.l_oca + cfg.lambda2 * lg.report.l_ori);
  CHECK(lg.report.l_frg > 0.0);
  CHECK(lg.report.l_bkg > 0.0);
}

TEST_CASE("false-negative accounting on a constructed batch") {
  // one near-duplicate reference pair (cos ~ 0.9), one unrelated reference
  Tensor feat = Tensor({3, 2, 2, 4});
  Rng rng(306);
  for (std::size_t i = 0; i < feat.numel(); ++i) feat[i] = rng.normal();
  Tensor emb = Tensor::random_normal({3, 4}, rng);
  Tensor bg = Tensor::random_normal({3, 4}, rng);
  Tensor fg({3, 1, 4});
  const double a[4] = {1.0, 0.0, 0.0, 0.0};
  const double b[4] = {0.9, std::sqrt(1.0 - 0.81), 0.0, 0.0};  // cos(a,b) = 0.9
  const double u[4] = {0.0, 0.0, 1.0, 0.0};
  for (int k = 0; k < 4; ++k) {
    fg.at(0, 0, k) = a[k];
    fg.at(1, 0, k) = b[k];
    fg.at(2, 0, k) = u[k];
  }
  LossConfig cfg;
  cfg.lambda2 = 0.0;  // alignment only
  Graph g;
  auto lg = build_losses(g, make_const(g, feat), make_const(g, emb), make_const(g, fg),
                         make_const(g, bg), cfg);
  CHECK(lg.report.false_negative_count == 1);

  LossConfig keep_all = cfg;
  keep_all.oca.tau = 1.0;
  Graph g2;
  auto lg2 = build_losses(g2, make_const(g2, feat), make_const(g2, emb), make_const(g2, fg),
                          make_const(g2, bg), keep_all);
  CHECK(lg2.report.false_negative_count == 0);
  CHECK(lg.report.l_frg < lg2.report.l_frg);
}

TEST_CASE("objective gradients match finite differences on random instances") {
  Rng rng(307);
  LossConfig cfg = tight_cfg();
  const int B = 2, K = 2, d1 = 4, d2 = 4, c = 8;
  auto build = [&cfg](Graph& g, std::vector<Var>& v) {
    return build_losses(g, v[0], v[1], v[2], v[3], cfg).total;
  };
  for (int instance = 0; instance < 2; ++instance) {
    std::vector<Tensor> leaves{
        Tensor::random_normal({B, d1, d2, c}, rng, 0.6), Tensor::random_normal({B, c}, rng, 0.6),
        Tensor::random_normal({B, K, c}, rng, 0.6), Tensor::random_normal({B, c}, rng, 0.6)};
    Graph g;
    std::vector<Var> vars;
    for (const Tensor& t : leaves) vars.push_back(make_leaf(g, t));
    Var root = build(g, vars);
    g.backward(root.id);
    testutil::GradCheck gc;
    gc.h = 1e-5;
    gc.tol = 1e-3;
    gc.eval = [&](const std::vector<Tensor>& ts) {
      Graph g2;
      std::vector<Var> vs;
      for (const Tensor& t : ts) vs.push_back(make_leaf(g2, t));
      return build(g2, vs).val()[0];
    };
    Rng probe(308 + instance);
    testutil::check_gradient(gc, leaves, 0, vars[0].grad(), probe, 10, "d/d feat");
    testutil::check_gradient(gc, leaves, 1, vars[1].grad(), probe, 6, "d/d audio");
    testutil::check_gradient(gc, leaves, 2, vars[2].grad(), probe, 6, "d/d fg refs");
    testutil::check_gradient(gc, leaves, 3, vars[3].grad(), probe, 6, "d/d bg ref");
  }
}

TEST_CASE("lambda2=0 skips the transport subgraph") {
  Rng rng(309);
  LossConfig cfg;
  cfg.lambda2 = 0.0;
  Graph g;
  auto lg = build_losses(g, make_const(g, Tensor::random_normal({1, 2, 2, 4}, rng)),
                         make_const(g, Tensor::random_normal({1, 4}, rng)),
                         make_const(g, Tensor::random_normal({1, 1, 4}, rng)),
                         make_const(g, Tensor::random_normal({1, 4}, rng)), cfg);
  CHECK(lg.report.l_ori == 0.0);
  CHECK(lg.report.l_total == cfg.lambda1 * lg.report.l_oca);
}
