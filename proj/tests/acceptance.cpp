// Acceptance suite: one self-contained check per release criterion, each
// printed as a single PASS/FAIL line. Everything runs offline (fixture
// caption client) and from fixed seeds.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "avmaps/avmaps.hpp"
#include "core/ops.hpp"
#include "core/rng.hpp"
#include "core/serialize.hpp"
#include "dataio/dataio.hpp"
#include "evalkit/evalkit.hpp"
#include "losses/losses.hpp"
#include "ot/ot.hpp"
#include "runner/runner.hpp"
#include "runner/trainer.hpp"

using namespace avloc;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Criterion {
  std::string id;
  std::string title;
  std::function<std::string()> run;  // empty string = pass, else failure note
};

std::string root_dir() {
  const fs::path dir = fs::temp_directory_path() / "avloc_acceptance";
  fs::create_directories(dir);
  return dir.string();
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

// ---------- C1: contrastive loss scalar oracles ----------
std::string c1_loss_value_oracles() {
  const Tensor aligned({1, 2}, {1.0, 0.0});
  const Tensor anti({1, 2}, {-1.0, 0.0});
  const double frg = losses::oca_frg(aligned, anti, aligned);
  const double want_frg = 0.126928;  // scalar oracle: -log(e / (e + 1/e))
  if (std::fabs(frg - want_frg) > 1e-6)
    return "aligned/anti-aligned value " + std::to_string(frg) + " != 0.126928";
  const double degenerate = losses::oca_frg(aligned, aligned, aligned);
  if (std::fabs(degenerate - std::log(2.0)) > 1e-6)
    return "degenerate value " + std::to_string(degenerate) + " != ln 2";
  return "";
}

// ---------- C2: analytic gradients of the full objective ----------
std::string c2_gradient_correctness() {
  losses::LossConfig cfg;
  cfg.ori.sinkhorn.tol = 1e-11;
  cfg.ori.sinkhorn.max_iter = 6000;
  const int B = 2, K = 2, d1 = 4, d2 = 4, c = 8;
  Rng rng(20260808);
  int checked = 0;
  double worst = 0.0;
  for (int instance = 0; instance < 20; ++instance) {
    const Tensor feat = Tensor::random_normal({B, d1, d2, c}, rng, 0.6);
    const Tensor emb = Tensor::random_normal({B, c}, rng, 0.6);
    const Tensor fg = Tensor::random_normal({B, K, c}, rng, 0.6);
    const Tensor bg = Tensor::random_normal({B, c}, rng, 0.6);
    Graph g;
    Var fv = make_leaf(g, feat);
    Var av = make_leaf(g, emb);
    auto lg = losses::build_losses(g, fv, av, make_const(g, fg), make_const(g, bg), cfg);
    g.backward(lg.total.id);
    auto eval_at = [&](const Tensor& f, const Tensor& a) {
      Graph g2;
      return losses::build_losses(g2, make_leaf(g2, f), make_leaf(g2, a), make_const(g2, fg),
                                  make_const(g2, bg), cfg)
          .report.l_total;
    };
    const double h = 1e-5;
    auto probe = [&](bool visual, std::size_t idx) -> std::string {
      Tensor fp = feat, fm = feat, ap = emb, am = emb;
      if (visual) {
        fp[idx] += h;
        fm[idx] -= h;
      } else {
        ap[idx] += h;
        am[idx] -= h;
      }
      const double fd = (eval_at(fp, ap) - eval_at(fm, am)) / (2 * h);
      const double an = visual ? fv.grad()[idx] : av.grad()[idx];
      const double rel = std::fabs(fd - an) / std::max({std::fabs(fd), std::fabs(an), 1e-8});
      worst = std::max(worst, rel);
      ++checked;
      if (rel > 1e-3)
        return std::string(visual ? "feature" : "audio") + " grad mismatch at instance " +
               std::to_string(instance) + " idx " + std::to_string(idx) + ": fd=" +
               std::to_string(fd) + " an=" + std::to_string(an);
      return "";
    };
    for (int p = 0; p < 9; ++p) {
      const std::string err = probe(true, rng.next_u64() % feat.numel());
      if (!err.empty()) return err;
    }
    for (int p = 0; p < 5; ++p) {
      const std::string err = probe(false, rng.next_u64() % emb.numel());
      if (!err.empty()) return err;
    }
  }
  std::printf("        [C2] %d probes across 20 instances, worst rel err %.2e\n", checked, worst);
  return "";
}

// ---------- C3: transport solver against the exact oracle ----------
std::string c3_transport_oracle() {
  // hand cases solved exactly by the LP oracle
  {
    ot::CostMatrix unit;
    unit.data = Tensor({2, 2}, {0, 1, 1, 0});
    ot::Distribution p, q;
    p.mass = Tensor({2}, {1.0, 0.0});
    q.mass = Tensor({2}, {0.0, 1.0});
    if (std::fabs(ot::exact_emd_oracle(p, q, unit) - 1.0) > 1e-12) return "hand case W=1 failed";
    p.mass = Tensor({2}, {0.7, 0.3});
    q.mass = Tensor({2}, {0.3, 0.7});
    if (std::fabs(ot::exact_emd_oracle(p, q, unit) - 0.4) > 1e-12) return "hand case W=0.4 failed";
    ot::CostMatrix line;
    line.data = Tensor({3, 3}, {0, 1, 2, 1, 0, 1, 2, 1, 0});
    ot::Distribution p3, q3;
    p3.mass = Tensor({3}, {1.0, 0.0, 0.0});
    q3.mass = Tensor({3}, {0.0, 0.0, 1.0});
    if (std::fabs(ot::exact_emd_oracle(p3, q3, line) - 2.0) > 1e-12) return "hand case W=2 failed";
  }
  Rng rng(31337);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 2 + static_cast<int>(rng.next_u64() % 7);
    Tensor a({n}), b({n}), coords({n, 2});
    for (int i = 0; i < n; ++i) {
      a[static_cast<std::size_t>(i)] = rng.uniform();
      b[static_cast<std::size_t>(i)] = rng.uniform();
      coords.at(i, 0) = rng.uniform(0.0, 2.0);
      coords.at(i, 1) = rng.uniform(0.0, 2.0);
    }
    const auto P = ot::normalize_to_simplex(a, coords);
    const auto Q = ot::normalize_to_simplex(b, coords);
    const auto C = ot::build_cost(a, b, coords);
    ot::SinkhornConfig cfg;
    cfg.epsilon = 0.01;
    cfg.max_iter = 6000;
    cfg.tol = 1e-10;
    const double approx = ot::sinkhorn(P, Q, C, cfg).distance;
    const double exact = ot::exact_emd_oracle(P, Q, C);
    const double gap = std::fabs(approx - exact);
    worst = std::max(worst, gap - 0.01 * std::log(n));
    if (gap > 0.01 * std::log(n) + 1e-3)
      return "trial " + std::to_string(trial) + ": gap " + std::to_string(gap) +
             " exceeds bound at n=" + std::to_string(n);
  }
  return "";
}

// ---------- C4: mask algebra ----------
std::string c4_mask_algebra() {
  const Tensor sa({1, 1, 2}, {0.65, 0.4});
  const avmaps::MaskPair mp = avmaps::masks(sa);
  if (mp.foreground[0] != 0.5) return "foreground mask at alpha_p is not exactly 0.5";
  if (mp.background[1] != 0.5) return "background mask at alpha_n is not exactly 0.5";
  // Monotone everywhere at 64-bit; strictly so wherever the sigmoid has not
  // saturated to an exact 0 or 1.
  auto interior = [](double v) { return v > 1e-12 && v < 1.0 - 1e-12; };
  Rng rng(777);
  for (int trial = 0; trial < 1000; ++trial) {
    const double s = rng.uniform(-1.0, 1.0);
    const double bump = rng.uniform(1e-9, 0.3);
    const avmaps::MaskPair lo = avmaps::masks(Tensor({1, 1, 1}, {s}));
    const avmaps::MaskPair hi = avmaps::masks(Tensor({1, 1, 1}, {s + bump}));
    if (hi.foreground[0] < lo.foreground[0])
      return "foreground mask decreased at s=" + std::to_string(s);
    if (hi.background[0] > lo.background[0])
      return "background mask increased at s=" + std::to_string(s);
    if (interior(lo.foreground[0]) && interior(hi.foreground[0]) &&
        !(hi.foreground[0] > lo.foreground[0]))
      return "foreground mask not strictly increasing at s=" + std::to_string(s);
    if (interior(lo.background[0]) && interior(hi.background[0]) &&
        !(hi.background[0] < lo.background[0]))
      return "background mask not strictly decreasing at s=" + std::to_string(s);
  }
  return "";
}

// ---------- C5: false-negative threshold behavior ----------
std::string c5_false_negative_threshold() {
  Rng rng(888);
  const int B = 3, c = 4;
  Tensor feat = Tensor::random_normal({B, 2, 2, c}, rng);
  Tensor emb = Tensor::random_normal({B, c}, rng);
  Tensor bg = Tensor::random_normal({B, c}, rng);
  Tensor fg({B, 1, c});
  // references: one near-duplicate pair at cosine 0.9, third unrelated
  const double ra[4] = {1, 0, 0, 0};
  const double rb[4] = {0.9, std::sqrt(1.0 - 0.81), 0, 0};
  const double rc[4] = {0, 0, 1, 0};
  for (int k = 0; k < c; ++k) {
    fg.at(0, 0, k) = ra[k];
    fg.at(1, 0, k) = rb[k];
    fg.at(2, 0, k) = rc[k];
  }
  losses::LossConfig cfg;
  cfg.lambda2 = 0.0;
  Graph g1, g2;
  auto with_thr = losses::build_losses(g1, make_const(g1, feat), make_const(g1, emb),
                                       make_const(g1, fg), make_const(g1, bg), cfg);
  losses::LossConfig keep = cfg;
  keep.oca.tau = 1.0;
  auto keep_all = losses::build_losses(g2, make_const(g2, feat), make_const(g2, emb),
                                       make_const(g2, fg), make_const(g2, bg), keep);
  if (with_thr.report.false_negative_count != 1)
    return "expected exactly one excluded reference pair, got " +
           std::to_string(with_thr.report.false_negative_count);
  if (keep_all.report.false_negative_count != 0)
    return "tau=1.0 should exclude nothing";
  if (!(with_thr.report.l_frg < keep_all.report.l_frg))
    return "loss with tau=0.7 (" + std::to_string(with_thr.report.l_frg) +
           ") not strictly below tau=1.0 (" + std::to_string(keep_all.report.l_frg) + ")";
  return "";
}

// ---------- shared helpers for the training criteria ----------

json base_train_cfg(const std::string& manifest, const std::string& cache,
                    const std::string& out_dir, std::uint64_t seed) {
  // Desk-scale recipe: soft masks widen the gradient path of a from-scratch
  // backbone; defaults elsewhere.
  return json{{"manifest", manifest},
              {"caption_cache", cache},
              {"out_dir", out_dir},
              {"seed", seed},
              {"steps", 450},
              {"batch_size", 16},
              {"threads", 0},
              {"encoder", {{"feature_channels", 16}, {"spatial_downsample", 32}, {"seed", seed}}},
              // tau sits between the duplicate-caption similarity (1.0) and the
              // cross-class similarity of the hashed caption embeddings (~0.83,
              // raised by the shared prefix tokens)
              {"loss",
               {{"tau", 0.9},
                {"lambda1", 1.0},
                {"lambda2", 0.1},
                {"alpha_p", 0.4},
                {"alpha_n", 0.3},
                {"omega", 0.18},
                {"sinkhorn", {{"epsilon", 0.05}, {"max_iter", 50}, {"tol", 1e-5}}}}},
              {"optimizer", {{"lr", 3e-4}}}};
}

void make_captions(const std::string& manifest, const std::string& cache) {
  runner::run_caption(json{{"manifest", manifest},
                           {"caption_cache", cache},
                           {"client", {{"mode", "fixture"}}}});
}

double center_prior_success(const dataio::Dataset& data, double thr) {
  std::vector<double> scores;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& e = data.entry(i);
    const Tensor img = data.image(i);
    const int H = img.dim(1), W = img.dim(2);
    evalkit::HeatmapPrediction pred;
    pred.maps = Tensor({1, H, W});
    const double cy = (H - 1) / 2.0, cx = (W - 1) / 2.0;
    const double sigma = std::min(H, W) / 4.0;
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        pred.maps.at(0, y, x) =
            std::exp(-((y - cy) * (y - cy) + (x - cx) * (x - cx)) / (2 * sigma * sigma));
    pred.classes = {e.class_labels[0]};
    scores.push_back(evalkit::ciou(pred, e.gt_boxes)[0]);
  }
  return evalkit::success_rate(scores, thr);
}

// ---------- C6: single-source training beats both baselines ----------
std::string c6_single_source_training() {
  const std::string dir = root_dir() + "/c6";
  const std::string data_dir = dir + "/data";
  if (!fs::exists(data_dir + "/manifest.jsonl")) {
    dataio::SyntheticSpec spec;
    spec.seed = 60;
    spec.n_clips = 500;
    spec.silent_distractor_prob = 1.0;  // every clip carries a silent distractor
    dataio::generate_synthetic(spec, data_dir);
  }
  const std::string manifest = data_dir + "/manifest.jsonl";
  const std::string cache = dir + "/captions.jsonl";
  make_captions(manifest, cache);

  const json tc = base_train_cfg(manifest, cache, dir + "/run", 61);
  const json train_report = runner::run_train(tc);

  auto success_of = [&](const std::string& ckpt) {
    const json report = runner::run_eval(json{{"checkpoint", ckpt},
                                              {"manifest", manifest},
                                              {"mode", "single"}});
    return report.at("iou_at_05").get<double>();
  };
  const double trained = success_of(train_report.at("checkpoint_final"));
  const double untrained = success_of(train_report.at("checkpoint_init"));
  dataio::Dataset data(manifest);
  const double center = center_prior_success(data, 0.5);
  std::printf("        [C6] IoU@0.5 success: trained=%s untrained=%s center=%s\n",
              fmt(trained).c_str(), fmt(untrained).c_str(), fmt(center).c_str());
  if (trained < untrained + 0.2)
    return "trained " + fmt(trained) + " does not beat untrained " + fmt(untrained) + " by 0.2";
  if (trained < center + 0.2)
    return "trained " + fmt(trained) + " does not beat center prior " + fmt(center) + " by 0.2";
  return "";
}

// ---------- C7: region isolation separates duet sources ----------

// Mean IoU between the two independently binarized per-source maps (no
// cross-iteration suppression), the overlap the isolation loss should shrink.
double duet_overlap(const encoders::ToyEncoders& model, const dataio::Dataset& data) {
  double total = 0.0;
  int counted = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Tensor img = data.image(i);
    const auto feat = model.encode_visual(img.reshaped({1, 3, img.dim(1), img.dim(2)}));
    const auto comps = data.component_spectrograms(i);
    if (comps.size() != 2) continue;
    std::vector<std::vector<char>> masks;
    for (const Tensor& sp : comps) {
      const auto emb = model.encode_audio(sp.reshaped({1, 1, sp.dim(1), sp.dim(2)}));
      const auto sm = avmaps::cosine_map(feat.data, emb.data);
      double mx = -2.0, mn = 2.0;
      for (std::size_t t = 0; t < sm.data.numel(); ++t) {
        mx = std::max(mx, sm.data[t]);
        mn = std::min(mn, sm.data[t]);
      }
      std::vector<char> mask(sm.data.numel(), 0);
      const double thr = mn + 0.5 * (mx - mn);
      for (std::size_t t = 0; t < sm.data.numel(); ++t) mask[t] = sm.data[t] >= thr ? 1 : 0;
      masks.push_back(std::move(mask));
    }
    int inter = 0, uni = 0;
    for (std::size_t t = 0; t < masks[0].size(); ++t) {
      inter += (masks[0][t] && masks[1][t]) ? 1 : 0;
      uni += (masks[0][t] || masks[1][t]) ? 1 : 0;
    }
    total += uni > 0 ? static_cast<double>(inter) / uni : 0.0;
    ++counted;
  }
  return counted > 0 ? total / counted : 0.0;
}

std::string c7_region_isolation() {
  const std::string dir = root_dir() + "/c7";
  const std::string data_dir = dir + "/data";
  if (!fs::exists(data_dir + "/manifest.jsonl")) {
    dataio::SyntheticSpec spec;
    spec.seed = 70;
    spec.n_clips = 300;
    spec.duet = true;
    spec.silent_distractor_prob = 0.5;
    dataio::generate_synthetic(spec, data_dir);
  }
  const std::string manifest = data_dir + "/manifest.jsonl";
  const std::string cache = dir + "/captions.jsonl";
  make_captions(manifest, cache);
  dataio::Dataset data(manifest);

  double overlap_with = 0.0, overlap_without = 0.0;
  double ciou_with = 0.0, ciou_without = 0.0;
  const std::vector<std::uint64_t> seeds{71, 72, 73};
  for (std::uint64_t seed : seeds) {
    for (const bool isolation : {true, false}) {
      json tc = base_train_cfg(manifest, cache, dir + "/run_" + std::to_string(seed) +
                                                    (isolation ? "_ori" : "_plain"),
                               seed);
      tc["steps"] = 260;
      tc["batch_size"] = 8;
      tc["loss"]["lambda2"] = isolation ? 0.1 : 0.0;
      const json train_report = runner::run_train(tc);
      long long step = 0;
      auto model = runner::load_checkpoint(train_report.at("checkpoint_final"), nullptr, &step);
      const double ov = duet_overlap(*model, data);
      // identify thresholds match the soft masks the model was trained with
      const json eval_report = runner::run_eval(
          json{{"checkpoint", train_report.at("checkpoint_final")},
               {"manifest", manifest},
               {"mode", "multi"},
               {"identify", {{"alpha_p", 0.4}, {"omega", 0.18}}}});
      const double ci = eval_report.at("ciou_at_03").get<double>();
      if (isolation) {
        overlap_with += ov / seeds.size();
        ciou_with += ci / seeds.size();
      } else {
        overlap_without += ov / seeds.size();
        ciou_without += ci / seeds.size();
      }
    }
  }
  std::printf("        [C7] overlap with/without isolation: %s / %s ; CIoU@0.3 with/without: %s / %s\n",
              fmt(overlap_with).c_str(), fmt(overlap_without).c_str(), fmt(ciou_with).c_str(),
              fmt(ciou_without).c_str());
  if (!(overlap_with < overlap_without))
    return "pairwise overlap " + fmt(overlap_with) + " not below " + fmt(overlap_without);
  if (!(ciou_with > ciou_without))
    return "duet CIoU@0.3 " + fmt(ciou_with) + " not above " + fmt(ciou_without);
  return "";
}

// ---------- C8: metric oracles ----------
std::string c8_metric_oracles() {
  Rng rng(808);
  for (int trial = 0; trial < 200; ++trial) {
    const int H = 2 + static_cast<int>(rng.next_u64() % 15);
    const int W = 2 + static_cast<int>(rng.next_u64() % 15);
    Tensor map({1, H, W});
    for (std::size_t i = 0; i < map.numel(); ++i) map[i] = rng.uniform();
    dataio::GtBox box;
    box.cls = "c";
    box.x0 = static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(W));
    box.y0 = static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(H));
    box.x1 = box.x0 + 1 + static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(W - box.x0));
    box.y1 = box.y0 + 1 + static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(H - box.y0));
    evalkit::HeatmapPrediction pred;
    pred.maps = map;
    pred.classes = {"c"};
    const double got = evalkit::ciou(pred, {box})[0];

    // brute-force pixel sets
    double mx = 0.0;
    for (std::size_t i = 0; i < map.numel(); ++i) mx = std::max(mx, map[i]);
    int inter = 0, mask_n = 0, box_n = 0;
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const bool in_mask = map.at(0, y, x) >= 0.5 * mx;
        const bool in_box = x >= box.x0 && x < box.x1 && y >= box.y0 && y < box.y1;
        mask_n += in_mask ? 1 : 0;
        box_n += in_box ? 1 : 0;
        inter += (in_mask && in_box) ? 1 : 0;
      }
    const double want = (mask_n + box_n - inter) > 0
                            ? static_cast<double>(inter) / (mask_n + box_n - inter)
                            : 0.0;
    if (std::fabs(got - want) > 1e-9)
      return "ciou mismatch " + std::to_string(got) + " vs " + std::to_string(want);

    // AP against a naive PR enumeration on <=5 items
    const int n = 1 + static_cast<int>(rng.next_u64() % 5);
    std::vector<double> conf;
    std::vector<unsigned char> succ;
    for (int i = 0; i < n; ++i) {
      conf.push_back(rng.uniform());
      succ.push_back(rng.uniform() < 0.5 ? 1 : 0);
    }
    std::size_t pos = 0;
    for (auto s : succ) pos += s;
    double want_ap = 0.0;
    if (pos > 0) {
      std::vector<std::size_t> order(conf.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t a, std::size_t b) { return conf[a] > conf[b]; });
      for (std::size_t k = 0; k < order.size(); ++k) {
        if (!succ[order[k]]) continue;
        double best = 0.0;
        for (std::size_t j = k; j < order.size(); ++j) {
          std::size_t tp = 0;
          for (std::size_t t = 0; t <= j; ++t) tp += succ[order[t]] ? 1 : 0;
          best = std::max(best, static_cast<double>(tp) / static_cast<double>(j + 1));
        }
        want_ap += best / static_cast<double>(pos);
      }
    }
    if (std::fabs(evalkit::average_precision(conf, succ) - want_ap) > 1e-9)
      return "average precision mismatch on trial " + std::to_string(trial);

    // AUC identity: mean of success_rate over the 20-threshold grid
    std::vector<double> scores;
    for (int i = 0; i < 7; ++i) scores.push_back(rng.uniform());
    double mean_sr = 0.0;
    for (int t = 0; t < 20; ++t) mean_sr += evalkit::success_rate(scores, t * 0.05);
    mean_sr /= 20.0;
    if (evalkit::auc(scores) != mean_sr) return "auc identity violated";
  }
  return "";
}

// ---------- C9: determinism and cache idempotence ----------
std::string c9_determinism() {
  const std::string dir = root_dir() + "/c9";
  fs::remove_all(dir);
  const std::string data_dir = dir + "/data";
  dataio::SyntheticSpec spec;
  spec.seed = 90;
  spec.n_clips = 32;
  dataio::generate_synthetic(spec, data_dir);
  const std::string manifest = data_dir + "/manifest.jsonl";
  const std::string cache = dir + "/captions.jsonl";

  const json cap1 = runner::run_caption(json{{"manifest", manifest},
                                             {"caption_cache", cache},
                                             {"client", {{"mode", "fixture"}}}});
  if (cap1.at("generated") != 32) return "caption pass did not cover the corpus";
  const json cap2 = runner::run_caption(json{{"manifest", manifest},
                                             {"caption_cache", cache},
                                             {"client", {{"mode", "fixture"}}}});
  if (cap2.at("cached") != 32 || cap2.at("client_calls") != 0)
    return "caption re-run was not a pure cache hit";
  std::ifstream cache_in(cache);
  int lines = 0;
  std::string line;
  while (std::getline(cache_in, line))
    if (!line.empty()) ++lines;
  if (lines != 32) return "cache grew beyond one line per clip: " + std::to_string(lines);

  auto one_run = [&](const std::string& tag) {
    json tc = base_train_cfg(manifest, cache, dir + "/" + tag, 91);
    tc["steps"] = 8;
    tc["batch_size"] = 8;
    const json train_report = runner::run_train(tc);
    const json eval_report = runner::run_eval(json{{"checkpoint", train_report.at("checkpoint_final")},
                                                   {"manifest", manifest},
                                                   {"mode", "single"}});
    return std::make_pair(read_text_file(train_report.at("log").get<std::string>()),
                          eval_report.dump());
  };
  const auto [log_a, eval_a] = one_run("run_a");
  const auto [log_b, eval_b] = one_run("run_b");
  if (log_a != log_b) return "loss logs differ between identical seeds";
  if (eval_a != eval_b) return "metric reports differ between identical seeds";
  if (log_a.find("\"l_total\"") == std::string::npos) return "loss log missing fields";
  return "";
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {"C1", "contrastive loss scalar oracles", c1_loss_value_oracles},
      {"C2", "objective gradients vs central differences", c2_gradient_correctness},
      {"C3", "entropic transport vs exact oracle", c3_transport_oracle},
      {"C4", "mask midpoint and monotonicity algebra", c4_mask_algebra},
      {"C5", "false-negative threshold exclusion", c5_false_negative_threshold},
      {"C6", "single-source training beats baselines by 0.2", c6_single_source_training},
      {"C7", "region isolation shrinks duet overlap, lifts CIoU", c7_region_isolation},
      {"C8", "metric implementations vs brute-force oracles", c8_metric_oracles},
      {"C9", "pipeline determinism and caption-cache idempotence", c9_determinism},
  };
  int failures = 0;
  for (const auto& crit : criteria) {
    const auto start = std::chrono::steady_clock::now();
    std::string err;
    try {
      err = crit.run();
    } catch (const std::exception& e) {
      err = std::string("exception: ") + e.what();
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (err.empty()) {
      std::printf("PASS  %s  %s  (%.1fs)\n", crit.id.c_str(), crit.title.c_str(), secs);
    } else {
      std::printf("FAIL  %s  %s  (%.1fs): %s\n", crit.id.c_str(), crit.title.c_str(), secs,
                  err.c_str());
      ++failures;
    }
    std::fflush(stdout);
  }
  if (failures == 0)
    std::printf("acceptance: all %zu criteria passed\n", criteria.size());
  else
    std::printf("acceptance: %d of %zu criteria FAILED\n", failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
