#include "runner/runner.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <limits>

#include "avmaps/avmaps.hpp"
#include "core/error.hpp"
#include "core/rng.hpp"
#include "core/serialize.hpp"
#include "dataio/imageio.hpp"
#include "evalkit/evalkit.hpp"
#include "guidance/guidance.hpp"
#include "losses/losses.hpp"
#include "ot/ot.hpp"
#include "runner/trainer.hpp"

namespace avloc::runner {

namespace fs = std::filesystem;

nlohmann::json run_synth(const nlohmann::json& cfg) {
  const dataio::SyntheticSpec spec = dataio::synthetic_spec_from_json(cfg);
  const std::string out_dir = cfg.at("out_dir").get<std::string>();
  const auto entries = dataio::generate_synthetic(spec, out_dir);
  return nlohmann::json{{"command", "synth"},
                        {"out_dir", out_dir},
                        {"manifest", (fs::path(out_dir) / "manifest.jsonl").string()},
                        {"n_clips", entries.size()},
                        {"duet", spec.duet}};
}

namespace {

std::unique_ptr<guidance::CaptionClient> make_client(const nlohmann::json& cfg,
                                                     const dataio::Dataset& data) {
  const std::string mode = cfg.value("client", nlohmann::json::object()).value("mode", "fixture");
  if (mode == "fixture") {
    auto client = std::make_unique<guidance::FixtureClient>();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const auto& e = data.entry(i);
      client->add_clip(e.clip_id,
                       guidance::FixtureClient::ClipTruth{e.class_labels, e.distractor_classes});
    }
    return client;
  }
  if (mode == "http") {
    const auto& c = cfg.at("client");
    std::string endpoint = c.value("endpoint", "");
    if (endpoint.empty()) {
      const char* env = std::getenv("AVLOC_MLLM_ENDPOINT");
      if (!env || !*env)
        throw ValidationError(
            "http caption client needs client.endpoint or AVLOC_MLLM_ENDPOINT");
      endpoint = env;
    }
    return std::make_unique<guidance::HttpClient>(endpoint, c.value("model", "mllm"),
                                                  c.value("timeout_ms", 30000));
  }
  throw ValidationError("unknown caption client mode: " + mode);
}

}  // namespace

nlohmann::json run_caption(const nlohmann::json& cfg) {
  const std::string manifest = cfg.at("manifest").get<std::string>();
  const std::string cache_path = cfg.at("caption_cache").get<std::string>();
  const int max_retries = cfg.value("max_retries", 3);
  dataio::Dataset data(manifest);
  auto client = make_client(cfg, data);
  guidance::CaptionCache cache(cache_path);

  const std::string manifest_dir = fs::path(manifest).parent_path().string();
  int generated = 0, cached = 0, client_calls = 0;
  nlohmann::json flagged = nlohmann::json::array();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& e = data.entry(i);
    guidance::ClipForCaptioning clip;
    clip.clip_id = e.clip_id;
    clip.class_labels = e.class_labels;
    clip.expected_k = e.K;
    clip.image_path = (fs::path(manifest_dir) / e.image_path).string();
    try {
      const auto outcome = guidance::get_or_generate(clip, *client, cache, max_retries);
      client_calls += outcome.client_calls;
      if (outcome.from_cache)
        ++cached;
      else
        ++generated;
    } catch (const Error& err) {
      flagged.push_back({{"clip_id", e.clip_id}, {"error", err.what()}});
      client_calls += max_retries;
    }
  }
  return nlohmann::json{{"command", "caption"},
                        {"cache", cache_path},
                        {"total", data.size()},
                        {"generated", generated},
                        {"cached", cached},
                        {"failed", flagged.size()},
                        {"flagged", flagged},
                        {"client_calls", client_calls},
                        {"prompt_version", guidance::prompt_version()}};
}

nlohmann::json run_train(const nlohmann::json& cfg) {
  const TrainConfig tc = train_config_from_json(cfg);
  const TrainOutcome out = train(tc);
  return nlohmann::json{{"command", "train"},
                        {"steps", out.steps_run},
                        {"log", out.log_path},
                        {"checkpoint_init", out.init_checkpoint},
                        {"checkpoint_final", out.final_checkpoint},
                        {"first_l_total", out.first_total},
                        {"last_l_total", out.last_total}};
}

namespace {

Tensor minmax01(const Tensor& map) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (std::size_t i = 0; i < map.numel(); ++i) {
    lo = std::min(lo, map[i]);
    hi = std::max(hi, map[i]);
  }
  Tensor out(map.shape());
  const double span = hi - lo;
  for (std::size_t i = 0; i < map.numel(); ++i)
    out[i] = span > 0.0 ? (map[i] - lo) / span : 0.0;
  return out;
}

Tensor slice3(const Tensor& t, int k) {
  const int d1 = t.dim(1), d2 = t.dim(2);
  Tensor out({d1, d2});
  for (int i = 0; i < d1; ++i)
    for (int j = 0; j < d2; ++j) out.at(i, j) = t.at(k, i, j);
  return out;
}

// Per-clip heatmaps from a trained model. Single-source clips localize with
// the mixed audio embedding; multi-source clips run the iterative pass over
// per-component embeddings when the corpus provides them.
struct ClipPrediction {
  evalkit::HeatmapPrediction pred;
  std::vector<double> confidences;  // per source, from the raw (un-normalized) maps
  bool flagged = false;
};

avmaps::IdentifyConfig identify_config_from_json(const nlohmann::json& cfg) {
  avmaps::IdentifyConfig id_cfg;
  if (cfg.contains("identify")) {
    const auto& j = cfg.at("identify");
    id_cfg.alpha_p = j.value("alpha_p", id_cfg.alpha_p);
    id_cfg.omega = j.value("omega", id_cfg.omega);
    id_cfg.theta_id = j.value("theta_id", id_cfg.theta_id);
  }
  return id_cfg;
}

ClipPrediction predict_clip(const encoders::ToyEncoders& model, const dataio::Dataset& data,
                            std::size_t i, bool multi, int threads,
                            const avmaps::IdentifyConfig& id_cfg, bool mixed_audio) {
  ClipPrediction out;
  const auto& e = data.entry(i);
  const Tensor img = data.image(i);
  const int H = img.dim(1), W = img.dim(2);
  Tensor batch_img = img.reshaped({1, 3, H, W});
  const encoders::VisualFeatureMap feat = model.encode_visual(batch_img, threads);
  const int d1 = feat.rows, d2 = feat.cols, c = feat.channels;
  Tensor feat_single = feat.data.reshaped({d1, d2, c});

  if (!multi) {
    const Tensor spect = data.spectrogram(i);
    const encoders::AudioEmbedding emb =
        model.encode_audio(spect.reshaped({1, 1, spect.dim(1), spect.dim(2)}), threads);
    const avmaps::SoundAssociatedMap sm = avmaps::cosine_map(feat.data, emb.data);
    const Tensor up = avmaps::bilinear_upsample(minmax01(slice3(sm.data, 0)), H, W);
    out.pred.maps = Tensor({1, H, W});
    std::copy(up.vec().begin(), up.vec().end(), out.pred.maps.vec().begin());
    out.pred.classes = {e.class_labels.empty() ? std::string("unknown") : e.class_labels[0]};
    out.confidences = {*std::max_element(sm.data.vec().begin(), sm.data.vec().end())};
    return out;
  }

  const int K = e.K;
  std::vector<Tensor> comp_spects = data.component_spectrograms(i);
  std::vector<Tensor> comp_embs;
  comp_embs.reserve(comp_spects.size());
  for (const Tensor& sp : comp_spects) {
    const encoders::AudioEmbedding emb =
        model.encode_audio(sp.reshaped({1, 1, sp.dim(1), sp.dim(2)}), threads);
    comp_embs.push_back(emb.data.reshaped({c}));
  }

  avmaps::LocalizationResult loc;
  std::vector<int> region_component(static_cast<std::size_t>(K));
  if (!mixed_audio && static_cast<int>(comp_embs.size()) == K) {
    // one embedding per source; iteration k localizes component k
    loc = avmaps::iterative_identify(feat_single, comp_embs, K, id_cfg);
    for (int k = 0; k < K; ++k) region_component[static_cast<std::size_t>(k)] = k;
  } else {
    // single mixture embedding; regions are claimed greedily, then each is
    // assigned the component whose audio embedding best matches the pooled
    // visual feature of the region
    const Tensor mix = data.spectrogram(i);
    const encoders::AudioEmbedding emb =
        model.encode_audio(mix.reshaped({1, 1, mix.dim(1), mix.dim(2)}), threads);
    loc = avmaps::iterative_identify(feat_single, {emb.data.reshaped({c})}, K, id_cfg);
    if (static_cast<int>(comp_embs.size()) == K) {
      Tensor sim({K, K});  // region k vs component j
      for (int k = 0; k < K; ++k) {
        std::vector<double> pooled(static_cast<std::size_t>(c), 0.0);
        for (int y = 0; y < feat.rows; ++y)
          for (int x = 0; x < feat.cols; ++x)
            if (loc.binarized_masks.at(k, y, x) > 0.5)
              for (int ch = 0; ch < c; ++ch)
                pooled[static_cast<std::size_t>(ch)] += feat_single.at(y, x, ch);
        for (int j = 0; j < K; ++j) {
          double dot = 0, np = 0, ne = 0;
          for (int ch = 0; ch < c; ++ch) {
            const double ev = comp_embs[static_cast<std::size_t>(j)][static_cast<std::size_t>(ch)];
            dot += pooled[static_cast<std::size_t>(ch)] * ev;
            np += pooled[static_cast<std::size_t>(ch)] * pooled[static_cast<std::size_t>(ch)];
            ne += ev * ev;
          }
          sim.at(k, j) = dot / std::max(std::sqrt(np * ne), 1e-8);
        }
      }
      std::vector<bool> region_done(static_cast<std::size_t>(K), false);
      std::vector<bool> comp_done(static_cast<std::size_t>(K), false);
      for (int round = 0; round < K; ++round) {
        double best = -2.0;
        int bk = 0, bj = 0;
        for (int k = 0; k < K; ++k)
          for (int j = 0; j < K; ++j)
            if (!region_done[static_cast<std::size_t>(k)] && !comp_done[static_cast<std::size_t>(j)] &&
                sim.at(k, j) > best) {
              best = sim.at(k, j);
              bk = k;
              bj = j;
            }
        region_component[static_cast<std::size_t>(bk)] = bj;
        region_done[static_cast<std::size_t>(bk)] = true;
        comp_done[static_cast<std::size_t>(bj)] = true;
      }
    } else {
      for (int k = 0; k < K; ++k) region_component[static_cast<std::size_t>(k)] = k;
    }
  }

  out.pred.maps = Tensor({K, H, W});
  for (int k = 0; k < K; ++k) {
    const Tensor up = avmaps::bilinear_upsample(slice3(loc.per_source_maps, k), H, W);
    double mx = 0.0;
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        out.pred.maps.at(k, y, x) = up.at(y, x);
        mx = std::max(mx, up.at(y, x));
      }
    out.confidences.push_back(mx);
    const int comp = region_component[static_cast<std::size_t>(k)];
    out.pred.classes.push_back(comp < static_cast<int>(e.class_labels.size())
                                   ? e.class_labels[static_cast<std::size_t>(comp)]
                                   : std::string("unknown"));
  }
  if (static_cast<int>(e.gt_boxes.size()) != K) out.flagged = true;
  return out;
}

}  // namespace

nlohmann::json run_eval(const nlohmann::json& cfg) {
  const std::string ckpt = cfg.at("checkpoint").get<std::string>();
  const std::string manifest = cfg.at("manifest").get<std::string>();
  const std::string mode = cfg.value("mode", "single");
  const int threads = cfg.value("threads", 0);
  const bool multi = mode == "multi";
  if (!multi && mode != "single") throw ValidationError("eval mode must be single or multi");
  const double thr = multi ? 0.3 : 0.5;
  const std::string rule_name = cfg.value("sample_rule", "all_sources_pass");
  const evalkit::SampleRule rule = rule_name == "mean_sources"
                                       ? evalkit::SampleRule::mean_sources
                                       : evalkit::SampleRule::all_sources_pass;

  dataio::Dataset data(manifest);
  auto model = load_checkpoint(ckpt, nullptr, nullptr);
  const avmaps::IdentifyConfig id_cfg = identify_config_from_json(cfg);
  const std::string audio_mode = cfg.value("audio", "mixed");
  if (audio_mode != "mixed" && audio_mode != "components")
    throw ValidationError("eval audio mode must be mixed or components");
  const bool mixed_audio = audio_mode == "mixed";

  evalkit::MetricReport report;
  report.mode = multi ? "multi" : "single";
  report.threshold = thr;
  std::vector<double> sample_scores;
  std::vector<double> confidences;            // per source in multi mode
  std::vector<unsigned char> successes;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& e = data.entry(i);
    ClipPrediction cp = predict_clip(*model, data, i, multi, threads, id_cfg, mixed_audio);
    if (cp.flagged) {
      ++report.flagged;
      continue;
    }
    const std::vector<double> src_scores = evalkit::ciou(cp.pred, e.gt_boxes, 0.5);
    const double sample_score = evalkit::reduce_sample(src_scores, rule);
    double conf = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < cp.pred.maps.dim(0); ++k) {
      const double mk = cp.confidences[static_cast<std::size_t>(k)];
      conf = std::max(conf, mk);
      if (multi) {
        confidences.push_back(mk);
        successes.push_back(src_scores[static_cast<std::size_t>(k)] >= thr ? 1 : 0);
      }
    }
    if (!multi) {
      confidences.push_back(conf);
      successes.push_back(sample_score >= thr ? 1 : 0);
    }
    sample_scores.push_back(sample_score);
    report.per_sample.push_back(evalkit::PerSample{e.clip_id, sample_score, conf,
                                                   sample_score >= thr, e.K});
  }
  if (sample_scores.empty()) throw ValidationError("evaluation produced no scorable samples");
  report.ap = evalkit::average_precision(confidences, successes);
  report.iou_at_thr = evalkit::success_rate(sample_scores, thr);
  report.auc_value = evalkit::auc(sample_scores);

  nlohmann::json out = evalkit::metric_report_to_json(report);
  out["command"] = "eval";
  out["checkpoint"] = ckpt;
  if (cfg.contains("out_dir")) {
    const std::string dir = cfg.at("out_dir").get<std::string>();
    fs::create_directories(dir);
    write_text_file((fs::path(dir) / ("metrics_" + report.mode + ".json")).string(), out.dump(2));
    write_text_file((fs::path(dir) / ("metrics_" + report.mode + ".txt")).string(),
                    evalkit::metric_report_table(report));
    write_text_file((fs::path(dir) / ("per_sample_" + report.mode + ".csv")).string(),
                    evalkit::metric_report_csv(report));
  }
  return out;
}

nlohmann::json run_visualize(const nlohmann::json& cfg) {
  const std::string ckpt = cfg.at("checkpoint").get<std::string>();
  const std::string manifest = cfg.at("manifest").get<std::string>();
  const std::string out_dir = cfg.at("out_dir").get<std::string>();
  const int threads = cfg.value("threads", 0);
  std::vector<std::string> clip_ids;
  if (cfg.contains("clip_ids")) clip_ids = cfg.at("clip_ids").get<std::vector<std::string>>();

  dataio::Dataset data(manifest);
  auto model = load_checkpoint(ckpt, nullptr, nullptr);
  const avmaps::IdentifyConfig id_cfg = identify_config_from_json(cfg);
  const bool mixed_audio = cfg.value("audio", "mixed") != "components";
  fs::create_directories(out_dir);

  nlohmann::json missing = nlohmann::json::array();
  int written = 0;
  std::vector<std::size_t> targets;
  if (clip_ids.empty()) {
    for (std::size_t i = 0; i < data.size(); ++i) targets.push_back(i);
  } else {
    for (const std::string& id : clip_ids) {
      bool found = false;
      for (std::size_t i = 0; i < data.size(); ++i)
        if (data.entry(i).clip_id == id) {
          targets.push_back(i);
          found = true;
          break;
        }
      if (!found) missing.push_back(id);
    }
  }

  for (std::size_t i : targets) {
    const auto& e = data.entry(i);
    const bool multi = e.K > 1;
    ClipPrediction cp = predict_clip(*model, data, i, multi, threads, id_cfg, mixed_audio);
    const Tensor img = data.image(i);
    const int H = img.dim(1), W = img.dim(2);
    nlohmann::json sidecar{{"clip_id", e.clip_id}, {"K", e.K}, {"threshold", 0.5}};
    nlohmann::json boxes = nlohmann::json::array();
    for (int k = 0; k < cp.pred.maps.dim(0); ++k) {
      const Tensor heat = slice3(cp.pred.maps, k);
      double mx = 0.0;
      for (std::size_t t = 0; t < heat.numel(); ++t) mx = std::max(mx, heat[t]);
      Tensor mask({H, W});
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) mask.at(y, x) = (mx > 0.0 && heat.at(y, x) >= 0.5 * mx) ? 1.0 : 0.0;
      const avmaps::PixelBox box = avmaps::bbox_of_mask(mask);
      boxes.push_back({{"source", k},
                        {"class", cp.pred.classes[static_cast<std::size_t>(k)]},
                        {"empty", box.empty},
                        {"x0", box.x0},
                        {"y0", box.y0},
                        {"x1", box.x1},
                        {"y1", box.y1}});
      const std::string stem = e.clip_id + "_src" + std::to_string(k);
      dataio::write_pgm((fs::path(out_dir) / (stem + ".pgm")).string(), heat);
      Tensor overlay = img;
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          const double h = heat.at(y, x);
          overlay.at(0, y, x) = std::min(1.0, 0.55 * overlay.at(0, y, x) + 0.45 * h);
          overlay.at(1, y, x) = 0.55 * overlay.at(1, y, x);
          overlay.at(2, y, x) = 0.55 * overlay.at(2, y, x);
        }
      dataio::write_ppm((fs::path(out_dir) / (stem + "_overlay.ppm")).string(), overlay);
      written += 2;
    }
    sidecar["boxes"] = boxes;
    write_text_file((fs::path(out_dir) / (e.clip_id + ".json")).string(), sidecar.dump(2));
    ++written;
  }
  return nlohmann::json{{"command", "visualize"},
                        {"out_dir", out_dir},
                        {"written", written},
                        {"missing", missing},
                        {"ok", missing.empty()}};
}

namespace {

nlohmann::json check(const std::string& name, bool pass, const std::string& detail) {
  return nlohmann::json{{"name", name}, {"pass", pass}, {"detail", detail}};
}

}  // namespace

nlohmann::json run_selftest(const nlohmann::json& cfg) {
  const std::uint64_t seed = cfg.value("seed", static_cast<std::uint64_t>(41));
  nlohmann::json checks = nlohmann::json::array();
  bool all = true;
  auto record = [&](const std::string& name, bool pass, const std::string& detail) {
    checks.push_back(check(name, pass, detail));
    all = all && pass;
  };

  // mask midpoints
  {
    const Tensor sa({1, 1, 2}, {0.65, 0.4});
    const auto mp = avmaps::masks(sa);
    const bool ok = std::fabs(mp.foreground[0] - 0.5) < 1e-12 &&
                    std::fabs(mp.background[1] - 0.5) < 1e-12;
    record("mask_midpoints", ok, "sigmoid crossings at alpha_p/alpha_n");
  }
  // contrastive scalar cases
  {
    const double lf = losses::oca_frg(Tensor({1, 2}, {1.0, 0.0}), Tensor({1, 2}, {-1.0, 0.0}),
                                      Tensor({1, 2}, {1.0, 0.0}));
    const double lb = losses::oca_bkg(Tensor({1, 2}, {1.0, 0.0}), Tensor({1, 2}, {1.0, 0.0}),
                                      Tensor({1, 2}, {1.0, 0.0}));
    const bool ok = std::fabs(lf - std::log(1.0 + std::exp(-2.0))) < 1e-9 &&
                    std::fabs(lb - std::log(2.0)) < 1e-9;
    record("contrastive_scalars", ok, "aligned/anti-aligned and degenerate cases");
  }
  // transport: solver against the exact oracle on random instances
  {
    Rng rng(seed);
    bool ok = true;
    std::string detail = "max gap within bound";
    for (int trial = 0; trial < 20 && ok; ++trial) {
      const int n = 2 + static_cast<int>(rng.next_u64() % 7);
      Tensor a({n}), b({n}), coords({n, 2});
      for (int i = 0; i < n; ++i) {
        a[static_cast<std::size_t>(i)] = rng.uniform();
        b[static_cast<std::size_t>(i)] = rng.uniform();
        coords.at(i, 0) = rng.uniform(0.0, 3.0);
        coords.at(i, 1) = rng.uniform(0.0, 3.0);
      }
      const auto P = ot::normalize_to_simplex(a, coords);
      const auto Q = ot::normalize_to_simplex(b, coords);
      const auto C = ot::build_cost(a, b, coords);
      ot::SinkhornConfig scfg;
      scfg.epsilon = 0.01;
      scfg.max_iter = 4000;
      scfg.tol = 1e-9;
      const auto res = ot::sinkhorn(P, Q, C, scfg);
      const double exact = ot::exact_emd_oracle(P, Q, C);
      if (std::fabs(res.distance - exact) > 0.01 * std::log(n) + 1e-3) {
        ok = false;
        detail = "gap " + std::to_string(std::fabs(res.distance - exact)) + " at n=" +
                 std::to_string(n);
      }
    }
    record("sinkhorn_vs_exact", ok, detail);
  }
  // metric identities
  {
    Rng rng(Rng::mix(seed, 7));
    std::vector<double> scores;
    for (int i = 0; i < 25; ++i) scores.push_back(rng.uniform());
    double mean_sr = 0.0;
    for (int t = 0; t < 20; ++t) mean_sr += evalkit::success_rate(scores, t * 0.05);
    mean_sr /= 20.0;
    const bool ok = std::fabs(evalkit::auc(scores) - mean_sr) == 0.0;
    record("auc_identity", ok, "auc equals mean success rate over the threshold grid");
  }
  // gradient spot check of the full objective
  {
    Rng rng(Rng::mix(seed, 21));
    const int B = 2, d1 = 3, d2 = 3, c = 6, K = 2;
    Tensor feat = Tensor::random_normal({B, d1, d2, c}, rng, 0.5);
    Tensor emb = Tensor::random_normal({B, c}, rng, 0.5);
    Tensor fg = Tensor::random_normal({B, K, c}, rng, 0.5);
    Tensor bg = Tensor::random_normal({B, c}, rng, 0.5);
    losses::LossConfig lcfg;
    lcfg.ori.sinkhorn.tol = 1e-11;
    lcfg.ori.sinkhorn.max_iter = 5000;
    auto eval_total = [&](const Tensor& f) {
      Graph g;
      return losses::build_losses(g, make_leaf(g, f), make_const(g, emb), make_const(g, fg),
                                  make_const(g, bg), lcfg)
          .report.l_total;
    };
    Graph g;
    Var fv = make_leaf(g, feat);
    auto lg = losses::build_losses(g, fv, make_const(g, emb), make_const(g, fg),
                                   make_const(g, bg), lcfg);
    g.backward(lg.total.id);
    bool ok = true;
    std::string detail = "analytic matches central differences";
    for (int probe = 0; probe < 6 && ok; ++probe) {
      const std::size_t idx = rng.next_u64() % feat.numel();
      const double h = 1e-5;
      Tensor fp = feat, fm = feat;
      fp[idx] += h;
      fm[idx] -= h;
      const double fd = (eval_total(fp) - eval_total(fm)) / (2 * h);
      const double an = fv.grad()[idx];
      if (std::fabs(fd - an) > 1e-3 * std::max({std::fabs(fd), std::fabs(an), 1e-6})) {
        ok = false;
        detail = "mismatch fd=" + std::to_string(fd) + " an=" + std::to_string(an);
      }
    }
    record("objective_gradient", ok, detail);
  }

  return nlohmann::json{{"command", "selftest"}, {"pass", all}, {"checks", checks}};
}

}  // namespace avloc::runner
