#include "runner/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "core/error.hpp"
#include "core/rng.hpp"
#include "core/serialize.hpp"

namespace avloc::runner {

namespace fs = std::filesystem;

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig cfg;
  cfg.manifest = j.at("manifest").get<std::string>();
  cfg.caption_cache = j.at("caption_cache").get<std::string>();
  cfg.caption_model = j.value("caption_model", std::string("fixture-v1"));
  cfg.out_dir = j.at("out_dir").get<std::string>();
  cfg.init_checkpoint = j.value("init_checkpoint", std::string());
  cfg.seed = j.value("seed", static_cast<std::uint64_t>(0));
  cfg.steps = j.value("steps", 500);
  cfg.batch_size = j.value("batch_size", 16);
  cfg.checkpoint_every = j.value("checkpoint_every", 0);
  cfg.threads = j.value("threads", 0);
  if (j.contains("encoder")) cfg.encoder = encoders::encoder_config_from_json(j.at("encoder"));
  if (j.contains("loss")) {
    const auto& l = j.at("loss");
    cfg.loss.oca.tau = l.value("tau", 0.7);
    cfg.loss.oca.temperature = l.value("temperature", 1.0);
    cfg.loss.lambda1 = l.value("lambda1", 1.0);
    cfg.loss.lambda2 = l.value("lambda2", 0.1);
    cfg.loss.alpha_p = l.value("alpha_p", 0.65);
    cfg.loss.alpha_n = l.value("alpha_n", 0.4);
    cfg.loss.omega = l.value("omega", 0.03);
    cfg.loss.ori.cost_beta = l.value("cost_beta", 1.0);
    if (l.contains("sinkhorn")) {
      const auto& s = l.at("sinkhorn");
      cfg.loss.ori.sinkhorn.epsilon = s.value("epsilon", 0.05);
      cfg.loss.ori.sinkhorn.max_iter = s.value("max_iter", 100);
      cfg.loss.ori.sinkhorn.tol = s.value("tol", 1e-6);
      cfg.loss.ori.sinkhorn.log_domain = s.value("log_domain", true);
    }
  }
  if (j.contains("optimizer")) {
    const auto& o = j.at("optimizer");
    cfg.adam.lr = o.value("lr", 1e-4);
    cfg.adam.beta1 = o.value("beta1", 0.9);
    cfg.adam.beta2 = o.value("beta2", 0.999);
    cfg.adam.eps = o.value("eps", 1e-8);
  }
  if (j.contains("spectrogram")) {
    const auto& s = j.at("spectrogram");
    cfg.spect.target_sr = s.value("target_sr", 16000);
    cfg.spect.seconds = s.value("seconds", 3.0);
    cfg.spect.window = s.value("window", 512);
    cfg.spect.hop = s.value("hop", 160);
    cfg.spect.log_floor = s.value("log_floor", 1e-5);
  }
  if (cfg.adam.lr <= 0.0) throw ValidationError("learning rate must be positive");
  if (cfg.steps < 0 || cfg.batch_size < 1) throw ValidationError("bad steps/batch_size");
  return cfg;
}

nlohmann::json train_config_to_json(const TrainConfig& cfg) {
  return nlohmann::json{
      {"manifest", cfg.manifest},
      {"caption_cache", cfg.caption_cache},
      {"caption_model", cfg.caption_model},
      {"out_dir", cfg.out_dir},
      {"init_checkpoint", cfg.init_checkpoint},
      {"seed", cfg.seed},
      {"steps", cfg.steps},
      {"batch_size", cfg.batch_size},
      {"checkpoint_every", cfg.checkpoint_every},
      {"threads", cfg.threads},
      {"encoder", encoders::encoder_config_to_json(cfg.encoder)},
      {"loss",
       {{"tau", cfg.loss.oca.tau},
        {"temperature", cfg.loss.oca.temperature},
        {"lambda1", cfg.loss.lambda1},
        {"lambda2", cfg.loss.lambda2},
        {"alpha_p", cfg.loss.alpha_p},
        {"alpha_n", cfg.loss.alpha_n},
        {"omega", cfg.loss.omega},
        {"cost_beta", cfg.loss.ori.cost_beta},
        {"sinkhorn",
         {{"epsilon", cfg.loss.ori.sinkhorn.epsilon},
          {"max_iter", cfg.loss.ori.sinkhorn.max_iter},
          {"tol", cfg.loss.ori.sinkhorn.tol},
          {"log_domain", cfg.loss.ori.sinkhorn.log_domain}}}}},
      {"optimizer",
       {{"lr", cfg.adam.lr}, {"beta1", cfg.adam.beta1}, {"beta2", cfg.adam.beta2}, {"eps", cfg.adam.eps}}},
      {"spectrogram",
       {{"target_sr", cfg.spect.target_sr},
        {"seconds", cfg.spect.seconds},
        {"window", cfg.spect.window},
        {"hop", cfg.spect.hop},
        {"log_floor", cfg.spect.log_floor}}}};
}

void save_checkpoint(const std::string& path, const encoders::ToyEncoders& model, Adam* adam,
                     long long step, const nlohmann::json& metrics_snapshot) {
  nlohmann::json j{{"format", "avloc-checkpoint"},
                   {"version", 1},
                   {"step", step},
                   {"encoder", encoders::encoder_config_to_json(model.config())},
                   {"params", model.params_to_json()}};
  if (adam) {
    nlohmann::json m = nlohmann::json::object(), v = nlohmann::json::object();
    const auto& names = model.params();
    for (std::size_t i = 0; i < names.size(); ++i) {
      m[names[i].name] = tensor_to_json(adam->moment1()[i]);
      v[names[i].name] = tensor_to_json(adam->moment2()[i]);
    }
    j["optimizer"] = {{"lr", adam->config().lr},
                      {"beta1", adam->config().beta1},
                      {"beta2", adam->config().beta2},
                      {"eps", adam->config().eps},
                      {"t", adam->step_count()},
                      {"m", std::move(m)},
                      {"v", std::move(v)}};
  }
  if (!metrics_snapshot.is_null()) j["metrics_snapshot"] = metrics_snapshot;
  write_text_file(path, j.dump());
}

std::unique_ptr<encoders::ToyEncoders> load_checkpoint(const std::string& path, Adam* adam,
                                                       long long* step) {
  nlohmann::json j = nlohmann::json::parse(read_text_file(path), nullptr, false);
  if (j.is_discarded() || j.value("format", "") != "avloc-checkpoint")
    throw IoError("not a checkpoint file: " + path);
  auto model = std::make_unique<encoders::ToyEncoders>(
      encoders::encoder_config_from_json(j.at("encoder")));
  model->params_from_json(j.at("params"));
  if (step) *step = j.value("step", 0LL);
  if (adam && j.contains("optimizer")) {
    const auto& o = j.at("optimizer");
    AdamConfig acfg;
    acfg.lr = o.value("lr", 1e-4);
    acfg.beta1 = o.value("beta1", 0.9);
    acfg.beta2 = o.value("beta2", 0.999);
    acfg.eps = o.value("eps", 1e-8);
    *adam = Adam(acfg);
    adam->attach(model->trainable());
    adam->set_step_count(o.value("t", 0LL));
    const auto& names = model->params();
    for (std::size_t i = 0; i < names.size(); ++i) {
      adam->moment1()[i] = tensor_from_json(o.at("m").at(names[i].name));
      adam->moment2()[i] = tensor_from_json(o.at("v").at(names[i].name));
    }
  }
  return model;
}

std::vector<ClipReferences> references_for_dataset(const dataio::Dataset& data,
                                                   const std::string& cache_path,
                                                   const std::string& model,
                                                   const encoders::EncoderConfig& text_cfg) {
  guidance::CaptionCache cache(cache_path);
  std::vector<ClipReferences> out;
  out.reserve(data.size());
  const std::string pv = guidance::prompt_version();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& e = data.entry(i);
    guidance::CacheRecord rec;
    if (!cache.get(e.clip_id, pv, model, &rec))
      throw ValidationError("caption cache is missing clip " + e.clip_id +
                            "; run the caption step first");
    const Tensor fg = encoders::encode_text(rec.foreground, text_cfg);
    const Tensor bg = encoders::encode_text({rec.background}, text_cfg);
    ClipReferences refs;
    refs.K = fg.dim(0);
    refs.foreground = fg;
    refs.background = Tensor({text_cfg.feature_channels});
    for (int k = 0; k < text_cfg.feature_channels; ++k) refs.background[static_cast<std::size_t>(k)] = bg.at(0, k);
    out.push_back(std::move(refs));
  }
  return out;
}

namespace {

void seeded_shuffle(std::vector<std::size_t>& idx, Rng& rng) {
  for (std::size_t i = idx.size(); i > 1; --i)
    std::swap(idx[i - 1], idx[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);
}

std::string jsonl_line(long long step, const losses::LossReport& r) {
  nlohmann::json j{{"step", step},     {"l_frg", r.l_frg},     {"l_bkg", r.l_bkg},
                   {"l_oca", r.l_oca}, {"l_ori", r.l_ori},     {"l_total", r.l_total},
                   {"fn_count", r.false_negative_count}};
  return j.dump();
}

}  // namespace

TrainOutcome train(const TrainConfig& cfg, const std::function<void(const StepRecord&)>& on_step) {
  dataio::Dataset data(cfg.manifest, cfg.spect);
  if (data.size() == 0) throw ValidationError("empty dataset: " + cfg.manifest);

  encoders::EncoderConfig text_cfg = cfg.encoder;
  const std::vector<ClipReferences> refs =
      references_for_dataset(data, cfg.caption_cache, cfg.caption_model, text_cfg);

  // Uniform geometry and source count across the corpus.
  const Tensor probe = data.image(0);
  const int img_h = probe.dim(1), img_w = probe.dim(2);
  const int K = refs[0].K;
  for (std::size_t i = 0; i < data.size(); ++i)
    if (refs[i].K != K)
      throw ValidationError("mixed source counts in one training set are not supported");

  encoders::ToyEncoders model(cfg.encoder);
  if (!cfg.init_checkpoint.empty()) {
    auto warm = load_checkpoint(cfg.init_checkpoint, nullptr, nullptr);
    if (warm->config().feature_channels != cfg.encoder.feature_channels ||
        warm->config().spatial_downsample != cfg.encoder.spatial_downsample)
      throw ValidationError("init_checkpoint architecture does not match the encoder config");
    model.params_from_json(warm->params_to_json());
  }
  Adam adam(cfg.adam);
  adam.attach(model.trainable());

  fs::create_directories(cfg.out_dir);
  TrainOutcome outcome;
  outcome.log_path = (fs::path(cfg.out_dir) / "train_log.jsonl").string();
  outcome.init_checkpoint = (fs::path(cfg.out_dir) / "checkpoint_init.json").string();
  outcome.final_checkpoint = (fs::path(cfg.out_dir) / "checkpoint_final.json").string();
  std::ofstream log(outcome.log_path, std::ios::trunc);
  if (!log) throw IoError("cannot write loss log: " + outcome.log_path);
  save_checkpoint(outcome.init_checkpoint, model, &adam, 0, nullptr);

  const int B = std::min<int>(cfg.batch_size, static_cast<int>(data.size()));
  const int c = cfg.encoder.feature_channels;
  losses::LossConfig loss_cfg = cfg.loss;
  loss_cfg.threads = cfg.threads;

  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng shuffle_rng(Rng::mix(cfg.seed, 0xba7c4e5ULL));
  seeded_shuffle(order, shuffle_rng);
  std::size_t cursor = 0;

  const int F = dataio::spectrogram_bins(cfg.spect);
  const int T = dataio::spectrogram_frames(cfg.spect);

  for (long long step = 0; step < cfg.steps; ++step) {
    // next batch (reshuffle between epochs)
    std::vector<std::size_t> batch_idx;
    batch_idx.reserve(static_cast<std::size_t>(B));
    for (int b = 0; b < B; ++b) {
      if (cursor >= order.size()) {
        seeded_shuffle(order, shuffle_rng);
        cursor = 0;
      }
      batch_idx.push_back(order[cursor++]);
    }

    Tensor images({B, 3, img_h, img_w});
    Tensor spects({B, 1, F, T});
    Tensor fg_refs({B, K, c});
    Tensor bg_ref({B, c});
    for (int b = 0; b < B; ++b) {
      const std::size_t i = batch_idx[static_cast<std::size_t>(b)];
      const Tensor img = data.image(i);
      if (img.dim(1) != img_h || img.dim(2) != img_w)
        throw ValidationError("mixed image sizes in one training set (clip " +
                              data.entry(i).clip_id + ")");
      std::copy(img.vec().begin(), img.vec().end(),
                images.vec().begin() + static_cast<std::ptrdiff_t>(img.numel()) * b);
      const Tensor sp = data.spectrogram(i);
      std::copy(sp.vec().begin(), sp.vec().end(),
                spects.vec().begin() + static_cast<std::ptrdiff_t>(sp.numel()) * b);
      for (int k = 0; k < K; ++k)
        for (int ch = 0; ch < c; ++ch) fg_refs.at(b, k, ch) = refs[i].foreground.at(k, ch);
      for (int ch = 0; ch < c; ++ch) bg_ref.at(b, ch) = refs[i].background[static_cast<std::size_t>(ch)];
    }

    Graph g;
    std::vector<Var> pvars = model.param_vars(g, true);
    Var feat = model.visual(g, make_const(g, images), pvars, cfg.threads);
    Var emb = model.audio(g, make_const(g, spects), pvars, cfg.threads);
    losses::LossGraph lg = losses::build_losses(g, feat, emb, make_const(g, fg_refs),
                                                make_const(g, bg_ref), loss_cfg);
    if (!std::isfinite(lg.report.l_total)) {
      std::string ids;
      for (std::size_t i : batch_idx) ids += data.entry(i).clip_id + " ";
      throw NumericalError("non-finite loss at step " + std::to_string(step) +
                           "; batch: " + ids);
    }
    g.backward(lg.total.id);

    std::vector<Tensor*> params = model.trainable();
    std::vector<const Tensor*> grads;
    grads.reserve(pvars.size());
    for (const Var& v : pvars) grads.push_back(&v.grad());
    adam.step(params, grads);

    log << jsonl_line(step, lg.report) << "\n";
    if (on_step) on_step(StepRecord{step, lg.report});
    if (step == 0) outcome.first_total = lg.report.l_total;
    outcome.last_total = lg.report.l_total;
    ++outcome.steps_run;

    if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 &&
        step + 1 < cfg.steps) {
      const std::string path =
          (fs::path(cfg.out_dir) / ("checkpoint_step" + std::to_string(step + 1) + ".json"))
              .string();
      save_checkpoint(path, model, &adam, step + 1, nullptr);
    }
  }
  log.flush();
  if (!log) throw IoError("short write to loss log");
  save_checkpoint(outcome.final_checkpoint, model, &adam, cfg.steps, nullptr);
  return outcome;
}

}  // namespace avloc::runner
