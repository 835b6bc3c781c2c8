#include "encoders/encoders.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "core/error.hpp"
#include "core/ops.hpp"
#include "core/rng.hpp"
#include "core/serialize.hpp"

namespace avloc::encoders {

namespace {

int stage_count(int downsample) {
  int n = 0, d = downsample;
  while (d > 1) {
    if (d % 2 != 0) throw ValidationError("spatial_downsample must be a power of two");
    d /= 2;
    ++n;
  }
  return n;
}

int stage_channels(int stage) { return stage < 2 ? 8 : 16; }

std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

void validate(const EncoderConfig& cfg) {
  if (cfg.feature_channels < 2) throw ValidationError("feature_channels must be >= 2");
  if (cfg.spatial_downsample < 1) throw ValidationError("spatial_downsample must be >= 1");
  stage_count(cfg.spatial_downsample);
  if (cfg.backbone_kind == BackboneKind::external)
    throw ValidationError(
        "backbone_kind 'external' is a plug-in contract; this build provides toy_conv");
}

EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
  EncoderConfig cfg;
  const std::string kind = j.value("backbone_kind", "toy_conv");
  if (kind == "toy_conv")
    cfg.backbone_kind = BackboneKind::toy_conv;
  else if (kind == "external")
    cfg.backbone_kind = BackboneKind::external;
  else
    throw ValidationError("unknown backbone_kind: " + kind);
  cfg.feature_channels = j.value("feature_channels", 16);
  cfg.spatial_downsample = j.value("spatial_downsample", 32);
  cfg.seed = j.value("seed", static_cast<std::uint64_t>(0));
  return cfg;
}

nlohmann::json encoder_config_to_json(const EncoderConfig& cfg) {
  return nlohmann::json{
      {"backbone_kind", cfg.backbone_kind == BackboneKind::toy_conv ? "toy_conv" : "external"},
      {"feature_channels", cfg.feature_channels},
      {"spatial_downsample", cfg.spatial_downsample},
      {"seed", cfg.seed}};
}

ToyEncoders::ToyEncoders(const EncoderConfig& cfg) : cfg_(cfg) {
  validate(cfg);
  n_stages_ = stage_count(cfg.spatial_downsample);
  Rng rng(Rng::mix(cfg.seed, 0x0a51c0deULL));
  auto add_conv = [&](const std::string& name, int co, int ci, int k, int stride, int pad) {
    const double stddev = std::sqrt(1.0 / (static_cast<double>(ci) * k * k));
    params_.push_back(Param{name, Tensor::random_normal({co, ci, k, k}, rng, stddev), stride, pad});
  };

  visual_begin_ = 0;
  int in_ch = 3;
  for (int s = 0; s < n_stages_; ++s) {
    add_conv("visual.conv" + std::to_string(s), stage_channels(s), in_ch, 3, 2, 1);
    in_ch = stage_channels(s);
  }
  add_conv("visual.proj", cfg.feature_channels, in_ch, 1, 1, 0);
  visual_end_ = static_cast<int>(params_.size());

  audio_begin_ = visual_end_;
  in_ch = 1;
  for (int s = 0; s < n_stages_; ++s) {
    add_conv("audio.conv" + std::to_string(s), stage_channels(s), in_ch, 3, 2, 1);
    in_ch = stage_channels(s);
  }
  // Head applied after global pooling.
  const double hstd = std::sqrt(1.0 / static_cast<double>(in_ch));
  params_.push_back(Param{"audio.head", Tensor::random_normal({cfg.feature_channels, in_ch}, rng, hstd), 1, 0});
  audio_end_ = static_cast<int>(params_.size());
}

std::vector<Tensor*> ToyEncoders::trainable() {
  std::vector<Tensor*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(&p.value);
  return out;
}

std::vector<Var> ToyEncoders::param_vars(Graph& g, bool trainable) const {
  std::vector<Var> vars;
  vars.reserve(params_.size());
  for (const auto& p : params_) vars.push_back(make_leaf(g, p.value, trainable));
  return vars;
}

Var ToyEncoders::visual(Graph& g, Var images_nchw, const std::vector<Var>& pvars,
                        int threads) const {
  const Tensor& x = images_nchw.val();
  if (x.ndim() != 4 || x.dim(1) != 3)
    throw ValidationError("visual encoder expects (B,3,H,W), got " + x.shape_str());
  if (x.dim(2) % cfg_.spatial_downsample != 0 || x.dim(3) % cfg_.spatial_downsample != 0)
    throw ValidationError("image size must be divisible by spatial_downsample");
  (void)g;
  Var h = images_nchw;
  for (int i = visual_begin_; i < visual_end_; ++i) {
    const Param& p = params_[static_cast<std::size_t>(i)];
    // edge padding keeps the image border statistically like the interior,
    // so the maps carry no frame artifact
    if (p.pad > 0) h = ops::replicate_pad(h, p.pad);
    h = ops::conv2d(h, pvars[static_cast<std::size_t>(i)], p.stride, 0, threads);
    if (i + 1 < visual_end_) h = ops::tanh_act(h);
  }
  return ops::nchw_to_nhwc(h);
}

Var ToyEncoders::audio(Graph& g, Var spect_nchw, const std::vector<Var>& pvars,
                       int threads) const {
  const Tensor& x = spect_nchw.val();
  if (x.ndim() != 4 || x.dim(1) != 1)
    throw ValidationError("audio encoder expects a single input channel, got " + x.shape_str());
  (void)g;
  // Log spectrograms sit far from zero (the silence floor is log 1e-5); a
  // per-clip standardization keeps the tanh stack out of saturation. Zero
  // inputs stay exactly zero.
  Var h = ops::standardize_items(spect_nchw);
  for (int i = audio_begin_; i < audio_end_; ++i) {
    const Param& p = params_[static_cast<std::size_t>(i)];
    if (p.value.ndim() == 2) {  // pooled head
      h = ops::global_mean_nchw(h);
      return ops::linear(h, pvars[static_cast<std::size_t>(i)]);
    }
    if (p.pad > 0) h = ops::replicate_pad(h, p.pad);
    h = ops::conv2d(h, pvars[static_cast<std::size_t>(i)], p.stride, 0, threads);
    h = ops::tanh_act(h);
  }
  return h;
}

VisualFeatureMap ToyEncoders::encode_visual(const Tensor& images, int threads) const {
  if (!images.all_finite()) throw ValidationError("visual input contains non-finite values");
  for (std::size_t i = 0; i < images.numel(); ++i)
    if (images[i] < 0.0 || images[i] > 1.0)
      throw ValidationError("visual input must lie in [0,1]");
  Graph g;
  Var out = visual(g, make_const(g, images), param_vars(g, false), threads);
  VisualFeatureMap map;
  map.data = out.val();
  map.rows = map.data.dim(1);
  map.cols = map.data.dim(2);
  map.channels = map.data.dim(3);
  return map;
}

AudioEmbedding ToyEncoders::encode_audio(const Tensor& spectrograms, int threads) const {
  if (!spectrograms.all_finite())
    throw ValidationError("audio input contains non-finite values");
  Graph g;
  Var out = audio(g, make_const(g, spectrograms), param_vars(g, false), threads);
  return AudioEmbedding{out.val()};
}

nlohmann::json ToyEncoders::params_to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& p : params_) {
    nlohmann::json t = tensor_to_json(p.value);
    t["stride"] = p.stride;
    t["pad"] = p.pad;
    j[p.name] = std::move(t);
  }
  return j;
}

void ToyEncoders::params_from_json(const nlohmann::json& j) {
  for (auto& p : params_) {
    if (!j.contains(p.name)) throw IoError("checkpoint missing parameter " + p.name);
    Tensor t = tensor_from_json(j.at(p.name));
    if (!t.same_shape(p.value))
      throw IoError("checkpoint parameter " + p.name + " has shape " + t.shape_str() +
                    ", expected " + p.value.shape_str());
    p.value = std::move(t);
  }
}

VisualFeatureMap encode_visual(const Tensor& images, const EncoderConfig& cfg) {
  return ToyEncoders(cfg).encode_visual(images);
}

AudioEmbedding encode_audio(const Tensor& spectrograms, const EncoderConfig& cfg) {
  return ToyEncoders(cfg).encode_audio(spectrograms);
}

Tensor encode_text(const std::vector<std::string>& captions, const EncoderConfig& cfg) {
  validate(cfg);
  const int c = cfg.feature_channels;
  Tensor out({static_cast<int>(captions.size()), c});
  for (std::size_t row = 0; row < captions.size(); ++row) {
    std::vector<std::string> tokens;
    std::string cur;
    for (char ch : captions[row]) {
      if (std::isspace(static_cast<unsigned char>(ch))) {
        if (!cur.empty()) tokens.push_back(cur);
        cur.clear();
      } else {
        cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
      }
    }
    if (!cur.empty()) tokens.push_back(cur);
    if (tokens.empty()) throw ValidationError("empty caption at row " + std::to_string(row));
    std::vector<double> acc(static_cast<std::size_t>(c), 0.0);
    for (const std::string& tok : tokens) {
      Rng rng(Rng::mix(cfg.seed, fnv1a64(tok)));
      for (int k = 0; k < c; ++k) acc[static_cast<std::size_t>(k)] += rng.normal();
    }
    double norm = 0.0;
    for (double v : acc) norm += v * v;
    norm = std::sqrt(norm);
    if (norm < 1e-12)
      throw ValidationError("degenerate caption embedding (tokens cancel): " + captions[row]);
    for (int k = 0; k < c; ++k)
      out.at(static_cast<int>(row), k) = acc[static_cast<std::size_t>(k)] / norm;
  }
  return out;
}

}  // namespace avloc::encoders
