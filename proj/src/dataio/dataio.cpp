#include "dataio/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "core/error.hpp"
#include "core/rng.hpp"
#include "dataio/imageio.hpp"

namespace avloc::dataio {

namespace fs = std::filesystem;

nlohmann::json manifest_entry_to_json(const ManifestEntry& e) {
  nlohmann::json boxes = nlohmann::json::array();
  for (const auto& b : e.gt_boxes)
    boxes.push_back({{"class", b.cls}, {"x0", b.x0}, {"y0", b.y0}, {"x1", b.x1}, {"y1", b.y1}});
  nlohmann::json j{{"clip_id", e.clip_id},           {"image_path", e.image_path},
                   {"audio_path", e.audio_path},     {"class_labels", e.class_labels},
                   {"gt_boxes", boxes},              {"K", e.K}};
  if (!e.distractor_classes.empty()) j["distractor_classes"] = e.distractor_classes;
  if (!e.component_audio_paths.empty()) j["component_audio_paths"] = e.component_audio_paths;
  return j;
}

ManifestEntry manifest_entry_from_json(const nlohmann::json& j) {
  ManifestEntry e;
  e.clip_id = j.at("clip_id").get<std::string>();
  e.image_path = j.at("image_path").get<std::string>();
  e.audio_path = j.at("audio_path").get<std::string>();
  e.class_labels = j.at("class_labels").get<std::vector<std::string>>();
  for (const auto& b : j.at("gt_boxes"))
    e.gt_boxes.push_back(GtBox{b.at("class").get<std::string>(), b.at("x0").get<int>(),
                               b.at("y0").get<int>(), b.at("x1").get<int>(),
                               b.at("y1").get<int>()});
  e.K = j.at("K").get<int>();
  if (j.contains("distractor_classes"))
    e.distractor_classes = j.at("distractor_classes").get<std::vector<std::string>>();
  if (j.contains("component_audio_paths"))
    e.component_audio_paths = j.at("component_audio_paths").get<std::vector<std::string>>();
  return e;
}

void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write manifest: " + path);
  for (const auto& e : entries) out << manifest_entry_to_json(e).dump() << "\n";
  if (!out) throw IoError("short write: " + path);
}

std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest: " + path);
  std::vector<ManifestEntry> entries;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded())
      throw IoError("corrupt manifest line " + std::to_string(lineno) + " in " + path);
    entries.push_back(manifest_entry_from_json(j));
  }
  return entries;
}

void validate_clip(const AVClip& clip) {
  if (clip.image.ndim() != 3 || clip.image.dim(0) != 3)
    throw ValidationError("clip image must be (3,H,W): " + clip.clip_id);
  if (!clip.image.all_finite()) throw ValidationError("non-finite image: " + clip.clip_id);
  const int h = clip.image.dim(1), w = clip.image.dim(2);
  for (const auto& b : clip.gt_boxes)
    if (b.x0 < 0 || b.y0 < 0 || b.x1 > w || b.y1 > h || b.x0 >= b.x1 || b.y0 >= b.y1)
      throw ValidationError("ground-truth box outside image bounds: " + clip.clip_id);
  if (clip.K < 1) throw ValidationError("clip source count must be >= 1: " + clip.clip_id);
}

Tensor preprocess_image(const Tensor& raw, int out_h, int out_w, const ImageNorm& norm) {
  if (raw.ndim() != 3 || raw.dim(0) != 3) throw ValidationError("preprocess_image expects (3,H,W)");
  if (!raw.all_finite()) throw ValidationError("preprocess_image: non-finite pixels");
  Tensor img = bilinear_resize_chw(raw, out_h, out_w);
  for (int c = 0; c < 3; ++c) {
    const double mean = norm.mean[static_cast<std::size_t>(c)];
    const double stddev = norm.stddev[static_cast<std::size_t>(c)];
    if (stddev <= 0.0) throw ValidationError("image normalization stddev must be positive");
    for (int y = 0; y < out_h; ++y)
      for (int x = 0; x < out_w; ++x) {
        double v = std::min(1.0, std::max(0.0, img.at(c, y, x)));
        img.at(c, y, x) = (v - mean) / stddev;
      }
  }
  return img;
}

AVClip mix_duet(const AVClip& a, const AVClip& b) {
  validate_clip(a);
  validate_clip(b);
  if (a.K != 1 || b.K != 1) throw ValidationError("mix_duet expects single-source clips");
  if (a.image.dim(1) != b.image.dim(1) || a.image.dim(2) != b.image.dim(2))
    throw ValidationError("mix_duet expects equally preprocessed clips");
  if (a.sample_rate != b.sample_rate) throw ValidationError("mix_duet: sample-rate mismatch");
  const int h = a.image.dim(1), w = a.image.dim(2);

  AVClip duet;
  duet.clip_id = a.clip_id + "+" + b.clip_id;
  duet.sample_rate = a.sample_rate;
  duet.K = 2;
  duet.image = Tensor({3, h, 2 * w});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) duet.image.at(c, y, x) = a.image.at(c, y, x);
      for (int x = 0; x < w; ++x) duet.image.at(c, y, w + x) = b.image.at(c, y, x);
    }
  const std::size_t n = std::max(a.waveform.size(), b.waveform.size());
  duet.waveform.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (i < a.waveform.size()) duet.waveform[i] += a.waveform[i];
    if (i < b.waveform.size()) duet.waveform[i] += b.waveform[i];
  }
  double peak = 0.0;
  for (double s : duet.waveform) peak = std::max(peak, std::fabs(s));
  if (peak > 0.0)
    for (double& s : duet.waveform) s *= 0.9 / peak;
  duet.class_labels = a.class_labels;
  duet.class_labels.insert(duet.class_labels.end(), b.class_labels.begin(),
                           b.class_labels.end());
  duet.gt_boxes = a.gt_boxes;
  for (GtBox box : b.gt_boxes) {
    box.x0 += w;
    box.x1 += w;
    duet.gt_boxes.push_back(box);
  }
  validate_clip(duet);
  return duet;
}

SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j) {
  SyntheticSpec spec;
  spec.seed = j.value("seed", static_cast<std::uint64_t>(0));
  spec.n_clips = j.value("n_clips", 100);
  if (j.contains("shape_classes"))
    spec.shape_classes = j.at("shape_classes").get<std::vector<std::string>>();
  if (j.contains("tone_map"))
    spec.tone_map = j.at("tone_map").get<std::map<std::string, double>>();
  spec.silent_distractor_prob = j.value("silent_distractor_prob", 1.0);
  spec.duet = j.value("duet", false);
  spec.image_size = j.value("image_size", 224);
  spec.same_class_distractor_prob = j.value("same_class_distractor_prob", 0.5);
  return spec;
}

nlohmann::json synthetic_spec_to_json(const SyntheticSpec& spec) {
  return nlohmann::json{{"seed", spec.seed},
                        {"n_clips", spec.n_clips},
                        {"shape_classes", spec.shape_classes},
                        {"tone_map", spec.tone_map},
                        {"silent_distractor_prob", spec.silent_distractor_prob},
                        {"duet", spec.duet},
                        {"image_size", spec.image_size},
                        {"same_class_distractor_prob", spec.same_class_distractor_prob}};
}

namespace {

struct Rgb {
  double r, g, b;
};

Rgb class_color(const std::string& cls) {
  if (cls == "circle") return {0.85, 0.25, 0.20};
  if (cls == "square") return {0.20, 0.80, 0.30};
  if (cls == "triangle") return {0.25, 0.40, 0.90};
  throw ValidationError("unknown shape class: " + cls);
}

bool inside_shape(const std::string& cls, int dx, int dy, int r) {
  if (r <= 0) return false;
  if (cls == "circle") return dx * dx + dy * dy <= r * r;
  if (cls == "square") return std::abs(dx) <= r && std::abs(dy) <= r;
  // upward triangle: apex at dy=-r, base at dy=+r
  if (dy < -r || dy > r) return false;
  return std::abs(dx) * 2 <= dy + r;
}

struct DrawnBox {
  int x0, y0, x1, y1;  // half-open
};

// Returns the tight pixel bbox of the painted region.
DrawnBox draw_shape(Tensor& img, const std::string& cls, int cx, int cy, int r, Rgb color,
                    bool filled) {
  const int h = img.dim(1), w = img.dim(2);
  const int thickness = std::max(4, r / 5);
  int x0 = w, y0 = h, x1 = -1, y1 = -1;
  for (int y = std::max(0, cy - r); y <= std::min(h - 1, cy + r); ++y)
    for (int x = std::max(0, cx - r); x <= std::min(w - 1, cx + r); ++x) {
      const int dx = x - cx, dy = y - cy;
      if (!inside_shape(cls, dx, dy, r)) continue;
      if (!filled && inside_shape(cls, dx, dy, r - thickness)) continue;
      img.at(0, y, x) = color.r;
      img.at(1, y, x) = color.g;
      img.at(2, y, x) = color.b;
      x0 = std::min(x0, x);
      y0 = std::min(y0, y);
      x1 = std::max(x1, x);
      y1 = std::max(y1, y);
    }
  if (x1 < 0) throw NumericalError("shape rendered no pixels");
  return {x0, y0, x1 + 1, y1 + 1};
}

bool boxes_overlap(const DrawnBox& a, const DrawnBox& b, int margin) {
  return a.x0 - margin < b.x1 && b.x0 - margin < a.x1 && a.y0 - margin < b.y1 &&
         b.y0 - margin < a.y1;
}

struct SingleScene {
  Tensor image;
  GtBox gt;
  std::vector<std::string> distractor_classes;
  std::vector<double> waveform;
};

SingleScene make_single_scene(Rng& rng, const SyntheticSpec& spec, const std::string& cls) {
  const int S = spec.image_size;
  SingleScene scene;
  scene.image = Tensor({3, S, S});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < S; ++y)
      for (int x = 0; x < S; ++x) scene.image.at(c, y, x) = 0.08 + 0.05 * rng.uniform();

  const int rmin = std::max(10, S * 36 / 224);
  const int rmax = std::max(rmin + 1, S * 64 / 224);
  const int r = rng.uniform_int(rmin, rmax);
  const int cx = rng.uniform_int(r + 2, S - r - 3);
  const int cy = rng.uniform_int(r + 2, S - r - 3);
  const DrawnBox sounding_box{cx - r, cy - r, cx + r + 1, cy + r + 1};

  // silent distractors first so the sounding shape is never occluded
  if (rng.uniform() < spec.silent_distractor_prob) {
    std::string dcls = cls;
    if (spec.shape_classes.size() > 1 && rng.uniform() >= spec.same_class_distractor_prob) {
      do {
        dcls = spec.shape_classes[static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<int>(spec.shape_classes.size()) - 1))];
      } while (dcls == cls);
    }
    int dr = rng.uniform_int(rmin, rmax);
    const int dr_floor = std::max(8, S * 22 / 224);
    bool placed = false;
    for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
      // shrink steadily so a distractor always fits next to a large shape
      if (attempt > 0 && attempt % 8 == 0) dr = std::max(dr_floor, dr - 4);
      const int dcx = rng.uniform_int(dr + 2, S - dr - 3);
      const int dcy = rng.uniform_int(dr + 2, S - dr - 3);
      const DrawnBox cand{dcx - dr, dcy - dr, dcx + dr + 1, dcy + dr + 1};
      if (boxes_overlap(cand, sounding_box, 6)) continue;
      Rgb color = class_color(dcls);
      color.r = std::min(1.0, std::max(0.0, color.r + rng.uniform(-0.06, 0.06)));
      color.g = std::min(1.0, std::max(0.0, color.g + rng.uniform(-0.06, 0.06)));
      color.b = std::min(1.0, std::max(0.0, color.b + rng.uniform(-0.06, 0.06)));
      draw_shape(scene.image, dcls, dcx, dcy, dr, color, /*filled=*/false);
      scene.distractor_classes.push_back(dcls);
      placed = true;
    }
  }

  Rgb color = class_color(cls);
  color.r = std::min(1.0, std::max(0.0, color.r + rng.uniform(-0.06, 0.06)));
  color.g = std::min(1.0, std::max(0.0, color.g + rng.uniform(-0.06, 0.06)));
  color.b = std::min(1.0, std::max(0.0, color.b + rng.uniform(-0.06, 0.06)));
  const DrawnBox painted = draw_shape(scene.image, cls, cx, cy, r, color, /*filled=*/true);
  scene.gt = GtBox{cls, painted.x0, painted.y0, painted.x1, painted.y1};

  const auto tone_it = spec.tone_map.find(cls);
  if (tone_it == spec.tone_map.end()) throw ValidationError("tone_map missing class " + cls);
  const double freq = tone_it->second;
  const int n = 48000;
  scene.waveform.resize(static_cast<std::size_t>(n));
  // Class timbres differ in local time-frequency texture, not only in pitch:
  // a pure tone, a harmonic-rich square wave, and a tremolo tone. Pure sines
  // at different frequencies look locally identical to a conv stack.
  const std::size_t timbre =
      std::find(spec.shape_classes.begin(), spec.shape_classes.end(), cls) -
      spec.shape_classes.begin();
  constexpr double kTau = 2.0 * 3.141592653589793;
  for (int i = 0; i < n; ++i) {
    const double t = i / 16000.0;
    double s = 0.0;
    switch (timbre % 3) {
      case 0: s = std::sin(kTau * freq * t); break;
      case 1: s = std::sin(kTau * freq * t) >= 0.0 ? 0.8 : -0.8; break;
      default: s = std::sin(kTau * freq * t) * (0.55 + 0.45 * std::sin(kTau * 6.0 * t)); break;
    }
    scene.waveform[static_cast<std::size_t>(i)] = 0.4 * s + 0.005 * rng.normal();
  }
  return scene;
}

std::string clip_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "clip_%05d", i);
  return buf;
}

}  // namespace

std::vector<ManifestEntry> generate_synthetic(const SyntheticSpec& spec,
                                              const std::string& out_dir) {
  if (spec.n_clips < 1) throw ValidationError("n_clips must be >= 1");
  if (spec.shape_classes.empty()) throw ValidationError("no shape classes given");
  if (spec.duet && spec.shape_classes.size() < 2)
    throw ValidationError("duet generation needs at least two classes");
  if (spec.silent_distractor_prob < 0.0 || spec.silent_distractor_prob > 1.0 ||
      spec.same_class_distractor_prob < 0.0 || spec.same_class_distractor_prob > 1.0)
    throw ValidationError("probabilities must lie in [0,1]");
  {
    std::set<double> freqs;
    for (const auto& cls : spec.shape_classes) {
      class_color(cls);  // rejects unknown classes
      const auto it = spec.tone_map.find(cls);
      if (it == spec.tone_map.end()) throw ValidationError("tone_map missing class " + cls);
      if (!freqs.insert(it->second).second)
        throw ValidationError("tone frequencies must be distinct");
    }
  }
  if (spec.image_size % 32 != 0) throw ValidationError("image_size must be divisible by 32");

  fs::create_directories(fs::path(out_dir) / "images");
  fs::create_directories(fs::path(out_dir) / "audio");

  std::vector<ManifestEntry> entries;
  entries.reserve(static_cast<std::size_t>(spec.n_clips));
  const int n_classes = static_cast<int>(spec.shape_classes.size());

  for (int i = 0; i < spec.n_clips; ++i) {
    Rng rng(Rng::mix(spec.seed, static_cast<std::uint64_t>(i) * 2 + 1));
    const std::string id = clip_name(i);
    ManifestEntry e;
    e.clip_id = id;
    e.image_path = "images/" + id + ".ppm";
    e.audio_path = "audio/" + id + ".wav";

    if (!spec.duet) {
      const std::string cls =
          spec.shape_classes[static_cast<std::size_t>(rng.uniform_int(0, n_classes - 1))];
      SingleScene scene = make_single_scene(rng, spec, cls);
      write_ppm((fs::path(out_dir) / e.image_path).string(), scene.image);
      write_wav((fs::path(out_dir) / e.audio_path).string(), scene.waveform, 16000);
      e.class_labels = {cls};
      e.gt_boxes = {scene.gt};
      e.K = 1;
      e.distractor_classes = scene.distractor_classes;
    } else {
      const int ca = rng.uniform_int(0, n_classes - 1);
      int cb = rng.uniform_int(0, n_classes - 2);
      if (cb >= ca) ++cb;
      SingleScene sa = make_single_scene(rng, spec, spec.shape_classes[static_cast<std::size_t>(ca)]);
      SingleScene sb = make_single_scene(rng, spec, spec.shape_classes[static_cast<std::size_t>(cb)]);
      AVClip clip_a{id + "_a", sa.image, sa.waveform, 16000,
                    {spec.shape_classes[static_cast<std::size_t>(ca)]}, {sa.gt}, 1};
      AVClip clip_b{id + "_b", sb.image, sb.waveform, 16000,
                    {spec.shape_classes[static_cast<std::size_t>(cb)]}, {sb.gt}, 1};
      AVClip duet = mix_duet(clip_a, clip_b);
      write_ppm((fs::path(out_dir) / e.image_path).string(), duet.image);
      write_wav((fs::path(out_dir) / e.audio_path).string(), duet.waveform, 16000);
      const std::string pa = "audio/" + id + "_a.wav";
      const std::string pb = "audio/" + id + "_b.wav";
      write_wav((fs::path(out_dir) / pa).string(), sa.waveform, 16000);
      write_wav((fs::path(out_dir) / pb).string(), sb.waveform, 16000);
      e.class_labels = duet.class_labels;
      e.gt_boxes = duet.gt_boxes;
      e.K = 2;
      e.distractor_classes = sa.distractor_classes;
      e.distractor_classes.insert(e.distractor_classes.end(), sb.distractor_classes.begin(),
                                  sb.distractor_classes.end());
      e.component_audio_paths = {pa, pb};
    }
    entries.push_back(std::move(e));
  }
  write_manifest((fs::path(out_dir) / "manifest.jsonl").string(), entries);
  return entries;
}

Dataset::Dataset(const std::string& manifest_path, SpectrogramConfig spec_cfg)
    : spec_cfg_(spec_cfg) {
  entries_ = read_manifest(manifest_path);
  base_dir_ = fs::path(manifest_path).parent_path().string();
  image_cache_.resize(entries_.size());
  image_dims_.assign(entries_.size(), {0, 0});
  spect_cache_.resize(entries_.size());
}

std::string Dataset::resolve(const std::string& path) const {
  if (fs::path(path).is_absolute() || base_dir_.empty()) return path;
  return (fs::path(base_dir_) / path).string();
}

Tensor Dataset::image(std::size_t i) const {
  auto& cache = image_cache_[i];
  auto& dims = image_dims_[i];
  if (cache.empty()) {
    Tensor img;
    try {
      img = read_ppm(resolve(entries_[i].image_path));
    } catch (const IoError& e) {
      throw IoError(std::string(e.what()) + " (clip " + entries_[i].clip_id + ")");
    }
    dims = {img.dim(1), img.dim(2)};
    cache.resize(img.numel());
    for (std::size_t k = 0; k < img.numel(); ++k)
      cache[k] = static_cast<unsigned char>(
          std::lround(std::min(1.0, std::max(0.0, img[k])) * 255.0));
  }
  Tensor img({3, dims[0], dims[1]});
  for (std::size_t k = 0; k < img.numel(); ++k) img[k] = cache[k] / 255.0;
  return img;
}

Tensor Dataset::spectrogram(std::size_t i) const {
  auto& cache = spect_cache_[i];
  const int F = spectrogram_bins(spec_cfg_);
  const int T = spectrogram_frames(spec_cfg_);
  if (cache.empty()) {
    std::vector<double> wav;
    int sr = 0;
    try {
      auto loaded = read_wav(resolve(entries_[i].audio_path));
      wav = std::move(loaded.first);
      sr = loaded.second;
    } catch (const IoError& e) {
      throw IoError(std::string(e.what()) + " (clip " + entries_[i].clip_id + ")");
    }
    const Tensor spect = preprocess_audio(wav, sr, spec_cfg_);
    cache.resize(spect.numel());
    for (std::size_t k = 0; k < spect.numel(); ++k) cache[k] = static_cast<float>(spect[k]);
  }
  Tensor spect({1, F, T});
  for (std::size_t k = 0; k < spect.numel(); ++k) spect[k] = cache[k];
  return spect;
}

std::vector<Tensor> Dataset::component_spectrograms(std::size_t i) const {
  const auto& e = entries_[i];
  if (e.component_audio_paths.empty()) return {spectrogram(i)};
  std::vector<Tensor> out;
  out.reserve(e.component_audio_paths.size());
  for (const auto& p : e.component_audio_paths) {
    auto loaded = read_wav(resolve(p));
    out.push_back(preprocess_audio(loaded.first, loaded.second, spec_cfg_));
  }
  return out;
}

}  // namespace avloc::dataio
