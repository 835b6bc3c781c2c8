#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "core/tensor.hpp"
#include "dataio/audioio.hpp"

#include <json.hpp>

namespace avloc::dataio {

// Ground-truth box in pixel coordinates, half-open [x0,x1) x [y0,y1).
struct GtBox {
  std::string cls;
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
};

struct ManifestEntry {
  std::string clip_id;
  std::string image_path;
  std::string audio_path;
  std::vector<std::string> class_labels;
  std::vector<GtBox> gt_boxes;
  int K = 1;
  // synthetic-corpus extras
  std::vector<std::string> distractor_classes;
  std::vector<std::string> component_audio_paths;  // duet per-source audio
};

void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> read_manifest(const std::string& path);
nlohmann::json manifest_entry_to_json(const ManifestEntry& e);
ManifestEntry manifest_entry_from_json(const nlohmann::json& j);

// One training sample held in memory.
struct AVClip {
  std::string clip_id;
  Tensor image;  // (3,H,W) in [0,1]; 224x224 single-source, 224x448 duet
  std::vector<double> waveform;  // mono
  int sample_rate = 16000;
  std::vector<std::string> class_labels;
  std::vector<GtBox> gt_boxes;
  int K = 1;
};
void validate_clip(const AVClip& clip);

// Per-channel affine applied after the [0,1] rescale. Defaults are identity
// so downstream consumers keep the [0,1] contract.
struct ImageNorm {
  std::array<double, 3> mean{0.0, 0.0, 0.0};
  std::array<double, 3> stddev{1.0, 1.0, 1.0};
};

// Bilinear resize to the target size with values clamped to [0,1], then the
// per-channel normalization.
Tensor preprocess_image(const Tensor& raw, int out_h = 224, int out_w = 224,
                        const ImageNorm& norm = {});

// Horizontal composition of two single-source clips: a left, b right; box
// x-coordinates of b shift by a's width; waveforms are summed and
// peak-normalized to 0.9.
AVClip mix_duet(const AVClip& a, const AVClip& b);

struct SyntheticSpec {
  std::uint64_t seed = 0;
  int n_clips = 100;
  std::vector<std::string> shape_classes{"circle", "square", "triangle"};
  // spread across the 16 kHz band so the tones stay separable after the
  // encoder's spatial downsampling of the spectrogram
  std::map<std::string, double> tone_map{
      {"circle", 440.0}, {"square", 1200.0}, {"triangle", 5900.0}};
  double silent_distractor_prob = 1.0;
  bool duet = false;
  int image_size = 224;
  // a distractor repeats the sounding class's shape with this probability
  double same_class_distractor_prob = 0.5;
};
SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j);
nlohmann::json synthetic_spec_to_json(const SyntheticSpec& spec);

// Writes images (PPM), waveforms (WAV) and manifest.jsonl under out_dir.
// Sounding shapes render filled; silent distractors render hollow. Every
// clip is reproducible from (spec.seed, clip index).
std::vector<ManifestEntry> generate_synthetic(const SyntheticSpec& spec,
                                              const std::string& out_dir);

// Lazily-loading dataset view over a manifest with per-clip caches.
class Dataset {
 public:
  explicit Dataset(const std::string& manifest_path, SpectrogramConfig spec_cfg = {});
  std::size_t size() const { return entries_.size(); }
  const ManifestEntry& entry(std::size_t i) const { return entries_[i]; }
  const std::vector<ManifestEntry>& entries() const { return entries_; }

  Tensor image(std::size_t i) const;        // (3,H,W) in [0,1]
  Tensor spectrogram(std::size_t i) const;  // (1,F,T)
  // per-source spectrograms for duet clips (component audio), else {mixed}
  std::vector<Tensor> component_spectrograms(std::size_t i) const;
  const SpectrogramConfig& spectrogram_config() const { return spec_cfg_; }

 private:
  std::vector<ManifestEntry> entries_;
  SpectrogramConfig spec_cfg_;
  std::string base_dir_;
  mutable std::vector<std::vector<unsigned char>> image_cache_;  // quantized
  mutable std::vector<std::array<int, 2>> image_dims_;
  mutable std::vector<std::vector<float>> spect_cache_;
  std::string resolve(const std::string& path) const;
};

}  // namespace avloc::dataio
