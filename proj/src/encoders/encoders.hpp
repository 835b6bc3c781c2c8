#pragma once

#include <string>
#include <vector>

#include "core/graph.hpp"
#include "core/tensor.hpp"

#include <json.hpp>

namespace avloc::encoders {

enum class BackboneKind { toy_conv, external };

// Contract shared by all feature extractors. The in-tree backbone is a small
// bias-free tanh conv stack; external encoders plug in behind the same
// interface and shapes.
struct EncoderConfig {
  BackboneKind backbone_kind = BackboneKind::toy_conv;
  int feature_channels = 16;
  int spatial_downsample = 32;  // power of two; one stride-2 stage per factor
  std::uint64_t seed = 0;
};

void validate(const EncoderConfig& cfg);
EncoderConfig encoder_config_from_json(const nlohmann::json& j);
nlohmann::json encoder_config_to_json(const EncoderConfig& cfg);

struct VisualFeatureMap {
  Tensor data;  // (B, H/d, W/d, c)
  int rows = 0, cols = 0, channels = 0;
};

struct AudioEmbedding {
  Tensor data;  // (B, c)
};

struct ReferenceEmbeddings {
  Tensor foreground;  // (B, K, c)
  Tensor background;  // (B, c)
  int source_count = 0;
};

// Trainable two-stream backbone. All parameters are bias-free so a zero
// input yields zero features at any depth.
class ToyEncoders {
 public:
  explicit ToyEncoders(const EncoderConfig& cfg);

  // Parameters materialized on a tape: leaves when gradients are wanted,
  // constants for pure inference.
  std::vector<Var> param_vars(Graph& g, bool trainable) const;

  // Tape-building forward passes; pvars must come from param_vars on the
  // same graph. Visual output is channels-last (B, H/d, W/d, c).
  Var visual(Graph& g, Var images_nchw, const std::vector<Var>& pvars, int threads) const;
  Var audio(Graph& g, Var spect_nchw, const std::vector<Var>& pvars, int threads) const;

  // Plain forwards for inference paths.
  VisualFeatureMap encode_visual(const Tensor& images, int threads = 0) const;
  AudioEmbedding encode_audio(const Tensor& spectrograms, int threads = 0) const;

  const EncoderConfig& config() const { return cfg_; }

  struct Param {
    std::string name;
    Tensor value;
    int stride = 1;
    int pad = 0;
  };
  std::vector<Param>& params() { return params_; }
  const std::vector<Param>& params() const { return params_; }
  std::vector<Tensor*> trainable();

  nlohmann::json params_to_json() const;
  void params_from_json(const nlohmann::json& j);

 private:
  EncoderConfig cfg_;
  std::vector<Param> params_;
  int n_stages_ = 0;
  int visual_begin_ = 0, visual_end_ = 0;  // [begin,end) into params_
  int audio_begin_ = 0, audio_end_ = 0;
};

// Convenience wrappers matching the one-shot contracts.
VisualFeatureMap encode_visual(const Tensor& images, const EncoderConfig& cfg);
AudioEmbedding encode_audio(const Tensor& spectrograms, const EncoderConfig& cfg);

// Deterministic stand-in for a sentence encoder: seeded hashed bag-of-words,
// case-insensitive, whitespace-tokenized, rows L2-normalized.
Tensor encode_text(const std::vector<std::string>& captions, const EncoderConfig& cfg);

}  // namespace avloc::encoders
