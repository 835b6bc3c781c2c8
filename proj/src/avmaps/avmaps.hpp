#pragma once

#include <vector>

#include "core/tensor.hpp"

namespace avloc::avmaps {

// Per-cell cosine similarity between the visual map and one query embedding.
// Values lie in [-1,1]; zero-norm cells are reported and score exactly 0.
struct SoundAssociatedMap {
  Tensor data;  // (B,d1,d2)
  int zero_norm_cells = 0;
};
SoundAssociatedMap cosine_map(const Tensor& feat, const Tensor& query);

// Soft foreground/background selections of a similarity map.
struct MaskPair {
  Tensor foreground;  // sigmoid((S - alpha_p)/omega)
  Tensor background;  // 1 - sigmoid((S - alpha_n)/omega)
  double alpha_p = 0.65, alpha_n = 0.4, omega = 0.03;
};
MaskPair masks(const Tensor& sound_map, double alpha_p = 0.65, double alpha_n = 0.4,
               double omega = 0.03);

// Mask-weighted global average pooling: mean over all cells of feat * mask.
struct PooledFeatures {
  Tensor foreground;  // (B,c)
  Tensor background;  // (B,c)
};
PooledFeatures pool(const Tensor& feat, const MaskPair& mp);

// One similarity map per reference embedding; slice K is the background
// reference. Flattening is row-major over (d1,d2).
struct ReferenceAssociatedMaps {
  Tensor data;       // (B,K+1,d1,d2)
  Tensor flattened;  // (B,K+1,d1*d2)
};
ReferenceAssociatedMaps reference_maps(const Tensor& feat, const Tensor& fg_refs,
                                       const Tensor& bg_ref);

// Localize K sources one at a time, suppressing previously selected regions
// (their similarity is pinned to -1 between iterations).
struct IdentifyConfig {
  double theta_id = 0.5;  // threshold on the sigmoid foreground mask
  double alpha_p = 0.65;
  double omega = 0.03;
};
struct LocalizationResult {
  Tensor per_source_maps;  // (K,d1,d2) sigmoid maps after suppression
  Tensor binarized_masks;  // (K,d1,d2) in {0,1}, pairwise disjoint
  double threshold = 0.5;
};
// audio holds either one mixed embedding or exactly K per-source embeddings.
LocalizationResult iterative_identify(const Tensor& feat_single,  // (d1,d2,c)
                                      const std::vector<Tensor>& audio, int K,
                                      const IdentifyConfig& cfg = {});

Tensor bilinear_upsample(const Tensor& map, int out_h, int out_w);  // (d1,d2)->(H,W)

struct PixelBox {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // half-open
  bool empty = true;
};
PixelBox bbox_of_mask(const Tensor& mask);  // cells > 0.5 count as set

}  // namespace avloc::avmaps
