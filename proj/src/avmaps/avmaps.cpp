#include "avmaps/avmaps.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "core/error.hpp"
#include "core/ops.hpp"

namespace avloc::avmaps {

namespace {

double cell_cosine(const double* f, const double* a, int c, bool* floored) {
  double dot = 0.0, sf = 0.0, sa = 0.0;
  for (int k = 0; k < c; ++k) {
    dot += f[k] * a[k];
    sf += f[k] * f[k];
    sa += a[k] * a[k];
  }
  const double nf = std::sqrt(sf), na = std::sqrt(sa);
  if (floored) *floored = nf < ops::kNormFloor || na < ops::kNormFloor;
  return dot / (std::max(nf, ops::kNormFloor) * std::max(na, ops::kNormFloor));
}

}  // namespace

SoundAssociatedMap cosine_map(const Tensor& feat, const Tensor& query) {
  if (feat.ndim() != 4 || query.ndim() != 2)
    throw ValidationError("cosine_map expects (B,d1,d2,c) and (B,c)");
  if (feat.dim(0) != query.dim(0) || feat.dim(3) != query.dim(1))
    throw ValidationError("cosine_map: batch/channel mismatch " + feat.shape_str() + " vs " +
                          query.shape_str());
  if (!feat.all_finite() || !query.all_finite())
    throw ValidationError("cosine_map: non-finite input");
  const int B = feat.dim(0), d1 = feat.dim(1), d2 = feat.dim(2), c = feat.dim(3);
  SoundAssociatedMap out;
  out.data = Tensor({B, d1, d2});
  for (int b = 0; b < B; ++b)
    for (int i = 0; i < d1; ++i)
      for (int j = 0; j < d2; ++j) {
        bool floored = false;
        out.data.at(b, i, j) =
            cell_cosine(feat.data() + feat.off(b, i, j, 0), query.data() + query.off(b, 0), c, &floored);
        if (floored) ++out.zero_norm_cells;
      }
  return out;
}

MaskPair masks(const Tensor& sound_map, double alpha_p, double alpha_n, double omega) {
  if (omega <= 0.0) throw ValidationError("mask sharpness omega must be positive");
  MaskPair mp;
  mp.alpha_p = alpha_p;
  mp.alpha_n = alpha_n;
  mp.omega = omega;
  mp.foreground = Tensor(sound_map.shape());
  mp.background = Tensor(sound_map.shape());
  for (std::size_t i = 0; i < sound_map.numel(); ++i) {
    mp.foreground[i] = 1.0 / (1.0 + std::exp(-(sound_map[i] - alpha_p) / omega));
    mp.background[i] = 1.0 - 1.0 / (1.0 + std::exp(-(sound_map[i] - alpha_n) / omega));
  }
  return mp;
}

PooledFeatures pool(const Tensor& feat, const MaskPair& mp) {
  if (feat.ndim() != 4 || mp.foreground.ndim() != 3)
    throw ValidationError("pool expects (B,d1,d2,c) features and (B,d1,d2) masks");
  if (feat.dim(0) != mp.foreground.dim(0) || feat.dim(1) != mp.foreground.dim(1) ||
      feat.dim(2) != mp.foreground.dim(2))
    throw ValidationError("pool: spatial shape mismatch");
  const int B = feat.dim(0), d1 = feat.dim(1), d2 = feat.dim(2), c = feat.dim(3);
  const double inv = 1.0 / (static_cast<double>(d1) * d2);
  PooledFeatures pf;
  pf.foreground = Tensor({B, c});
  pf.background = Tensor({B, c});
  for (int b = 0; b < B; ++b)
    for (int i = 0; i < d1; ++i)
      for (int j = 0; j < d2; ++j) {
        const double wp = mp.foreground.at(b, i, j) * inv;
        const double wn = mp.background.at(b, i, j) * inv;
        for (int k = 0; k < c; ++k) {
          pf.foreground.at(b, k) += feat.at(b, i, j, k) * wp;
          pf.background.at(b, k) += feat.at(b, i, j, k) * wn;
        }
      }
  return pf;
}

ReferenceAssociatedMaps reference_maps(const Tensor& feat, const Tensor& fg_refs,
                                       const Tensor& bg_ref) {
  if (fg_refs.ndim() != 3) throw ValidationError("reference_maps expects (B,K,c) foreground");
  const int B = feat.dim(0), d1 = feat.dim(1), d2 = feat.dim(2);
  const int K = fg_refs.dim(1);
  if (K < 1) throw ValidationError("reference_maps requires at least one source");
  if (fg_refs.dim(0) != B || bg_ref.dim(0) != B || fg_refs.dim(2) != feat.dim(3) ||
      bg_ref.dim(1) != feat.dim(3))
    throw ValidationError("reference_maps: shape mismatch");
  ReferenceAssociatedMaps out;
  out.data = Tensor({B, K + 1, d1, d2});
  Tensor query({B, feat.dim(3)});
  for (int k = 0; k <= K; ++k) {
    for (int b = 0; b < B; ++b)
      for (int ch = 0; ch < feat.dim(3); ++ch)
        query.at(b, ch) = k < K ? fg_refs.at(b, k, ch) : bg_ref.at(b, ch);
    const SoundAssociatedMap sm = cosine_map(feat, query);
    for (int b = 0; b < B; ++b)
      for (int i = 0; i < d1; ++i)
        for (int j = 0; j < d2; ++j) out.data.at(b, k, i, j) = sm.data.at(b, i, j);
  }
  out.flattened = out.data.reshaped({B, K + 1, d1 * d2});
  return out;
}

LocalizationResult iterative_identify(const Tensor& feat_single, const std::vector<Tensor>& audio,
                                      int K, const IdentifyConfig& cfg) {
  if (K < 1) throw ValidationError("iterative_identify requires K >= 1");
  if (feat_single.ndim() != 3) throw ValidationError("iterative_identify expects (d1,d2,c)");
  if (audio.empty() || (audio.size() != 1 && static_cast<int>(audio.size()) != K))
    throw ValidationError("iterative_identify needs one mixed embedding or K components");
  const int d1 = feat_single.dim(0), d2 = feat_single.dim(1), c = feat_single.dim(2);
  for (const Tensor& a : audio)
    if (a.numel() != static_cast<std::size_t>(c))
      throw ValidationError("iterative_identify: embedding channel mismatch");

  LocalizationResult res;
  res.per_source_maps = Tensor({K, d1, d2});
  res.binarized_masks = Tensor({K, d1, d2});
  res.threshold = cfg.theta_id;
  std::vector<char> suppressed(static_cast<std::size_t>(d1 * d2), 0);

  for (int k = 0; k < K; ++k) {
    const Tensor& emb = audio.size() == 1 ? audio[0] : audio[static_cast<std::size_t>(k)];
    Tensor sim({d1, d2});
    for (int i = 0; i < d1; ++i)
      for (int j = 0; j < d2; ++j) {
        const int cell = i * d2 + j;
        sim.at(i, j) = suppressed[static_cast<std::size_t>(cell)]
                           ? -1.0
                           : cell_cosine(feat_single.data() + feat_single.off(i, j, 0), emb.data(), c,
                                         nullptr);
      }
    int selected = 0;
    double best = -std::numeric_limits<double>::infinity();
    int best_cell = 0;
    for (int i = 0; i < d1; ++i)
      for (int j = 0; j < d2; ++j) {
        const double m = 1.0 / (1.0 + std::exp(-(sim.at(i, j) - cfg.alpha_p) / cfg.omega));
        res.per_source_maps.at(k, i, j) = m;
        const int cell = i * d2 + j;
        if (!suppressed[static_cast<std::size_t>(cell)] && sim.at(i, j) > best) {
          best = sim.at(i, j);
          best_cell = cell;
        }
        if (m >= cfg.theta_id && !suppressed[static_cast<std::size_t>(cell)]) {
          res.binarized_masks.at(k, i, j) = 1.0;
          ++selected;
        }
      }
    if (selected == 0) {
      // Degenerate-input rule: the best remaining cell forms the region.
      res.binarized_masks[static_cast<std::size_t>(k) * d1 * d2 + best_cell] = 1.0;
    }
    for (int cell = 0; cell < d1 * d2; ++cell)
      if (res.binarized_masks[static_cast<std::size_t>(k) * d1 * d2 + cell] > 0.5)
        suppressed[static_cast<std::size_t>(cell)] = 1;
  }
  return res;
}

Tensor bilinear_upsample(const Tensor& map, int out_h, int out_w) {
  if (map.ndim() != 2) throw ValidationError("bilinear_upsample expects (d1,d2)");
  const int h = map.dim(0), w = map.dim(1);
  Tensor out({out_h, out_w});
  const double sy = static_cast<double>(h) / out_h;
  const double sx = static_cast<double>(w) / out_w;
  for (int y = 0; y < out_h; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    fy = std::min(std::max(fy, 0.0), static_cast<double>(h - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, h - 1);
    const double wy = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      fx = std::min(std::max(fx, 0.0), static_cast<double>(w - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, w - 1);
      const double wx = fx - x0;
      out.at(y, x) = (1 - wy) * ((1 - wx) * map.at(y0, x0) + wx * map.at(y0, x1)) +
                     wy * ((1 - wx) * map.at(y1, x0) + wx * map.at(y1, x1));
    }
  }
  return out;
}

PixelBox bbox_of_mask(const Tensor& mask) {
  if (mask.ndim() != 2) throw ValidationError("bbox_of_mask expects (H,W)");
  PixelBox box;
  const int h = mask.dim(0), w = mask.dim(1);
  int x0 = w, y0 = h, x1 = -1, y1 = -1;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (mask.at(y, x) > 0.5) {
        x0 = std::min(x0, x);
        y0 = std::min(y0, y);
        x1 = std::max(x1, x);
        y1 = std::max(y1, y);
      }
  if (x1 >= 0) {
    box.empty = false;
    box.x0 = x0;
    box.y0 = y0;
    box.x1 = x1 + 1;
    box.y1 = y1 + 1;
  }
  return box;
}

}  // namespace avloc::avmaps
