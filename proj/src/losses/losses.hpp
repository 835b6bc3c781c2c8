#pragma once

#include "core/graph.hpp"
#include "core/tensor.hpp"
#include "ot/ot.hpp"

namespace avloc::losses {

struct OCAConfig {
  double tau = 0.7;          // in-batch negatives with reference similarity > tau are dropped
  double temperature = 1.0;  // similarities are used raw by default
};

struct OriConfig {
  ot::SinkhornConfig sinkhorn;
  double cost_beta = 1.0;
};

struct LossConfig {
  OCAConfig oca;
  OriConfig ori;
  double lambda1 = 1.0;
  double lambda2 = 0.1;
  double alpha_p = 0.65;
  double alpha_n = 0.4;
  double omega = 0.03;
  int threads = 0;
};

struct LossReport {
  double l_frg = 0.0, l_bkg = 0.0, l_oca = 0.0, l_ori = 0.0, l_total = 0.0;
  int false_negative_count = 0;  // unordered in-batch reference pairs above tau
  Tensor pairwise_ot_terms;      // (K+1,K+1), batch-averaged, zero diagonal
};

// Mean over the K foreground reference vectors, re-normalized to unit length.
Tensor pooled_reference(const Tensor& refs);  // (B,K,c) -> (B,c)

// Contrastive alignment of masked visual features against reference anchors.
double oca_frg(const Tensor& vis_fg, const Tensor& vis_bg, const Tensor& ref_fg,
               const OCAConfig& cfg = {});
double oca_bkg(const Tensor& vis_bg, const Tensor& vis_fg, const Tensor& ref_bg,
               const OCAConfig& cfg = {});
double oca(double frg, double bkg);

// Pairwise transport distances pushing each reference-associated map toward
// the complement of every other (ordered pairs, summed over the batch).
double ori(const Tensor& feat, const Tensor& fg_refs, const Tensor& bg_ref,
           const OriConfig& cfg = {});

double total(double l_oca, double l_ori, double lambda1 = 1.0, double lambda2 = 0.1);

// Full differentiable objective on a tape. Reference embeddings participate in
// the graph (so their gradients are checkable) but the training loop treats
// them as frozen anchors.
struct LossGraph {
  Var frg, bkg, oca, ori, total;
  LossReport report;
};
LossGraph build_losses(Graph& g, Var feat, Var audio_emb, Var fg_refs, Var bg_ref,
                       const LossConfig& cfg);

}  // namespace avloc::losses
