#include "losses/losses.hpp"

#include <cmath>
#include <vector>

#include "core/error.hpp"
#include "core/ops.hpp"

namespace avloc::losses {

namespace {

double row_cosine(const Tensor& x, int i, const Tensor& y, int j) {
  const int c = x.dim(1);
  double dot = 0.0, sx = 0.0, sy = 0.0;
  for (int k = 0; k < c; ++k) {
    dot += x.at(i, k) * y.at(j, k);
    sx += x.at(i, k) * x.at(i, k);
    sy += y.at(j, k) * y.at(j, k);
  }
  return dot / (std::max(std::sqrt(sx), ops::kNormFloor) *
                std::max(std::sqrt(sy), ops::kNormFloor));
}

// Contrastive term shared by the foreground and background alignments:
// -mean_i log(p_i / (p_i + hard_i [+ soft_i])).
Var contrastive(Var pos_sim, Var hard_sim, Var soft_sum, bool with_soft, double inv_temp) {
  Var p = ops::exp_elem(ops::mul_scalar(pos_sim, inv_temp));
  Var nh = ops::exp_elem(ops::mul_scalar(hard_sim, inv_temp));
  Var denom = ops::add(p, nh);
  if (with_soft) denom = ops::add(denom, soft_sum);
  return ops::mean_all(ops::sub(ops::log_elem(denom), ops::log_elem(p)));
}

}  // namespace

Tensor pooled_reference(const Tensor& refs) {
  if (refs.ndim() != 3 || refs.dim(1) < 1)
    throw ValidationError("pooled_reference expects (B,K,c) with K >= 1");
  Graph g;
  Var r = make_const(g, refs);
  Var out = ops::l2_normalize_rows(ops::mean_axis1(r));
  return out.val();
}

double oca_frg(const Tensor& vis_fg, const Tensor& vis_bg, const Tensor& ref_fg,
               const OCAConfig& cfg) {
  Graph g;
  Var lvp = make_const(g, vis_fg);
  Var lvn = make_const(g, vis_bg);
  Var lrp = make_const(g, ref_fg);
  const int B = vis_fg.dim(0);
  const double inv_temp = 1.0 / cfg.temperature;
  Var pos = ops::cosine_rows(lvp, lrp);
  Var hard = ops::cosine_rows(lvn, lrp);
  // soft negatives: other clips' foreground features, with near-duplicate
  // references excluded
  Tensor mask({B, B});
  for (int j = 0; j < B; ++j)
    for (int i = 0; i < B; ++i)
      mask.at(j, i) = (j != i && row_cosine(ref_fg, j, ref_fg, i) <= cfg.tau) ? 1.0 : 0.0;
  Var cross = ops::exp_elem(ops::mul_scalar(ops::cosine_cross(lvp, lrp), inv_temp));
  Var soft = ops::sum_axis0(ops::mul(cross, make_const(g, mask)));
  return contrastive(pos, hard, soft, true, inv_temp).val()[0];
}

double oca_bkg(const Tensor& vis_bg, const Tensor& vis_fg, const Tensor& ref_bg,
               const OCAConfig& cfg) {
  Graph g;
  Var lvn = make_const(g, vis_bg);
  Var lvp = make_const(g, vis_fg);
  Var bg = make_const(g, ref_bg);
  const double inv_temp = 1.0 / cfg.temperature;
  Var pos = ops::cosine_rows(lvn, bg);
  Var hard = ops::cosine_rows(lvp, bg);
  return contrastive(pos, hard, Var{}, false, inv_temp).val()[0];
}

double oca(double frg, double bkg) { return (frg + bkg) / 2.0; }

double total(double l_oca, double l_ori, double lambda1, double lambda2) {
  return lambda1 * l_oca + lambda2 * l_ori;
}

namespace {

struct OriGraph {
  Var value;
  Tensor pairwise;  // (K+1,K+1) batch-averaged term values
};

OriGraph build_ori(Graph& g, Var feat, Var fg_refs, Var bg_ref, const OriConfig& cfg,
                   int threads) {
  const Tensor& fv = feat.val();
  const int B = fv.dim(0), d1 = fv.dim(1), d2 = fv.dim(2);
  const int K = fg_refs.val().dim(1);
  const ot::GridGeometry geom = ot::make_grid_geometry(d1, d2);

  // K foreground maps plus the background map.
  std::vector<Var> slices;
  slices.reserve(static_cast<std::size_t>(K + 1));
  for (int k = 0; k < K; ++k)
    slices.push_back(ops::cosine_map(feat, ops::select_axis1(fg_refs, k)));
  slices.push_back(ops::cosine_map(feat, bg_ref));

  std::vector<ot::SinkhornTriple> triples;
  std::vector<std::pair<int, int>> pair_of_triple;
  triples.reserve(static_cast<std::size_t>(B * (K + 1) * K));
  for (int b = 0; b < B; ++b) {
    std::vector<Var> flat, comp;
    for (int k = 0; k <= K; ++k) {
      flat.push_back(ops::slice_flatten(slices[static_cast<std::size_t>(k)], b));
      comp.push_back(ops::sub_from_scalar(1.0, flat.back()));
    }
    for (int n = 0; n <= K; ++n)
      for (int m = 0; m <= K; ++m) {
        if (n == m) continue;
        Var a = flat[static_cast<std::size_t>(n)];
        Var q = comp[static_cast<std::size_t>(m)];
        triples.push_back(ot::SinkhornTriple{ot::simplex_normalize(a), ot::simplex_normalize(q),
                                             ot::ot_cost(a, q, geom, cfg.cost_beta)});
        pair_of_triple.emplace_back(n, m);
      }
  }
  Var values = ot::sinkhorn_batch(triples, cfg.sinkhorn, threads);

  OriGraph out;
  out.value = ops::sum_all(values);
  out.pairwise = Tensor({K + 1, K + 1});
  const Tensor& v = values.val();
  for (std::size_t t = 0; t < pair_of_triple.size(); ++t)
    out.pairwise.at(pair_of_triple[t].first, pair_of_triple[t].second) += v[t] / B;
  return out;
}

}  // namespace

double ori(const Tensor& feat, const Tensor& fg_refs, const Tensor& bg_ref,
           const OriConfig& cfg) {
  if (fg_refs.ndim() != 3 || fg_refs.dim(1) < 1)
    throw ValidationError("ori expects (B,K,c) references with K >= 1");
  Graph g;
  OriGraph og = build_ori(g, make_const(g, feat), make_const(g, fg_refs),
                          make_const(g, bg_ref), cfg, 0);
  return og.value.val()[0];
}

LossGraph build_losses(Graph& g, Var feat, Var audio_emb, Var fg_refs, Var bg_ref,
                       const LossConfig& cfg) {
  const Tensor& fv = feat.val();
  if (fv.ndim() != 4) throw ValidationError("build_losses expects (B,d1,d2,c) features");
  if (fg_refs.val().ndim() != 3 || fg_refs.val().dim(1) < 1)
    throw ValidationError("build_losses expects (B,K,c) references with K >= 1");
  if (cfg.omega <= 0.0) throw ValidationError("mask sharpness omega must be positive");
  if (cfg.oca.temperature <= 0.0) throw ValidationError("temperature must be positive");
  const int B = fv.dim(0);
  const int K = fg_refs.val().dim(1);
  const double inv_temp = 1.0 / cfg.oca.temperature;

  // sound-associated map -> soft masks -> pooled visual features
  Var sa = ops::cosine_map(feat, audio_emb);
  Var mp = ops::sigmoid(ops::mul_scalar(ops::add_scalar(sa, -cfg.alpha_p), 1.0 / cfg.omega));
  Var mn = ops::sub_from_scalar(
      1.0, ops::sigmoid(ops::mul_scalar(ops::add_scalar(sa, -cfg.alpha_n), 1.0 / cfg.omega)));
  Var lvp = ops::spatial_mean(ops::scale_by_map(feat, mp));
  Var lvn = ops::spatial_mean(ops::scale_by_map(feat, mn));
  Var lrp = ops::l2_normalize_rows(ops::mean_axis1(fg_refs));

  // foreground alignment with false-negative exclusion
  const Tensor lrp_val = lrp.val();
  Tensor mask({B, B});
  int fn_pairs = 0;
  for (int j = 0; j < B; ++j)
    for (int i = 0; i < B; ++i) {
      if (j == i) continue;
      const bool keep = row_cosine(lrp_val, j, lrp_val, i) <= cfg.oca.tau;
      mask.at(j, i) = keep ? 1.0 : 0.0;
      if (!keep && j < i) ++fn_pairs;
    }
  Var cross = ops::exp_elem(ops::mul_scalar(ops::cosine_cross(lvp, lrp), inv_temp));
  Var soft = ops::sum_axis0(ops::mul(cross, make_const(g, mask)));
  Var frg =
      contrastive(ops::cosine_rows(lvp, lrp), ops::cosine_rows(lvn, lrp), soft, true, inv_temp);
  Var bkg = contrastive(ops::cosine_rows(lvn, bg_ref), ops::cosine_rows(lvp, bg_ref), Var{},
                        false, inv_temp);
  Var oca_v = ops::mul_scalar(ops::add(frg, bkg), 0.5);

  LossGraph out;
  out.frg = frg;
  out.bkg = bkg;
  out.oca = oca_v;
  if (cfg.lambda2 != 0.0) {
    OriGraph og = build_ori(g, feat, fg_refs, bg_ref, cfg.ori, cfg.threads);
    out.ori = og.value;
    out.report.pairwise_ot_terms = og.pairwise;
  } else {
    out.ori = make_const(g, Tensor::scalar(0.0));
    out.report.pairwise_ot_terms = Tensor({K + 1, K + 1});
  }
  out.total = ops::add(ops::mul_scalar(oca_v, cfg.lambda1), ops::mul_scalar(out.ori, cfg.lambda2));

  out.report.l_frg = frg.val()[0];
  out.report.l_bkg = bkg.val()[0];
  out.report.l_oca = oca_v.val()[0];
  out.report.l_ori = out.ori.val()[0];
  out.report.l_total = out.total.val()[0];
  out.report.false_negative_count = fn_pairs;
  return out;
}

}  // namespace avloc::losses
