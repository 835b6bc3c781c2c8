#pragma once

#include <vector>

#include "core/graph.hpp"

namespace avloc::ops {

// Norms are floored at this value before any division, so cosine maps stay
// defined (and zero) for zero-norm inputs.
inline constexpr double kNormFloor = 1e-8;

// ---- elementwise ----
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var add_scalar(Var a, double s);
Var mul_scalar(Var a, double s);
Var sub_from_scalar(double s, Var a);  // s - a
Var sigmoid(Var a);
Var tanh_act(Var a);
Var exp_elem(Var a);
Var log_elem(Var a);

// ---- reductions / reshcodes ----
Var sum_all(Var a);
Var mean_all(Var a);
Var sum_axis0(Var a);                      // (m,n) -> (n,)
Var select_axis1(Var a, int k);            // (B,K,c) -> (B,c)
Var mean_axis1(Var a);                     // (B,K,c) -> (B,c)
Var slice_flatten(Var a, int b);           // (B,d1,d2) -> (d1*d2,)
Var nchw_to_nhwc(Var a);                   // (B,C,H,W) -> (B,H,W,C)

// ---- linear algebra / network ----
Var conv2d(Var x, Var w, int stride, int pad, int threads);  // NCHW, no bias
Var replicate_pad(Var x, int pad);        // NCHW edge padding
Var linear(Var x, Var w);                 // (B,f) x (o,f) -> (B,o)
Var global_mean_nchw(Var x);              // (B,C,H,W) -> (B,C)
Var l2_normalize_rows(Var x);             // (B,c) -> (B,c)
Var standardize_items(Var x);             // per batch item: (x - mean) / max(std, 1e-6)

// ---- similarity ----
Var cosine_map(Var feat, Var q);          // (B,d1,d2,c) x (B,c) -> (B,d1,d2)
Var cosine_rows(Var x, Var y);            // (B,c) x (B,c) -> (B,)
Var cosine_cross(Var x, Var y);           // (B,c) x (B,c) -> (B,B), [i,j]=cos(x_i,y_j)
Var scale_by_map(Var feat, Var m);        // (B,d1,d2,c) x (B,d1,d2) -> (B,d1,d2,c)
Var spatial_mean(Var feat);               // (B,d1,d2,c) -> (B,c)

}  // namespace avloc::ops
