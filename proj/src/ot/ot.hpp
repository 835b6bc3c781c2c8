#pragma once

#include <vector>

#include "core/graph.hpp"
#include "core/tensor.hpp"

namespace avloc::ot {

// Probability mass on a fixed grid support.
struct Distribution {
  Tensor mass;            // (n,), non-negative, sums to 1
  Tensor support_coords;  // (n,2) grid coordinates
};

struct CostMatrix {
  Tensor data;            // (n,n), non-negative
  double beta_intensity = 1.0;
};

struct TransportPlan {
  Tensor plan;            // (n,n), row sums ~ P, column sums ~ Q
  double marginal_err = 0.0;
};

struct SinkhornConfig {
  double epsilon = 0.05;
  int max_iter = 100;
  double tol = 1e-6;
  bool log_domain = true;
};

struct SinkhornResult {
  double distance = 0.0;    // converged dual objective <f,P> + <g,Q>
  double sharp_cost = 0.0;  // <plan, C>, reported for diagnostics
  TransportPlan plan;
  std::vector<double> f, g;  // dual potentials
  int iterations = 0;
  bool converged = false;
};

// Spatial term of the ground cost: pairwise Euclidean distances divided by the
// grid diagonal so the coordinate and intensity scales stay commensurate.
struct GridGeometry {
  int d1 = 0, d2 = 0;
  Tensor coords;          // (n,2), row-major over (i,j)
  Tensor spatial_cost;    // (n,n) normalized distances
};
GridGeometry make_grid_geometry(int d1, int d2);

// Rescale raw map intensities onto the simplex: clamp to [0,1], add a 1e-6
// floor, divide by the sum. An all-zero map becomes uniform.
Distribution normalize_to_simplex(const Tensor& map, const Tensor& support_coords);
Tensor simplex_weights(const Tensor& map);  // just the (n,) mass vector

// C[i,j] = |coords_i - coords_j| / diag + beta * |map_a[i] - map_b[j]|
CostMatrix build_cost(const Tensor& map_a, const Tensor& map_b, const Tensor& coords,
                      double beta = 1.0);

SinkhornResult sinkhorn(const Distribution& p, const Distribution& q, const CostMatrix& cost,
                        const SinkhornConfig& cfg);

// Exact optimal-transport cost on small instances (n <= 12) via a dense
// two-phase simplex with an optimality certificate. Independent of sinkhorn.
double exact_emd_oracle(const Distribution& p, const Distribution& q, const CostMatrix& cost);

// ---- autodiff wrappers ----
Var simplex_normalize(Var v);
Var ot_cost(Var a, Var b, const GridGeometry& geom, double beta);

struct SinkhornTriple {
  Var p, q, c;
};
struct SinkhornBatchStats {
  std::vector<double> marginal_err;
  std::vector<int> iterations;
  std::vector<bool> converged;
};
// One fused node evaluating many independent (P,Q,C) problems in parallel;
// output is the (T,) vector of distances. Gradients use the converged duals:
// d/dP = f - eps, d/dQ = g - eps, d/dC = plan.
Var sinkhorn_batch(const std::vector<SinkhornTriple>& triples, const SinkhornConfig& cfg,
                   int threads, SinkhornBatchStats* stats = nullptr);

}  // namespace avloc::ot
