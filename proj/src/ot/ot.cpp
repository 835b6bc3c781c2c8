#include "ot/ot.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "core/error.hpp"
#include "core/parallel.hpp"

namespace avloc::ot {

namespace {

constexpr double kMassFloor = 1e-6;

double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

double logsumexp(const std::vector<double>& terms) {
  double m = -std::numeric_limits<double>::infinity();
  for (double t : terms) m = std::max(m, t);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double t : terms) s += std::exp(t - m);
  return m + std::log(s);
}

}  // namespace

GridGeometry make_grid_geometry(int d1, int d2) {
  if (d1 < 1 || d2 < 1) throw ValidationError("grid dimensions must be positive");
  GridGeometry geom;
  geom.d1 = d1;
  geom.d2 = d2;
  const int n = d1 * d2;
  geom.coords = Tensor({n, 2});
  for (int i = 0; i < d1; ++i)
    for (int j = 0; j < d2; ++j) {
      geom.coords.at(i * d2 + j, 0) = i;
      geom.coords.at(i * d2 + j, 1) = j;
    }
  const double diag = std::sqrt(static_cast<double>(d1 - 1) * (d1 - 1) +
                                static_cast<double>(d2 - 1) * (d2 - 1));
  const double inv_diag = diag > 0.0 ? 1.0 / diag : 0.0;
  geom.spatial_cost = Tensor({n, n});
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b) {
      const double dy = geom.coords.at(a, 0) - geom.coords.at(b, 0);
      const double dx = geom.coords.at(a, 1) - geom.coords.at(b, 1);
      geom.spatial_cost.at(a, b) = std::sqrt(dy * dy + dx * dx) * inv_diag;
    }
  return geom;
}

Tensor simplex_weights(const Tensor& map) {
  if (map.ndim() != 1) throw ValidationError("simplex weights expect a vector");
  if (!map.all_finite()) throw ValidationError("non-finite map intensities");
  const std::size_t n = map.numel();
  if (n == 0) throw ValidationError("empty map");
  Tensor out({static_cast<int>(n)});
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = clamp01(map[i]) + kMassFloor;
    sum += out[i];
  }
  for (std::size_t i = 0; i < n; ++i) out[i] /= sum;
  return out;
}

Distribution normalize_to_simplex(const Tensor& map, const Tensor& support_coords) {
  Distribution d;
  d.mass = simplex_weights(map);
  d.support_coords = support_coords;
  return d;
}

CostMatrix build_cost(const Tensor& map_a, const Tensor& map_b, const Tensor& coords,
                      double beta) {
  if (map_a.numel() == 0) throw ValidationError("cost matrix over empty support");
  if (map_a.numel() != map_b.numel()) throw ValidationError("cost matrix: map length mismatch");
  const int n = static_cast<int>(map_a.numel());
  if (coords.ndim() != 2 || coords.dim(0) != n || coords.dim(1) != 2)
    throw ValidationError("cost matrix: coords must be (n,2)");
  double diag = 0.0;
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b) {
      const double dy = coords.at(a, 0) - coords.at(b, 0);
      const double dx = coords.at(a, 1) - coords.at(b, 1);
      diag = std::max(diag, std::sqrt(dy * dy + dx * dx));
    }
  const double inv_diag = diag > 0.0 ? 1.0 / diag : 0.0;
  CostMatrix cm;
  cm.beta_intensity = beta;
  cm.data = Tensor({n, n});
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b) {
      const double dy = coords.at(a, 0) - coords.at(b, 0);
      const double dx = coords.at(a, 1) - coords.at(b, 1);
      cm.data.at(a, b) =
          std::sqrt(dy * dy + dx * dx) * inv_diag + beta * std::fabs(map_a[a] - map_b[b]);
    }
  return cm;
}

namespace {

struct SolveOut {
  std::vector<double> f, g;
  double value = 0.0;
  double marginal_err = 0.0;
  int iterations = 0;
  bool converged = false;
};

// Log-domain alternating updates for the relative-entropy regularized problem:
//   f_i = -eps * LSE_j[(g_j - C_ij)/eps + log Q_j]
//   g_j = -eps * LSE_i[(f_i - C_ij)/eps + log P_i]
// The implied plan is gamma_ij = P_i Q_j exp((f_i + g_j - C_ij)/eps).
SolveOut solve_log_domain(const double* P, const double* Q, const Tensor& C, int n,
                          const SinkhornConfig& cfg) {
  SolveOut out;
  std::vector<double> f(n, 0.0), g(n, 0.0), logP(n), logQ(n), terms(n);
  for (int i = 0; i < n; ++i) {
    if (P[i] <= 0.0 || Q[i] <= 0.0) throw ValidationError("sinkhorn requires positive masses");
    logP[i] = std::log(P[i]);
    logQ[i] = std::log(Q[i]);
  }
  const double eps = cfg.epsilon;
  double err = std::numeric_limits<double>::infinity();
  int it = 0;
  for (; it < cfg.max_iter; ++it) {
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) terms[j] = (g[j] - C.at(i, j)) / eps + logQ[j];
      f[i] = -eps * logsumexp(terms);
    }
    for (int j = 0; j < n; ++j) {
      for (int i = 0; i < n; ++i) terms[i] = (f[i] - C.at(i, j)) / eps + logP[i];
      g[j] = -eps * logsumexp(terms);
    }
    // After the g-update columns are exact; measure the row violation.
    err = 0.0;
    for (int i = 0; i < n; ++i) {
      double row = 0.0;
      for (int j = 0; j < n; ++j)
        row += std::exp(logP[i] + logQ[j] + (f[i] + g[j] - C.at(i, j)) / eps);
      err = std::max(err, std::fabs(row - P[i]));
    }
    if (!std::isfinite(err)) throw NumericalError("sinkhorn diverged (non-finite marginals)");
    if (err <= cfg.tol) {
      ++it;
      out.converged = true;
      break;
    }
  }
  out.f = std::move(f);
  out.g = std::move(g);
  out.iterations = it;
  out.marginal_err = err;
  double val = 0.0;
  for (int i = 0; i < n; ++i) val += out.f[i] * P[i] + out.g[i] * Q[i];
  if (!std::isfinite(val)) throw NumericalError("sinkhorn produced a non-finite value");
  out.value = val;
  return out;
}

// Plain scaling-vector iteration, kept for cross-checking at large epsilon.
SolveOut solve_scaling(const double* P, const double* Q, const Tensor& C, int n,
                       const SinkhornConfig& cfg) {
  SolveOut out;
  const double eps = cfg.epsilon;
  Tensor K({n, n});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) K.at(i, j) = P[i] * Q[j] * std::exp(-C.at(i, j) / eps);
  std::vector<double> a(n, 1.0), b(n, 1.0);
  double err = std::numeric_limits<double>::infinity();
  int it = 0;
  for (; it < cfg.max_iter; ++it) {
    for (int i = 0; i < n; ++i) {
      double kb = 0.0;
      for (int j = 0; j < n; ++j) kb += K.at(i, j) * b[j];
      if (kb <= 0.0 || !std::isfinite(kb))
        throw NumericalError("sinkhorn scaling underflow; use the log-domain solver");
      a[i] = P[i] / kb;
    }
    for (int j = 0; j < n; ++j) {
      double ka = 0.0;
      for (int i = 0; i < n; ++i) ka += K.at(i, j) * a[i];
      if (ka <= 0.0 || !std::isfinite(ka))
        throw NumericalError("sinkhorn scaling underflow; use the log-domain solver");
      b[j] = Q[j] / ka;
    }
    err = 0.0;
    for (int i = 0; i < n; ++i) {
      double row = 0.0;
      for (int j = 0; j < n; ++j) row += a[i] * K.at(i, j) * b[j];
      err = std::max(err, std::fabs(row - P[i]));
    }
    if (err <= cfg.tol) {
      ++it;
      out.converged = true;
      break;
    }
  }
  out.f.resize(n);
  out.g.resize(n);
  for (int i = 0; i < n; ++i) out.f[i] = eps * std::log(a[i]);
  for (int j = 0; j < n; ++j) out.g[j] = eps * std::log(b[j]);
  out.iterations = it;
  out.marginal_err = err;
  double val = 0.0;
  for (int i = 0; i < n; ++i) val += out.f[i] * P[i] + out.g[i] * Q[i];
  if (!std::isfinite(val)) throw NumericalError("sinkhorn produced a non-finite value");
  out.value = val;
  return out;
}

SolveOut solve(const double* P, const double* Q, const Tensor& C, int n,
               const SinkhornConfig& cfg) {
  if (cfg.epsilon <= 0.0) throw ValidationError("sinkhorn epsilon must be positive");
  if (cfg.max_iter < 1) throw ValidationError("sinkhorn max_iter must be >= 1");
  return cfg.log_domain ? solve_log_domain(P, Q, C, n, cfg) : solve_scaling(P, Q, C, n, cfg);
}

Tensor implied_plan(const double* P, const double* Q, const Tensor& C, const SolveOut& s,
                    double eps) {
  const int n = static_cast<int>(s.f.size());
  Tensor plan({n, n});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      plan.at(i, j) =
          P[i] * Q[j] * std::exp((s.f[i] + s.g[j] - C.at(i, j)) / eps);
  return plan;
}

}  // namespace

SinkhornResult sinkhorn(const Distribution& p, const Distribution& q, const CostMatrix& cost,
                        const SinkhornConfig& cfg) {
  const int n = static_cast<int>(p.mass.numel());
  if (static_cast<int>(q.mass.numel()) != n)
    throw ValidationError("sinkhorn: support size mismatch");
  if (cost.data.ndim() != 2 || cost.data.dim(0) != n || cost.data.dim(1) != n)
    throw ValidationError("sinkhorn: cost matrix must be (n,n)");
  SolveOut s = solve(p.mass.data(), q.mass.data(), cost.data, n, cfg);
  SinkhornResult r;
  r.distance = s.value;
  r.f = s.f;
  r.g = s.g;
  r.iterations = s.iterations;
  r.converged = s.converged;
  r.plan.plan = implied_plan(p.mass.data(), q.mass.data(), cost.data, s, cfg.epsilon);
  r.plan.marginal_err = s.marginal_err;
  double sharp = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) sharp += r.plan.plan.at(i, j) * cost.data.at(i, j);
  r.sharp_cost = sharp;
  return r;
}

// ---- autodiff wrappers ----

Var simplex_normalize(Var v) {
  Graph& g = *v.g;
  const Tensor& x = v.val();
  if (x.ndim() != 1 || x.numel() == 0) throw ValidationError("simplex_normalize expects (n,)");
  const int n = static_cast<int>(x.numel());
  auto sum = std::make_shared<double>(0.0);
  Tensor out({n});
  for (int i = 0; i < n; ++i) {
    out[static_cast<std::size_t>(i)] = clamp01(x[static_cast<std::size_t>(i)]) + kMassFloor;
    *sum += out[static_cast<std::size_t>(i)];
  }
  for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] /= *sum;
  int pv = v.id;
  int id = g.add_node(std::move(out), {pv}, [pv, n, sum](Graph& gr, int self) {
    if (!gr.requires_grad(pv)) return;
    const Tensor& go = gr.grad(self);
    const Tensor& y = gr.value(self);
    const Tensor& x2 = gr.value(pv);
    Tensor& gv = gr.grad(pv);
    double dot = 0.0;
    for (int i = 0; i < n; ++i) dot += go[static_cast<std::size_t>(i)] * y[static_cast<std::size_t>(i)];
    for (int i = 0; i < n; ++i) {
      const double xi = x2[static_cast<std::size_t>(i)];
      const bool interior = xi > 0.0 && xi < 1.0;
      if (interior) gv[static_cast<std::size_t>(i)] += (go[static_cast<std::size_t>(i)] - dot) / *sum;
    }
  });
  return {&g, id};
}

Var ot_cost(Var a, Var b, const GridGeometry& geom, double beta) {
  Graph& g = *a.g;
  if (a.g != b.g) throw ValidationError("operands belong to different graphs");
  const Tensor& av = a.val();
  const Tensor& bv = b.val();
  const int n = geom.d1 * geom.d2;
  if (static_cast<int>(av.numel()) != n || static_cast<int>(bv.numel()) != n)
    throw ValidationError("ot_cost: map length does not match geometry");
  Tensor out({n, n});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      out.at(i, j) = geom.spatial_cost.at(i, j) +
                     beta * std::fabs(av[static_cast<std::size_t>(i)] - bv[static_cast<std::size_t>(j)]);
  int pa = a.id, pb = b.id;
  int id = g.add_node(std::move(out), {pa, pb}, [pa, pb, n, beta](Graph& gr, int self) {
    const Tensor& go = gr.grad(self);
    const Tensor& av2 = gr.value(pa);
    const Tensor& bv2 = gr.value(pb);
    const bool wa = gr.requires_grad(pa);
    const bool wb = gr.requires_grad(pb);
    if (!wa && !wb) return;
    Tensor* ga = wa ? &gr.grad(pa) : nullptr;
    Tensor* gb = wb ? &gr.grad(pb) : nullptr;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const double diff = av2[static_cast<std::size_t>(i)] - bv2[static_cast<std::size_t>(j)];
        const double sgn = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
        const double v = go.at(i, j) * beta * sgn;
        if (ga) (*ga)[static_cast<std::size_t>(i)] += v;
        if (gb) (*gb)[static_cast<std::size_t>(j)] -= v;
      }
  });
  return {&g, id};
}

Var sinkhorn_batch(const std::vector<SinkhornTriple>& triples, const SinkhornConfig& cfg,
                   int threads, SinkhornBatchStats* stats) {
  if (triples.empty()) throw ValidationError("sinkhorn_batch: no problems given");
  Graph& g = *triples[0].p.g;
  const int T = static_cast<int>(triples.size());
  std::vector<int> parents;
  parents.reserve(static_cast<std::size_t>(3 * T));
  for (const auto& t : triples) {
    if (t.p.g != &g || t.q.g != &g || t.c.g != &g)
      throw ValidationError("sinkhorn_batch: mixed graphs");
    parents.push_back(t.p.id);
    parents.push_back(t.q.id);
    parents.push_back(t.c.id);
  }

  auto solved = std::make_shared<std::vector<SolveOut>>(static_cast<std::size_t>(T));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(T));
  Tensor out({T});
  parallel_for(T, threads, [&](int t) {
    try {
      const Tensor& P = g.value(parents[static_cast<std::size_t>(3 * t)]);
      const Tensor& Q = g.value(parents[static_cast<std::size_t>(3 * t + 1)]);
      const Tensor& C = g.value(parents[static_cast<std::size_t>(3 * t + 2)]);
      (*solved)[static_cast<std::size_t>(t)] =
          solve(P.data(), Q.data(), C, static_cast<int>(P.numel()), cfg);
      out[static_cast<std::size_t>(t)] = (*solved)[static_cast<std::size_t>(t)].value;
    } catch (...) {
      errors[static_cast<std::size_t>(t)] = std::current_exception();
    }
  });
  for (int t = 0; t < T; ++t)
    if (errors[static_cast<std::size_t>(t)]) {
      try {
        std::rethrow_exception(errors[static_cast<std::size_t>(t)]);
      } catch (const std::exception& e) {
        throw NumericalError("sinkhorn_batch problem " + std::to_string(t) + ": " + e.what());
      }
    }
  if (stats) {
    stats->marginal_err.resize(static_cast<std::size_t>(T));
    stats->iterations.resize(static_cast<std::size_t>(T));
    stats->converged.resize(static_cast<std::size_t>(T));
    for (int t = 0; t < T; ++t) {
      stats->marginal_err[static_cast<std::size_t>(t)] = (*solved)[static_cast<std::size_t>(t)].marginal_err;
      stats->iterations[static_cast<std::size_t>(t)] = (*solved)[static_cast<std::size_t>(t)].iterations;
      stats->converged[static_cast<std::size_t>(t)] = (*solved)[static_cast<std::size_t>(t)].converged;
    }
  }

  const double eps = cfg.epsilon;
  int id = g.add_node(std::move(out), parents,
                      [parents, solved, eps, T](Graph& gr, int self) {
                        const Tensor& go = gr.grad(self);
                        for (int t = 0; t < T; ++t) {
                          const double gout = go[static_cast<std::size_t>(t)];
                          if (gout == 0.0) continue;
                          const int ip = parents[static_cast<std::size_t>(3 * t)];
                          const int iq = parents[static_cast<std::size_t>(3 * t + 1)];
                          const int ic = parents[static_cast<std::size_t>(3 * t + 2)];
                          const SolveOut& s = (*solved)[static_cast<std::size_t>(t)];
                          const int n = static_cast<int>(s.f.size());
                          if (gr.requires_grad(ip)) {
                            Tensor& gp = gr.grad(ip);
                            for (int i = 0; i < n; ++i)
                              gp[static_cast<std::size_t>(i)] += gout * (s.f[static_cast<std::size_t>(i)] - eps);
                          }
                          if (gr.requires_grad(iq)) {
                            Tensor& gq = gr.grad(iq);
                            for (int j = 0; j < n; ++j)
                              gq[static_cast<std::size_t>(j)] += gout * (s.g[static_cast<std::size_t>(j)] - eps);
                          }
                          if (gr.requires_grad(ic)) {
                            const Tensor& P = gr.value(ip);
                            const Tensor& Q = gr.value(iq);
                            const Tensor& C = gr.value(ic);
                            Tensor& gc = gr.grad(ic);
                            for (int i = 0; i < n; ++i)
                              for (int j = 0; j < n; ++j)
                                gc.at(i, j) += gout * P[static_cast<std::size_t>(i)] * Q[static_cast<std::size_t>(j)] *
                                               std::exp((s.f[static_cast<std::size_t>(i)] + s.g[static_cast<std::size_t>(j)] -
                                                         C.at(i, j)) /
                                                        eps);
                          }
                        }
                      });
  return {&g, id};
}

}  // namespace avloc::ot
