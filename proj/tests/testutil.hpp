#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "core/graph.hpp"
#include "core/rng.hpp"
#include "core/tensor.hpp"

namespace testutil {

using avloc::Graph;
using avloc::Rng;
using avloc::Tensor;
using avloc::Var;

inline double rel_gap(double fd, double an) {
  return std::fabs(fd - an) / std::max({std::fabs(fd), std::fabs(an), 1e-8});
}

// Central-difference check of d(scalar)/d(leaves[target]). The builder is
// re-run on perturbed copies, so it must be a pure function of the leaves.
struct GradCheck {
  std::function<double(const std::vector<Tensor>&)> eval;  // scalar forward
  double h = 1e-6;
  double tol = 1e-4;
};

inline void check_gradient(const GradCheck& gc, std::vector<Tensor> leaves, int target,
                           const Tensor& analytic, Rng& rng, int probes,
                           const char* what) {
  const std::size_t n = leaves[static_cast<std::size_t>(target)].numel();
  for (int p = 0; p < probes; ++p) {
    const std::size_t idx = probes >= static_cast<int>(n) ? static_cast<std::size_t>(p)
                                                          : rng.next_u64() % n;
    if (idx >= n) break;
    std::vector<Tensor> up = leaves, down = leaves;
    up[static_cast<std::size_t>(target)][idx] += gc.h;
    down[static_cast<std::size_t>(target)][idx] -= gc.h;
    const double fd = (gc.eval(up) - gc.eval(down)) / (2.0 * gc.h);
    const double an = analytic[idx];
    INFO(what << " index " << idx << " fd=" << fd << " analytic=" << an);
    CHECK(rel_gap(fd, an) <= gc.tol);
  }
}

// Fresh scratch directory under the system temp root.
inline std::string scratch_dir(const std::string& name) {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / ("avloc_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir.string();
}

}  // namespace testutil
