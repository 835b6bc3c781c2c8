#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "core/error.hpp"
#include "ot/ot.hpp"

namespace avloc::ot {

namespace {

constexpr double kPivTol = 1e-11;
constexpr double kCertTol = 1e-9;

// Dense two-phase primal simplex with Bland's rule. Sized for the tiny
// transportation LPs the oracle guard allows (n <= 12 -> at most 144 columns).
struct Simplex {
  int m, ncols;
  std::vector<std::vector<double>> A;  // m x ncols
  std::vector<double> b;               // m
  std::vector<double> c;               // ncols
  std::vector<int> basis;              // m, column index per row

  // Pivot on (row, col) in the working tableau.
  static void pivot(std::vector<std::vector<double>>& t, std::vector<int>& basis, int row,
                    int col) {
    const int rows = static_cast<int>(t.size());
    const int cols = static_cast<int>(t[0].size());
    const double piv = t[static_cast<std::size_t>(row)][static_cast<std::size_t>(col)];
    for (int j = 0; j < cols; ++j) t[static_cast<std::size_t>(row)][static_cast<std::size_t>(j)] /= piv;
    for (int i = 0; i < rows; ++i) {
      if (i == row) continue;
      const double f = t[static_cast<std::size_t>(i)][static_cast<std::size_t>(col)];
      if (f == 0.0) continue;
      for (int j = 0; j < cols; ++j)
        t[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] -=
            f * t[static_cast<std::size_t>(row)][static_cast<std::size_t>(j)];
    }
    basis[static_cast<std::size_t>(row)] = col;
  }

  // Runs simplex iterations on tableau t (m+1 rows, width cols+1, objective in
  // the last row, rhs in the last column) restricted to the first `usable`
  // columns. Bland's rule keeps the iteration cycle-free.
  static void iterate(std::vector<std::vector<double>>& t, std::vector<int>& basis, int m,
                      int usable) {
    const int rhs = static_cast<int>(t[0].size()) - 1;
    for (int guard = 0; guard < 100000; ++guard) {
      int enter = -1;
      for (int j = 0; j < usable; ++j) {
        if (t[static_cast<std::size_t>(m)][static_cast<std::size_t>(j)] < -kPivTol) {
          enter = j;
          break;
        }
      }
      if (enter < 0) return;
      int leave = -1;
      double best = std::numeric_limits<double>::infinity();
      for (int i = 0; i < m; ++i) {
        const double a = t[static_cast<std::size_t>(i)][static_cast<std::size_t>(enter)];
        if (a > kPivTol) {
          const double ratio = t[static_cast<std::size_t>(i)][static_cast<std::size_t>(rhs)] / a;
          if (ratio < best - kPivTol ||
              (ratio < best + kPivTol && leave >= 0 &&
               basis[static_cast<std::size_t>(i)] < basis[static_cast<std::size_t>(leave)])) {
            best = ratio;
            leave = i;
          }
        }
      }
      if (leave < 0) throw NumericalError("transport LP unbounded (malformed cost)");
      pivot(t, basis, leave, enter);
    }
    throw NumericalError("simplex iteration limit exceeded");
  }

  // Returns optimal basis; the caller recomputes exact quantities from it.
  std::vector<int> solve() {
    // Phase 1 tableau: [A | I | b] with artificial costs.
    const int width = ncols + m;
    std::vector<std::vector<double>> t(static_cast<std::size_t>(m + 1),
                                       std::vector<double>(static_cast<std::size_t>(width + 1), 0.0));
    basis.assign(static_cast<std::size_t>(m), 0);
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < ncols; ++j) t[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = A[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
      t[static_cast<std::size_t>(i)][static_cast<std::size_t>(ncols + i)] = 1.0;
      t[static_cast<std::size_t>(i)][static_cast<std::size_t>(width)] = b[static_cast<std::size_t>(i)];
      basis[static_cast<std::size_t>(i)] = ncols + i;
    }
    // Objective row: minimize sum of artificials -> reduced costs = -sum of rows.
    for (int j = 0; j <= width; ++j) {
      double s = 0.0;
      for (int i = 0; i < m; ++i) s += t[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
      if (j < ncols || j == width) t[static_cast<std::size_t>(m)][static_cast<std::size_t>(j)] = -s;
    }
    iterate(t, basis, m, ncols);
    if (std::fabs(t[static_cast<std::size_t>(m)][static_cast<std::size_t>(width)]) > 1e-7)
      throw NumericalError("transport LP infeasible (marginals inconsistent)");
    // Drive any residual artificials out of the basis.
    for (int i = 0; i < m; ++i) {
      if (basis[static_cast<std::size_t>(i)] < ncols) continue;
      int col = -1;
      for (int j = 0; j < ncols; ++j)
        if (std::fabs(t[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]) > kPivTol) {
          col = j;
          break;
        }
      if (col < 0) throw NumericalError("transport LP has a redundant constraint row");
      pivot(t, basis, i, col);
    }
    // Phase 2: rebuild the objective row from the real costs.
    for (int j = 0; j <= width; ++j) t[static_cast<std::size_t>(m)][static_cast<std::size_t>(j)] = 0.0;
    for (int j = 0; j < ncols; ++j) t[static_cast<std::size_t>(m)][static_cast<std::size_t>(j)] = c[static_cast<std::size_t>(j)];
    for (int i = 0; i < m; ++i) {
      const double cb = c[static_cast<std::size_t>(basis[static_cast<std::size_t>(i)])];
      if (cb == 0.0) continue;
      for (int j = 0; j <= width; ++j)
        t[static_cast<std::size_t>(m)][static_cast<std::size_t>(j)] -=
            cb * t[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    }
    iterate(t, basis, m, ncols);
    return basis;
  }
};

// Solve M x = rhs with partial pivoting (square, tiny).
std::vector<double> gauss_solve(std::vector<std::vector<double>> M, std::vector<double> rhs) {
  const int n = static_cast<int>(rhs.size());
  for (int col = 0; col < n; ++col) {
    int piv = col;
    for (int r = col + 1; r < n; ++r)
      if (std::fabs(M[static_cast<std::size_t>(r)][static_cast<std::size_t>(col)]) >
          std::fabs(M[static_cast<std::size_t>(piv)][static_cast<std::size_t>(col)]))
        piv = r;
    std::swap(M[static_cast<std::size_t>(col)], M[static_cast<std::size_t>(piv)]);
    std::swap(rhs[static_cast<std::size_t>(col)], rhs[static_cast<std::size_t>(piv)]);
    const double d = M[static_cast<std::size_t>(col)][static_cast<std::size_t>(col)];
    if (std::fabs(d) < 1e-12) throw NumericalError("singular basis in transport LP");
    for (int r = col + 1; r < n; ++r) {
      const double f = M[static_cast<std::size_t>(r)][static_cast<std::size_t>(col)] / d;
      if (f == 0.0) continue;
      for (int k = col; k < n; ++k)
        M[static_cast<std::size_t>(r)][static_cast<std::size_t>(k)] -=
            f * M[static_cast<std::size_t>(col)][static_cast<std::size_t>(k)];
      rhs[static_cast<std::size_t>(r)] -= f * rhs[static_cast<std::size_t>(col)];
    }
  }
  std::vector<double> x(static_cast<std::size_t>(n));
  for (int r = n - 1; r >= 0; --r) {
    double acc = rhs[static_cast<std::size_t>(r)];
    for (int k = r + 1; k < n; ++k)
      acc -= M[static_cast<std::size_t>(r)][static_cast<std::size_t>(k)] * x[static_cast<std::size_t>(k)];
    x[static_cast<std::size_t>(r)] = acc / M[static_cast<std::size_t>(r)][static_cast<std::size_t>(r)];
  }
  return x;
}

}  // namespace

double exact_emd_oracle(const Distribution& p, const Distribution& q, const CostMatrix& cost) {
  const int n = static_cast<int>(p.mass.numel());
  if (n > 12) throw ValidationError("exact_emd_oracle guard: support larger than 12 bins");
  if (static_cast<int>(q.mass.numel()) != n)
    throw ValidationError("exact_emd_oracle: support size mismatch");
  if (cost.data.ndim() != 2 || cost.data.dim(0) != n || cost.data.dim(1) != n)
    throw ValidationError("exact_emd_oracle: cost matrix must be (n,n)");
  if (n == 1) return cost.data.at(0, 0);

  // min sum c_ij x_ij  s.t. row sums = P, column sums = Q (last column
  // constraint dropped as redundant), x >= 0.
  Simplex lp;
  lp.m = 2 * n - 1;
  lp.ncols = n * n;
  lp.A.assign(static_cast<std::size_t>(lp.m), std::vector<double>(static_cast<std::size_t>(lp.ncols), 0.0));
  lp.b.assign(static_cast<std::size_t>(lp.m), 0.0);
  lp.c.assign(static_cast<std::size_t>(lp.ncols), 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const int col = i * n + j;
      lp.c[static_cast<std::size_t>(col)] = cost.data.at(i, j);
      lp.A[static_cast<std::size_t>(i)][static_cast<std::size_t>(col)] = 1.0;
      if (j < n - 1) lp.A[static_cast<std::size_t>(n + j)][static_cast<std::size_t>(col)] = 1.0;
    }
  for (int i = 0; i < n; ++i) lp.b[static_cast<std::size_t>(i)] = p.mass[static_cast<std::size_t>(i)];
  for (int j = 0; j < n - 1; ++j) lp.b[static_cast<std::size_t>(n + j)] = q.mass[static_cast<std::size_t>(j)];

  const std::vector<int> basis = lp.solve();

  // Recompute the solution and a duality certificate from the original data,
  // so tableau roundoff cannot leak into the returned value.
  const int m = lp.m;
  std::vector<std::vector<double>> B(static_cast<std::size_t>(m), std::vector<double>(static_cast<std::size_t>(m), 0.0));
  std::vector<std::vector<double>> Bt(static_cast<std::size_t>(m), std::vector<double>(static_cast<std::size_t>(m), 0.0));
  std::vector<double> cb(static_cast<std::size_t>(m), 0.0);
  for (int k = 0; k < m; ++k) {
    const int col = basis[static_cast<std::size_t>(k)];
    if (col >= lp.ncols) throw NumericalError("artificial column left in transport basis");
    for (int i = 0; i < m; ++i) {
      B[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] = lp.A[static_cast<std::size_t>(i)][static_cast<std::size_t>(col)];
      Bt[static_cast<std::size_t>(k)][static_cast<std::size_t>(i)] = lp.A[static_cast<std::size_t>(i)][static_cast<std::size_t>(col)];
    }
    cb[static_cast<std::size_t>(k)] = lp.c[static_cast<std::size_t>(col)];
  }
  const std::vector<double> xb = gauss_solve(B, lp.b);
  const std::vector<double> y = gauss_solve(Bt, cb);

  double value = 0.0;
  for (int k = 0; k < m; ++k) {
    if (xb[static_cast<std::size_t>(k)] < -kCertTol)
      throw NumericalError("transport LP certificate failed: negative basic variable");
    value += cb[static_cast<std::size_t>(k)] * xb[static_cast<std::size_t>(k)];
  }
  double dual = 0.0;
  for (int i = 0; i < m; ++i) dual += y[static_cast<std::size_t>(i)] * lp.b[static_cast<std::size_t>(i)];
  if (std::fabs(dual - value) > kCertTol * (1.0 + std::fabs(value)))
    throw NumericalError("transport LP certificate failed: duality gap");
  for (int j = 0; j < lp.ncols; ++j) {
    double red = lp.c[static_cast<std::size_t>(j)];
    for (int i = 0; i < m; ++i)
      red -= y[static_cast<std::size_t>(i)] * lp.A[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    if (red < -kCertTol)
      throw NumericalError("transport LP certificate failed: negative reduced cost");
  }
  return value;
}

}  // namespace avloc::ot
