#include "dhog/assignment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "dhog/errors.hpp"

namespace dhog {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Potentials-and-augmenting-paths solver, minimize sense. Returns the
// assignment and the dual potentials (u over rows, v over columns), which
// certify optimality: reduced costs c - u - v are nonnegative everywhere and
// zero on assigned edges.
struct DualSolution {
  std::vector<int> col_of_row;
  std::vector<double> u, v;
};

DualSolution solve_min(int m, const std::vector<double>& c) {
  std::vector<double> u(m + 1, 0.0), v(m + 1, 0.0);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);  // p[j] = row matched to column j (1-based)
  for (int i = 1; i <= m; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(m + 1, kInf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      int j1 = -1;
      double delta = kInf;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = c[static_cast<size_t>(i0 - 1) * m + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  DualSolution out;
  out.col_of_row.assign(m, -1);
  for (int j = 1; j <= m; ++j) out.col_of_row[p[j] - 1] = j - 1;
  out.u.assign(m, 0.0);
  out.v.assign(m, 0.0);
  for (int i = 1; i <= m; ++i) out.u[i - 1] = u[i];
  for (int j = 1; j <= m; ++j) out.v[j - 1] = v[j];
  return out;
}

// Kuhn augmenting search over tight edges, honoring fixed columns.
bool rematch(int r, int m, const std::vector<char>& tight, const std::vector<char>& fixed_col,
             std::vector<char>& visited, std::vector<int>& col_of_row,
             std::vector<int>& row_of_col) {
  for (int j = 0; j < m; ++j) {
    if (!tight[static_cast<size_t>(r) * m + j] || visited[j] || fixed_col[j]) continue;
    visited[j] = 1;
    if (row_of_col[j] == -1 ||
        rematch(row_of_col[j], m, tight, fixed_col, visited, col_of_row, row_of_col)) {
      row_of_col[j] = r;
      col_of_row[r] = j;
      return true;
    }
  }
  return false;
}

}  // namespace

AlignmentMap solve(const CostMatrix& costs) {
  const int m = costs.m;
  if (m < 1 || costs.c.size() != static_cast<size_t>(m) * m)
    throw ShapeError("solve: cost matrix must be square, got m=" + std::to_string(m) +
                     " with " + std::to_string(costs.c.size()) + " entries");
  double max_abs = 0.0;
  for (double v : costs.c) {
    if (!std::isfinite(v)) throw NumericError("solve: non-finite cost entry");
    max_abs = std::max(max_abs, std::abs(v));
  }

  std::vector<double> c(costs.c);
  if (costs.sense == CostSense::maximize)
    for (auto& v : c) v = -v;

  DualSolution dual = solve_min(m, c);

  // All optimal assignments live on the tight edges of the dual solution
  // (complementary slackness), so the lexicographically smallest optimal
  // permutation is the lexicographically smallest perfect matching there:
  // fix rows in order, taking the smallest column that still leaves the
  // remaining rows matchable.
  const double tol = 1e-9 * (1.0 + max_abs);
  std::vector<char> tight(static_cast<size_t>(m) * m, 0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j)
      tight[static_cast<size_t>(i) * m + j] =
          (c[static_cast<size_t>(i) * m + j] - dual.u[i] - dual.v[j]) <= tol;

  std::vector<int> col_of_row = dual.col_of_row;
  std::vector<int> row_of_col(m, -1);
  for (int i = 0; i < m; ++i) row_of_col[col_of_row[i]] = i;
  std::vector<char> fixed_col(m, 0);

  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < m; ++j) {
      if (!tight[static_cast<size_t>(i) * m + j] || fixed_col[j]) continue;
      if (col_of_row[i] == j) break;  // already the smallest feasible choice
      // Try to steal column j for row i and rematch the displaced row.
      const int jo = col_of_row[i];
      const int r = row_of_col[j];
      col_of_row[i] = j;
      row_of_col[j] = i;
      col_of_row[r] = -1;
      row_of_col[jo] = -1;
      std::vector<char> visited(m, 0);
      visited[j] = 1;  // claimed by row i
      if (rematch(r, m, tight, fixed_col, visited, col_of_row, row_of_col)) break;
      col_of_row[i] = jo;
      row_of_col[jo] = i;
      col_of_row[r] = j;
      row_of_col[j] = r;
    }
    fixed_col[col_of_row[i]] = 1;
  }

  AlignmentMap out;
  out.perm = col_of_row;
  out.objective_value = 0.0;
  for (int i = 0; i < m; ++i)
    out.objective_value += costs.c[static_cast<size_t>(i) * m + col_of_row[i]];
  return out;
}

AlignmentMap align_heads(const LabelDistribution& z_i, const LabelDistribution& z_j) {
  if (!z_i.probs.defined() || !z_j.probs.defined() || z_i.probs.ndim() != 2 ||
      z_j.probs.ndim() != 2 || z_i.probs.dim(1) != z_j.probs.dim(1) ||
      z_i.probs.dim(0) != z_j.probs.dim(0))
    throw ShapeError("align_heads: labellings must share [n x c]");
  const int n = z_i.probs.dim(0), cdim = z_i.probs.dim(1);
  CostMatrix agreement;
  agreement.m = cdim;
  agreement.sense = CostSense::maximize;
  agreement.c.assign(static_cast<size_t>(cdim) * cdim, 0.0);
  const double* zi = z_i.probs.values().data();
  const double* zj = z_j.probs.values().data();
  for (int s = 0; s < n; ++s)
    for (int a = 0; a < cdim; ++a) {
      const double za = zi[static_cast<size_t>(s) * cdim + a];
      for (int b = 0; b < cdim; ++b)
        agreement.c[static_cast<size_t>(a) * cdim + b] +=
            za * zj[static_cast<size_t>(s) * cdim + b];
    }
  return solve(agreement);
}

AlignmentMap remap_to_classes(const std::vector<int>& pred, const std::vector<int>& truth,
                              int c) {
  if (pred.size() != truth.size() || pred.empty())
    throw ShapeError("remap_to_classes: need equal-length non-empty labellings");
  if (c < 1) throw ShapeError("remap_to_classes: label count must be positive");
  CostMatrix confusion;
  confusion.m = c;
  confusion.sense = CostSense::maximize;
  confusion.c.assign(static_cast<size_t>(c) * c, 0.0);
  for (size_t s = 0; s < pred.size(); ++s) {
    if (pred[s] < 0 || pred[s] >= c || truth[s] < 0 || truth[s] >= c)
      throw NumericError("remap_to_classes: label outside {0.." + std::to_string(c - 1) +
                         "} at sample " + std::to_string(s));
    confusion.c[static_cast<size_t>(pred[s]) * c + truth[s]] += 1.0;
  }
  return solve(confusion);
}

}  // namespace dhog
