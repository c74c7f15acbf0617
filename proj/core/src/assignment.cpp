#include <limits>
#include <stdexcept>
#include <vector>

#include "fsbm/transport.hpp"

namespace fsbm::transport {

// Dense Jonker-Volgenant: column reduction, reduction transfer, then one
// Dijkstra-style shortest augmenting path per remaining free row. The
// augmenting row reduction phase of the original is omitted; it only
// speeds up the start and is fragile under floating-point ties.
Assignment solve_assignment(const Mat& cost) {
  if (cost.rows() != cost.cols()) throw std::invalid_argument("assignment needs a square cost matrix");
  if (!cost.allFinite()) throw std::invalid_argument("assignment cost must be finite");
  const Index n = cost.rows();
  Assignment out;
  if (n == 0) return out;

  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const RowMajor c = cost;
  const auto N = static_cast<std::size_t>(n);

  std::vector<Index> rowsol(N, -1);
  std::vector<Index> colsol(N, -1);
  std::vector<double> v(N, 0.0);
  std::vector<int> matches(N, 0);

  // Column reduction, reverse order.
  for (Index j = n - 1; j >= 0; --j) {
    Index imin = 0;
    double mn = c(0, j);
    for (Index i = 1; i < n; ++i) {
      if (c(i, j) < mn) {
        mn = c(i, j);
        imin = i;
      }
    }
    v[j] = mn;
    if (++matches[imin] == 1) {
      rowsol[imin] = j;
      colsol[j] = imin;
    } else if (v[j] < v[rowsol[imin]]) {
      const Index j1 = rowsol[imin];
      rowsol[imin] = j;
      colsol[j] = imin;
      colsol[j1] = -1;
    } else {
      colsol[j] = -1;
    }
  }

  // Reduction transfer.
  std::vector<Index> free_rows;
  for (Index i = 0; i < n; ++i) {
    if (matches[i] == 0) {
      free_rows.push_back(i);
    } else if (matches[i] == 1) {
      const Index j1 = rowsol[i];
      double mn = std::numeric_limits<double>::infinity();
      for (Index j = 0; j < n; ++j)
        if (j != j1) mn = std::min(mn, c(i, j) - v[j]);
      if (n > 1) v[j1] -= mn;
    }
  }

  std::vector<double> dist(N);
  std::vector<Index> pred(N);
  std::vector<Index> collist(N);

  for (const Index freerow : free_rows) {
    for (Index j = 0; j < n; ++j) {
      dist[j] = c(freerow, j) - v[j];
      pred[j] = freerow;
      collist[j] = j;
    }
    Index low = 0;  // collist[0, low) are finalised
    Index up = 0;   // collist[low, up) sit at the current minimum
    Index last = 0;
    Index endofpath = -1;
    double mn = 0.0;
    bool found = false;
    while (!found) {
      if (up == low) {
        last = low - 1;
        mn = dist[collist[up++]];
        for (Index k = up; k < n; ++k) {
          const Index j = collist[k];
          const double h = dist[j];
          if (h <= mn) {
            if (h < mn) {
              up = low;
              mn = h;
            }
            collist[k] = collist[up];
            collist[up++] = j;
          }
        }
        for (Index k = low; k < up; ++k) {
          if (colsol[collist[k]] < 0) {
            endofpath = collist[k];
            found = true;
            break;
          }
        }
      }
      if (!found) {
        const Index j1 = collist[low++];
        const Index i = colsol[j1];
        const double h = c(i, j1) - v[j1] - mn;
        for (Index k = up; k < n; ++k) {
          const Index j = collist[k];
          const double v2 = c(i, j) - v[j] - h;
          if (v2 < dist[j]) {
            pred[j] = i;
            if (v2 == mn) {
              if (colsol[j] < 0) {
                endofpath = j;
                found = true;
                break;
              }
              collist[k] = collist[up];
              collist[up++] = j;
            }
            dist[j] = v2;
          }
        }
      }
    }

    for (Index k = 0; k <= last; ++k) {
      const Index j1 = collist[k];
      v[j1] += dist[j1] - mn;
    }

    Index i = -1;
    do {
      i = pred[endofpath];
      colsol[endofpath] = i;
      const Index j1 = endofpath;
      endofpath = rowsol[i];
      rowsol[i] = j1;
    } while (i != freerow);
  }

  out.row_to_col.assign(rowsol.begin(), rowsol.end());
  for (Index i = 0; i < n; ++i) out.total_cost += c(i, rowsol[i]);
  return out;
}

}  // namespace fsbm::transport
