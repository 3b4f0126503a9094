#include "mfg/transport.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <stdexcept>

namespace mfg {

double assignment_cost(const Eigen::MatrixXd& cost) {
  const int n = static_cast<int>(cost.rows());
  if (cost.cols() != n) throw std::invalid_argument("assignment: non-square cost");
  const double inf = std::numeric_limits<double>::infinity();
  // 1-based arrays with a virtual column 0, classic JV formulation.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> match(n + 1, 0);  // match[j] = row assigned to column j
  for (int i = 1; i <= n; ++i) {
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, false);
    std::vector<int> way(n + 1, 0);
    int j0 = 0;
    match[0] = i;
    do {
      used[j0] = true;
      int i0 = match[j0], j1 = 0;
      double delta = inf;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      int j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0);
  }
  double total = 0.0;
  for (int j = 1; j <= n; ++j) total += cost(match[j] - 1, j - 1);
  return total;
}

double transport_lp_cost(const Eigen::MatrixXd& cost,
                         std::vector<double> supply,
                         std::vector<double> demand) {
  const int n = static_cast<int>(supply.size());
  const int m = static_cast<int>(demand.size());
  if (cost.rows() != n || cost.cols() != m)
    throw std::invalid_argument("transport: cost shape mismatch");
  // Tiny supply perturbation keeps the basis non-degenerate; the objective
  // error it introduces is O(eps * n * max cost), far below the tolerances
  // used on top of this solver.
  const double eps = 1e-13;
  for (int i = 0; i < n; ++i) supply[i] += eps * (i + 1);
  demand[m - 1] += eps * n * (n + 1) / 2.0;

  Eigen::MatrixXd plan = Eigen::MatrixXd::Zero(n, m);
  std::vector<std::vector<char>> basic(n, std::vector<char>(m, 0));

  // Northwest-corner start.
  {
    std::vector<double> s = supply, d = demand;
    int i = 0, j = 0;
    while (i < n && j < m) {
      double q = std::min(s[i], d[j]);
      plan(i, j) = q;
      basic[i][j] = 1;
      s[i] -= q;
      d[j] -= q;
      if (i == n - 1 && j == m - 1) break;
      if (s[i] <= d[j])
        ++i;
      else
        ++j;
    }
  }

  const int max_pivots = 200 * (n + m);
  for (int pivot = 0;; ++pivot) {
    if (pivot >= max_pivots)
      throw std::runtime_error("transport: simplex failed to converge");

    // Adjacency of the basis tree (rows and columns are the nodes).
    std::vector<std::vector<int>> row_cols(n), col_rows(m);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j)
        if (basic[i][j]) {
          row_cols[i].push_back(j);
          col_rows[j].push_back(i);
        }

    // Potentials: u_i + v_j = c_ij on basic cells, via BFS from row 0.
    std::vector<double> u(n), v(m);
    std::vector<char> useen(n, 0), vseen(m, 0);
    u[0] = 0.0;
    useen[0] = 1;
    std::deque<int> queue{0};  // rows as k, columns as n + k
    while (!queue.empty()) {
      int node = queue.front();
      queue.pop_front();
      if (node < n) {
        for (int j : row_cols[node])
          if (!vseen[j]) {
            v[j] = cost(node, j) - u[node];
            vseen[j] = 1;
            queue.push_back(n + j);
          }
      } else {
        int j = node - n;
        for (int i : col_rows[j])
          if (!useen[i]) {
            u[i] = cost(i, j) - v[j];
            useen[i] = 1;
            queue.push_back(i);
          }
      }
    }

    // Entering cell: most negative reduced cost.
    int bi = -1, bj = -1;
    double best = -1e-11;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j) {
        if (basic[i][j] || !useen[i] || !vseen[j]) continue;
        double r = cost(i, j) - u[i] - v[j];
        if (r < best) {
          best = r;
          bi = i;
          bj = j;
        }
      }
    if (bi < 0) break;  // optimal

    // Unique tree path from row bi to column bj; adding (bi,bj) closes the
    // pivot cycle. parent[] over the bipartite node set.
    std::vector<int> parent(n + m, -2);
    parent[bi] = -1;
    std::deque<int> bfs{bi};
    while (!bfs.empty()) {
      int node = bfs.front();
      bfs.pop_front();
      if (node == n + bj) break;
      if (node < n) {
        for (int j : row_cols[node])
          if (parent[n + j] == -2) {
            parent[n + j] = node;
            bfs.push_back(n + j);
          }
      } else {
        for (int i : col_rows[node - n])
          if (parent[i] == -2) {
            parent[i] = node;
            bfs.push_back(i);
          }
      }
    }
    if (parent[n + bj] == -2)
      throw std::runtime_error("transport: basis tree disconnected");

    // Node path bi -> ... -> bj; consecutive node pairs are basic cells.
    std::vector<int> path;
    for (int node = n + bj; node != -1; node = parent[node]) path.push_back(node);
    std::reverse(path.begin(), path.end());
    // Cells along the cycle, starting with the entering cell (gets +theta).
    std::vector<std::pair<int, int>> cycle{{bi, bj}};
    for (std::size_t k = 0; k + 1 < path.size(); ++k) {
      int a = path[k], b = path[k + 1];
      int i = a < n ? a : b;
      int j = a < n ? b - n : a - n;
      cycle.emplace_back(i, j);
    }

    double theta = std::numeric_limits<double>::infinity();
    std::size_t drop = 0;
    for (std::size_t k = 1; k < cycle.size(); k += 2) {
      double q = plan(cycle[k].first, cycle[k].second);
      if (q < theta) {
        theta = q;
        drop = k;
      }
    }
    for (std::size_t k = 0; k < cycle.size(); ++k) {
      double sgn = (k % 2 == 0) ? 1.0 : -1.0;
      plan(cycle[k].first, cycle[k].second) += sgn * theta;
    }
    basic[bi][bj] = 1;
    basic[cycle[drop].first][cycle[drop].second] = 0;
    plan(cycle[drop].first, cycle[drop].second) = 0.0;
  }

  double total = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) total += cost(i, j) * plan(i, j);
  return total;
}

}  // namespace mfg
