#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "gwib/ot.hpp"

// Transportation simplex (MODI / u-v method) on the bipartite transport
// graph. Node indices: rows 0..m-1, columns m..m+n-1. The basis is a
// spanning tree of m+n-1 cells; potentials are recomputed from the tree
// each pivot, the entering cell is the most negative reduced cost with
// lowest-flat-index tie-breaking, so runs are bit-reproducible.

namespace gwib {
namespace {

struct BasisCell {
    int i, j;  // row, column
};

// Finds the tree path between row node i0 and column node (m + j0) over the
// basis edges. Returns the edge indices along the path, ordered from i0 to j0.
std::vector<int> tree_path(int m, int n, int i0, int j0,
                           const std::vector<BasisCell>& basis,
                           const std::vector<std::vector<int>>& adj) {
    const int nodes = m + n;
    std::vector<int> parent_edge(nodes, -1), parent_node(nodes, -1);
    std::vector<char> seen(nodes, 0);
    std::vector<int> queue;
    queue.reserve(nodes);
    queue.push_back(i0);
    seen[i0] = 1;
    const int target = m + j0;
    for (std::size_t q = 0; q < queue.size(); ++q) {
        const int node = queue[q];
        if (node == target) break;
        for (int e : adj[node]) {
            const int other = (node < m) ? m + basis[e].j : basis[e].i;
            if (seen[other]) continue;
            seen[other] = 1;
            parent_edge[other] = e;
            parent_node[other] = node;
            queue.push_back(other);
        }
    }
    if (!seen[target]) throw SolverFailure("solve_emd: basis tree disconnected");
    std::vector<int> path;
    for (int node = target; node != i0; node = parent_node[node])
        path.push_back(parent_edge[node]);
    std::reverse(path.begin(), path.end());
    return path;
}

}  // namespace

TransportPlan solve_emd(const matrix_t& cost, const DiscreteMeasure& mu,
                        const DiscreteMeasure& nu) {
    mu.validate();
    nu.validate();
    const int m = static_cast<int>(mu.size());
    const int n = static_cast<int>(nu.size());
    if (cost.rows() != m || cost.cols() != n)
        throw InvalidInput("solve_emd: cost shape does not match measures");
    require_finite(cost, "solve_emd cost");

    // Northwest-corner initial basic feasible solution. Advancing exactly one
    // index per step yields m+n-1 basic cells, including degenerate zeros.
    std::vector<BasisCell> basis;
    basis.reserve(m + n - 1);
    {
        vector_t a = mu.w, b = nu.w;
        int i = 0, j = 0;
        while (true) {
            const scalar_t q = std::min(a[i], b[j]);
            basis.push_back({i, j});
            a[i] -= q;
            b[j] -= q;
            if (i == m - 1 && j == n - 1) break;
            if (i == m - 1) ++j;
            else if (j == n - 1) ++i;
            else if (a[i] <= b[j]) ++i;
            else ++j;
        }
    }

    const int nodes = m + n;
    std::vector<std::vector<int>> adj(nodes);
    Eigen::Matrix<char, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> is_basic(m, n);
    is_basic.setZero();
    for (int e = 0; e < static_cast<int>(basis.size()); ++e) {
        adj[basis[e].i].push_back(e);
        adj[m + basis[e].j].push_back(e);
        is_basic(basis[e].i, basis[e].j) = 1;
    }

    // Basic-cell values are reconstructed from the tree by leaf stripping:
    // at a leaf node the single incident edge must carry the node's whole
    // remaining mass. Keeps the plan consistent with the marginals to
    // machine precision regardless of how many pivots ran.
    std::vector<scalar_t> value(basis.size(), 0.0);
    auto recompute_values = [&]() {
        std::vector<scalar_t> mass(nodes);
        for (int i = 0; i < m; ++i) mass[i] = mu.w[i];
        for (int j = 0; j < n; ++j) mass[m + j] = nu.w[j];
        std::vector<int> degree(nodes, 0);
        std::vector<char> edge_done(basis.size(), 0), node_done(nodes, 0);
        for (int node = 0; node < nodes; ++node) degree[node] = static_cast<int>(adj[node].size());
        std::vector<int> leaves;
        for (int node = 0; node < nodes; ++node)
            if (degree[node] == 1) leaves.push_back(node);
        for (std::size_t q = 0; q < leaves.size(); ++q) {
            const int node = leaves[q];
            if (node_done[node]) continue;
            node_done[node] = 1;
            int edge = -1;
            for (int e : adj[node])
                if (!edge_done[e]) { edge = e; break; }
            if (edge < 0) continue;  // last node, all edges assigned
            value[edge] = std::max(mass[node], 0.0);
            edge_done[edge] = 1;
            const int other = (node < m) ? m + basis[edge].j : basis[edge].i;
            mass[other] -= mass[node];
            mass[node] = 0.0;
            if (--degree[other] == 1 && !node_done[other]) leaves.push_back(other);
        }
    };
    recompute_values();

    const scalar_t cost_scale = std::max<scalar_t>(1.0, cost.cwiseAbs().maxCoeff());
    const scalar_t opt_eps = 1e-12 * cost_scale;
    const int max_pivots = 100 * (m + n);

    vector_t u(m), v(n);
    std::vector<char> u_set(m), v_set(n);
    int pivots = 0;
    while (true) {
        // Potentials from the basis tree, rooted at row 0.
        std::fill(u_set.begin(), u_set.end(), 0);
        std::fill(v_set.begin(), v_set.end(), 0);
        u[0] = 0.0;
        u_set[0] = 1;
        {
            std::vector<int> queue{0};
            queue.reserve(nodes);
            for (std::size_t q = 0; q < queue.size(); ++q) {
                const int node = queue[q];
                for (int e : adj[node]) {
                    const auto& cell = basis[e];
                    if (node < m && !v_set[cell.j]) {
                        v[cell.j] = cost(cell.i, cell.j) - u[cell.i];
                        v_set[cell.j] = 1;
                        queue.push_back(m + cell.j);
                    } else if (node >= m && !u_set[cell.i]) {
                        u[cell.i] = cost(cell.i, cell.j) - v[cell.j];
                        u_set[cell.i] = 1;
                        queue.push_back(cell.i);
                    }
                }
            }
        }

        // Entering cell: most negative reduced cost, first flat index on ties
        // (row-major minCoeff visits entries in flat-index order).
        matrix_t reduced = cost - u.replicate(1, n) - v.transpose().replicate(m, 1);
        index_t ei, ej;
        const scalar_t rc = reduced.minCoeff(&ei, &ej);
        if (rc >= -opt_eps) break;
        if (++pivots > max_pivots)
            throw SolverFailure("solve_emd: pivot cap exceeded (" +
                                std::to_string(max_pivots) + ")");

        // Cycle = entering cell + tree path from its row to its column.
        // Walking the path from the column end back, signs alternate
        // starting with minus.
        const std::vector<int> path =
            tree_path(m, n, static_cast<int>(ei), static_cast<int>(ej), basis, adj);
        std::vector<int> minus_edges, plus_edges;
        bool minus = true;
        for (auto it = path.rbegin(); it != path.rend(); ++it, minus = !minus)
            (minus ? minus_edges : plus_edges).push_back(*it);

        scalar_t theta = std::numeric_limits<scalar_t>::infinity();
        int leaving = -1;
        for (int e : minus_edges) {
            if (value[e] < theta) {
                theta = value[e];
                leaving = e;
            } else if (value[e] == theta && e < leaving) {
                leaving = e;
            }
        }
        if (leaving < 0) throw SolverFailure("solve_emd: unbounded pivot");

        for (int e : plus_edges) value[e] += theta;
        for (int e : minus_edges) value[e] = std::max(value[e] - theta, 0.0);

        // Swap the leaving cell for the entering one, reusing its slot.
        const BasisCell old = basis[leaving];
        is_basic(old.i, old.j) = 0;
        auto detach = [&](int node, int e) {
            auto& list = adj[node];
            list.erase(std::find(list.begin(), list.end(), e));
        };
        detach(old.i, leaving);
        detach(m + old.j, leaving);
        basis[leaving] = {static_cast<int>(ei), static_cast<int>(ej)};
        value[leaving] = theta;
        adj[ei].push_back(leaving);
        adj[m + ej].push_back(leaving);
        is_basic(ei, ej) = 1;
    }

    recompute_values();
    TransportPlan out;
    out.t = matrix_t::Zero(m, n);
    for (std::size_t e = 0; e < basis.size(); ++e)
        out.t(basis[e].i, basis[e].j) = value[e];
    out.source = mu;
    out.target = nu;
    return out;
}

}  // namespace gwib
