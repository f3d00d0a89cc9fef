#pragma once

// Reference implementations the tests compare against. Everything here is
// deliberately naive and self-contained: explicit quadruple loops,
// permutation enumeration, atom expansion, quadrature and central finite
// differences. None of it shares code paths with the library solvers.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <vector>

#include "gwib/ot.hpp"

namespace reference {

using gwib::FusedProblem;
using gwib::index_t;
using gwib::matrix_t;
using gwib::scalar_t;
using gwib::vector_t;

// Uniform plan putting mass 1/n on (i, sigma(i)).
inline matrix_t perm_plan(const std::vector<index_t>& sigma) {
    const index_t n = static_cast<index_t>(sigma.size());
    matrix_t t = matrix_t::Zero(n, n);
    for (index_t i = 0; i < n; ++i) t(i, sigma[static_cast<std::size_t>(i)]) = 1.0 / n;
    return t;
}

template <typename F>
void for_each_perm(index_t n, F&& body) {
    std::vector<index_t> sigma(static_cast<std::size_t>(n));
    std::iota(sigma.begin(), sigma.end(), index_t{0});
    do {
        body(sigma);
    } while (std::next_permutation(sigma.begin(), sigma.end()));
}

inline scalar_t dot(const matrix_t& a, const matrix_t& b) {
    scalar_t acc = 0.0;
    for (index_t i = 0; i < a.rows(); ++i)
        for (index_t j = 0; j < a.cols(); ++j) acc += a(i, j) * b(i, j);
    return acc;
}

// Sum_{m,k,n,l} T(m,n) T(k,l) (d_a(m,k) - d_b(n,l))^2, the quadruple-sum
// form of the order-2 GW objective.
inline scalar_t gw_quad_sum(const matrix_t& d_a, const matrix_t& d_b, const matrix_t& t) {
    scalar_t acc = 0.0;
    for (index_t m = 0; m < t.rows(); ++m)
        for (index_t n = 0; n < t.cols(); ++n) {
            if (t(m, n) == 0.0) continue;
            for (index_t k = 0; k < t.rows(); ++k)
                for (index_t l = 0; l < t.cols(); ++l) {
                    const scalar_t diff = d_a(m, k) - d_b(n, l);
                    acc += t(m, n) * t(k, l) * diff * diff;
                }
        }
    return acc;
}

// Lower-level objective as the sum of its four named terms.
inline scalar_t fused_sum(const FusedProblem& p, const matrix_t& t) {
    return gw_quad_sum(p.d_x0, p.d_z1, t) + gw_quad_sum(p.d_x1, p.d_z0, t.transpose()) +
           (1.0 - p.beta) * dot(p.d_z01, t) + p.beta * gw_quad_sum(p.d_z0, p.d_z1, t);
}

inline scalar_t fgw_sum(const matrix_t& d_a, const matrix_t& d_b, const matrix_t& d_ab,
                        scalar_t beta, const matrix_t& t) {
    return (1.0 - beta) * dot(d_ab, t) + beta * gw_quad_sum(d_a, d_b, t);
}

inline scalar_t min_over_perms(index_t n,
                               const std::function<scalar_t(const matrix_t&)>& value) {
    scalar_t best = std::numeric_limits<scalar_t>::infinity();
    for_each_perm(n, [&](const std::vector<index_t>& sigma) {
        best = std::min(best, value(perm_plan(sigma)));
    });
    return best;
}

inline scalar_t gw_perm_min(const matrix_t& d_a, const matrix_t& d_b) {
    return min_over_perms(d_a.rows(),
                          [&](const matrix_t& t) { return gw_quad_sum(d_a, d_b, t); });
}

inline scalar_t fgw_perm_min(const matrix_t& d_a, const matrix_t& d_b, const matrix_t& d_ab,
                             scalar_t beta) {
    return min_over_perms(
        d_a.rows(), [&](const matrix_t& t) { return fgw_sum(d_a, d_b, d_ab, beta, t); });
}

inline scalar_t fused_perm_min(const FusedProblem& p) {
    return min_over_perms(p.d_x0.rows(),
                          [&](const matrix_t& t) { return fused_sum(p, t); });
}

// Exact uniform-marginal EMD: expand row i into L/m unit atoms and column j
// into L/n atoms (L = lcm(m, n)), then brute-force the assignment over all
// L! pairings. Tractable for L <= 8.
inline scalar_t emd_uniform_bruteforce(const matrix_t& cost) {
    const index_t m = cost.rows(), n = cost.cols();
    const index_t big = std::lcm(m, n);
    std::vector<index_t> row_of(static_cast<std::size_t>(big)), col_of(
                                                                   static_cast<std::size_t>(big));
    for (index_t p = 0; p < big; ++p) {
        row_of[static_cast<std::size_t>(p)] = p / (big / m);
        col_of[static_cast<std::size_t>(p)] = p / (big / n);
    }
    scalar_t best = std::numeric_limits<scalar_t>::infinity();
    for_each_perm(big, [&](const std::vector<index_t>& sigma) {
        scalar_t acc = 0.0;
        for (index_t p = 0; p < big; ++p)
            acc += cost(row_of[static_cast<std::size_t>(p)],
                        col_of[static_cast<std::size_t>(sigma[static_cast<std::size_t>(p)])]);
        best = std::min(best, acc / static_cast<scalar_t>(big));
    });
    return best;
}

// Scalar Gaussian kernel matching the density estimator's normalization.
inline scalar_t kernel(scalar_t dist, scalar_t tau) {
    return std::exp(-dist * dist / (2.0 * tau * tau)) /
           (std::sqrt(2.0 * M_PI) * tau);
}

inline scalar_t euclid(const matrix_t& pts, index_t i, index_t j) {
    return (pts.row(i) - pts.row(j)).norm();
}

// Straight-line evaluation of the empirical kernelized mutual information:
// (1/N) sum_n log[ N sum_m kx(n,m) kz(n,m) / (sum_m kx(n,m) sum_m kz(n,m)) ].
inline scalar_t kmi_direct(const matrix_t& xs, const matrix_t& zs, scalar_t tau_x,
                           scalar_t tau_z) {
    const index_t n = xs.rows();
    scalar_t acc = 0.0;
    for (index_t i = 0; i < n; ++i) {
        scalar_t joint = 0.0, mx = 0.0, mz = 0.0;
        for (index_t j = 0; j < n; ++j) {
            const scalar_t kx = kernel(euclid(xs, i, j), tau_x);
            const scalar_t kz = kernel(euclid(zs, i, j), tau_z);
            joint += kx * kz;
            mx += kx;
            mz += kz;
        }
        acc += std::log(static_cast<scalar_t>(n) * joint / (mx * mz));
    }
    return acc / static_cast<scalar_t>(n);
}

// Composite trapezoid rule for the KDE normalization check.
inline scalar_t trapezoid(const std::function<scalar_t(scalar_t)>& f, scalar_t lo, scalar_t hi,
                          int panels) {
    const scalar_t h = (hi - lo) / panels;
    scalar_t acc = 0.5 * (f(lo) + f(hi));
    for (int k = 1; k < panels; ++k) acc += f(lo + k * h);
    return acc * h;
}

// Central differences over a flat vector; step scales with the coordinate.
inline vector_t central_diff(const std::function<scalar_t(const vector_t&)>& f,
                             const vector_t& at, scalar_t h_scale = 1e-5) {
    vector_t g(at.size());
    for (index_t i = 0; i < at.size(); ++i) {
        const scalar_t h = h_scale * std::max<scalar_t>(1.0, std::abs(at[i]));
        vector_t up = at, down = at;
        up[i] += h;
        down[i] -= h;
        g[i] = (f(up) - f(down)) / (2.0 * h);
    }
    return g;
}

// Central differences over a matrix argument, entry by entry.
inline matrix_t central_diff_matrix(const std::function<scalar_t(const matrix_t&)>& f,
                                    const matrix_t& at, scalar_t h = 1e-6) {
    matrix_t g(at.rows(), at.cols());
    for (index_t i = 0; i < at.rows(); ++i)
        for (index_t j = 0; j < at.cols(); ++j) {
            matrix_t up = at, down = at;
            up(i, j) += h;
            down(i, j) -= h;
            g(i, j) = (f(up) - f(down)) / (2.0 * h);
        }
    return g;
}

}  // namespace reference
