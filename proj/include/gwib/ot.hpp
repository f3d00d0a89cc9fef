#pragma once

#include <utility>
#include <vector>

#include "gwib/types.hpp"

namespace gwib {

// Discrete probability measure: nonnegative weights summing to one.
struct DiscreteMeasure {
    vector_t w;

    static DiscreteMeasure uniform(index_t n);
    void validate() const;
    index_t size() const { return w.size(); }
};

// Coupling of two discrete measures. Row sums must equal source weights and
// column sums target weights (within 1e-9); entries are nonnegative.
struct TransportPlan {
    matrix_t t;
    DiscreteMeasure source;
    DiscreteMeasure target;

    void validate() const;
    // The unique coupling when either side is a singleton, otherwise the
    // independence coupling source * target^T.
    static TransportPlan product(const DiscreteMeasure& mu, const DiscreteMeasure& nu);
};

// Data of the fused lower-level transport problem: intra-group distance
// matrices for covariates (d_x*) and latents (d_z*), the cross-group latent
// cost d_z01, and the structure/feature tradeoff beta in [0,1].
struct FusedProblem {
    matrix_t d_x0, d_x1;  // N0 x N0, N1 x N1
    matrix_t d_z0, d_z1;  // N0 x N0, N1 x N1
    matrix_t d_z01;       // N0 x N1
    scalar_t beta = 0.5;

    void validate() const;
    index_t n0() const { return d_x0.rows(); }
    index_t n1() const { return d_x1.rows(); }
};

struct CgReport {
    int iterations = 0;
    std::vector<scalar_t> objective_trace;
    bool converged = false;
    scalar_t final_objective = 0.0;
};

// Squared Euclidean distances between row-point sets: out(m, n) = |a_m - b_n|^2.
template <typename DerivedA, typename DerivedB>
matrix_t pairwise_sq_dist(const Eigen::MatrixBase<DerivedA>& a,
                          const Eigen::MatrixBase<DerivedB>& b) {
    if (a.cols() != b.cols()) throw InvalidInput("pairwise_sq_dist: dimension mismatch");
    const vector_t sq_a = a.rowwise().squaredNorm();
    const vector_t sq_b = b.rowwise().squaredNorm();
    matrix_t out = sq_a.replicate(1, b.rows()) + sq_b.transpose().replicate(a.rows(), 1)
                 - 2.0 * (a * b.transpose()).eval();
    // Cancellation can leave tiny negatives on (near-)coincident points.
    return out.cwiseMax(0.0);
}

template <typename DerivedA, typename DerivedB>
matrix_t pairwise_dist(const Eigen::MatrixBase<DerivedA>& a,
                       const Eigen::MatrixBase<DerivedB>& b) {
    return pairwise_sq_dist(a, b).cwiseSqrt();
}

// Self-distance variants with floating-point noise removed: exactly
// symmetric with a zero diagonal, as the coupling solvers require.
template <typename Derived>
matrix_t pairwise_sq_dist(const Eigen::MatrixBase<Derived>& a) {
    matrix_t d = pairwise_sq_dist(a, a);
    d = ((d + d.transpose()) * 0.5).eval();
    d.diagonal().setZero();
    return d;
}

template <typename Derived>
matrix_t pairwise_dist(const Eigen::MatrixBase<Derived>& a) {
    return pairwise_sq_dist(a).cwiseSqrt();
}

// Exact EMD: minimizes <cost, T> over couplings of (mu, nu) with the
// transportation simplex. Returns a basic feasible (vertex) solution.
TransportPlan solve_emd(const matrix_t& cost, const DiscreteMeasure& mu,
                        const DiscreteMeasure& nu);

// Feature term <d_z01, plan>.
scalar_t wasserstein_term(const matrix_t& d_z01, const TransportPlan& plan);

// Order-2 Gromov-Wasserstein objective
//   sum_{m,n,k,l} T_mn T_kl (d_a(m,k) - d_b(n,l))^2
// evaluated through the factorized form r'(A.A)r + c'(B.B)c - 2<A T B', T>
// with r, c the plan's marginals, so the identity holds for any nonnegative T.
scalar_t gw_objective(const matrix_t& d_a, const matrix_t& d_b, const TransportPlan& plan);

// Lower-level fused objective
//   GW(d_x0, d_z1; T) + GW(d_x1, d_z0; T^T) + (1-beta)<d_z01, T> + beta GW(d_z0, d_z1; T)
// as an explicit quadratic in T (constant matrices built from the uniform
// polytope marginals, so the value matches the GW sum on feasible plans and
// stays a plain quadratic off the polytope for derivative checks).
scalar_t fused_objective(const FusedProblem& prob, const TransportPlan& plan);

// Exact gradient of fused_objective at the plan.
matrix_t fused_gradient(const FusedProblem& prob, const TransportPlan& plan);

// Exact minimizer of tau -> fused_objective((1-tau) t_cur + tau t_dir) over [0,1].
scalar_t line_search(const FusedProblem& prob, const TransportPlan& t_cur,
                     const TransportPlan& t_dir);

// Frank-Wolfe / conditional gradient on the fused problem: linearize, solve
// the EMD subproblem for a vertex direction, exact line search, update.
// Stops on relative objective decrease < tol or after max_iter iterations.
std::pair<TransportPlan, CgReport> conditional_gradient(const FusedProblem& prob,
                                                        const TransportPlan& t_init,
                                                        int max_iter, scalar_t tol);

namespace detail {
// Default CG settings used by the discrepancy helpers.
inline constexpr int kCgMaxIter = 200;
inline constexpr scalar_t kCgTol = 1e-7;
}  // namespace detail

// Minimum-found squared GW discrepancy between two metric spaces given by
// their distance matrices, with uniform measures. Multi-start conditional
// gradient; when restarts >= N! and N <= 6 (square case) every permutation
// vertex is used as a start, making the result the exact vertex-restart
// minimum. `report`, when given, receives the winning start's CG report.
std::pair<scalar_t, TransportPlan> gw_discrepancy(const matrix_t& d_a, const matrix_t& d_b,
                                                  int restarts,
                                                  int max_iter = detail::kCgMaxIter,
                                                  scalar_t tol = detail::kCgTol,
                                                  CgReport* report = nullptr);

// Fused Gromov-Wasserstein value (1-beta)<d_ab, T> + beta GW(d_a, d_b; T)
// minimized over the coupling polytope by multi-start conditional gradient.
// Shared by the regularizer variants that need a standalone FGW solve.
std::pair<scalar_t, TransportPlan> fgw_discrepancy(const matrix_t& d_a, const matrix_t& d_b,
                                                   const matrix_t& d_ab, scalar_t beta,
                                                   int restarts,
                                                   int max_iter = detail::kCgMaxIter,
                                                   scalar_t tol = detail::kCgTol,
                                                   CgReport* report = nullptr);

namespace detail {

// Deterministic permutation plan sigma/N as a coupling (square, uniform).
TransportPlan permutation_plan(const std::vector<index_t>& sigma);
}  // namespace detail

}  // namespace gwib
