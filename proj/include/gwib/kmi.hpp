#pragma once

#include <functional>

#include "gwib/ot.hpp"
#include "gwib/types.hpp"

namespace gwib {

// Gaussian kernel configuration: kappa(a, b) = exp(-d(a,b)^2 / (2 tau^2)) / (sqrt(2 pi) tau)
// with Euclidean ground distance.
struct KernelConfig {
    scalar_t tau = 1.0;

    void validate() const {
        if (!(tau > 0.0)) throw InvalidInput("KernelConfig: tau must be positive");
    }
};

// Everything behind the mutual-information upper bound, kept separate so the
// CLI can serialize the full decomposition.
struct BoundReport {
    scalar_t kmi = 0.0;                  // empirical kernelized MI
    scalar_t transport_cost_term = 0.0;  // |D_X - D_Z|_F^2 / N^2
    scalar_t gw_sq = 0.0;                // squared GW discrepancy between the clouds
    scalar_t jensen_constant = 0.0;      // C_{kappa,N}
    scalar_t bound_value = 0.0;
    scalar_t diam_x = 0.0;
    scalar_t diam_z = 0.0;
    scalar_t alpha = 0.0;
};

// Solver handle: maps two intra-cloud distance matrices to the (squared)
// GW discrepancy value and its plan. Tests substitute exhaustive solvers.
using GwSolver =
    std::function<std::pair<scalar_t, TransportPlan>(const matrix_t&, const matrix_t&)>;

// Default solver: enumerated permutation restarts for N <= 6, otherwise a
// single product-coupling conditional-gradient run.
GwSolver default_gw_solver();

scalar_t gaussian_kernel(scalar_t sq_dist, scalar_t tau);

// Kernel density estimate at the query point: mean kernel value over samples
// (rows of `samples`).
scalar_t kde_marginal(const matrix_t& samples, const vector_t& query,
                      const KernelConfig& cfg);

// Median of the nonzero pairwise distances; the usual scale-adaptive
// bandwidth choice. Falls back to 1 when every distance is zero.
scalar_t median_heuristic_tau(const matrix_t& points);

// Empirical kernelized mutual information between paired samples:
// (1/N) sum_n log( N sum_m kx(n,m) kz(n,m) / (sum_m kx(n,m) sum_m kz(n,m)) ).
scalar_t empirical_kmi(const matrix_t& xs, const matrix_t& zs, const KernelConfig& cfg_x,
                       const KernelConfig& cfg_z);

// Upper bound on the empirical KMI:
//   (1/(2 tau^2)) (|D_X - D_Z|_F^2 / N^2 - GW^2) + C_{kappa,N}
// with C_{kappa,N} = N^4 (2 pi tau^2 - alpha)^2 / (8 (N^4 - 1) alpha^2) and
// alpha = exp(-(diam_x^2 + diam_z^2) / (2 tau^2)). One shared bandwidth for
// both spaces; requires N >= 2. Distances, not squares, fill D_X and D_Z.
BoundReport kmi_upper_bound(const matrix_t& xs, const matrix_t& zs, const KernelConfig& cfg,
                            const GwSolver& gw = default_gw_solver());

// Empirical Monge gap: |D_X - D_Z|_F^2 / N^2 minus the squared GW
// discrepancy. Nonnegative when the GW solve is exact; zero when zs is an
// isometric image of xs.
scalar_t monge_gap(const matrix_t& xs, const matrix_t& zs,
                   const GwSolver& gw = default_gw_solver());

}  // namespace gwib
