#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "gwib/kmi.hpp"

namespace gwib {

namespace {

constexpr scalar_t kTwoPi = 2.0 * std::numbers::pi_v<scalar_t>;

int enumeration_restarts(index_t n) {
    scalar_t f = 1.0;
    for (index_t i = 2; i <= n; ++i) f *= static_cast<scalar_t>(i);
    return static_cast<int>(f);
}

}  // namespace

GwSolver default_gw_solver() {
    return [](const matrix_t& d_a, const matrix_t& d_b) {
        const index_t n = d_a.rows();
        const int restarts = (n == d_b.rows() && n <= 6) ? enumeration_restarts(n) : 1;
        return gw_discrepancy(d_a, d_b, restarts);
    };
}

scalar_t gaussian_kernel(scalar_t sq_dist, scalar_t tau) {
    return std::exp(-sq_dist / (2.0 * tau * tau)) / (std::sqrt(kTwoPi) * tau);
}

scalar_t kde_marginal(const matrix_t& samples, const vector_t& query,
                      const KernelConfig& cfg) {
    cfg.validate();
    if (samples.rows() < 1) throw InvalidInput("kde_marginal: no samples");
    if (samples.cols() != query.size())
        throw InvalidInput("kde_marginal: query dimension mismatch");
    const vector_t sq = (samples.rowwise() - query.transpose()).rowwise().squaredNorm();
    scalar_t acc = 0.0;
    for (index_t i = 0; i < sq.size(); ++i) acc += gaussian_kernel(sq[i], cfg.tau);
    return acc / static_cast<scalar_t>(samples.rows());
}

scalar_t median_heuristic_tau(const matrix_t& points) {
    const matrix_t d = pairwise_dist(points);
    std::vector<scalar_t> vals;
    vals.reserve(static_cast<std::size_t>(points.rows()) * (points.rows() - 1) / 2);
    for (index_t i = 0; i < d.rows(); ++i)
        for (index_t j = i + 1; j < d.cols(); ++j)
            if (d(i, j) > 0.0) vals.push_back(d(i, j));
    if (vals.empty()) return 1.0;
    std::sort(vals.begin(), vals.end());
    const std::size_t k = vals.size();
    if (k % 2 == 1) return vals[k / 2];
    return 0.5 * (vals[k / 2 - 1] + vals[k / 2]);
}

scalar_t empirical_kmi(const matrix_t& xs, const matrix_t& zs, const KernelConfig& cfg_x,
                       const KernelConfig& cfg_z) {
    cfg_x.validate();
    cfg_z.validate();
    if (xs.rows() != zs.rows()) throw InvalidInput("empirical_kmi: sample count mismatch");
    if (xs.rows() < 1) throw InvalidInput("empirical_kmi: no samples");
    const index_t n = xs.rows();
    const matrix_t sqx = pairwise_sq_dist(xs);
    const matrix_t sqz = pairwise_sq_dist(zs);
    const scalar_t nx = 1.0 / (std::sqrt(kTwoPi) * cfg_x.tau);
    const scalar_t nz = 1.0 / (std::sqrt(kTwoPi) * cfg_z.tau);
    const matrix_t kx = nx * (-sqx / (2.0 * cfg_x.tau * cfg_x.tau)).array().exp().matrix();
    const matrix_t kz = nz * (-sqz / (2.0 * cfg_z.tau * cfg_z.tau)).array().exp().matrix();
    scalar_t acc = 0.0;
    for (index_t i = 0; i < n; ++i) {
        const scalar_t joint = kx.row(i).cwiseProduct(kz.row(i)).sum();
        const scalar_t mx = kx.row(i).sum();
        const scalar_t mz = kz.row(i).sum();
        acc += std::log(static_cast<scalar_t>(n) * joint / (mx * mz));
    }
    return acc / static_cast<scalar_t>(n);
}

BoundReport kmi_upper_bound(const matrix_t& xs, const matrix_t& zs, const KernelConfig& cfg,
                            const GwSolver& gw) {
    cfg.validate();
    if (xs.rows() != zs.rows()) throw InvalidInput("kmi_upper_bound: sample count mismatch");
    if (xs.rows() < 2) throw InvalidInput("kmi_upper_bound: needs N >= 2");
    const scalar_t n = static_cast<scalar_t>(xs.rows());
    const matrix_t d_x = pairwise_dist(xs);
    const matrix_t d_z = pairwise_dist(zs);

    BoundReport rep;
    rep.kmi = empirical_kmi(xs, zs, cfg, cfg);
    rep.transport_cost_term = (d_x - d_z).squaredNorm() / (n * n);
    rep.gw_sq = gw(d_x, d_z).first;
    rep.diam_x = d_x.maxCoeff();
    rep.diam_z = d_z.maxCoeff();
    const scalar_t tau2 = cfg.tau * cfg.tau;
    rep.alpha = std::exp(-(rep.diam_x * rep.diam_x + rep.diam_z * rep.diam_z) / (2.0 * tau2));
    const scalar_t n4 = n * n * n * n;
    const scalar_t num = kTwoPi * tau2 - rep.alpha;
    rep.jensen_constant = n4 * num * num / (8.0 * (n4 - 1.0) * rep.alpha * rep.alpha);
    rep.bound_value =
        (rep.transport_cost_term - rep.gw_sq) / (2.0 * tau2) + rep.jensen_constant;
    return rep;
}

scalar_t monge_gap(const matrix_t& xs, const matrix_t& zs, const GwSolver& gw) {
    if (xs.rows() != zs.rows()) throw InvalidInput("monge_gap: sample count mismatch");
    if (xs.rows() < 1) throw InvalidInput("monge_gap: no samples");
    const scalar_t n = static_cast<scalar_t>(xs.rows());
    const matrix_t d_x = pairwise_dist(xs);
    const matrix_t d_z = pairwise_dist(zs);
    return (d_x - d_z).squaredNorm() / (n * n) - gw(d_x, d_z).first;
}

}  // namespace gwib
