#include "gwib/metrics.hpp"

#include <cmath>

#include "gwib/ot.hpp"

namespace gwib {

EvalReport eval_ite(const CfrParams& p, const Cohort& samples, const std::string& scope) {
    p.validate();
    require(!samples.empty(), "eval_ite: empty cohort");
    for (std::size_t i = 0; i < samples.size(); ++i)
        require(samples[i].mu0.has_value() && samples[i].mu1.has_value(),
                "eval_ite: sample " + std::to_string(i) + " lacks potential outcomes");

    const Batch batch = to_batch(samples);
    const vector_t y0 = predict_head(p, batch.x, 0);
    const vector_t y1 = predict_head(p, batch.x, 1);

    const index_t n = batch.x.rows();
    scalar_t effect_sum = 0.0, effect_hat_sum = 0.0, sq_err_sum = 0.0;
    for (index_t i = 0; i < n; ++i) {
        const scalar_t effect = *samples[static_cast<std::size_t>(i)].mu1 -
                                *samples[static_cast<std::size_t>(i)].mu0;
        const scalar_t effect_hat = y1(i) - y0(i);
        effect_sum += effect;
        effect_hat_sum += effect_hat;
        const scalar_t err = effect_hat - effect;
        sq_err_sum += err * err;
    }

    EvalReport report;
    report.n = n;
    report.scope = scope;
    report.eps_ate = std::abs(effect_hat_sum - effect_sum) / static_cast<scalar_t>(n);
    report.eps_pehe = sq_err_sum / static_cast<scalar_t>(n);
    report.eps_pehe_root = std::sqrt(report.eps_pehe);
    return report;
}

scalar_t gw_information_loss(const CfrParams& p, const Cohort& samples, int group,
                             int restarts, bool squared_costs, int max_iter) {
    p.validate();
    require(group == 0 || group == 1, "gw_information_loss: group must be 0 or 1");
    const matrix_t x = group_covariates(samples, group);
    require(x.rows() >= 1, "gw_information_loss: group " + std::to_string(group) + " is empty");
    const matrix_t z = encode(p, x);

    const matrix_t d_x = squared_costs ? pairwise_sq_dist(x) : pairwise_dist(x);
    const matrix_t d_z = squared_costs ? pairwise_sq_dist(z) : pairwise_dist(z);
    if (restarts <= 0) {
        // Exhaustive vertex starts stay tractable only for tiny groups.
        restarts = x.rows() <= 6 ? 721 : 1;
    }
    return gw_discrepancy(d_x, d_z, restarts, max_iter).first;
}

}  // namespace gwib
