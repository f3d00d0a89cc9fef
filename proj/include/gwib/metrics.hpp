#pragma once

#include <string>

#include "gwib/cfr.hpp"
#include "gwib/data.hpp"
#include "gwib/ot.hpp"

namespace gwib {

// Treatment-effect estimation errors of a trained model on a cohort with
// known potential-outcome means.
struct EvalReport {
    scalar_t eps_ate = 0.0;
    scalar_t eps_pehe = 0.0;       // mean squared effect error
    scalar_t eps_pehe_root = 0.0;  // its square root
    index_t n = 0;
    std::string scope;  // label carried through to reports ("in", "out", ...)
};

// Compares predicted effects y1_hat(x) - y0_hat(x) against mu1 - mu0.
// Every sample must carry both potential-outcome columns.
EvalReport eval_ite(const CfrParams& p, const Cohort& samples, const std::string& scope);

// Squared GW discrepancy between the covariate geometry and the latent
// geometry of one treatment group; the "information lost by the encoder"
// diagnostic. restarts <= 0 picks a default: every permutation start when
// the group has at most 6 samples, one otherwise.
scalar_t gw_information_loss(const CfrParams& p, const Cohort& samples, int group,
                             int restarts = 0, bool squared_costs = false,
                             int max_iter = detail::kCgMaxIter);

}  // namespace gwib
