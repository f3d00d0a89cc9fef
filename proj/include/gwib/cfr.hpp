#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "gwib/ot.hpp"
#include "gwib/types.hpp"

namespace gwib {

// Outcome head: affine -> ELU -> dropout -> linear scalar.
struct HeadTensors {
    matrix_t w;      // d_h x d_latent
    vector_t b;      // d_h
    vector_t out_w;  // d_h
    scalar_t out_b = 0.0;
};

// All trainable tensors of the two-head network. Doubles as the gradient
// container since gradients share every shape.
struct CfrTensors {
    matrix_t enc_w1;  // d_phi1 x d_in
    vector_t enc_b1;
    matrix_t enc_w2;  // d_phi2 x d_phi1
    vector_t enc_b2;
    std::array<HeadTensors, 2> head;

    index_t total_size() const;
    vector_t flatten() const;
    void set_flat(const vector_t& v);
    static CfrTensors zeros_like(const CfrTensors& shape);
};

struct CfrParams {
    CfrTensors t;
    scalar_t dropout_rate = 0.1;
    bool bounded_latent = false;  // tanh instead of ELU on the last encoder layer

    index_t d_in() const { return t.enc_w1.cols(); }
    index_t d_latent() const { return t.enc_w2.rows(); }
    void validate() const;
};

// He-style uniform fan-in initialization with a seeded generator.
CfrParams init_params(index_t d_in, index_t d_phi1, index_t d_phi2, index_t d_h,
                      std::uint64_t seed, scalar_t dropout_rate = 0.1,
                      bool bounded_latent = false);

struct Batch {
    matrix_t x;          // n x d_in
    std::vector<int> t;  // n treatment flags
    vector_t y;          // n factual outcomes
};

// Latent codes for a batch of inputs; train_mode draws inverted-scaling
// dropout masks from rng_seed, eval mode is deterministic.
matrix_t encode(const CfrParams& p, const matrix_t& x, bool train_mode = false,
                std::uint64_t rng_seed = 0);

// Single-sample forward through encoder and head t.
std::pair<vector_t, scalar_t> forward(const CfrParams& p, const vector_t& x, int t,
                                      bool train_mode = false, std::uint64_t rng_seed = 0);

// Head-t predictions for every row of x (not just the rows with treatment t).
vector_t predict_head(const CfrParams& p, const matrix_t& x, int t);

// Group-normalized squared error: sum_t (1/n_t) sum_{i in group t} (y_hat - y)^2.
scalar_t factual_loss(const CfrParams& p, const Batch& batch, bool train_mode = false,
                      std::uint64_t rng_seed = 0);

struct RegularizerBreakdown {
    scalar_t r0 = 0.0, r1 = 0.0;   // |D_Xt - D_Zt|_F / N_t
    scalar_t fgw_at_plan = 0.0;    // rooted fused value at the plan
    scalar_t gw0_at_plan = 0.0;    // squared cross-group GW terms
    scalar_t gw1_at_plan = 0.0;
    scalar_t total = 0.0;          // sum_t (r_t + fgw/beta)^2 - gw_t
};

// Which regularizer the training variant optimizes. Fields store the
// effective (possibly dropped) terms so the breakdown always recomposes.
enum class RegKind { gwib, gwib_fgw, gwib_rt, gwib_gw, gwib_gap, gwib_opt, cfr_wass };

// Plans the regularizer is evaluated at. The gwib family and cfr_wass read
// `shared`; gwib_opt reads fgw/cross0/cross1; gwib_gap reads group0/group1.
struct RegPlans {
    TransportPlan shared;
    TransportPlan fgw, cross0, cross1;
    TransportPlan group0, group1;
};

// Full regularizer at a fixed shared plan (the published form).
RegularizerBreakdown regularizer(const CfrParams& p, const matrix_t& x0, const matrix_t& x1,
                                 const TransportPlan& plan, scalar_t beta,
                                 bool squared_costs = false);

// Variant-general evaluation at fixed plans.
RegularizerBreakdown regularizer_at(const CfrParams& p, const matrix_t& x0,
                                    const matrix_t& x1, RegKind kind, const RegPlans& plans,
                                    scalar_t beta, bool squared_costs = false);

struct RegEval {
    RegularizerBreakdown breakdown;
    CfrTensors grad;  // encoder entries only; heads stay zero (plan held fixed)
};

// Analytic encoder gradient of the variant regularizer, plans held fixed,
// latents evaluated without dropout.
RegEval regularizer_grad(const CfrParams& p, const matrix_t& x0, const matrix_t& x1,
                         RegKind kind, const RegPlans& plans, scalar_t beta,
                         bool squared_costs = false);

struct LossGrad {
    CfrTensors grad;
    scalar_t loss = 0.0;
};

// Backprop of the factual loss through heads and encoder.
LossGrad loss_grad(const CfrParams& p, const Batch& batch, bool train_mode = false,
                   std::uint64_t rng_seed = 0);

struct GradTotal {
    CfrTensors grad;
    scalar_t loss = 0.0;
    RegularizerBreakdown reg;
};

// Gradient of factual_loss + lambda * regularizer.total. Heads receive only
// the loss part; the regularizer contributes to encoder tensors alone.
GradTotal grad_total(const CfrParams& p, const Batch& batch, const matrix_t& x0,
                     const matrix_t& x1, const TransportPlan& plan, scalar_t beta,
                     scalar_t lambda, bool train_mode = false, std::uint64_t rng_seed = 0,
                     bool squared_costs = false);

// Versioned JSON checkpoint of named tensors with shapes.
void save_checkpoint(const std::string& path, const CfrParams& p);
CfrParams load_checkpoint(const std::string& path);

}  // namespace gwib
