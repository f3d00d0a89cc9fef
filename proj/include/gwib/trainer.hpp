#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gwib/cfr.hpp"
#include "gwib/data.hpp"

namespace gwib {

// Training modes: the full objective, five ablations of it, the plain
// two-head baseline, and the latent-Wasserstein baseline.
enum class Variant {
    gwib,
    gwib_fgw,
    gwib_rt,
    gwib_gw,
    gwib_gap,
    gwib_opt,
    tarnet,
    cfr_wass,
};

Variant variant_from_string(const std::string& name);
std::string to_string(Variant v);
const std::vector<Variant>& all_variants();

struct TrainConfig {
    scalar_t lr = 1e-3;
    index_t batch_size = 32;
    scalar_t lambda = 0.1;  // regularizer weight; 0 disables it entirely
    scalar_t beta = 0.5;    // structure weight inside the fused objective
    index_t d_phi1 = 32;    // encoder widths
    index_t d_phi2 = 16;
    index_t d_h = 16;  // head hidden width
    int epochs = 200;
    int patience = 30;
    int cg_max_iter = 50;
    scalar_t cg_tol = 1e-6;
    std::uint64_t seed = 0;
    Variant variant = Variant::gwib;
    bool squared_gw_costs = false;  // squared distances in every GW block
    std::string plan_scope = "full_epoch";
    std::string optimizer = "adam";  // adam | sgd
    scalar_t dropout = 0.1;
    bool bounded_latent = false;
    index_t max_reg_samples = 512;  // per-group cap on regularizer matrices
    index_t gw_diag_samples = 128;  // per-group cap on the GW diagnostic
    int gw_diag_max_iter = 25;

    void validate() const;
};

// Applies one key=value assignment; shared by the config-file parser and
// command-line overrides. Unknown keys or unparsable values raise
// InvalidInput naming the offender.
void set_config_key(TrainConfig& cfg, const std::string& key, const std::string& value);

// Flat key=value text, one pair per line, '#' starts a comment.
TrainConfig parse_train_config(const std::string& text);

// How a variant evaluates the latent regularizer. tarnet is the only mode
// without one; every other variant maps onto a RegKind recipe.
struct VariantRecipe {
    bool uses_regularizer = true;
    RegKind kind = RegKind::gwib;
};

VariantRecipe apply_variant(const TrainConfig& cfg);

struct EpochRecord {
    int epoch = 0;  // 1-based
    scalar_t train_loss = 0.0;
    scalar_t val_loss = 0.0;
    RegularizerBreakdown regularizer;  // zeros when the variant has none
    CgReport cg_report;                // plan solve of this epoch (see train())
    scalar_t gw_diag_0 = 0.0;          // GW(covariates, latents) per group,
    scalar_t gw_diag_1 = 0.0;          // on the capped diagnostic subsample
};

struct TrainResult {
    CfrParams params;  // checkpoint with the best validation loss
    std::vector<EpochRecord> trace;
    int best_epoch = 0;
    scalar_t best_val_loss = 0.0;
};

// Bi-level loop. Each epoch: encode the full training split, solve the
// variant's transport plans on the (capped) group matrices, then take
// ceil(N / batch_size) optimizer steps of mini-batch factual-loss gradient
// plus lambda-weighted full-split regularizer gradient at the fixed plans.
// Early stopping watches validation factual loss and restores the best
// checkpoint. Identical inputs give bit-identical traces.
TrainResult train(const Cohort& train_split, const Cohort& val_split, const TrainConfig& cfg);

}  // namespace gwib
