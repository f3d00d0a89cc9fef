#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "gwib/metrics.hpp"
#include "gwib/trainer.hpp"

namespace gwib::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInput = 2;
inline constexpr int kExitNumerical = 3;
inline constexpr const char* kVersion = "0.1.0";

// Builds the TrainConfig for a command: optional config file, then
// key=value overrides from flags (applied in order).
TrainConfig build_config(const std::string& config_path,
                         const std::vector<std::pair<std::string, std::string>>& overrides);

struct TrainArgs {
    std::string config_path;  // empty -> defaults
    std::string data_path;
    std::string out_dir = "runs";
    std::vector<std::uint64_t> seeds;  // empty -> config seed only
    std::vector<std::pair<std::string, std::string>> overrides;
};

// Runs one training run per seed (run id "<variant>-seed<seed>"), writing
// manifest.json, trace.jsonl, checkpoint.json and eval.json per run plus an
// aggregate.json with mean/std over seeds when more than one was given.
int cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err);

struct SolveOtArgs {
    std::string problem = "emd";  // emd | gw | fgw | fused
    std::string cost_path;        // emd ground cost
    std::string a_path, b_path, ab_path;  // gw / fgw blocks
    std::string dx0_path, dx1_path, dz0_path, dz1_path, dz01_path;  // fused blocks
    scalar_t beta = 0.5;
    int restarts = 0;  // <= 0 -> exhaustive for N <= 6, single start otherwise
    std::string plan_out = "plan.csv";
    bool oracle = false;  // also run the N <= 6 permutation brute force
};

int cmd_solve_ot(const SolveOtArgs& args, std::ostream& out, std::ostream& err);

struct AblateArgs {
    std::string config_path;
    std::string data_path;
    std::string out_dir = "ablation";
    std::vector<std::uint64_t> seeds = {0, 1};
    bool include_tarnet = false;
    std::vector<std::pair<std::string, std::string>> overrides;
};

// Trains every regularized variant over the seed list and writes
// ablation.csv with one (variant, metric, scope) row holding mean and
// sample std across seeds.
int cmd_ablate(const AblateArgs& args, std::ostream& out, std::ostream& err);

struct DiagnoseArgs {
    std::string config_path;
    std::string data_path;
    std::string out_dir = "diagnosis";
    std::string checkpoint_path;     // evaluate an existing model, or
    std::vector<scalar_t> lambdas;   // train one model per lambda
    std::vector<std::pair<std::string, std::string>> overrides;
};

// Exports per-group encoder information loss (gw_loss.csv) and raw latent
// coordinates (latents*.csv) for external embedding plots.
int cmd_diagnose(const DiagnoseArgs& args, std::ostream& out, std::ostream& err);

struct GenSynthArgs {
    index_t n = 500;
    index_t dim = 10;
    scalar_t bias_strength = 2.0;
    scalar_t noise_sd = 1.0;
    std::uint64_t seed = 0;
    std::string out_path = "synth.csv";
};

int cmd_gen_synth(const GenSynthArgs& args, std::ostream& out, std::ostream& err);

// Worker cap for the run-level fan-out: GWIB_THREADS when set, otherwise
// hardware concurrency, never more than `jobs`.
int thread_budget(int jobs);

// Shared helpers for evaluation plumbing (exposed for the test binaries).
struct RunOutcome {
    TrainResult result;
    EvalReport in_report, out_report;
    scalar_t gw_loss_in[2] = {0.0, 0.0};
    scalar_t gw_loss_out[2] = {0.0, 0.0};
};

// Splits, standardizes, trains and evaluates one configuration.
RunOutcome run_once(const Cohort& data, const TrainConfig& cfg);

// Deterministic per-group subsample used for cohort-level GW diagnostics.
Cohort diagnostic_subset(const Cohort& samples, index_t per_group_cap);

}  // namespace gwib::cli
