#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "cli_lib.hpp"

namespace {

using gwib::InvalidInput;
using gwib::scalar_t;
using namespace gwib::cli;

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> parts;
    std::string cur;
    for (char c : text) {
        if (c == ',') {
            parts.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    parts.push_back(cur);
    return parts;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
    std::vector<std::uint64_t> seeds;
    for (const auto& part : split_list(text)) {
        try {
            std::size_t pos = 0;
            seeds.push_back(std::stoull(part, &pos));
            if (pos != part.size()) throw std::invalid_argument(part);
        } catch (const std::exception&) {
            throw InvalidInput("bad seed list entry: '" + part + "'");
        }
    }
    return seeds;
}

std::vector<scalar_t> parse_real_list(const std::string& text) {
    std::vector<scalar_t> values;
    for (const auto& part : split_list(text)) {
        try {
            std::size_t pos = 0;
            values.push_back(std::stod(part, &pos));
            if (pos != part.size()) throw std::invalid_argument(part);
        } catch (const std::exception&) {
            throw InvalidInput("bad number list entry: '" + part + "'");
        }
    }
    return values;
}

std::pair<std::string, std::string> parse_assignment(const std::string& text) {
    const auto eq = text.find('=');
    if (eq == std::string::npos || eq == 0)
        throw InvalidInput("--set expects key=value, got '" + text + "'");
    return {text.substr(0, eq), text.substr(eq + 1)};
}

// Common config-override flags shared by train / ablate / diagnose.
struct OverrideFlags {
    std::string variant, lambda, beta, lr, epochs, batch_size, optimizer;
    std::vector<std::string> sets;

    void attach(CLI::App* cmd) {
        cmd->add_option("--variant", variant, "training variant");
        cmd->add_option("--lambda", lambda, "regularizer weight");
        cmd->add_option("--beta", beta, "fused objective structure weight");
        cmd->add_option("--lr", lr, "learning rate");
        cmd->add_option("--epochs", epochs, "epoch budget");
        cmd->add_option("--batch-size", batch_size, "mini-batch size");
        cmd->add_option("--optimizer", optimizer, "adam or sgd");
        cmd->add_option("--set", sets, "extra config override key=value")
            ->take_all();
    }

    std::vector<std::pair<std::string, std::string>> collect() const {
        std::vector<std::pair<std::string, std::string>> o;
        if (!variant.empty()) o.emplace_back("variant", variant);
        if (!lambda.empty()) o.emplace_back("lambda", lambda);
        if (!beta.empty()) o.emplace_back("beta", beta);
        if (!lr.empty()) o.emplace_back("lr", lr);
        if (!epochs.empty()) o.emplace_back("epochs", epochs);
        if (!batch_size.empty()) o.emplace_back("batch_size", batch_size);
        if (!optimizer.empty()) o.emplace_back("optimizer", optimizer);
        for (const auto& s : sets) o.push_back(parse_assignment(s));
        return o;
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Counterfactual regression with transport-based representation balancing"};
    app.require_subcommand(1);

    TrainArgs targs;
    std::string train_seed, train_seeds;
    OverrideFlags train_over;
    auto* train_cmd = app.add_subcommand("train", "train a model and write run artifacts");
    train_cmd->add_option("--config", targs.config_path, "flat key=value config file");
    train_cmd->add_option("--data", targs.data_path, "dataset CSV")->required();
    train_cmd->add_option("--out", targs.out_dir, "output directory");
    train_cmd->add_option("--seed", train_seed, "single run seed");
    train_cmd->add_option("--seeds", train_seeds, "comma-separated seed sweep");
    train_over.attach(train_cmd);

    SolveOtArgs sargs;
    auto* solve_cmd = app.add_subcommand("solve-ot", "solve a transport problem on CSV matrices");
    solve_cmd->add_option("--problem", sargs.problem, "emd | gw | fgw | fused")->required();
    solve_cmd->add_option("--cost", sargs.cost_path, "ground cost matrix (emd)");
    solve_cmd->add_option("--a", sargs.a_path, "first intra-space distance matrix");
    solve_cmd->add_option("--b", sargs.b_path, "second intra-space distance matrix");
    solve_cmd->add_option("--ab", sargs.ab_path, "cross feature cost matrix (fgw)");
    solve_cmd->add_option("--dx0", sargs.dx0_path, "covariate distances, group 0 (fused)");
    solve_cmd->add_option("--dx1", sargs.dx1_path, "covariate distances, group 1 (fused)");
    solve_cmd->add_option("--dz0", sargs.dz0_path, "latent distances, group 0 (fused)");
    solve_cmd->add_option("--dz1", sargs.dz1_path, "latent distances, group 1 (fused)");
    solve_cmd->add_option("--dz01", sargs.dz01_path, "cross latent costs (fused)");
    solve_cmd->add_option("--beta", sargs.beta, "structure weight for fgw/fused");
    solve_cmd->add_option("--restarts", sargs.restarts, "multi-start count (<=0: auto)");
    solve_cmd->add_option("--plan-out", sargs.plan_out, "where to write the plan CSV");
    solve_cmd->add_flag("--oracle", sargs.oracle, "also print the N<=6 brute-force value");

    AblateArgs aargs;
    std::string ablate_seeds;
    OverrideFlags ablate_over;
    auto* ablate_cmd = app.add_subcommand("ablate", "run every variant over a seed list");
    ablate_cmd->add_option("--config", aargs.config_path, "flat key=value config file");
    ablate_cmd->add_option("--data", aargs.data_path, "dataset CSV")->required();
    ablate_cmd->add_option("--out", aargs.out_dir, "output directory");
    ablate_cmd->add_option("--seeds", ablate_seeds, "comma-separated seeds");
    ablate_cmd->add_flag("--include-tarnet", aargs.include_tarnet, "add the plain baseline row");
    ablate_over.attach(ablate_cmd);

    DiagnoseArgs dargs;
    std::string diag_lambdas;
    OverrideFlags diag_over;
    auto* diag_cmd = app.add_subcommand("diagnose", "export encoder information-loss diagnostics");
    diag_cmd->add_option("--config", dargs.config_path, "flat key=value config file");
    diag_cmd->add_option("--data", dargs.data_path, "dataset CSV")->required();
    diag_cmd->add_option("--out", dargs.out_dir, "output directory");
    diag_cmd->add_option("--checkpoint", dargs.checkpoint_path, "evaluate this checkpoint");
    diag_cmd->add_option("--lambdas", diag_lambdas, "comma-separated lambda sweep");
    diag_over.attach(diag_cmd);

    GenSynthArgs gargs;
    auto* gen_cmd = app.add_subcommand("gen-synth", "generate a synthetic benchmark CSV");
    gen_cmd->add_option("--n", gargs.n, "sample count");
    gen_cmd->add_option("--dim", gargs.dim, "covariate dimension");
    gen_cmd->add_option("--bias", gargs.bias_strength, "treatment selection-bias strength");
    gen_cmd->add_option("--noise", gargs.noise_sd, "outcome noise standard deviation");
    gen_cmd->add_option("--seed", gargs.seed, "generator seed");
    gen_cmd->add_option("--out", gargs.out_path, "output CSV path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitInput;
    }

    try {
        if (*train_cmd) {
            targs.overrides = train_over.collect();
            if (!train_seed.empty()) targs.overrides.emplace_back("seed", train_seed);
            if (!train_seeds.empty()) targs.seeds = parse_seed_list(train_seeds);
            return cmd_train(targs, std::cout, std::cerr);
        }
        if (*solve_cmd) return cmd_solve_ot(sargs, std::cout, std::cerr);
        if (*ablate_cmd) {
            aargs.overrides = ablate_over.collect();
            if (!ablate_seeds.empty()) aargs.seeds = parse_seed_list(ablate_seeds);
            return cmd_ablate(aargs, std::cout, std::cerr);
        }
        if (*diag_cmd) {
            dargs.overrides = diag_over.collect();
            if (!diag_lambdas.empty()) dargs.lambdas = parse_real_list(diag_lambdas);
            return cmd_diagnose(dargs, std::cout, std::cerr);
        }
        if (*gen_cmd) return cmd_gen_synth(gargs, std::cout, std::cerr);
    } catch (const InvalidInput& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInput;
    }
    return kExitInput;
}
