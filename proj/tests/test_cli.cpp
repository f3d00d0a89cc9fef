#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "cli_lib.hpp"
#include "gwib/cfr.hpp"
#include "gwib/data.hpp"
#include "gwib/matrix_io.hpp"
#include "gwib/ot.hpp"
#include "test_util.hpp"

using namespace gwib;
using namespace gwib::cli;
namespace fs = std::filesystem;

namespace {

// Scratch directory under the test working directory, wiped on destruction.
struct TempDir {
    fs::path root;

    explicit TempDir(const std::string& name) : root("cli_tmp_" + name) {
        fs::remove_all(root);
        fs::create_directories(root);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(root, ec);
    }
    std::string sub(const std::string& name) const { return (root / name).string(); }
};

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(bool(in));
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) out.push_back(line);
    return out;
}

// Parses the number printed right after `key` in captured stdout.
scalar_t value_after(const std::string& text, const std::string& key) {
    const auto pos = text.find(key);
    REQUIRE(pos != std::string::npos);
    return std::stod(text.substr(pos + key.size()));
}

bool contains(const std::string& text, const std::string& needle) {
    return text.find(needle) != std::string::npos;
}

// Overrides that keep training runs small enough for unit tests.
std::vector<std::pair<std::string, std::string>> fast_overrides() {
    return {{"epochs", "2"},        {"batch_size", "16"},     {"d_phi1", "3"},
            {"d_phi2", "2"},        {"d_h", "3"},             {"dropout", "0"},
            {"max_reg_samples", "8"}, {"gw_diag_samples", "6"}, {"gw_diag_max_iter", "5"},
            {"cg_max_iter", "15"},  {"lambda", "0.1"}};
}

Cohort small_dataset(index_t n, std::uint64_t seed) {
    return gen_synthetic(n, 2, 1.0, 0.5, seed);
}

}  // namespace

TEST_CASE("build_config: file then overrides, validated") {
    TempDir tmp("config");
    const TrainConfig plain = build_config("", {{"lr", "0.01"}, {"batch_size", "64"}});
    CHECK(plain.lr == 0.01);
    CHECK(plain.batch_size == 64);

    const std::string path = tmp.sub("train.cfg");
    {
        std::ofstream out(path);
        out << "lr = 0.005\nvariant = tarnet\n";
    }
    const TrainConfig from_file = build_config(path, {});
    CHECK(from_file.lr == 0.005);
    CHECK(from_file.variant == Variant::tarnet);

    const TrainConfig overridden = build_config(path, {{"lr", "0.02"}});
    CHECK(overridden.lr == 0.02);
    CHECK(overridden.variant == Variant::tarnet);

    CHECK_THROWS_AS(build_config("", {{"nope", "1"}}), InvalidInput);
    CHECK_THROWS_AS(build_config("", {{"lr", "1"}}), InvalidInput);
    CHECK_THROWS_AS(build_config(tmp.sub("absent.cfg"), {}), IoError);
}

TEST_CASE("thread_budget: env cap and job bound") {
    const char* prior = std::getenv("GWIB_THREADS");
    const std::string saved = prior ? prior : "";

    unsetenv("GWIB_THREADS");
    CHECK(thread_budget(0) == 1);
    CHECK(thread_budget(1) == 1);
    CHECK(thread_budget(3) >= 1);
    CHECK(thread_budget(3) <= 3);

    setenv("GWIB_THREADS", "2", 1);
    CHECK(thread_budget(8) == 2);
    CHECK(thread_budget(1) == 1);

    setenv("GWIB_THREADS", "abc", 1);
    CHECK_THROWS_AS(thread_budget(4), InvalidInput);

    if (prior)
        setenv("GWIB_THREADS", saved.c_str(), 1);
    else
        unsetenv("GWIB_THREADS");
}

TEST_CASE("diagnostic_subset: strided per-group pick") {
    Cohort cohort;
    for (int i = 0; i < 10; ++i) {
        CohortSample s;
        s.x = vector_t::Constant(1, static_cast<scalar_t>(i));
        s.t = i < 7 ? 0 : 1;
        s.y_factual = 0.0;
        cohort.push_back(s);
    }

    const Cohort picked = diagnostic_subset(cohort, 3);
    REQUIRE(picked.size() == 6);
    CHECK(picked[0].x[0] == 0.0);
    CHECK(picked[1].x[0] == 2.0);
    CHECK(picked[2].x[0] == 4.0);
    for (int i = 0; i < 3; ++i) CHECK(picked[static_cast<std::size_t>(i)].t == 0);
    CHECK(picked[3].x[0] == 7.0);
    CHECK(picked[4].x[0] == 8.0);
    CHECK(picked[5].x[0] == 9.0);

    const Cohort all = diagnostic_subset(cohort, 100);
    CHECK(all.size() == cohort.size());

    const Cohort again = diagnostic_subset(cohort, 3);
    REQUIRE(again.size() == picked.size());
    for (std::size_t i = 0; i < picked.size(); ++i) CHECK(again[i].x[0] == picked[i].x[0]);

    CHECK_THROWS_AS(diagnostic_subset(cohort, 0), InvalidInput);
}

TEST_CASE("cmd_gen_synth: deterministic file with message") {
    TempDir tmp("gen");
    GenSynthArgs args;
    args.n = 25;
    args.dim = 3;
    args.seed = 4;
    args.out_path = tmp.sub("synth.csv");

    std::ostringstream out, err;
    CHECK(cmd_gen_synth(args, out, err) == kExitOk);
    CHECK(out.str() == "wrote " + args.out_path + " (25 samples, dim 3)\n");
    CHECK(err.str().empty());

    const Cohort data = load_csv(args.out_path);
    REQUIRE(data.size() == 25);
    CHECK(data[0].x.size() == 3);
    CHECK(data[0].mu0.has_value());
    CHECK(data[0].mu1.has_value());

    GenSynthArgs twin = args;
    twin.out_path = tmp.sub("synth2.csv");
    std::ostringstream out2, err2;
    CHECK(cmd_gen_synth(twin, out2, err2) == kExitOk);
    CHECK(slurp(args.out_path) == slurp(twin.out_path));
}

TEST_CASE("cmd_solve_ot: emd on a hand cost matrix") {
    TempDir tmp("emd");
    matrix_t cost(2, 2);
    cost << 0.0, 1.0, 1.0, 0.0;
    write_matrix_csv(tmp.sub("cost.csv"), cost);

    SolveOtArgs args;
    args.problem = "emd";
    args.cost_path = tmp.sub("cost.csv");
    args.plan_out = tmp.sub("plan.csv");
    args.oracle = true;

    std::ostringstream out, err;
    CHECK(cmd_solve_ot(args, out, err) == kExitOk);
    CHECK(value_after(out.str(), "objective ") <= 1e-15);
    CHECK(value_after(out.str(), "oracle ") <= 1e-15);
    CHECK(contains(out.str(), "plan written to " + args.plan_out));

    const matrix_t plan = read_matrix_csv(args.plan_out);
    REQUIRE(plan.rows() == 2);
    REQUIRE(plan.cols() == 2);
    CHECK(plan(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(plan(1, 1) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(plan.sum() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("cmd_solve_ot: rectangular emd and oracle guard") {
    TempDir tmp("emd_rect");
    write_matrix_csv(tmp.sub("cost.csv"), matrix_t::Zero(2, 3));

    SolveOtArgs args;
    args.problem = "emd";
    args.cost_path = tmp.sub("cost.csv");
    args.plan_out = tmp.sub("plan.csv");

    std::ostringstream out, err;
    CHECK(cmd_solve_ot(args, out, err) == kExitOk);
    CHECK(value_after(out.str(), "objective ") <= 1e-15);
    const matrix_t plan = read_matrix_csv(args.plan_out);
    for (index_t i = 0; i < plan.rows(); ++i)
        CHECK(plan.row(i).sum() == doctest::Approx(0.5).epsilon(1e-12));
    for (index_t j = 0; j < plan.cols(); ++j)
        CHECK(plan.col(j).sum() == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

    args.oracle = true;
    std::ostringstream out2, err2;
    CHECK(cmd_solve_ot(args, out2, err2) == kExitInput);
    CHECK(contains(err2.str(), "square"));
}

TEST_CASE("cmd_solve_ot: gw and fgw on identical spaces") {
    TempDir tmp("gw");
    std::mt19937_64 rng(21);
    const matrix_t d = test_util::random_dist_matrix(rng, 3);
    write_matrix_csv(tmp.sub("a.csv"), d);
    write_matrix_csv(tmp.sub("b.csv"), d);
    write_matrix_csv(tmp.sub("ab.csv"), matrix_t::Zero(3, 3));

    SolveOtArgs args;
    args.problem = "gw";
    args.a_path = tmp.sub("a.csv");
    args.b_path = tmp.sub("b.csv");
    args.plan_out = tmp.sub("plan.csv");
    args.oracle = true;

    std::ostringstream out, err;
    CHECK(cmd_solve_ot(args, out, err) == kExitOk);
    CHECK(value_after(out.str(), "objective ") <= 1e-9);
    CHECK(value_after(out.str(), "oracle ") <= 1e-9);

    args.problem = "fgw";
    args.ab_path = tmp.sub("ab.csv");
    args.oracle = false;
    std::ostringstream out2, err2;
    CHECK(cmd_solve_ot(args, out2, err2) == kExitOk);
    CHECK(value_after(out2.str(), "objective ") <= 1e-9);
}

TEST_CASE("cmd_solve_ot: fused matches a direct solve") {
    TempDir tmp("fused");
    std::mt19937_64 rng(33);
    FusedProblem prob = test_util::random_fused(rng, 3, 4);
    write_matrix_csv(tmp.sub("dx0.csv"), prob.d_x0);
    write_matrix_csv(tmp.sub("dx1.csv"), prob.d_x1);
    write_matrix_csv(tmp.sub("dz0.csv"), prob.d_z0);
    write_matrix_csv(tmp.sub("dz1.csv"), prob.d_z1);
    write_matrix_csv(tmp.sub("dz01.csv"), prob.d_z01);

    SolveOtArgs args;
    args.problem = "fused";
    args.dx0_path = tmp.sub("dx0.csv");
    args.dx1_path = tmp.sub("dx1.csv");
    args.dz0_path = tmp.sub("dz0.csv");
    args.dz1_path = tmp.sub("dz1.csv");
    args.dz01_path = tmp.sub("dz01.csv");
    args.beta = prob.beta;
    args.plan_out = tmp.sub("plan.csv");

    std::ostringstream out, err;
    CHECK(cmd_solve_ot(args, out, err) == kExitOk);

    const TransportPlan start = TransportPlan::product(DiscreteMeasure::uniform(3),
                                                       DiscreteMeasure::uniform(4));
    const auto [plan, report] =
        conditional_gradient(prob, start, detail::kCgMaxIter, detail::kCgTol);
    CHECK(value_after(out.str(), "objective ") == report.final_objective);

    const matrix_t written = read_matrix_csv(args.plan_out);
    REQUIRE(written.rows() == plan.t.rows());
    REQUIRE(written.cols() == plan.t.cols());
    CHECK((written - plan.t).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("cmd_solve_ot: unknown problem is an input error") {
    SolveOtArgs args;
    args.problem = "sinkhorn";
    std::ostringstream out, err;
    CHECK(cmd_solve_ot(args, out, err) == kExitInput);
    CHECK(contains(err.str(), "unknown problem"));
}

TEST_CASE("cmd_train: artifacts, summary line, reproducible bytes") {
    TempDir tmp("train");
    write_csv(tmp.sub("data.csv"), small_dataset(40, 7));

    TrainArgs args;
    args.data_path = tmp.sub("data.csv");
    args.out_dir = tmp.sub("runs_a");
    args.overrides = fast_overrides();

    std::ostringstream out, err;
    REQUIRE(cmd_train(args, out, err) == kExitOk);
    const std::string run_dir = args.out_dir + "/gwib-seed0";
    CHECK(contains(out.str(), "run " + run_dir + ": epochs "));
    CHECK(contains(out.str(), "in_pehe_root "));
    for (const char* name : {"manifest.json", "trace.jsonl", "checkpoint.json", "eval.json"})
        CHECK(fs::exists(run_dir + "/" + std::string(name)));
    CHECK_FALSE(fs::exists(args.out_dir + "/aggregate.json"));

    const auto trace_lines = lines_of(slurp(run_dir + "/trace.jsonl"));
    CHECK(trace_lines.size() == 2);
    for (const auto& line : trace_lines) {
        CHECK(contains(line, "\"train_loss\""));
        CHECK(contains(line, "\"gw_diag\""));
    }

    TrainArgs rerun = args;
    rerun.out_dir = tmp.sub("runs_b");
    std::ostringstream out2, err2;
    REQUIRE(cmd_train(rerun, out2, err2) == kExitOk);
    const std::string rerun_dir = rerun.out_dir + "/gwib-seed0";
    CHECK(slurp(run_dir + "/trace.jsonl") == slurp(rerun_dir + "/trace.jsonl"));
    CHECK(slurp(run_dir + "/eval.json") == slurp(rerun_dir + "/eval.json"));
    CHECK(slurp(run_dir + "/checkpoint.json") == slurp(rerun_dir + "/checkpoint.json"));
}

TEST_CASE("cmd_train: multi-seed aggregate") {
    TempDir tmp("train_seeds");
    write_csv(tmp.sub("data.csv"), small_dataset(40, 9));

    TrainArgs args;
    args.data_path = tmp.sub("data.csv");
    args.out_dir = tmp.sub("runs");
    args.seeds = {0, 1};
    args.overrides = fast_overrides();

    std::ostringstream out, err;
    REQUIRE(cmd_train(args, out, err) == kExitOk);
    CHECK(contains(out.str(), "aggregate written to " + args.out_dir + "/aggregate.json"));
    CHECK(fs::exists(args.out_dir + "/gwib-seed0/eval.json"));
    CHECK(fs::exists(args.out_dir + "/gwib-seed1/eval.json"));

    const std::string agg = slurp(args.out_dir + "/aggregate.json");
    for (const char* key : {"\"seeds\"", "\"in\"", "\"out\"", "\"eps_ate\"", "\"eps_pehe_root\"",
                            "\"mean\"", "\"std\"", "\"values\""})
        CHECK(contains(agg, key));
}

TEST_CASE("cmd_train: input errors exit 2") {
    TempDir tmp("train_bad");
    TrainArgs args;
    args.data_path = tmp.sub("absent.csv");
    args.out_dir = tmp.sub("runs");

    std::ostringstream out, err;
    CHECK(cmd_train(args, out, err) == kExitInput);
    CHECK(contains(err.str(), "error: "));

    write_csv(tmp.sub("data.csv"), small_dataset(40, 2));
    TrainArgs bad_cfg;
    bad_cfg.data_path = tmp.sub("data.csv");
    bad_cfg.out_dir = tmp.sub("runs2");
    bad_cfg.overrides = {{"epochs", "0"}};
    std::ostringstream out2, err2;
    CHECK(cmd_train(bad_cfg, out2, err2) == kExitInput);

    TrainArgs no_data;
    no_data.out_dir = tmp.sub("runs3");
    std::ostringstream out3, err3;
    CHECK(cmd_train(no_data, out3, err3) == kExitInput);
    CHECK(contains(err3.str(), "--data is required"));
}

TEST_CASE("cmd_train: divergence exits 3") {
    TempDir tmp("train_div");
    Cohort data = small_dataset(40, 5);
    for (auto& s : data) s.y_factual = 1e9;
    write_csv(tmp.sub("data.csv"), data);

    TrainArgs args;
    args.data_path = tmp.sub("data.csv");
    args.out_dir = tmp.sub("runs");
    args.overrides = fast_overrides();

    std::ostringstream out, err;
    CHECK(cmd_train(args, out, err) == kExitNumerical);
    CHECK(contains(err.str(), "numerical failure: "));
    CHECK(contains(err.str(), "diverged"));
}

TEST_CASE("cmd_ablate: csv over variants and seeds") {
    TempDir tmp("ablate");
    write_csv(tmp.sub("data.csv"), small_dataset(40, 13));

    AblateArgs args;
    args.data_path = tmp.sub("data.csv");
    args.out_dir = tmp.sub("out");
    args.seeds = {0, 1};
    args.overrides = fast_overrides();
    args.overrides.emplace_back("epochs", "1");

    std::ostringstream out, err;
    REQUIRE(cmd_ablate(args, out, err) == kExitOk);
    CHECK(contains(out.str(), "ablation written to " + args.out_dir + "/ablation.csv"));
    CHECK(contains(out.str(), "(6 variants x 2 seeds)"));

    const auto rows = lines_of(slurp(args.out_dir + "/ablation.csv"));
    REQUIRE(rows.size() == 1 + 6 * 4 * 2);
    CHECK(rows[0] == "variant,metric,scope,mean,std");
    int gwib_rows = 0;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        std::istringstream line(rows[i]);
        std::string variant, metric, scope, mean, std_dev;
        REQUIRE(std::getline(line, variant, ','));
        REQUIRE(std::getline(line, metric, ','));
        REQUIRE(std::getline(line, scope, ','));
        REQUIRE(std::getline(line, mean, ','));
        REQUIRE(std::getline(line, std_dev, ','));
        CHECK((scope == "in" || scope == "out"));
        CHECK(std::isfinite(std::stod(mean)));
        CHECK(std::isfinite(std::stod(std_dev)));
        if (variant == "gwib") ++gwib_rows;
    }
    CHECK(gwib_rows == 8);
    CHECK(fs::exists(args.out_dir + "/manifest.json"));
}

TEST_CASE("cmd_ablate: tarnet row block is optional") {
    TempDir tmp("ablate_tarnet");
    write_csv(tmp.sub("data.csv"), small_dataset(40, 17));

    AblateArgs args;
    args.data_path = tmp.sub("data.csv");
    args.out_dir = tmp.sub("out");
    args.seeds = {0};
    args.include_tarnet = true;
    args.overrides = fast_overrides();
    args.overrides.emplace_back("epochs", "1");

    std::ostringstream out, err;
    REQUIRE(cmd_ablate(args, out, err) == kExitOk);
    const auto rows = lines_of(slurp(args.out_dir + "/ablation.csv"));
    CHECK(rows.size() == 1 + 7 * 4 * 2);
    CHECK(contains(slurp(args.out_dir + "/ablation.csv"), "\ntarnet,"));
}

TEST_CASE("cmd_ablate: requires potential outcomes") {
    TempDir tmp("ablate_nomu");
    Cohort data = small_dataset(40, 19);
    for (auto& s : data) {
        s.mu0.reset();
        s.mu1.reset();
    }
    write_csv(tmp.sub("data.csv"), data);

    AblateArgs args;
    args.data_path = tmp.sub("data.csv");
    args.out_dir = tmp.sub("out");

    std::ostringstream out, err;
    CHECK(cmd_ablate(args, out, err) == kExitInput);
    CHECK(contains(err.str(), "lacks potential-outcome"));
}

TEST_CASE("cmd_diagnose: checkpoint mode") {
    TempDir tmp("diag_ckpt");
    write_csv(tmp.sub("data.csv"), small_dataset(30, 23));
    const CfrParams params = init_params(2, 3, 2, 3, 77);
    save_checkpoint(tmp.sub("model.json"), params);

    DiagnoseArgs args;
    args.data_path = tmp.sub("data.csv");
    args.checkpoint_path = tmp.sub("model.json");
    args.out_dir = tmp.sub("out");
    args.overrides = {{"gw_diag_samples", "6"}, {"gw_diag_max_iter", "5"}};

    std::ostringstream out, err;
    REQUIRE(cmd_diagnose(args, out, err) == kExitOk);
    CHECK(contains(out.str(), "diagnosis written to " + args.out_dir + " (1 rows)"));

    const auto loss_rows = lines_of(slurp(args.out_dir + "/gw_loss.csv"));
    REQUIRE(loss_rows.size() == 2);
    CHECK(loss_rows[0] == "label,gw_loss_0,gw_loss_1");
    CHECK(loss_rows[1].rfind("checkpoint,", 0) == 0);

    const auto latent_rows = lines_of(slurp(args.out_dir + "/latents_checkpoint.csv"));
    REQUIRE(latent_rows.size() == 1 + 30);
    CHECK(latent_rows[0] == "split,t,z0,z1");
    int train_rows = 0, val_rows = 0, test_rows = 0;
    for (std::size_t i = 1; i < latent_rows.size(); ++i) {
        if (latent_rows[i].rfind("train,", 0) == 0) ++train_rows;
        if (latent_rows[i].rfind("val,", 0) == 0) ++val_rows;
        if (latent_rows[i].rfind("test,", 0) == 0) ++test_rows;
    }
    CHECK(train_rows == 19);
    CHECK(val_rows == 8);
    CHECK(test_rows == 3);
}

TEST_CASE("cmd_diagnose: lambda sweep mode") {
    TempDir tmp("diag_sweep");
    write_csv(tmp.sub("data.csv"), small_dataset(30, 29));

    DiagnoseArgs args;
    args.data_path = tmp.sub("data.csv");
    args.lambdas = {0.0, 0.5};
    args.out_dir = tmp.sub("out");
    args.overrides = fast_overrides();
    args.overrides.emplace_back("epochs", "1");

    std::ostringstream out, err;
    REQUIRE(cmd_diagnose(args, out, err) == kExitOk);
    CHECK(contains(out.str(), "(2 rows)"));

    const auto loss_rows = lines_of(slurp(args.out_dir + "/gw_loss.csv"));
    REQUIRE(loss_rows.size() == 3);
    CHECK(loss_rows[1].rfind("0,", 0) == 0);
    CHECK(loss_rows[2].rfind("0.5,", 0) == 0);
    CHECK(fs::exists(args.out_dir + "/latents_lambda0.csv"));
    CHECK(fs::exists(args.out_dir + "/latents_lambda0.5.csv"));
}

TEST_CASE("cmd_diagnose: exactly one mode") {
    TempDir tmp("diag_mode");
    write_csv(tmp.sub("data.csv"), small_dataset(30, 31));

    DiagnoseArgs neither;
    neither.data_path = tmp.sub("data.csv");
    neither.out_dir = tmp.sub("out");
    std::ostringstream out, err;
    CHECK(cmd_diagnose(neither, out, err) == kExitInput);
    CHECK(contains(err.str(), "exactly one of"));

    DiagnoseArgs both = neither;
    both.checkpoint_path = tmp.sub("model.json");
    both.lambdas = {0.1};
    std::ostringstream out2, err2;
    CHECK(cmd_diagnose(both, out2, err2) == kExitInput);
}

TEST_CASE("run_once: split sizes and finite reports") {
    const Cohort data = small_dataset(40, 11);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 16;
    cfg.d_phi1 = 3;
    cfg.d_phi2 = 2;
    cfg.d_h = 3;
    cfg.dropout = 0.0;
    cfg.max_reg_samples = 8;
    cfg.gw_diag_samples = 6;
    cfg.gw_diag_max_iter = 5;
    cfg.cg_max_iter = 15;
    cfg.lambda = 0.1;
    cfg.validate();

    const RunOutcome outcome = run_once(data, cfg);
    CHECK(outcome.result.trace.size() == 2);
    CHECK(outcome.in_report.scope == "in");
    CHECK(outcome.out_report.scope == "out");
    CHECK(outcome.in_report.n == 36);
    CHECK(outcome.out_report.n == 4);
    CHECK(std::isfinite(outcome.in_report.eps_pehe_root));
    CHECK(std::isfinite(outcome.out_report.eps_pehe_root));
    for (int g = 0; g < 2; ++g) {
        CHECK(outcome.gw_loss_in[g] >= -1e-8);
        CHECK(outcome.gw_loss_out[g] >= -1e-8);
    }
}
