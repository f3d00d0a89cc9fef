#include "cli_lib.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "gwib/matrix_io.hpp"
#include "gwib/ot.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace gwib::cli {

namespace {

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << content;
    if (!out) throw IoError("failed writing " + path);
}

std::string now_utc() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

ordered_json config_json(const TrainConfig& cfg) {
    ordered_json j;
    j["lr"] = cfg.lr;
    j["batch_size"] = cfg.batch_size;
    j["lambda"] = cfg.lambda;
    j["beta"] = cfg.beta;
    j["d_phi1"] = cfg.d_phi1;
    j["d_phi2"] = cfg.d_phi2;
    j["d_h"] = cfg.d_h;
    j["epochs"] = cfg.epochs;
    j["patience"] = cfg.patience;
    j["cg_max_iter"] = cfg.cg_max_iter;
    j["cg_tol"] = cfg.cg_tol;
    j["seed"] = cfg.seed;
    j["variant"] = to_string(cfg.variant);
    j["squared_gw_costs"] = cfg.squared_gw_costs;
    j["plan_scope"] = cfg.plan_scope;
    j["optimizer"] = cfg.optimizer;
    j["dropout"] = cfg.dropout;
    j["bounded_latent"] = cfg.bounded_latent;
    j["max_reg_samples"] = cfg.max_reg_samples;
    j["gw_diag_samples"] = cfg.gw_diag_samples;
    j["gw_diag_max_iter"] = cfg.gw_diag_max_iter;
    return j;
}

// The manifest precedes all computation so aborted runs stay attributable.
// Its timestamp is the one deliberately non-reproducible artifact byte;
// result files carry no time information.
void write_manifest(const std::string& dir, const std::string& command,
                    const std::string& data_path, const std::vector<std::uint64_t>& seeds,
                    const TrainConfig& cfg) {
    ordered_json j;
    j["version"] = kVersion;
    j["command"] = command;
    j["data"] = data_path;
    j["out_dir"] = dir;
    j["seeds"] = seeds;
    j["config"] = config_json(cfg);
    j["created"] = now_utc();
    write_text_file(dir + "/manifest.json", j.dump(2) + "\n");
}

ordered_json report_json(const EvalReport& r) {
    ordered_json j;
    j["scope"] = r.scope;
    j["n"] = r.n;
    j["eps_ate"] = r.eps_ate;
    j["eps_pehe"] = r.eps_pehe;
    j["eps_pehe_root"] = r.eps_pehe_root;
    return j;
}

ordered_json trace_json(const EpochRecord& rec) {
    ordered_json j;
    j["epoch"] = rec.epoch;
    j["train_loss"] = rec.train_loss;
    j["val_loss"] = rec.val_loss;
    j["reg"] = {{"r0", rec.regularizer.r0},
                {"r1", rec.regularizer.r1},
                {"fgw", rec.regularizer.fgw_at_plan},
                {"gw0", rec.regularizer.gw0_at_plan},
                {"gw1", rec.regularizer.gw1_at_plan},
                {"total", rec.regularizer.total}};
    j["cg"] = {{"iterations", rec.cg_report.iterations},
               {"converged", rec.cg_report.converged},
               {"final", rec.cg_report.final_objective}};
    j["gw_diag"] = {rec.gw_diag_0, rec.gw_diag_1};
    return j;
}

void write_trace(const std::string& path, const std::vector<EpochRecord>& trace) {
    std::ostringstream out;
    for (const auto& rec : trace) out << trace_json(rec).dump() << "\n";
    write_text_file(path, out.str());
}

struct MeanStd {
    scalar_t mean = 0.0, std = 0.0;
};

MeanStd mean_std(const std::vector<scalar_t>& v) {
    MeanStd ms;
    if (v.empty()) return ms;
    ms.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<scalar_t>(v.size());
    if (v.size() < 2) return ms;
    scalar_t acc = 0.0;
    for (scalar_t x : v) acc += (x - ms.mean) * (x - ms.mean);
    ms.std = std::sqrt(acc / static_cast<scalar_t>(v.size() - 1));
    return ms;
}

bool has_effects(const Cohort& data) {
    for (const auto& s : data)
        if (!s.mu0.has_value() || !s.mu1.has_value()) return false;
    return !data.empty();
}

// Index-strided worker pool; exceptions are kept per slot and the
// lowest-index one is rethrown, so failures are reported stably.
void parallel_for(int jobs, const std::function<void(int)>& body) {
    const int workers = thread_budget(jobs);
    if (workers <= 1) {
        for (int i = 0; i < jobs; ++i) body(i);
        return;
    }
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(jobs));
    std::atomic<bool> bail{false};
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            for (int i = w; i < jobs; i += workers) {
                if (bail.load()) return;
                try {
                    body(i);
                } catch (...) {
                    errors[static_cast<std::size_t>(i)] = std::current_exception();
                    bail.store(true);
                    return;
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);
}

int guard(std::ostream& err, const std::function<void()>& body) {
    try {
        body();
        return kExitOk;
    } catch (const InvalidInput& e) {
        err << "error: " << e.what() << "\n";
    } catch (const SchemaError& e) {
        err << "error: " << e.what() << "\n";
    } catch (const ParseError& e) {
        err << "error: " << e.what() << "\n";
    } catch (const IoError& e) {
        err << "error: " << e.what() << "\n";
    } catch (const fs::filesystem_error& e) {
        err << "error: " << e.what() << "\n";
    } catch (const NumericalError& e) {
        err << "numerical failure: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const SolverFailure& e) {
        err << "numerical failure: " << e.what() << "\n";
        return kExitNumerical;
    }
    return kExitInput;
}

scalar_t min_over_permutations(index_t n,
                               const std::function<scalar_t(const TransportPlan&)>& value) {
    std::vector<index_t> sigma(static_cast<std::size_t>(n));
    std::iota(sigma.begin(), sigma.end(), index_t{0});
    scalar_t best = std::numeric_limits<scalar_t>::infinity();
    do {
        best = std::min(best, value(detail::permutation_plan(sigma)));
    } while (std::next_permutation(sigma.begin(), sigma.end()));
    return best;
}

int auto_restarts(index_t na, index_t nb, int requested) {
    if (requested > 0) return requested;
    return (na == nb && na <= 6) ? 721 : 1;
}

}  // namespace

int thread_budget(int jobs) {
    if (jobs < 1) return 1;
    int cap = static_cast<int>(std::thread::hardware_concurrency());
    if (cap < 1) cap = 1;
    if (const char* env = std::getenv("GWIB_THREADS")) {
        try {
            cap = std::max(1, std::stoi(env));
        } catch (const std::exception&) {
            throw InvalidInput(std::string("GWIB_THREADS is not a number: ") + env);
        }
    }
    return std::min(cap, jobs);
}

TrainConfig build_config(const std::string& config_path,
                         const std::vector<std::pair<std::string, std::string>>& overrides) {
    TrainConfig cfg;
    if (!config_path.empty()) cfg = parse_train_config(read_text_file(config_path));
    for (const auto& [key, value] : overrides) set_config_key(cfg, key, value);
    cfg.validate();
    return cfg;
}

Cohort diagnostic_subset(const Cohort& samples, index_t per_group_cap) {
    require(per_group_cap >= 1, "diagnostic_subset: cap must be >= 1");
    std::array<std::vector<std::size_t>, 2> rows;
    for (std::size_t i = 0; i < samples.size(); ++i)
        rows[static_cast<std::size_t>(samples[i].t)].push_back(i);
    Cohort out;
    for (const auto& group : rows) {
        const index_t n = static_cast<index_t>(group.size());
        const index_t take = std::min(n, per_group_cap);
        for (index_t k = 0; k < take; ++k)
            out.push_back(samples[group[static_cast<std::size_t>(k * n / take)]]);
    }
    return out;
}

RunOutcome run_once(const Cohort& data, const TrainConfig& cfg) {
    SplitSpec spec;
    spec.seed = cfg.seed;
    Splits splits = split(data, spec);
    const Scaler scaler = Scaler::fit(splits.train);
    scaler.apply(splits.train);
    scaler.apply(splits.val);
    scaler.apply(splits.test);

    RunOutcome outcome;
    outcome.result = train(splits.train, splits.val, cfg);

    Cohort in_cohort = splits.train;
    in_cohort.insert(in_cohort.end(), splits.val.begin(), splits.val.end());
    const Cohort& out_cohort = splits.test;

    if (has_effects(data)) {
        outcome.in_report = eval_ite(outcome.result.params, in_cohort, "in");
        outcome.out_report = eval_ite(outcome.result.params, out_cohort, "out");
    } else {
        outcome.in_report.scope = "in";
        outcome.out_report.scope = "out";
    }

    const Cohort in_diag = diagnostic_subset(in_cohort, cfg.gw_diag_samples);
    const Cohort out_diag = diagnostic_subset(out_cohort, cfg.gw_diag_samples);
    for (int g = 0; g < 2; ++g) {
        const auto group_present = [&](const Cohort& c) {
            return std::any_of(c.begin(), c.end(), [&](const CohortSample& s) { return s.t == g; });
        };
        outcome.gw_loss_in[g] =
            group_present(in_diag) ? gw_information_loss(outcome.result.params, in_diag, g, 0,
                                                         cfg.squared_gw_costs,
                                                         cfg.gw_diag_max_iter)
                                   : 0.0;
        outcome.gw_loss_out[g] =
            group_present(out_diag) ? gw_information_loss(outcome.result.params, out_diag, g, 0,
                                                          cfg.squared_gw_costs,
                                                          cfg.gw_diag_max_iter)
                                    : 0.0;
    }
    return outcome;
}

namespace {

ordered_json eval_json(const RunOutcome& o) {
    ordered_json j;
    j["in"] = report_json(o.in_report);
    j["out"] = report_json(o.out_report);
    j["gw_loss_in"] = {o.gw_loss_in[0], o.gw_loss_in[1]};
    j["gw_loss_out"] = {o.gw_loss_out[0], o.gw_loss_out[1]};
    j["best_epoch"] = o.result.best_epoch;
    j["best_val_loss"] = o.result.best_val_loss;
    j["epochs_run"] = o.result.trace.size();
    return j;
}

}  // namespace

int cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err) {
    return guard(err, [&] {
        require(!args.data_path.empty(), "train: --data is required");
        const TrainConfig base = build_config(args.config_path, args.overrides);
        std::vector<std::uint64_t> seeds = args.seeds;
        if (seeds.empty()) seeds.push_back(base.seed);

        const Cohort data = load_csv(args.data_path);

        std::vector<std::string> run_dirs;
        for (std::uint64_t seed : seeds) {
            const std::string dir = args.out_dir + "/" + to_string(base.variant) + "-seed" +
                                    std::to_string(seed);
            fs::create_directories(dir);
            TrainConfig cfg = base;
            cfg.seed = seed;
            write_manifest(dir, "train", args.data_path, {seed}, cfg);
            run_dirs.push_back(dir);
        }

        std::vector<RunOutcome> outcomes(seeds.size());
        parallel_for(static_cast<int>(seeds.size()), [&](int i) {
            TrainConfig cfg = base;
            cfg.seed = seeds[static_cast<std::size_t>(i)];
            RunOutcome o = run_once(data, cfg);
            const std::string& dir = run_dirs[static_cast<std::size_t>(i)];
            write_trace(dir + "/trace.jsonl", o.result.trace);
            save_checkpoint(dir + "/checkpoint.json", o.result.params);
            write_text_file(dir + "/eval.json", eval_json(o).dump(2) + "\n");
            outcomes[static_cast<std::size_t>(i)] = std::move(o);
        });

        for (std::size_t i = 0; i < seeds.size(); ++i) {
            const RunOutcome& o = outcomes[i];
            out << "run " << run_dirs[i] << ": epochs " << o.result.trace.size()
                << " best_val " << format_double(o.result.best_val_loss);
            if (o.in_report.n > 0)
                out << " in_pehe_root " << format_double(o.in_report.eps_pehe_root)
                    << " out_pehe_root " << format_double(o.out_report.eps_pehe_root);
            out << "\n";
        }

        if (seeds.size() > 1) {
            ordered_json agg;
            agg["seeds"] = seeds;
            for (const char* scope : {"in", "out"}) {
                ordered_json section;
                const bool in_scope = std::string(scope) == "in";
                const auto pick = [&](const RunOutcome& o) -> const EvalReport& {
                    return in_scope ? o.in_report : o.out_report;
                };
                const auto field = [&](const std::function<scalar_t(const EvalReport&)>& get) {
                    std::vector<scalar_t> v;
                    v.reserve(outcomes.size());
                    for (const auto& o : outcomes) v.push_back(get(pick(o)));
                    const MeanStd ms = mean_std(v);
                    ordered_json f;
                    f["mean"] = ms.mean;
                    f["std"] = ms.std;
                    f["values"] = v;
                    return f;
                };
                section["eps_ate"] = field([](const EvalReport& r) { return r.eps_ate; });
                section["eps_pehe"] = field([](const EvalReport& r) { return r.eps_pehe; });
                section["eps_pehe_root"] =
                    field([](const EvalReport& r) { return r.eps_pehe_root; });
                agg[scope] = section;
            }
            write_text_file(args.out_dir + "/aggregate.json", agg.dump(2) + "\n");
            out << "aggregate written to " << args.out_dir << "/aggregate.json\n";
        }
    });
}

int cmd_solve_ot(const SolveOtArgs& args, std::ostream& out, std::ostream& err) {
    return guard(err, [&] {
        scalar_t objective = 0.0;
        TransportPlan plan;
        std::function<scalar_t(const TransportPlan&)> value_at;  // for --oracle

        if (args.problem == "emd") {
            const matrix_t cost = read_matrix_csv(args.cost_path);
            plan = solve_emd(cost, DiscreteMeasure::uniform(cost.rows()),
                             DiscreteMeasure::uniform(cost.cols()));
            objective = wasserstein_term(cost, plan);
            value_at = [cost](const TransportPlan& t) { return wasserstein_term(cost, t); };
        } else if (args.problem == "gw") {
            const matrix_t a = read_matrix_csv(args.a_path);
            const matrix_t b = read_matrix_csv(args.b_path);
            std::tie(objective, plan) =
                gw_discrepancy(a, b, auto_restarts(a.rows(), b.rows(), args.restarts));
            value_at = [a, b](const TransportPlan& t) { return gw_objective(a, b, t); };
        } else if (args.problem == "fgw") {
            const matrix_t a = read_matrix_csv(args.a_path);
            const matrix_t b = read_matrix_csv(args.b_path);
            const matrix_t ab = read_matrix_csv(args.ab_path);
            const scalar_t beta = args.beta;
            std::tie(objective, plan) = fgw_discrepancy(
                a, b, ab, beta, auto_restarts(a.rows(), b.rows(), args.restarts));
            value_at = [a, b, ab, beta](const TransportPlan& t) {
                return (1.0 - beta) * wasserstein_term(ab, t) + beta * gw_objective(a, b, t);
            };
        } else if (args.problem == "fused") {
            FusedProblem prob;
            prob.d_x0 = read_matrix_csv(args.dx0_path);
            prob.d_x1 = read_matrix_csv(args.dx1_path);
            prob.d_z0 = read_matrix_csv(args.dz0_path);
            prob.d_z1 = read_matrix_csv(args.dz1_path);
            prob.d_z01 = read_matrix_csv(args.dz01_path);
            prob.beta = args.beta;
            prob.validate();
            const TransportPlan start = TransportPlan::product(
                DiscreteMeasure::uniform(prob.n0()), DiscreteMeasure::uniform(prob.n1()));
            auto [solved, report] =
                conditional_gradient(prob, start, detail::kCgMaxIter, detail::kCgTol);
            plan = std::move(solved);
            objective = report.final_objective;
            value_at = [prob](const TransportPlan& t) { return fused_objective(prob, t); };
        } else {
            throw InvalidInput("solve-ot: unknown problem '" + args.problem +
                               "' (expected emd, gw, fgw or fused)");
        }

        out << "objective " << format_double(objective) << "\n";
        write_matrix_csv(args.plan_out, plan.t);
        out << "plan written to " << args.plan_out << "\n";

        if (args.oracle) {
            require(plan.t.rows() == plan.t.cols(),
                    "solve-ot: --oracle needs a square problem");
            require(plan.t.rows() <= 6, "solve-ot: --oracle is limited to N <= 6");
            out << "oracle " << format_double(min_over_permutations(plan.t.rows(), value_at))
                << "\n";
        }
    });
}

namespace {

struct AblationCell {
    std::vector<scalar_t> values;  // one per seed
};

}  // namespace

int cmd_ablate(const AblateArgs& args, std::ostream& out, std::ostream& err) {
    return guard(err, [&] {
        require(!args.data_path.empty(), "ablate: --data is required");
        require(!args.seeds.empty(), "ablate: at least one seed is required");
        const TrainConfig base = build_config(args.config_path, args.overrides);
        const Cohort data = load_csv(args.data_path);
        require(has_effects(data), "ablate: dataset lacks potential-outcome columns");

        std::vector<Variant> variants = {Variant::gwib,    Variant::gwib_fgw,
                                         Variant::gwib_rt, Variant::gwib_gw,
                                         Variant::gwib_gap, Variant::gwib_opt};
        if (args.include_tarnet) variants.push_back(Variant::tarnet);

        fs::create_directories(args.out_dir);
        write_manifest(args.out_dir, "ablate", args.data_path, args.seeds, base);

        const int seeds_n = static_cast<int>(args.seeds.size());
        const int jobs = static_cast<int>(variants.size()) * seeds_n;
        std::vector<RunOutcome> outcomes(static_cast<std::size_t>(jobs));
        parallel_for(jobs, [&](int i) {
            TrainConfig cfg = base;
            cfg.variant = variants[static_cast<std::size_t>(i / seeds_n)];
            cfg.seed = args.seeds[static_cast<std::size_t>(i % seeds_n)];
            outcomes[static_cast<std::size_t>(i)] = run_once(data, cfg);
        });

        const std::vector<std::string> metrics = {"eps_ate", "eps_pehe", "eps_pehe_root",
                                                  "gw_loss"};
        const auto metric_value = [](const RunOutcome& o, const std::string& metric,
                                     bool in_scope) -> scalar_t {
            const EvalReport& r = in_scope ? o.in_report : o.out_report;
            if (metric == "eps_ate") return r.eps_ate;
            if (metric == "eps_pehe") return r.eps_pehe;
            if (metric == "eps_pehe_root") return r.eps_pehe_root;
            const scalar_t* gl = in_scope ? o.gw_loss_in : o.gw_loss_out;
            return 0.5 * (gl[0] + gl[1]);
        };

        std::ostringstream csv;
        csv << "variant,metric,scope,mean,std\n";
        for (std::size_t v = 0; v < variants.size(); ++v) {
            for (const auto& metric : metrics) {
                for (const bool in_scope : {true, false}) {
                    std::vector<scalar_t> vals;
                    vals.reserve(static_cast<std::size_t>(seeds_n));
                    for (int s = 0; s < seeds_n; ++s)
                        vals.push_back(metric_value(
                            outcomes[v * static_cast<std::size_t>(seeds_n) +
                                     static_cast<std::size_t>(s)],
                            metric, in_scope));
                    const MeanStd ms = mean_std(vals);
                    csv << to_string(variants[v]) << "," << metric << ","
                        << (in_scope ? "in" : "out") << "," << format_double(ms.mean) << ","
                        << format_double(ms.std) << "\n";
                }
            }
        }
        const std::string csv_path = args.out_dir + "/ablation.csv";
        write_text_file(csv_path, csv.str());
        out << "ablation written to " << csv_path << " (" << variants.size() << " variants x "
            << seeds_n << " seeds)\n";
    });
}

namespace {

void write_latents_csv(const std::string& path, const CfrParams& params, const Splits& splits) {
    std::ostringstream out;
    const index_t d = params.d_latent();
    out << "split,t";
    for (index_t k = 0; k < d; ++k) out << ",z" << k;
    out << "\n";
    const auto emit = [&](const Cohort& cohort, const char* name) {
        if (cohort.empty()) return;
        const matrix_t z = encode(params, to_batch(cohort).x);
        for (index_t i = 0; i < z.rows(); ++i) {
            out << name << "," << cohort[static_cast<std::size_t>(i)].t;
            for (index_t k = 0; k < d; ++k) out << "," << format_double(z(i, k));
            out << "\n";
        }
    };
    emit(splits.train, "train");
    emit(splits.val, "val");
    emit(splits.test, "test");
    write_text_file(path, out.str());
}

}  // namespace

int cmd_diagnose(const DiagnoseArgs& args, std::ostream& out, std::ostream& err) {
    return guard(err, [&] {
        require(!args.data_path.empty(), "diagnose: --data is required");
        const bool have_ckpt = !args.checkpoint_path.empty();
        const bool have_sweep = !args.lambdas.empty();
        require(have_ckpt != have_sweep,
                "diagnose: give exactly one of --checkpoint or --lambdas");
        const TrainConfig base = build_config(args.config_path, args.overrides);
        const Cohort data = load_csv(args.data_path);

        fs::create_directories(args.out_dir);
        write_manifest(args.out_dir, "diagnose", args.data_path, {base.seed}, base);

        // The split/scaler pipeline mirrors training, so a diagnosed
        // checkpoint sees the features it was trained on.
        const auto standardized = [&](const TrainConfig& cfg) {
            SplitSpec s;
            s.seed = cfg.seed;
            Splits sp = split(data, s);
            const Scaler scaler = Scaler::fit(sp.train);
            scaler.apply(sp.train);
            scaler.apply(sp.val);
            scaler.apply(sp.test);
            return sp;
        };

        struct Row {
            std::string label;
            scalar_t loss0 = 0.0, loss1 = 0.0;
        };
        std::vector<Row> rows;

        const auto group_losses = [&](const CfrParams& params, const Splits& sp, Row& row) {
            Cohort whole = sp.train;
            whole.insert(whole.end(), sp.val.begin(), sp.val.end());
            whole.insert(whole.end(), sp.test.begin(), sp.test.end());
            const Cohort diag = diagnostic_subset(whole, base.gw_diag_samples);
            row.loss0 = gw_information_loss(params, diag, 0, 0, base.squared_gw_costs,
                                            base.gw_diag_max_iter);
            row.loss1 = gw_information_loss(params, diag, 1, 0, base.squared_gw_costs,
                                            base.gw_diag_max_iter);
        };

        if (have_ckpt) {
            const CfrParams params = load_checkpoint(args.checkpoint_path);
            const Splits sp = standardized(base);
            Row row;
            row.label = "checkpoint";
            group_losses(params, sp, row);
            rows.push_back(row);
            write_latents_csv(args.out_dir + "/latents_checkpoint.csv", params, sp);
        } else {
            rows.resize(args.lambdas.size());
            std::vector<Splits> splits_per(args.lambdas.size());
            std::vector<CfrParams> params_per(args.lambdas.size());
            parallel_for(static_cast<int>(args.lambdas.size()), [&](int i) {
                TrainConfig cfg = base;
                cfg.lambda = args.lambdas[static_cast<std::size_t>(i)];
                const Splits sp = standardized(cfg);
                const TrainResult res = train(sp.train, sp.val, cfg);
                Row& row = rows[static_cast<std::size_t>(i)];
                row.label = format_double(cfg.lambda);
                group_losses(res.params, sp, row);
                splits_per[static_cast<std::size_t>(i)] = sp;
                params_per[static_cast<std::size_t>(i)] = res.params;
            });
            for (std::size_t i = 0; i < args.lambdas.size(); ++i)
                write_latents_csv(args.out_dir + "/latents_lambda" + rows[i].label + ".csv",
                                  params_per[i], splits_per[i]);
        }

        std::ostringstream csv;
        csv << "label,gw_loss_0,gw_loss_1\n";
        for (const Row& row : rows)
            csv << row.label << "," << format_double(row.loss0) << ","
                << format_double(row.loss1) << "\n";
        write_text_file(args.out_dir + "/gw_loss.csv", csv.str());
        out << "diagnosis written to " << args.out_dir << " (" << rows.size() << " rows)\n";
    });
}

int cmd_gen_synth(const GenSynthArgs& args, std::ostream& out, std::ostream& err) {
    return guard(err, [&] {
        const Cohort data =
            gen_synthetic(args.n, args.dim, args.bias_strength, args.noise_sd, args.seed);
        write_csv(args.out_path, data);
        out << "wrote " << args.out_path << " (" << data.size() << " samples, dim " << args.dim
            << ")\n";
    });
}

}  // namespace gwib::cli
