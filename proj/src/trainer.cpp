#include "gwib/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <utility>

#include "gwib/ot.hpp"

namespace gwib {

Variant variant_from_string(const std::string& name) {
    for (Variant v : all_variants())
        if (to_string(v) == name) return v;
    throw InvalidInput("unknown variant: " + name);
}

std::string to_string(Variant v) {
    switch (v) {
        case Variant::gwib: return "gwib";
        case Variant::gwib_fgw: return "gwib_fgw";
        case Variant::gwib_rt: return "gwib_rt";
        case Variant::gwib_gw: return "gwib_gw";
        case Variant::gwib_gap: return "gwib_gap";
        case Variant::gwib_opt: return "gwib_opt";
        case Variant::tarnet: return "tarnet";
        case Variant::cfr_wass: return "cfr_wass";
    }
    throw InvalidInput("unknown variant value");
}

const std::vector<Variant>& all_variants() {
    static const std::vector<Variant> order = {
        Variant::gwib,     Variant::gwib_fgw, Variant::gwib_rt,  Variant::gwib_gw,
        Variant::gwib_gap, Variant::gwib_opt, Variant::tarnet,   Variant::cfr_wass,
    };
    return order;
}

void TrainConfig::validate() const {
    require(lr >= 1e-5 && lr <= 1e-1, "config: lr must be in [1e-5, 1e-1]");
    require(batch_size == 16 || batch_size == 32 || batch_size == 64 || batch_size == 128,
            "config: batch_size must be one of 16, 32, 64, 128");
    require(lambda >= 0.0 && lambda <= 1.0, "config: lambda must be in [0, 1]");
    require(beta >= 0.1 && beta <= 0.9, "config: beta must be in [0.1, 0.9]");
    require(d_phi1 >= 1 && d_phi2 >= 1 && d_h >= 1, "config: layer widths must be >= 1");
    require(epochs >= 1, "config: epochs must be >= 1");
    require(patience >= 1, "config: patience must be >= 1");
    require(cg_max_iter >= 1, "config: cg_max_iter must be >= 1");
    require(cg_tol > 0.0, "config: cg_tol must be positive");
    require(plan_scope == "full_epoch", "config: plan_scope must be full_epoch");
    require(optimizer == "adam" || optimizer == "sgd",
            "config: optimizer must be adam or sgd");
    require(dropout >= 0.0 && dropout < 1.0, "config: dropout must be in [0, 1)");
    require(max_reg_samples >= 2, "config: max_reg_samples must be >= 2");
    require(gw_diag_samples >= 2, "config: gw_diag_samples must be >= 2");
    require(gw_diag_max_iter >= 1, "config: gw_diag_max_iter must be >= 1");
}

namespace {

std::string trim(const std::string& s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string::npos) return "";
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

long long parse_int(const std::string& key, const std::string& value) {
    std::size_t pos = 0;
    long long out = 0;
    try {
        out = std::stoll(value, &pos);
    } catch (const std::exception&) {
        throw InvalidInput("config: bad integer for " + key + ": '" + value + "'");
    }
    if (pos != value.size())
        throw InvalidInput("config: bad integer for " + key + ": '" + value + "'");
    return out;
}

scalar_t parse_real(const std::string& key, const std::string& value) {
    std::size_t pos = 0;
    scalar_t out = 0.0;
    try {
        out = std::stod(value, &pos);
    } catch (const std::exception&) {
        throw InvalidInput("config: bad number for " + key + ": '" + value + "'");
    }
    if (pos != value.size())
        throw InvalidInput("config: bad number for " + key + ": '" + value + "'");
    return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw InvalidInput("config: bad boolean for " + key + ": '" + value + "'");
}

}  // namespace

void set_config_key(TrainConfig& cfg, const std::string& key, const std::string& value) {
    if (key == "lr") cfg.lr = parse_real(key, value);
    else if (key == "batch_size") cfg.batch_size = parse_int(key, value);
    else if (key == "lambda") cfg.lambda = parse_real(key, value);
    else if (key == "beta") cfg.beta = parse_real(key, value);
    else if (key == "d_phi1") cfg.d_phi1 = parse_int(key, value);
    else if (key == "d_phi2") cfg.d_phi2 = parse_int(key, value);
    else if (key == "d_h") cfg.d_h = parse_int(key, value);
    else if (key == "epochs") cfg.epochs = static_cast<int>(parse_int(key, value));
    else if (key == "patience") cfg.patience = static_cast<int>(parse_int(key, value));
    else if (key == "cg_max_iter") cfg.cg_max_iter = static_cast<int>(parse_int(key, value));
    else if (key == "cg_tol") cfg.cg_tol = parse_real(key, value);
    else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(parse_int(key, value));
    else if (key == "variant") cfg.variant = variant_from_string(value);
    else if (key == "squared_gw_costs") cfg.squared_gw_costs = parse_bool(key, value);
    else if (key == "plan_scope") cfg.plan_scope = value;
    else if (key == "optimizer") cfg.optimizer = value;
    else if (key == "dropout") cfg.dropout = parse_real(key, value);
    else if (key == "bounded_latent") cfg.bounded_latent = parse_bool(key, value);
    else if (key == "max_reg_samples") cfg.max_reg_samples = parse_int(key, value);
    else if (key == "gw_diag_samples") cfg.gw_diag_samples = parse_int(key, value);
    else if (key == "gw_diag_max_iter")
        cfg.gw_diag_max_iter = static_cast<int>(parse_int(key, value));
    else throw InvalidInput("config: unknown key '" + key + "'");
}

TrainConfig parse_train_config(const std::string& text) {
    TrainConfig cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw InvalidInput("config: line " + std::to_string(lineno) +
                               " is not a key=value pair");
        set_config_key(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return cfg;
}

VariantRecipe apply_variant(const TrainConfig& cfg) {
    VariantRecipe r;
    switch (cfg.variant) {
        case Variant::gwib: r.kind = RegKind::gwib; break;
        case Variant::gwib_fgw: r.kind = RegKind::gwib_fgw; break;
        case Variant::gwib_rt: r.kind = RegKind::gwib_rt; break;
        case Variant::gwib_gw: r.kind = RegKind::gwib_gw; break;
        case Variant::gwib_gap: r.kind = RegKind::gwib_gap; break;
        case Variant::gwib_opt: r.kind = RegKind::gwib_opt; break;
        case Variant::cfr_wass: r.kind = RegKind::cfr_wass; break;
        case Variant::tarnet: r.uses_regularizer = false; break;
    }
    return r;
}

namespace {

// Evenly spaced row picks keep the subsample deterministic without touching
// the training RNG stream (crucial for trace parity across variants).
std::vector<index_t> stride_rows(index_t n, index_t cap) {
    std::vector<index_t> rows;
    if (n <= cap) {
        rows.resize(static_cast<std::size_t>(n));
        std::iota(rows.begin(), rows.end(), index_t{0});
        return rows;
    }
    rows.reserve(static_cast<std::size_t>(cap));
    for (index_t i = 0; i < cap; ++i) rows.push_back(i * n / cap);
    return rows;
}

matrix_t gather_rows(const matrix_t& x, const std::vector<index_t>& rows) {
    matrix_t out(static_cast<index_t>(rows.size()), x.cols());
    for (std::size_t k = 0; k < rows.size(); ++k) out.row(static_cast<index_t>(k)) = x.row(rows[k]);
    return out;
}

Batch gather_batch(const Batch& full, const std::vector<index_t>& rows) {
    Batch b;
    b.x = gather_rows(full.x, rows);
    b.y.resize(static_cast<index_t>(rows.size()));
    b.t.reserve(rows.size());
    for (std::size_t k = 0; k < rows.size(); ++k) {
        b.y[static_cast<index_t>(k)] = full.y[rows[k]];
        b.t.push_back(full.t[static_cast<std::size_t>(rows[k])]);
    }
    return b;
}

// Same hand-rolled Fisher-Yates as the dataset splitter, so traces do not
// depend on the standard library's shuffle implementation.
void shuffle_rows(std::vector<index_t>& rows, std::mt19937_64& rng) {
    for (std::size_t i = rows.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng() % i);
        std::swap(rows[i - 1], rows[j]);
    }
}

matrix_t intra_dist(const matrix_t& pts, bool squared) {
    return squared ? pairwise_sq_dist(pts) : pairwise_dist(pts);
}

struct AdamState {
    vector_t m, v;
    scalar_t b1_pow = 1.0, b2_pow = 1.0;
};

void optimizer_step(const TrainConfig& cfg, vector_t& flat, const vector_t& grad,
                    AdamState& adam) {
    if (cfg.optimizer == "sgd") {
        flat -= cfg.lr * grad;
        return;
    }
    constexpr scalar_t b1 = 0.9, b2 = 0.999, eps = 1e-8;
    adam.m = b1 * adam.m + (1.0 - b1) * grad;
    adam.v = b2 * adam.v + (1.0 - b2) * grad.cwiseProduct(grad);
    adam.b1_pow *= b1;
    adam.b2_pow *= b2;
    const vector_t m_hat = adam.m / (1.0 - adam.b1_pow);
    const vector_t v_hat = adam.v / (1.0 - adam.b2_pow);
    flat.array() -= cfg.lr * m_hat.array() / (v_hat.array().sqrt() + eps);
}

void check_loss(scalar_t loss, int epoch, const char* which) {
    if (!std::isfinite(loss) || std::abs(loss) > 1e12)
        throw NumericalError(std::string("training diverged at epoch ") +
                             std::to_string(epoch) + " (" + which + " loss)");
}

}  // namespace

TrainResult train(const Cohort& train_split, const Cohort& val_split, const TrainConfig& cfg) {
    cfg.validate();
    require(!train_split.empty(), "train: empty training split");
    require(!val_split.empty(), "train: empty validation split");

    const Batch full = to_batch(train_split);
    const Batch val_batch = to_batch(val_split);
    const index_t n = full.x.rows();

    const matrix_t x0_all = group_covariates(train_split, 0);
    const matrix_t x1_all = group_covariates(train_split, 1);
    require(x0_all.rows() >= 1 && x1_all.rows() >= 1,
            "train: each treatment group needs at least one sample");

    const VariantRecipe recipe = apply_variant(cfg);
    const bool reg_active = recipe.uses_regularizer && cfg.lambda > 0.0;
    const bool sq = cfg.squared_gw_costs;

    std::mt19937_64 rng(cfg.seed);
    CfrParams params = init_params(full.x.cols(), cfg.d_phi1, cfg.d_phi2, cfg.d_h, rng(),
                                   cfg.dropout, cfg.bounded_latent);

    // Covariate-side matrices never change; build the capped regularizer and
    // diagnostic views once.
    const matrix_t x0r = gather_rows(x0_all, stride_rows(x0_all.rows(), cfg.max_reg_samples));
    const matrix_t x1r = gather_rows(x1_all, stride_rows(x1_all.rows(), cfg.max_reg_samples));
    matrix_t d_x0r, d_x1r;
    if (reg_active) {
        d_x0r = intra_dist(x0r, sq);
        d_x1r = intra_dist(x1r, sq);
    }
    const matrix_t x0d = gather_rows(x0_all, stride_rows(x0_all.rows(), cfg.gw_diag_samples));
    const matrix_t x1d = gather_rows(x1_all, stride_rows(x1_all.rows(), cfg.gw_diag_samples));
    const matrix_t d_x0d = intra_dist(x0d, sq);
    const matrix_t d_x1d = intra_dist(x1d, sq);

    vector_t flat = params.t.flatten();
    AdamState adam{vector_t::Zero(flat.size()), vector_t::Zero(flat.size()), 1.0, 1.0};

    TrainResult result;
    result.best_val_loss = std::numeric_limits<scalar_t>::infinity();

    std::vector<index_t> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), index_t{0});
    const index_t steps = (n + cfg.batch_size - 1) / cfg.batch_size;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        EpochRecord rec;
        rec.epoch = epoch;

        // Plan solve on the epoch-start latents. The recorded cg_report is
        // the shared/fused solve where one exists, the group-0 solve for the
        // per-group variant, and a zero-iteration stub for the plain
        // transport baseline.
        RegPlans plans;
        if (reg_active) {
            const matrix_t z0 = encode(params, x0r);
            const matrix_t z1 = encode(params, x1r);
            const matrix_t d_z0 = intra_dist(z0, sq);
            const matrix_t d_z1 = intra_dist(z1, sq);
            const matrix_t d_z01 = pairwise_sq_dist(z0, z1);
            switch (recipe.kind) {
                case RegKind::gwib:
                case RegKind::gwib_fgw:
                case RegKind::gwib_rt:
                case RegKind::gwib_gw: {
                    FusedProblem prob{d_x0r, d_x1r, d_z0, d_z1, d_z01, cfg.beta};
                    const TransportPlan start = TransportPlan::product(
                        DiscreteMeasure::uniform(prob.n0()), DiscreteMeasure::uniform(prob.n1()));
                    auto [plan, rep] =
                        conditional_gradient(prob, start, cfg.cg_max_iter, cfg.cg_tol);
                    plans.shared = std::move(plan);
                    rec.cg_report = std::move(rep);
                    break;
                }
                case RegKind::gwib_gap: {
                    CgReport rep0;
                    plans.group0 = gw_discrepancy(d_x0r, d_z0, 1, cfg.cg_max_iter, cfg.cg_tol,
                                                  &rep0)
                                       .second;
                    plans.group1 =
                        gw_discrepancy(d_x1r, d_z1, 1, cfg.cg_max_iter, cfg.cg_tol).second;
                    rec.cg_report = std::move(rep0);
                    break;
                }
                case RegKind::gwib_opt: {
                    CgReport rep;
                    plans.fgw = fgw_discrepancy(d_z0, d_z1, d_z01, cfg.beta, 1,
                                                cfg.cg_max_iter, cfg.cg_tol, &rep)
                                    .second;
                    plans.cross0 =
                        gw_discrepancy(d_x0r, d_z1, 1, cfg.cg_max_iter, cfg.cg_tol).second;
                    plans.cross1 =
                        gw_discrepancy(d_x1r, d_z0, 1, cfg.cg_max_iter, cfg.cg_tol).second;
                    rec.cg_report = std::move(rep);
                    break;
                }
                case RegKind::cfr_wass: {
                    plans.shared = solve_emd(d_z01, DiscreteMeasure::uniform(d_z01.rows()),
                                             DiscreteMeasure::uniform(d_z01.cols()));
                    rec.cg_report.converged = true;
                    rec.cg_report.final_objective = wasserstein_term(d_z01, plans.shared);
                    rec.cg_report.objective_trace.push_back(rec.cg_report.final_objective);
                    break;
                }
            }
        }

        shuffle_rows(order, rng);
        scalar_t loss_sum = 0.0;
        for (index_t s = 0; s < steps; ++s) {
            const std::uint64_t step_seed = rng();
            const index_t lo = s * cfg.batch_size;
            const index_t hi = std::min(n, lo + cfg.batch_size);
            const std::vector<index_t> rows(order.begin() + lo, order.begin() + hi);
            const Batch batch = gather_batch(full, rows);

            const LossGrad lg = loss_grad(params, batch, true, step_seed);
            check_loss(lg.loss, epoch, "train");
            loss_sum += lg.loss;
            vector_t grad = lg.grad.flatten();
            if (reg_active) {
                const RegEval re =
                    regularizer_grad(params, x0r, x1r, recipe.kind, plans, cfg.beta, sq);
                grad += cfg.lambda * re.grad.flatten();
                // First step sees the epoch-start parameters, matching the
                // plan solve above.
                if (s == 0) rec.regularizer = re.breakdown;
            }
            optimizer_step(cfg, flat, grad, adam);
            params.t.set_flat(flat);
        }
        rec.train_loss = loss_sum / static_cast<scalar_t>(steps);

        rec.val_loss = factual_loss(params, val_batch);
        check_loss(rec.val_loss, epoch, "validation");

        rec.gw_diag_0 =
            gw_discrepancy(d_x0d, intra_dist(encode(params, x0d), sq), 1,
                           cfg.gw_diag_max_iter, cfg.cg_tol)
                .first;
        rec.gw_diag_1 =
            gw_discrepancy(d_x1d, intra_dist(encode(params, x1d), sq), 1,
                           cfg.gw_diag_max_iter, cfg.cg_tol)
                .first;

        result.trace.push_back(rec);

        if (rec.val_loss < result.best_val_loss) {
            result.best_val_loss = rec.val_loss;
            result.best_epoch = epoch;
            result.params = params;
        }
        if (epoch - result.best_epoch >= cfg.patience) break;
    }
    return result;
}

}  // namespace gwib
