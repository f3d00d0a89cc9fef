#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "gwib/ot.hpp"

namespace gwib {

DiscreteMeasure DiscreteMeasure::uniform(index_t n) {
    if (n < 1) throw InvalidInput("DiscreteMeasure::uniform: n must be positive");
    DiscreteMeasure m;
    m.w = vector_t::Constant(n, 1.0 / static_cast<scalar_t>(n));
    return m;
}

void DiscreteMeasure::validate() const {
    if (w.size() < 1) throw InvalidInput("DiscreteMeasure: empty");
    if (!w.allFinite() || (w.array() < 0.0).any())
        throw InvalidInput("DiscreteMeasure: weights must be finite and nonnegative");
    if (std::abs(w.sum() - 1.0) > 1e-12)
        throw InvalidInput("DiscreteMeasure: weights must sum to 1");
}

void TransportPlan::validate() const {
    source.validate();
    target.validate();
    if (t.rows() != source.size() || t.cols() != target.size())
        throw InvalidInput("TransportPlan: shape does not match measures");
    require_finite(t, "TransportPlan");
    if ((t.array() < 0.0).any()) throw InvalidInput("TransportPlan: negative entries");
    if ((t.rowwise().sum() - source.w).cwiseAbs().maxCoeff() > 1e-9)
        throw InvalidInput("TransportPlan: row sums drift from source weights");
    if ((t.colwise().sum().transpose() - target.w).cwiseAbs().maxCoeff() > 1e-9)
        throw InvalidInput("TransportPlan: column sums drift from target weights");
}

TransportPlan TransportPlan::product(const DiscreteMeasure& mu, const DiscreteMeasure& nu) {
    TransportPlan p;
    p.t = mu.w * nu.w.transpose();
    p.source = mu;
    p.target = nu;
    return p;
}

namespace {

void check_symmetric_zero_diag(const matrix_t& d, const char* name) {
    if (d.rows() != d.cols())
        throw InvalidInput(std::string(name) + ": must be square");
    require_finite(d, name);
    if ((d - d.transpose()).cwiseAbs().maxCoeff() > 1e-9)
        throw InvalidInput(std::string(name) + ": must be symmetric");
    if (d.diagonal().cwiseAbs().maxCoeff() > 1e-9)
        throw InvalidInput(std::string(name) + ": diagonal must be zero");
}

// Constant (marginal-only) part of a GW block in the factorized form,
// built from the given marginals: C(r, c) = (A.A) r 1' + 1 c' (B.B)'.
matrix_t gw_const(const matrix_t& d_a, const matrix_t& d_b,
                  const vector_t& r, const vector_t& c) {
    const vector_t left = (d_a.array().square().matrix()) * r;
    const vector_t right = (d_b.array().square().matrix()) * c;
    return left.replicate(1, c.size()) + right.transpose().replicate(r.size(), 1);
}

// The quadratic kernel of the fused objective:
// M(T) = D_x0 T D_z1' + D_z0' T D_x1 + beta D_z0 T D_z1'.
// Self-adjoint because all distance matrices are symmetric.
matrix_t fused_m(const FusedProblem& p, const matrix_t& t) {
    return p.d_x0 * t * p.d_z1.transpose() + p.d_z0.transpose() * t * p.d_x1 +
           p.beta * (p.d_z0 * t * p.d_z1.transpose());
}

// Constant matrix K of the fused objective, with C-blocks built from the
// uniform polytope marginals. On feasible plans <K,T> - 2<M(T),T> equals the
// sum of the GW quadruple sums plus the feature term; off the polytope it is
// still a plain quadratic in T, which is what derivative checks differentiate.
matrix_t fused_k(const FusedProblem& p) {
    const vector_t mu = vector_t::Constant(p.n0(), 1.0 / static_cast<scalar_t>(p.n0()));
    const vector_t nu = vector_t::Constant(p.n1(), 1.0 / static_cast<scalar_t>(p.n1()));
    const matrix_t c_x0z1 = gw_const(p.d_x0, p.d_z1, mu, nu);
    const matrix_t c_x1z0 = gw_const(p.d_x1, p.d_z0, nu, mu);
    const matrix_t c_z0z1 = gw_const(p.d_z0, p.d_z1, mu, nu);
    return c_x0z1 + c_x1z0.transpose() + (1.0 - p.beta) * p.d_z01 + p.beta * c_z0z1;
}

void check_plan_shape(const FusedProblem& p, const TransportPlan& plan, const char* who) {
    if (plan.t.rows() != p.n0() || plan.t.cols() != p.n1())
        throw InvalidInput(std::string(who) + ": plan shape does not match problem");
}

std::vector<index_t> identity_perm(index_t n) {
    std::vector<index_t> sigma(n);
    for (index_t i = 0; i < n; ++i) sigma[i] = i;
    return sigma;
}

scalar_t factorial_capped(index_t n, scalar_t cap) {
    scalar_t f = 1.0;
    for (index_t i = 2; i <= n; ++i) {
        f *= static_cast<scalar_t>(i);
        if (f > cap) return f;
    }
    return f;
}

}  // namespace

void FusedProblem::validate() const {
    check_symmetric_zero_diag(d_x0, "FusedProblem.d_x0");
    check_symmetric_zero_diag(d_x1, "FusedProblem.d_x1");
    check_symmetric_zero_diag(d_z0, "FusedProblem.d_z0");
    check_symmetric_zero_diag(d_z1, "FusedProblem.d_z1");
    if (d_z0.rows() != d_x0.rows() || d_z1.rows() != d_x1.rows())
        throw InvalidInput("FusedProblem: group sizes disagree between x and z matrices");
    if (d_z01.rows() != d_x0.rows() || d_z01.cols() != d_x1.rows())
        throw InvalidInput("FusedProblem: d_z01 shape must be N0 x N1");
    require_finite(d_z01, "FusedProblem.d_z01");
    if (!(beta >= 0.0 && beta <= 1.0)) throw InvalidInput("FusedProblem: beta not in [0,1]");
}

scalar_t wasserstein_term(const matrix_t& d_z01, const TransportPlan& plan) {
    if (d_z01.rows() != plan.t.rows() || d_z01.cols() != plan.t.cols())
        throw InvalidInput("wasserstein_term: shape mismatch");
    return d_z01.cwiseProduct(plan.t).sum();
}

scalar_t gw_objective(const matrix_t& d_a, const matrix_t& d_b, const TransportPlan& plan) {
    if (d_a.rows() != d_a.cols() || d_b.rows() != d_b.cols())
        throw InvalidInput("gw_objective: distance matrices must be square");
    if (plan.t.rows() != d_a.rows() || plan.t.cols() != d_b.rows())
        throw InvalidInput("gw_objective: plan shape mismatch");
    const vector_t r = plan.t.rowwise().sum();
    const vector_t c = plan.t.colwise().sum().transpose();
    const scalar_t const_part = r.dot(d_a.array().square().matrix() * r) +
                                c.dot(d_b.array().square().matrix() * c);
    const scalar_t cross = (d_a * plan.t * d_b.transpose()).cwiseProduct(plan.t).sum();
    return const_part - 2.0 * cross;
}

scalar_t fused_objective(const FusedProblem& prob, const TransportPlan& plan) {
    check_plan_shape(prob, plan, "fused_objective");
    const matrix_t k = fused_k(prob);
    const matrix_t m = fused_m(prob, plan.t);
    return (k - 2.0 * m).cwiseProduct(plan.t).sum();
}

matrix_t fused_gradient(const FusedProblem& prob, const TransportPlan& plan) {
    check_plan_shape(prob, plan, "fused_gradient");
    // The objective is <K,T> - 2<M(T),T> with M linear and self-adjoint,
    // so the exact derivative carries a factor 4 on the quadratic part.
    return fused_k(prob) - 4.0 * fused_m(prob, plan.t);
}

scalar_t line_search(const FusedProblem& prob, const TransportPlan& t_cur,
                     const TransportPlan& t_dir) {
    check_plan_shape(prob, t_cur, "line_search");
    if (t_dir.t.rows() != t_cur.t.rows() || t_dir.t.cols() != t_cur.t.cols())
        throw InvalidInput("line_search: plan shapes disagree");
    const matrix_t delta = t_dir.t - t_cur.t;
    // g(tau) = g(0) + b tau + a tau^2 along T + tau*Delta.
    const scalar_t a = -2.0 * fused_m(prob, delta).cwiseProduct(delta).sum();
    const scalar_t b = fused_gradient(prob, t_cur).cwiseProduct(delta).sum();
    if (a > 0.0) return std::clamp(-b / (2.0 * a), 0.0, 1.0);
    return (a + b < 0.0) ? 1.0 : 0.0;
}

std::pair<TransportPlan, CgReport> conditional_gradient(const FusedProblem& prob,
                                                        const TransportPlan& t_init,
                                                        int max_iter, scalar_t tol) {
    prob.validate();
    t_init.validate();
    check_plan_shape(prob, t_init, "conditional_gradient");
    if (max_iter < 1) throw InvalidInput("conditional_gradient: max_iter must be >= 1");
    if (!(tol > 0.0)) throw InvalidInput("conditional_gradient: tol must be positive");

    CgReport report;
    TransportPlan cur = t_init;

    // Singleton polytopes admit exactly one coupling; nothing to iterate.
    if (prob.n0() == 1 || prob.n1() == 1) {
        cur = TransportPlan::product(t_init.source, t_init.target);
        report.converged = true;
        report.final_objective = fused_objective(prob, cur);
        report.objective_trace.push_back(report.final_objective);
        return {cur, report};
    }

    const matrix_t k = fused_k(prob);
    matrix_t m_cur = fused_m(prob, cur.t);
    scalar_t f_cur = (k - 2.0 * m_cur).cwiseProduct(cur.t).sum();
    report.objective_trace.push_back(f_cur);

    for (int it = 0; it < max_iter; ++it) {
        const matrix_t grad = k - 4.0 * m_cur;
        const TransportPlan dir = solve_emd(grad, cur.source, cur.target);
        const matrix_t delta = dir.t - cur.t;
        const scalar_t b = grad.cwiseProduct(delta).sum();
        const matrix_t m_delta = fused_m(prob, delta);
        const scalar_t a = -2.0 * m_delta.cwiseProduct(delta).sum();
        scalar_t tau;
        if (a > 0.0) tau = std::clamp(-b / (2.0 * a), 0.0, 1.0);
        else tau = (a + b < 0.0) ? 1.0 : 0.0;

        cur.t = (cur.t + tau * delta).cwiseMax(0.0);
        m_cur += tau * m_delta;
        const scalar_t f_next = (k - 2.0 * m_cur).cwiseProduct(cur.t).sum();
        report.objective_trace.push_back(f_next);
        ++report.iterations;
        const scalar_t decrease = f_cur - f_next;
        f_cur = f_next;
        if (decrease <= tol * std::max<scalar_t>(1.0, std::abs(f_next))) {
            report.converged = true;
            break;
        }
    }
    report.final_objective = f_cur;
    return {cur, report};
}

namespace detail {

TransportPlan permutation_plan(const std::vector<index_t>& sigma) {
    const index_t n = static_cast<index_t>(sigma.size());
    TransportPlan p;
    p.t = matrix_t::Zero(n, n);
    for (index_t i = 0; i < n; ++i) p.t(i, sigma[i]) = 1.0 / static_cast<scalar_t>(n);
    p.source = DiscreteMeasure::uniform(n);
    p.target = DiscreteMeasure::uniform(n);
    return p;
}

}  // namespace detail

namespace {

// Shared multi-start driver for the discrepancy solvers. Starts from the
// product coupling, then either every permutation vertex (exhaustive case)
// or vertices sampled by solving EMD on seeded random costs.
std::pair<scalar_t, TransportPlan> multistart_min(
    const FusedProblem& prob, int restarts, int max_iter, scalar_t tol, CgReport* out_report,
    const std::function<scalar_t(const TransportPlan&)>& value_of) {
    const index_t na = prob.n0(), nb = prob.n1();
    const DiscreteMeasure mu = DiscreteMeasure::uniform(na);
    const DiscreteMeasure nu = DiscreteMeasure::uniform(nb);

    std::vector<TransportPlan> starts;
    starts.push_back(TransportPlan::product(mu, nu));
    const bool exhaustive =
        na == nb && na <= 6 &&
        static_cast<scalar_t>(restarts) >= factorial_capped(na, 1e18);
    if (exhaustive) {
        std::vector<index_t> sigma = identity_perm(na);
        do {
            starts.push_back(detail::permutation_plan(sigma));
        } while (std::next_permutation(sigma.begin(), sigma.end()));
    } else {
        std::mt19937_64 rng(0x9e3779b97f4a7c15ULL);
        std::uniform_real_distribution<scalar_t> unif(0.0, 1.0);
        for (int r = 1; r < restarts; ++r) {
            matrix_t random_cost(na, nb);
            for (index_t i = 0; i < na; ++i)
                for (index_t j = 0; j < nb; ++j) random_cost(i, j) = unif(rng);
            starts.push_back(solve_emd(random_cost, mu, nu));
        }
    }

    bool have_best = false;
    scalar_t best_value = 0.0;
    TransportPlan best_plan;
    for (const auto& start : starts) {
        auto [plan, report] = conditional_gradient(prob, start, max_iter, tol);
        const scalar_t value = value_of(plan);
        if (!have_best || value < best_value) {
            have_best = true;
            best_value = value;
            best_plan = plan;
            if (out_report != nullptr) *out_report = report;
        }
    }
    return {best_value, best_plan};
}

}  // namespace

std::pair<scalar_t, TransportPlan> gw_discrepancy(const matrix_t& d_a, const matrix_t& d_b,
                                                  int restarts, int max_iter, scalar_t tol,
                                                  CgReport* report) {
    check_symmetric_zero_diag(d_a, "gw_discrepancy.d_a");
    check_symmetric_zero_diag(d_b, "gw_discrepancy.d_b");
    if (restarts < 0) throw InvalidInput("gw_discrepancy: restarts must be >= 0");
    FusedProblem prob;
    prob.d_x0 = matrix_t::Zero(d_a.rows(), d_a.cols());
    prob.d_x1 = matrix_t::Zero(d_b.rows(), d_b.cols());
    prob.d_z0 = d_a;
    prob.d_z1 = d_b;
    prob.d_z01 = matrix_t::Zero(d_a.rows(), d_b.rows());
    prob.beta = 1.0;
    return multistart_min(prob, restarts, max_iter, tol, report,
                          [&](const TransportPlan& plan) {
        return gw_objective(d_a, d_b, plan);
    });
}

std::pair<scalar_t, TransportPlan> fgw_discrepancy(const matrix_t& d_a, const matrix_t& d_b,
                                                   const matrix_t& d_ab, scalar_t beta,
                                                   int restarts, int max_iter, scalar_t tol,
                                                   CgReport* report) {
    check_symmetric_zero_diag(d_a, "fgw_discrepancy.d_a");
    check_symmetric_zero_diag(d_b, "fgw_discrepancy.d_b");
    if (d_ab.rows() != d_a.rows() || d_ab.cols() != d_b.rows())
        throw InvalidInput("fgw_discrepancy: d_ab shape must be N_a x N_b");
    if (restarts < 0) throw InvalidInput("fgw_discrepancy: restarts must be >= 0");
    FusedProblem prob;
    prob.d_x0 = matrix_t::Zero(d_a.rows(), d_a.cols());
    prob.d_x1 = matrix_t::Zero(d_b.rows(), d_b.cols());
    prob.d_z0 = d_a;
    prob.d_z1 = d_b;
    prob.d_z01 = d_ab;
    prob.beta = beta;
    return multistart_min(prob, restarts, max_iter, tol, report,
                          [&](const TransportPlan& plan) {
        return (1.0 - beta) * wasserstein_term(d_ab, plan) +
               beta * gw_objective(d_a, d_b, plan);
    });
}

}  // namespace gwib
