#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "gwib/data.hpp"
#include "gwib/metrics.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace gwib;

namespace {

CfrParams zero_params(index_t d_in) {
    CfrParams p = init_params(d_in, 3, 2, 2, 0, 0.0);
    p.t.set_flat(vector_t::Zero(p.t.total_size()));
    return p;
}

Cohort hand_cohort() {
    // True effects 1, 3, -1; a zero network predicts zero effect everywhere.
    Cohort c(3);
    for (std::size_t i = 0; i < 3; ++i) {
        c[i].x = vector_t::Zero(2);
        c[i].x[0] = static_cast<scalar_t>(i);
        c[i].t = static_cast<int>(i % 2);
        c[i].y_factual = 0.0;
    }
    c[0].mu0 = 0.0;
    c[0].mu1 = 1.0;
    c[1].mu0 = 2.0;
    c[1].mu1 = 5.0;
    c[2].mu0 = 1.0;
    c[2].mu1 = 0.0;
    return c;
}

}  // namespace

TEST_CASE("eval_ite: hand-checked errors for the zero predictor") {
    const CfrParams zero = zero_params(2);
    const EvalReport rep = eval_ite(zero, hand_cohort(), "in");
    CHECK(rep.n == 3);
    CHECK(rep.scope == "in");
    // Zero predictions make the ATE error |mean effect| = 1 and the PEHE
    // error mean(effect^2) = (1 + 9 + 1)/3.
    CHECK(rep.eps_ate == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(rep.eps_pehe == doctest::Approx(11.0 / 3.0).epsilon(1e-14));
    CHECK(rep.eps_pehe_root == doctest::Approx(std::sqrt(11.0 / 3.0)).epsilon(1e-14));
}

TEST_CASE("eval_ite: perfect oracle heads give zero error") {
    // Heads that reproduce mu exactly: impossible in general, but a cohort
    // with constant potential outcomes is matched by bias-only heads.
    CfrParams p = zero_params(2);
    p.t.head[0].out_b = 0.5;
    p.t.head[1].out_b = 2.5;
    Cohort c = hand_cohort();
    for (auto& s : c) {
        s.mu0 = 0.5;
        s.mu1 = 2.5;
    }
    const EvalReport rep = eval_ite(p, c, "out");
    CHECK(rep.eps_ate == doctest::Approx(0.0));
    CHECK(rep.eps_pehe == doctest::Approx(0.0));
}

TEST_CASE("eval_ite: ATE error never exceeds the root PEHE error") {
    std::mt19937_64 rng(71);
    for (int rep = 0; rep < 30; ++rep) {
        const CfrParams p =
            init_params(3, 4, 3, 2, 3000 + static_cast<std::uint64_t>(rep), 0.0);
        Cohort c = gen_synthetic(20, 3, 1.0, 1.0, 100 + static_cast<std::uint64_t>(rep));
        const EvalReport r = eval_ite(p, c, "in");
        CHECK(r.eps_ate <= r.eps_pehe_root + 1e-12);
        CHECK(r.eps_pehe >= 0.0);
    }
}

TEST_CASE("eval_ite: requires potential outcomes") {
    Cohort c = hand_cohort();
    c[1].mu1.reset();
    CHECK_THROWS_AS(eval_ite(zero_params(2), c, "in"), InvalidInput);
    CHECK_THROWS_AS(eval_ite(zero_params(2), Cohort{}, "in"), InvalidInput);
}

TEST_CASE("gw_information_loss: collapsed latents leave the covariate spread") {
    // A zero encoder sends every point to the same code, so the latent
    // distance matrix vanishes and the loss is the plain average squared
    // covariate distance, independent of the coupling.
    std::mt19937_64 rng(23);
    Cohort c(8);
    for (std::size_t i = 0; i < c.size(); ++i) {
        c[i].x = test_util::random_points(rng, 1, 2).row(0).transpose();
        c[i].t = i < 5 ? 0 : 1;
        c[i].y_factual = 0.0;
    }
    const CfrParams zero = zero_params(2);
    const matrix_t x0 = group_covariates(c, 0);
    const scalar_t loss = gw_information_loss(zero, c, 0);
    const matrix_t d = pairwise_dist(x0);
    const index_t n = x0.rows();
    const scalar_t expect =
        reference::gw_quad_sum(d, matrix_t::Zero(n, n), matrix_t::Constant(n, n, 1.0 / (n * n)));
    CHECK(loss == doctest::Approx(expect).epsilon(1e-10));
    CHECK(loss > 0.0);
}

TEST_CASE("gw_information_loss: identity-like encoders lose nothing") {
    CfrParams p;
    p.dropout_rate = 0.0;
    p.t.enc_w1 = matrix_t::Identity(2, 2);
    p.t.enc_b1 = vector_t::Zero(2);
    p.t.enc_w2 = matrix_t::Identity(2, 2);
    p.t.enc_b2 = vector_t::Zero(2);
    for (int h = 0; h < 2; ++h) {
        p.t.head[h].w = matrix_t::Identity(2, 2);
        p.t.head[h].b = vector_t::Zero(2);
        p.t.head[h].out_w = vector_t::Ones(2);
        p.t.head[h].out_b = 0.0;
    }
    Cohort c(5);
    std::mt19937_64 rng(29);
    std::uniform_real_distribution<scalar_t> unif(0.0, 3.0);
    for (std::size_t i = 0; i < c.size(); ++i) {
        c[i].x = vector_t(2);
        c[i].x << unif(rng), unif(rng);
        c[i].t = static_cast<int>(i % 2);
        c[i].y_factual = 0.0;
    }
    CHECK(std::abs(gw_information_loss(p, c, 0)) <= 1e-9);
    CHECK(std::abs(gw_information_loss(p, c, 1)) <= 1e-9);
}

TEST_CASE("gw_information_loss: bounded above by the permutation minimum") {
    std::mt19937_64 rng(31);
    Cohort c(10);
    for (std::size_t i = 0; i < c.size(); ++i) {
        c[i].x = test_util::random_points(rng, 1, 3).row(0).transpose();
        c[i].t = static_cast<int>(i % 2);
        c[i].y_factual = 0.0;
    }
    const CfrParams p = init_params(3, 4, 3, 2, 37, 0.0);
    for (int group : {0, 1}) {
        const matrix_t x = group_covariates(c, group);
        const matrix_t z = encode(p, x);
        const scalar_t loss = gw_information_loss(p, c, group);
        CHECK(loss >= -1e-10);
        CHECK(loss <= reference::gw_perm_min(pairwise_dist(x), pairwise_dist(z)) + 1e-8);
    }
    CHECK_THROWS_AS(gw_information_loss(p, c, 2), InvalidInput);

    Cohort treated_only = c;
    for (auto& s : treated_only) s.t = 1;
    CHECK_THROWS_AS(gw_information_loss(p, treated_only, 0), InvalidInput);
}
