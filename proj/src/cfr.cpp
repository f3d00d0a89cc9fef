#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <vector>

#include <json.hpp>

#include "gwib/cfr.hpp"

namespace gwib {

namespace {

// Guard inside gradient-path square roots only; reported values stay exact.
constexpr scalar_t kEpsSqrt = 1e-12;

matrix_t elu(const matrix_t& a) {
    return a.unaryExpr([](scalar_t v) { return v >= 0.0 ? v : std::expm1(v); });
}

matrix_t elu_prime(const matrix_t& a) {
    return a.unaryExpr([](scalar_t v) { return v >= 0.0 ? 1.0 : std::exp(v); });
}

matrix_t draw_mask(std::mt19937_64& rng, index_t rows, index_t cols, scalar_t drop) {
    const scalar_t keep = 1.0 - drop;
    matrix_t m = matrix_t::Ones(rows, cols);
    if (drop <= 0.0) return m;
    std::uniform_real_distribution<scalar_t> u(0.0, 1.0);
    for (index_t i = 0; i < rows; ++i)
        for (index_t j = 0; j < cols; ++j) m(i, j) = (u(rng) < keep) ? 1.0 / keep : 0.0;
    return m;
}

struct EncoderCache {
    matrix_t x;         // n x d_in
    matrix_t a1;        // pre-activation, layer 1
    matrix_t h1d;       // post-activation after dropout, layer 1
    matrix_t a2;        // pre-activation, layer 2
    matrix_t z;         // n x d_latent
    matrix_t m1, m2;    // dropout scale masks; empty in eval mode
    bool train = false;
};

matrix_t act2(const CfrParams& p, const matrix_t& a) {
    if (p.bounded_latent) return a.array().tanh().matrix();
    return elu(a);
}

matrix_t act2_prime(const CfrParams& p, const matrix_t& a) {
    if (p.bounded_latent) {
        const matrix_t th = a.array().tanh().matrix();
        return (1.0 - th.array().square()).matrix();
    }
    return elu_prime(a);
}

EncoderCache encode_cached(const CfrParams& p, const matrix_t& x, std::mt19937_64* rng) {
    EncoderCache c;
    c.train = rng != nullptr;
    c.x = x;
    c.a1 = x * p.t.enc_w1.transpose();
    c.a1.rowwise() += p.t.enc_b1.transpose();
    matrix_t h1 = elu(c.a1);
    if (c.train) {
        c.m1 = draw_mask(*rng, h1.rows(), h1.cols(), p.dropout_rate);
        c.h1d = h1.cwiseProduct(c.m1);
    } else {
        c.h1d = std::move(h1);
    }
    c.a2 = c.h1d * p.t.enc_w2.transpose();
    c.a2.rowwise() += p.t.enc_b2.transpose();
    matrix_t h2 = act2(p, c.a2);
    if (c.train) {
        c.m2 = draw_mask(*rng, h2.rows(), h2.cols(), p.dropout_rate);
        c.z = h2.cwiseProduct(c.m2);
    } else {
        c.z = std::move(h2);
    }
    return c;
}

// Backprop dZ through the encoder, accumulating into g.
void encoder_backward(const CfrParams& p, const EncoderCache& c, const matrix_t& dz,
                      CfrTensors& g) {
    matrix_t dh2 = c.train ? dz.cwiseProduct(c.m2).eval() : dz;
    matrix_t da2 = dh2.cwiseProduct(act2_prime(p, c.a2));
    g.enc_w2 += da2.transpose() * c.h1d;
    g.enc_b2 += da2.colwise().sum().transpose();
    matrix_t dh1 = da2 * p.t.enc_w2;
    if (c.train) dh1 = dh1.cwiseProduct(c.m1);
    matrix_t da1 = dh1.cwiseProduct(elu_prime(c.a1));
    g.enc_w1 += da1.transpose() * c.x;
    g.enc_b1 += da1.colwise().sum().transpose();
}

struct HeadCache {
    matrix_t z;    // inputs, n x d_latent
    matrix_t a;    // pre-activation, n x d_h
    matrix_t hd;   // post-dropout activation
    matrix_t mask; // empty in eval mode
    vector_t y;    // predictions
    bool train = false;
};

HeadCache head_forward(const HeadTensors& h, const matrix_t& z, const matrix_t& mask) {
    HeadCache c;
    c.z = z;
    c.train = mask.size() > 0;
    c.a = z * h.w.transpose();
    c.a.rowwise() += h.b.transpose();
    matrix_t hh = elu(c.a);
    if (c.train) {
        c.mask = mask;
        c.hd = hh.cwiseProduct(mask);
    } else {
        c.hd = std::move(hh);
    }
    c.y = ((c.hd * h.out_w).array() + h.out_b).matrix();
    return c;
}

// Backprop dy through head tensors; returns the gradient w.r.t. the inputs z.
matrix_t head_backward(const HeadTensors& h, const HeadCache& c, const vector_t& dy,
                       HeadTensors& g) {
    g.out_w += c.hd.transpose() * dy;
    g.out_b += dy.sum();
    matrix_t dhd = dy * h.out_w.transpose();
    if (c.train) dhd = dhd.cwiseProduct(c.mask);
    matrix_t da = dhd.cwiseProduct(elu_prime(c.a));
    g.w += da.transpose() * c.z;
    g.b += da.colwise().sum().transpose();
    return da * h.w;
}

void validate_batch(const Batch& batch) {
    const index_t n = batch.x.rows();
    if (n < 1) throw InvalidInput("batch: empty");
    if (static_cast<index_t>(batch.t.size()) != n || batch.y.size() != n)
        throw InvalidInput("batch: x, t, y lengths disagree");
    for (int t : batch.t)
        if (t != 0 && t != 1) throw InvalidInput("batch: treatment flags must be 0 or 1");
    if (!batch.x.allFinite() || !batch.y.allFinite())
        throw InvalidInput("batch: non-finite values");
}

matrix_t gather_rows(const matrix_t& m, const std::vector<index_t>& idx) {
    matrix_t out(static_cast<index_t>(idx.size()), m.cols());
    for (index_t k = 0; k < out.rows(); ++k) out.row(k) = m.row(idx[k]);
    return out;
}

// d gwobj(d_a, d_b, P) / d d_a = 2 (d_a .* (r r') - P d_b P'), r = P 1.
matrix_t gw_grad_da(const matrix_t& d_a, const matrix_t& d_b, const matrix_t& plan) {
    const vector_t r = plan.rowwise().sum();
    return 2.0 * (d_a.cwiseProduct(r * r.transpose()) - plan * d_b * plan.transpose());
}

// d gwobj(d_a, d_b, P) / d d_b = 2 (d_b .* (c c') - P' d_a P), c = P' 1.
matrix_t gw_grad_db(const matrix_t& d_a, const matrix_t& d_b, const matrix_t& plan) {
    const vector_t c = plan.colwise().sum().transpose();
    return 2.0 * (d_b.cwiseProduct(c * c.transpose()) -
                  plan.transpose() * d_a * plan);
}

scalar_t gw_value(const matrix_t& d_a, const matrix_t& d_b, const matrix_t& plan) {
    const vector_t r = plan.rowwise().sum();
    const vector_t c = plan.colwise().sum().transpose();
    return r.dot(d_a.array().square().matrix() * r) +
           c.dot(d_b.array().square().matrix() * c) -
           2.0 * (d_a * plan * d_b.transpose()).cwiseProduct(plan).sum();
}

// Chain d total / d D into d total / d Z for an intra-cloud distance matrix.
// W collects the symmetrized weights; the result has the graph-Laplacian
// shape diag(W 1) Z - W Z.
matrix_t intra_distance_backward(const matrix_t& z, const matrix_t& g,
                                 const matrix_t& sq_dist, bool squared_costs) {
    matrix_t w = g + g.transpose();
    if (squared_costs) {
        w *= 2.0;
    } else {
        w = w.cwiseProduct((sq_dist.array() + kEpsSqrt).rsqrt().matrix());
    }
    // The diagonal contributes exactly zero (a point's self-distance never
    // moves); dropping it avoids cancellation noise from the guarded rsqrt.
    w.diagonal().setZero();
    const vector_t rowsum = w.rowwise().sum();
    return rowsum.asDiagonal() * z - w * z;
}

}  // namespace

index_t CfrTensors::total_size() const {
    index_t n = enc_w1.size() + enc_b1.size() + enc_w2.size() + enc_b2.size();
    for (const auto& h : head) n += h.w.size() + h.b.size() + h.out_w.size() + 1;
    return n;
}

vector_t CfrTensors::flatten() const {
    vector_t v(total_size());
    index_t at = 0;
    auto put_m = [&](const matrix_t& m) {
        v.segment(at, m.size()) = Eigen::Map<const vector_t>(m.data(), m.size());
        at += m.size();
    };
    auto put_v = [&](const vector_t& b) {
        v.segment(at, b.size()) = b;
        at += b.size();
    };
    put_m(enc_w1);
    put_v(enc_b1);
    put_m(enc_w2);
    put_v(enc_b2);
    for (const auto& h : head) {
        put_m(h.w);
        put_v(h.b);
        put_v(h.out_w);
        v[at++] = h.out_b;
    }
    return v;
}

void CfrTensors::set_flat(const vector_t& v) {
    if (v.size() != total_size()) throw InvalidInput("CfrTensors::set_flat: size mismatch");
    index_t at = 0;
    auto get_m = [&](matrix_t& m) {
        Eigen::Map<vector_t>(m.data(), m.size()) = v.segment(at, m.size());
        at += m.size();
    };
    auto get_v = [&](vector_t& b) {
        b = v.segment(at, b.size());
        at += b.size();
    };
    get_m(enc_w1);
    get_v(enc_b1);
    get_m(enc_w2);
    get_v(enc_b2);
    for (auto& h : head) {
        get_m(h.w);
        get_v(h.b);
        get_v(h.out_w);
        h.out_b = v[at++];
    }
}

CfrTensors CfrTensors::zeros_like(const CfrTensors& shape) {
    CfrTensors g;
    g.enc_w1 = matrix_t::Zero(shape.enc_w1.rows(), shape.enc_w1.cols());
    g.enc_b1 = vector_t::Zero(shape.enc_b1.size());
    g.enc_w2 = matrix_t::Zero(shape.enc_w2.rows(), shape.enc_w2.cols());
    g.enc_b2 = vector_t::Zero(shape.enc_b2.size());
    for (int h = 0; h < 2; ++h) {
        g.head[h].w = matrix_t::Zero(shape.head[h].w.rows(), shape.head[h].w.cols());
        g.head[h].b = vector_t::Zero(shape.head[h].b.size());
        g.head[h].out_w = vector_t::Zero(shape.head[h].out_w.size());
        g.head[h].out_b = 0.0;
    }
    return g;
}

void CfrParams::validate() const {
    const index_t d1 = t.enc_w1.rows(), d2 = t.enc_w2.rows();
    if (t.enc_b1.size() != d1 || t.enc_w2.cols() != d1 || t.enc_b2.size() != d2)
        throw InvalidInput("CfrParams: encoder shapes do not chain");
    for (const auto& h : t.head) {
        if (h.w.cols() != d2 || h.b.size() != h.w.rows() || h.out_w.size() != h.w.rows())
            throw InvalidInput("CfrParams: head shapes do not chain");
    }
    if (t.head[0].w.rows() != t.head[1].w.rows())
        throw InvalidInput("CfrParams: heads must share the hidden width");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
        throw InvalidInput("CfrParams: dropout_rate must be in [0,1)");
    const bool finite = t.enc_w1.allFinite() && t.enc_b1.allFinite() &&
                        t.enc_w2.allFinite() && t.enc_b2.allFinite() &&
                        t.head[0].w.allFinite() && t.head[0].b.allFinite() &&
                        t.head[0].out_w.allFinite() && std::isfinite(t.head[0].out_b) &&
                        t.head[1].w.allFinite() && t.head[1].b.allFinite() &&
                        t.head[1].out_w.allFinite() && std::isfinite(t.head[1].out_b);
    if (!finite) throw NumericalError("CfrParams: non-finite parameters");
}

CfrParams init_params(index_t d_in, index_t d_phi1, index_t d_phi2, index_t d_h,
                      std::uint64_t seed, scalar_t dropout_rate, bool bounded_latent) {
    if (d_in < 1 || d_phi1 < 1 || d_phi2 < 1 || d_h < 1)
        throw InvalidInput("init_params: layer widths must be positive");
    std::mt19937_64 rng(seed);
    auto he_uniform = [&](index_t rows, index_t cols, index_t fan_in) {
        const scalar_t lim = std::sqrt(6.0 / static_cast<scalar_t>(fan_in));
        std::uniform_real_distribution<scalar_t> u(-lim, lim);
        matrix_t m(rows, cols);
        for (index_t i = 0; i < rows; ++i)
            for (index_t j = 0; j < cols; ++j) m(i, j) = u(rng);
        return m;
    };
    CfrParams p;
    p.dropout_rate = dropout_rate;
    p.bounded_latent = bounded_latent;
    p.t.enc_w1 = he_uniform(d_phi1, d_in, d_in);
    p.t.enc_b1 = vector_t::Zero(d_phi1);
    p.t.enc_w2 = he_uniform(d_phi2, d_phi1, d_phi1);
    p.t.enc_b2 = vector_t::Zero(d_phi2);
    for (int h = 0; h < 2; ++h) {
        p.t.head[h].w = he_uniform(d_h, d_phi2, d_phi2);
        p.t.head[h].b = vector_t::Zero(d_h);
        p.t.head[h].out_w = he_uniform(d_h, 1, d_h).col(0);
        p.t.head[h].out_b = 0.0;
    }
    p.validate();
    return p;
}

matrix_t encode(const CfrParams& p, const matrix_t& x, bool train_mode,
                std::uint64_t rng_seed) {
    p.validate();
    if (x.cols() != p.d_in()) throw InvalidInput("encode: input dimension mismatch");
    if (!train_mode) return encode_cached(p, x, nullptr).z;
    std::mt19937_64 rng(rng_seed);
    return encode_cached(p, x, &rng).z;
}

std::pair<vector_t, scalar_t> forward(const CfrParams& p, const vector_t& x, int t,
                                      bool train_mode, std::uint64_t rng_seed) {
    p.validate();
    if (t != 0 && t != 1) throw InvalidInput("forward: t must be 0 or 1");
    if (x.size() != p.d_in()) throw InvalidInput("forward: input dimension mismatch");
    std::mt19937_64 rng(rng_seed);
    std::mt19937_64* rp = train_mode ? &rng : nullptr;
    const EncoderCache c = encode_cached(p, x.transpose(), rp);
    matrix_t mask;
    if (train_mode) mask = draw_mask(rng, 1, p.t.head[t].w.rows(), p.dropout_rate);
    const HeadCache hc = head_forward(p.t.head[t], c.z, mask);
    return {c.z.row(0).transpose(), hc.y[0]};
}

vector_t predict_head(const CfrParams& p, const matrix_t& x, int t) {
    p.validate();
    if (t != 0 && t != 1) throw InvalidInput("predict_head: t must be 0 or 1");
    const EncoderCache c = encode_cached(p, x, nullptr);
    return head_forward(p.t.head[t], c.z, matrix_t()).y;
}

namespace {

// Shared forward for loss paths: one RNG drives encoder masks, then one
// head-mask row per sample in batch order, so results are reproducible for a
// given seed regardless of group composition.
struct LossForward {
    EncoderCache enc;
    std::array<std::vector<index_t>, 2> groups;
    std::array<HeadCache, 2> head;
    scalar_t loss = 0.0;
};

LossForward loss_forward(const CfrParams& p, const Batch& batch, bool train_mode,
                         std::uint64_t rng_seed) {
    p.validate();
    validate_batch(batch);
    if (batch.x.cols() != p.d_in()) throw InvalidInput("batch: input dimension mismatch");
    LossForward f;
    std::mt19937_64 rng(rng_seed);
    f.enc = encode_cached(p, batch.x, train_mode ? &rng : nullptr);
    const index_t n = batch.x.rows();
    matrix_t head_mask;
    if (train_mode) head_mask = draw_mask(rng, n, p.t.head[0].w.rows(), p.dropout_rate);
    for (index_t i = 0; i < n; ++i) f.groups[batch.t[i]].push_back(i);
    for (int g = 0; g < 2; ++g) {
        if (f.groups[g].empty()) continue;
        const matrix_t z_g = gather_rows(f.enc.z, f.groups[g]);
        const matrix_t mask_g = train_mode ? gather_rows(head_mask, f.groups[g]) : matrix_t();
        f.head[g] = head_forward(p.t.head[g], z_g, mask_g);
        scalar_t acc = 0.0;
        for (index_t k = 0; k < z_g.rows(); ++k) {
            const scalar_t res = f.head[g].y[k] - batch.y[f.groups[g][k]];
            acc += res * res;
        }
        f.loss += acc / static_cast<scalar_t>(f.groups[g].size());
    }
    return f;
}

}  // namespace

scalar_t factual_loss(const CfrParams& p, const Batch& batch, bool train_mode,
                      std::uint64_t rng_seed) {
    return loss_forward(p, batch, train_mode, rng_seed).loss;
}

LossGrad loss_grad(const CfrParams& p, const Batch& batch, bool train_mode,
                   std::uint64_t rng_seed) {
    LossForward f = loss_forward(p, batch, train_mode, rng_seed);
    LossGrad out;
    out.loss = f.loss;
    out.grad = CfrTensors::zeros_like(p.t);
    matrix_t dz = matrix_t::Zero(batch.x.rows(), p.d_latent());
    for (int g = 0; g < 2; ++g) {
        if (f.groups[g].empty()) continue;
        const scalar_t inv_n = 1.0 / static_cast<scalar_t>(f.groups[g].size());
        vector_t dy(static_cast<index_t>(f.groups[g].size()));
        for (index_t k = 0; k < dy.size(); ++k)
            dy[k] = 2.0 * inv_n * (f.head[g].y[k] - batch.y[f.groups[g][k]]);
        const matrix_t dz_g = head_backward(p.t.head[g], f.head[g], dy, out.grad.head[g]);
        for (index_t k = 0; k < dz_g.rows(); ++k) dz.row(f.groups[g][k]) += dz_g.row(k);
    }
    encoder_backward(p, f.enc, dz, out.grad);
    return out;
}

namespace {

struct RegWork {
    RegularizerBreakdown breakdown;
    // d total / d D for the three latent distance matrices
    matrix_t g_z0, g_z1, g_01;
    bool want_grad = false;
};

RegWork reg_core(const CfrParams& p, const matrix_t& x0, const matrix_t& x1, RegKind kind,
                 const RegPlans& plans, scalar_t beta, bool squared_costs,
                 const EncoderCache& c0, const EncoderCache& c1, bool want_grad) {
    const index_t n0 = x0.rows(), n1 = x1.rows();
    const matrix_t sq_z0 = pairwise_sq_dist(c0.z);
    const matrix_t sq_z1 = pairwise_sq_dist(c1.z);
    const matrix_t d_z0 = squared_costs ? sq_z0 : sq_z0.cwiseSqrt().eval();
    const matrix_t d_z1 = squared_costs ? sq_z1 : sq_z1.cwiseSqrt().eval();
    const matrix_t d_x0 = squared_costs ? pairwise_sq_dist(x0) : pairwise_dist(x0);
    const matrix_t d_x1 = squared_costs ? pairwise_sq_dist(x1) : pairwise_dist(x1);
    const matrix_t d_z01 = pairwise_sq_dist(c0.z, c1.z);

    RegWork w;
    w.want_grad = want_grad;
    if (want_grad) {
        w.g_z0 = matrix_t::Zero(n0, n0);
        w.g_z1 = matrix_t::Zero(n1, n1);
        w.g_01 = matrix_t::Zero(n0, n1);
    }
    auto& bd = w.breakdown;

    const scalar_t s0 = (d_x0 - d_z0).squaredNorm();
    const scalar_t s1 = (d_x1 - d_z1).squaredNorm();
    const scalar_t r0v = std::sqrt(s0) / static_cast<scalar_t>(n0);
    const scalar_t r1v = std::sqrt(s1) / static_cast<scalar_t>(n1);

    auto check_plan = [&](const TransportPlan& plan, index_t rows, index_t cols,
                          const char* name) -> const matrix_t& {
        if (plan.t.rows() != rows || plan.t.cols() != cols)
            throw InvalidInput(std::string("regularizer: plan ") + name + " has wrong shape");
        return plan.t;
    };

    switch (kind) {
        case RegKind::gwib:
        case RegKind::gwib_fgw:
        case RegKind::gwib_rt:
        case RegKind::gwib_gw: {
            const bool use_rt = kind != RegKind::gwib_rt;
            const bool use_fgw = kind != RegKind::gwib_fgw;
            const bool use_gw = kind != RegKind::gwib_gw;
            if (use_fgw && !(beta > 0.0 && beta <= 1.0))
                throw InvalidInput("regularizer: beta must be in (0,1]");
            const matrix_t& t = check_plan(plans.shared, n0, n1, "shared");

            const scalar_t fused =
                (1.0 - beta) * d_z01.cwiseProduct(t).sum() + beta * gw_value(d_z0, d_z1, t);
            const scalar_t f = use_fgw ? std::sqrt(std::max(fused, 0.0)) : 0.0;
            bd.r0 = use_rt ? r0v : 0.0;
            bd.r1 = use_rt ? r1v : 0.0;
            bd.fgw_at_plan = f;
            bd.gw0_at_plan = use_gw ? gw_value(d_x0, d_z1, t) : 0.0;
            bd.gw1_at_plan = use_gw ? gw_value(d_x1, d_z0, t.transpose()) : 0.0;
            const scalar_t u0 = bd.r0 + (use_fgw ? f / beta : 0.0);
            const scalar_t u1 = bd.r1 + (use_fgw ? f / beta : 0.0);
            bd.total = u0 * u0 + u1 * u1 - bd.gw0_at_plan - bd.gw1_at_plan;
            if (!want_grad) break;

            if (use_rt) {
                w.g_z0 += (2.0 * u0 / (static_cast<scalar_t>(n0) * std::sqrt(s0 + kEpsSqrt))) *
                          (d_z0 - d_x0);
                w.g_z1 += (2.0 * u1 / (static_cast<scalar_t>(n1) * std::sqrt(s1 + kEpsSqrt))) *
                          (d_z1 - d_x1);
            }
            if (use_fgw) {
                const scalar_t gf =
                    (u0 + u1) / (beta * std::sqrt(std::max(fused, 0.0) + kEpsSqrt));
                w.g_z0 += gf * beta * gw_grad_da(d_z0, d_z1, t);
                w.g_z1 += gf * beta * gw_grad_db(d_z0, d_z1, t);
                w.g_01 += gf * (1.0 - beta) * t;
            }
            if (use_gw) {
                w.g_z1 -= gw_grad_db(d_x0, d_z1, t);
                w.g_z0 -= gw_grad_db(d_x1, d_z0, t.transpose());
            }
            break;
        }
        case RegKind::gwib_gap: {
            const matrix_t& t0 = check_plan(plans.group0, n0, n0, "group0");
            const matrix_t& t1 = check_plan(plans.group1, n1, n1, "group1");
            bd.r0 = r0v;
            bd.r1 = r1v;
            bd.fgw_at_plan = 0.0;
            bd.gw0_at_plan = gw_value(d_x0, d_z0, t0);
            bd.gw1_at_plan = gw_value(d_x1, d_z1, t1);
            bd.total = bd.r0 * bd.r0 + bd.r1 * bd.r1 - bd.gw0_at_plan - bd.gw1_at_plan;
            if (!want_grad) break;
            w.g_z0 += (2.0 / static_cast<scalar_t>(n0 * n0)) * (d_z0 - d_x0) -
                      gw_grad_db(d_x0, d_z0, t0);
            w.g_z1 += (2.0 / static_cast<scalar_t>(n1 * n1)) * (d_z1 - d_x1) -
                      gw_grad_db(d_x1, d_z1, t1);
            break;
        }
        case RegKind::gwib_opt: {
            if (!(beta > 0.0 && beta <= 1.0))
                throw InvalidInput("regularizer: beta must be in (0,1]");
            const matrix_t& tf = check_plan(plans.fgw, n0, n1, "fgw");
            const matrix_t& p0 = check_plan(plans.cross0, n0, n1, "cross0");
            const matrix_t& p1 = check_plan(plans.cross1, n1, n0, "cross1");
            const scalar_t fused =
                (1.0 - beta) * d_z01.cwiseProduct(tf).sum() + beta * gw_value(d_z0, d_z1, tf);
            const scalar_t f = std::sqrt(std::max(fused, 0.0));
            bd.r0 = r0v;
            bd.r1 = r1v;
            bd.fgw_at_plan = f;
            bd.gw0_at_plan = gw_value(d_x0, d_z1, p0);
            bd.gw1_at_plan = gw_value(d_x1, d_z0, p1);
            const scalar_t u0 = bd.r0 + f / beta;
            const scalar_t u1 = bd.r1 + f / beta;
            bd.total = u0 * u0 + u1 * u1 - bd.gw0_at_plan - bd.gw1_at_plan;
            if (!want_grad) break;
            w.g_z0 += (2.0 * u0 / (static_cast<scalar_t>(n0) * std::sqrt(s0 + kEpsSqrt))) *
                      (d_z0 - d_x0);
            w.g_z1 += (2.0 * u1 / (static_cast<scalar_t>(n1) * std::sqrt(s1 + kEpsSqrt))) *
                      (d_z1 - d_x1);
            const scalar_t gf =
                (u0 + u1) / (beta * std::sqrt(std::max(fused, 0.0) + kEpsSqrt));
            w.g_z0 += gf * beta * gw_grad_da(d_z0, d_z1, tf);
            w.g_z1 += gf * beta * gw_grad_db(d_z0, d_z1, tf);
            w.g_01 += gf * (1.0 - beta) * tf;
            w.g_z1 -= gw_grad_db(d_x0, d_z1, p0);
            w.g_z0 -= gw_grad_db(d_x1, d_z0, p1);
            break;
        }
        case RegKind::cfr_wass: {
            const matrix_t& t = check_plan(plans.shared, n0, n1, "shared");
            const scalar_t w2 = d_z01.cwiseProduct(t).sum();
            bd.fgw_at_plan = std::sqrt(std::max(w2, 0.0));
            bd.total = bd.fgw_at_plan;
            if (!want_grad) break;
            w.g_01 += t / (2.0 * std::sqrt(std::max(w2, 0.0) + kEpsSqrt));
            break;
        }
    }

    if (want_grad) {
        // Chain d/dD into d/dZ. Cross-group costs are always squared
        // distances; intra matrices follow the configured convention.
        matrix_t dz0 = intra_distance_backward(c0.z, w.g_z0, sq_z0, squared_costs);
        matrix_t dz1 = intra_distance_backward(c1.z, w.g_z1, sq_z1, squared_costs);
        const vector_t row01 = w.g_01.rowwise().sum();
        const vector_t col01 = w.g_01.colwise().sum().transpose();
        dz0 += 2.0 * (row01.asDiagonal() * c0.z - w.g_01 * c1.z);
        dz1 += 2.0 * (col01.asDiagonal() * c1.z - w.g_01.transpose() * c0.z);
        // Stash into g_z0/g_z1 slots for the caller.
        w.g_z0 = std::move(dz0);
        w.g_z1 = std::move(dz1);
    }
    return w;
}

RegWork reg_run(const CfrParams& p, const matrix_t& x0, const matrix_t& x1, RegKind kind,
                const RegPlans& plans, scalar_t beta, bool squared_costs, bool want_grad,
                CfrTensors* grad_out) {
    p.validate();
    if (x0.rows() < 1 || x1.rows() < 1)
        throw InvalidInput("regularizer: both groups must be nonempty");
    if (x0.cols() != p.d_in() || x1.cols() != p.d_in())
        throw InvalidInput("regularizer: covariate dimension mismatch");
    const EncoderCache c0 = encode_cached(p, x0, nullptr);
    const EncoderCache c1 = encode_cached(p, x1, nullptr);
    RegWork w = reg_core(p, x0, x1, kind, plans, beta, squared_costs, c0, c1, want_grad);
    if (want_grad) {
        encoder_backward(p, c0, w.g_z0, *grad_out);
        encoder_backward(p, c1, w.g_z1, *grad_out);
    }
    return w;
}

}  // namespace

RegularizerBreakdown regularizer(const CfrParams& p, const matrix_t& x0, const matrix_t& x1,
                                 const TransportPlan& plan, scalar_t beta,
                                 bool squared_costs) {
    if (!(beta > 0.0 && beta <= 1.0)) throw InvalidInput("regularizer: beta must be in (0,1]");
    RegPlans plans;
    plans.shared = plan;
    return reg_run(p, x0, x1, RegKind::gwib, plans, beta, squared_costs, false, nullptr)
        .breakdown;
}

RegularizerBreakdown regularizer_at(const CfrParams& p, const matrix_t& x0,
                                    const matrix_t& x1, RegKind kind, const RegPlans& plans,
                                    scalar_t beta, bool squared_costs) {
    return reg_run(p, x0, x1, kind, plans, beta, squared_costs, false, nullptr).breakdown;
}

RegEval regularizer_grad(const CfrParams& p, const matrix_t& x0, const matrix_t& x1,
                         RegKind kind, const RegPlans& plans, scalar_t beta,
                         bool squared_costs) {
    RegEval out;
    out.grad = CfrTensors::zeros_like(p.t);
    out.breakdown =
        reg_run(p, x0, x1, kind, plans, beta, squared_costs, true, &out.grad).breakdown;
    return out;
}

GradTotal grad_total(const CfrParams& p, const Batch& batch, const matrix_t& x0,
                     const matrix_t& x1, const TransportPlan& plan, scalar_t beta,
                     scalar_t lambda, bool train_mode, std::uint64_t rng_seed,
                     bool squared_costs) {
    GradTotal out;
    LossGrad lg = loss_grad(p, batch, train_mode, rng_seed);
    out.loss = lg.loss;
    out.grad = std::move(lg.grad);
    if (lambda != 0.0) {
        RegPlans plans;
        plans.shared = plan;
        RegEval re = regularizer_grad(p, x0, x1, RegKind::gwib, plans, beta, squared_costs);
        out.reg = re.breakdown;
        out.grad.enc_w1 += lambda * re.grad.enc_w1;
        out.grad.enc_b1 += lambda * re.grad.enc_b1;
        out.grad.enc_w2 += lambda * re.grad.enc_w2;
        out.grad.enc_b2 += lambda * re.grad.enc_b2;
    }
    return out;
}

namespace {

nlohmann::ordered_json tensor_json(const matrix_t& m) {
    nlohmann::ordered_json j;
    j["shape"] = {m.rows(), m.cols()};
    std::vector<scalar_t> data(m.data(), m.data() + m.size());
    j["data"] = data;
    return j;
}

nlohmann::ordered_json tensor_json(const vector_t& v) {
    nlohmann::ordered_json j;
    j["shape"] = {v.size()};
    std::vector<scalar_t> data(v.data(), v.data() + v.size());
    j["data"] = data;
    return j;
}

matrix_t matrix_from_json(const nlohmann::json& j) {
    const auto shape = j.at("shape");
    if (shape.size() != 2) throw ParseError("checkpoint: expected rank-2 tensor");
    matrix_t m(shape[0].get<index_t>(), shape[1].get<index_t>());
    const auto& data = j.at("data");
    if (static_cast<index_t>(data.size()) != m.size())
        throw ParseError("checkpoint: tensor size mismatch");
    for (index_t i = 0; i < m.size(); ++i) m.data()[i] = data[i].get<scalar_t>();
    return m;
}

vector_t vector_from_json(const nlohmann::json& j) {
    const auto shape = j.at("shape");
    if (shape.size() != 1) throw ParseError("checkpoint: expected rank-1 tensor");
    vector_t v(shape[0].get<index_t>());
    const auto& data = j.at("data");
    if (static_cast<index_t>(data.size()) != v.size())
        throw ParseError("checkpoint: tensor size mismatch");
    for (index_t i = 0; i < v.size(); ++i) v[i] = data[i].get<scalar_t>();
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const CfrParams& p) {
    p.validate();
    nlohmann::ordered_json j;
    j["format"] = "gwib-checkpoint";
    j["version"] = 1;
    j["dropout_rate"] = p.dropout_rate;
    j["bounded_latent"] = p.bounded_latent;
    j["tensors"]["enc_w1"] = tensor_json(p.t.enc_w1);
    j["tensors"]["enc_b1"] = tensor_json(p.t.enc_b1);
    j["tensors"]["enc_w2"] = tensor_json(p.t.enc_w2);
    j["tensors"]["enc_b2"] = tensor_json(p.t.enc_b2);
    for (int h = 0; h < 2; ++h) {
        const std::string key = "head" + std::to_string(h);
        j["tensors"][key + "_w"] = tensor_json(p.t.head[h].w);
        j["tensors"][key + "_b"] = tensor_json(p.t.head[h].b);
        j["tensors"][key + "_out_w"] = tensor_json(p.t.head[h].out_w);
        j["tensors"][key + "_out_b"] = p.t.head[h].out_b;
    }
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << j.dump(2) << "\n";
    if (!out) throw IoError("write failed: " + path);
}

CfrParams load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("checkpoint: " + std::string(e.what()));
    }
    if (j.value("format", "") != "gwib-checkpoint" || j.value("version", 0) != 1)
        throw ParseError("checkpoint: unknown format or version: " + path);
    CfrParams p;
    p.dropout_rate = j.at("dropout_rate").get<scalar_t>();
    p.bounded_latent = j.at("bounded_latent").get<bool>();
    const auto& t = j.at("tensors");
    p.t.enc_w1 = matrix_from_json(t.at("enc_w1"));
    p.t.enc_b1 = vector_from_json(t.at("enc_b1"));
    p.t.enc_w2 = matrix_from_json(t.at("enc_w2"));
    p.t.enc_b2 = vector_from_json(t.at("enc_b2"));
    for (int h = 0; h < 2; ++h) {
        const std::string key = "head" + std::to_string(h);
        p.t.head[h].w = matrix_from_json(t.at(key + "_w"));
        p.t.head[h].b = vector_from_json(t.at(key + "_b"));
        p.t.head[h].out_w = vector_from_json(t.at(key + "_out_w"));
        p.t.head[h].out_b = t.at(key + "_out_b").get<scalar_t>();
    }
    p.validate();
    return p;
}

}  // namespace gwib
