#include <cmath>
#include <vector>

#include "doctest.h"
#include "spankt/pair.hpp"
#include "spankt/weights.hpp"

using namespace spankt;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.hidden_dim = 8;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.ffn_dim = 16;
    cfg.max_seq_len = 10;
    cfg.token_vocab = 20;
    cfg.entity_vocab = 5;
    cfg.relation_vocab = 3;
    cfg.width_dim = 4;
    cfg.max_span_len = 4;
    cfg.pair_attn_layers = 2;
    cfg.pair_attn_heads = 2;
    return cfg;
}

Matrix random_matrix(int rows, int cols, uint64_t seed) {
    Rng rng(seed);
    Matrix m(rows, cols);
    for (int i = 0; i < m.size(); ++i) m(i) = rng.normal();
    return m;
}

void roughen(ModelWeights& w, uint64_t seed) {
    Rng rng(seed);
    for (const auto& p : w.params()) {
        for (int i = 0; i < p->value.size(); ++i) p->value(i) += 0.3 * rng.normal();
    }
}

}  // namespace

TEST_SUITE("pair") {

TEST_CASE("contextualize output is (m, hidden_dim)") {
    const ModelConfig cfg = tiny_config();
    ModelWeights w = init_weights(cfg, 0);
    const Matrix reps = random_matrix(3, cfg.span_rep_dim(), 1);
    PairContextCache cache;
    Rng rng(0);
    const Matrix ctx = contextualize_spans(w, reps, false, rng, cache);
    CHECK(ctx.rows() == 3);
    CHECK(ctx.cols() == cfg.hidden_dim);
    CHECK(std::isfinite(ctx.sum()));
}

TEST_CASE("a single span contextualizes without error") {
    const ModelConfig cfg = tiny_config();
    ModelWeights w = init_weights(cfg, 1);
    const Matrix reps = random_matrix(1, cfg.span_rep_dim(), 2);
    PairContextCache cache;
    Rng rng(0);
    const Matrix ctx = contextualize_spans(w, reps, false, rng, cache);
    CHECK(ctx.rows() == 1);
    CHECK(std::isfinite(ctx.sum()));
}

TEST_CASE("empty input is rejected") {
    const ModelConfig cfg = tiny_config();
    ModelWeights w = init_weights(cfg, 2);
    Matrix reps(0, cfg.span_rep_dim());
    PairContextCache cache;
    Rng rng(0);
    CHECK_THROWS(contextualize_spans(w, reps, false, rng, cache));
}

TEST_CASE("no positional encoding: the map is permutation-equivariant") {
    const ModelConfig cfg = tiny_config();
    ModelWeights w = init_weights(cfg, 3);
    roughen(w, 4);
    const Matrix reps = random_matrix(4, cfg.span_rep_dim(), 5);
    PairContextCache c1, c2;
    Rng rng(0);
    const Matrix ctx = contextualize_spans(w, reps, false, rng, c1);

    // Reverse the row order.
    Matrix rev(reps.rows(), reps.cols());
    for (int i = 0; i < reps.rows(); ++i) rev.row(i) = reps.row(reps.rows() - 1 - i);
    const Matrix ctx_rev = contextualize_spans(w, rev, false, rng, c2);
    for (int i = 0; i < reps.rows(); ++i) {
        CHECK((ctx.row(i) - ctx_rev.row(reps.rows() - 1 - i)).cwiseAbs().maxCoeff() <
              1e-10);
    }
}

TEST_CASE("pair_rep is direction-sensitive and rejects i == j") {
    const ModelConfig cfg = tiny_config();
    ModelWeights w = init_weights(cfg, 4);
    roughen(w, 5);
    const Matrix ctx = random_matrix(3, cfg.hidden_dim, 6);
    const Eigen::VectorXd fwd = pair_rep(w, ctx, 0, 1);
    const Eigen::VectorXd bwd = pair_rep(w, ctx, 1, 0);
    CHECK(fwd.size() == cfg.hidden_dim);
    CHECK((fwd - bwd).cwiseAbs().maxCoeff() > 1e-8);
    CHECK_THROWS(pair_rep(w, ctx, 1, 1));
    CHECK_THROWS(pair_rep(w, ctx, -1, 0));
    CHECK_THROWS(pair_rep(w, ctx, 0, 3));
}

TEST_CASE("m spans admit m*(m-1) ordered pairs") {
    const ModelConfig cfg = tiny_config();
    ModelWeights w = init_weights(cfg, 5);
    const int m = 4;
    const Matrix ctx = random_matrix(m, cfg.hidden_dim, 7);
    int count = 0;
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < m; ++j) {
            if (i == j) continue;
            CHECK(std::isfinite(pair_rep(w, ctx, i, j).sum()));
            count += 1;
        }
    }
    CHECK(count == m * (m - 1));
}

TEST_CASE("contextualize backward matches finite differences") {
    const ModelConfig cfg = tiny_config();
    ModelWeights w = init_weights(cfg, 6);
    roughen(w, 7);
    Matrix reps = random_matrix(3, cfg.span_rep_dim(), 8);
    const Matrix dy = random_matrix(3, cfg.hidden_dim, 9);

    PairContextCache cache;
    Rng rng(0);
    contextualize_spans(w, reps, false, rng, cache);
    w.zero_grads();
    const Matrix d_reps = contextualize_spans_backward(w, cache, dy);

    auto loss = [&] {
        PairContextCache c;
        Rng r(0);
        return (contextualize_spans(w, reps, false, r, c).array() * dy.array()).sum();
    };
    const double eps = 1e-5;
    double max_err = 0.0;
    auto check = [&](double ana, double num) {
        const double err =
            std::abs(ana - num) / std::max(1e-3, std::abs(ana) + std::abs(num));
        max_err = std::max(max_err, err);
    };
    for (int i = 0; i < reps.size(); ++i) {
        const double orig = reps(i);
        reps(i) = orig + eps;
        const double hi = loss();
        reps(i) = orig - eps;
        const double lo = loss();
        reps(i) = orig;
        check(d_reps(i), (hi - lo) / (2 * eps));
    }
    for (const auto& p : w.params()) {
        if (p->grad.cwiseAbs().maxCoeff() == 0.0) continue;
        for (int i = 0; i < p->value.size(); ++i) {
            const double orig = p->value(i);
            p->value(i) = orig + eps;
            const double hi = loss();
            p->value(i) = orig - eps;
            const double lo = loss();
            p->value(i) = orig;
            check(p->grad(i), (hi - lo) / (2 * eps));
        }
    }
    CHECK(max_err < 1e-4);
}

TEST_CASE("pair_rep backward matches finite differences") {
    const ModelConfig cfg = tiny_config();
    ModelWeights w = init_weights(cfg, 8);
    roughen(w, 9);
    Matrix ctx = random_matrix(3, cfg.hidden_dim, 10);
    Eigen::VectorXd d_rep(cfg.hidden_dim);
    Rng noise(11);
    for (int i = 0; i < d_rep.size(); ++i) d_rep(i) = noise.normal();

    PairRepCache cache;
    pair_rep(w, ctx, 2, 0, &cache);
    w.zero_grads();
    Matrix d_ctx = Matrix::Zero(ctx.rows(), ctx.cols());
    pair_rep_backward(w, ctx, cache, d_rep, d_ctx);

    // Row 1 is not part of the pair.
    CHECK(d_ctx.row(1).cwiseAbs().maxCoeff() == 0.0);

    auto loss = [&] { return pair_rep(w, ctx, 2, 0).dot(d_rep); };
    const double eps = 1e-6;
    for (int i = 0; i < ctx.size(); ++i) {
        const double orig = ctx(i);
        ctx(i) = orig + eps;
        const double hi = loss();
        ctx(i) = orig - eps;
        const double lo = loss();
        ctx(i) = orig;
        CHECK(d_ctx(i) == doctest::Approx((hi - lo) / (2 * eps)).epsilon(1e-4));
    }
    for (const auto& p : w.params()) {
        if (p->grad.cwiseAbs().maxCoeff() == 0.0) continue;
        for (int i = 0; i < p->value.size(); ++i) {
            const double orig = p->value(i);
            p->value(i) = orig + eps;
            const double hi = loss();
            p->value(i) = orig - eps;
            const double lo = loss();
            p->value(i) = orig;
            CHECK(p->grad(i) == doctest::Approx((hi - lo) / (2 * eps)).epsilon(1e-4));
        }
    }
}

}  // TEST_SUITE
