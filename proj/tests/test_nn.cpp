#include <cmath>

#include "doctest.h"
#include "spankt/nn.hpp"
#include "spankt/rng.hpp"
#include "spankt/weights.hpp"

using namespace spankt;

namespace {

Matrix random_matrix(int rows, int cols, Rng& rng, double scale = 1.0) {
    Matrix m(rows, cols);
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) m(i, j) = scale * rng.normal();
    }
    return m;
}

Param make_param(const std::string& name, int rows, int cols, Rng& rng) {
    Param p;
    p.name = name;
    p.dims = {static_cast<size_t>(rows), static_cast<size_t>(cols)};
    p.value = random_matrix(rows, cols, rng);
    p.grad = Matrix::Zero(rows, cols);
    return p;
}

// Central-difference derivative of a scalar function of one matrix entry.
template <typename F>
double fd(F f, Matrix& x, int i, int j, double eps = 1e-6) {
    const double orig = x(i, j);
    x(i, j) = orig + eps;
    const double hi = f();
    x(i, j) = orig - eps;
    const double lo = f();
    x(i, j) = orig;
    return (hi - lo) / (2 * eps);
}

}  // namespace

TEST_SUITE("nn") {

TEST_CASE("gelu matches the exact normal-CDF form") {
    CHECK(gelu(0.0) == doctest::Approx(0.0));
    // gelu(x) = x * Phi(x); Phi(1) = 0.841344746...
    CHECK(gelu(1.0) == doctest::Approx(0.8413447460685429).epsilon(1e-12));
    CHECK(gelu(-1.0) == doctest::Approx(-(1.0 - 0.8413447460685429)).epsilon(1e-9));
    // Large |x|: identity on the right, zero on the left.
    CHECK(gelu(10.0) == doctest::Approx(10.0).epsilon(1e-9));
    CHECK(std::abs(gelu(-10.0)) < 1e-8);
}

TEST_CASE("gelu_grad matches finite differences") {
    for (double x : {-3.0, -1.0, -0.1, 0.0, 0.5, 2.0, 4.0}) {
        const double eps = 1e-6;
        const double num = (gelu(x + eps) - gelu(x - eps)) / (2 * eps);
        CHECK(gelu_grad(x) == doctest::Approx(num).epsilon(1e-6));
    }
}

TEST_CASE("softmax rows sum to one and preserve order") {
    Rng rng(1);
    const Matrix x = random_matrix(4, 7, rng, 3.0);
    const Matrix p = softmax_rows(x);
    for (int i = 0; i < p.rows(); ++i) {
        CHECK(p.row(i).sum() == doctest::Approx(1.0).epsilon(1e-12));
        for (int j = 0; j < p.cols(); ++j) {
            CHECK(p(i, j) > 0.0);
            for (int l = 0; l < p.cols(); ++l) {
                if (x(i, j) < x(i, l)) CHECK(p(i, j) < p(i, l));
            }
        }
    }
}

TEST_CASE("softmax is shift-invariant and stable at large magnitudes") {
    Rng rng(2);
    Matrix x = random_matrix(2, 5, rng);
    Matrix shifted = x;
    shifted.array() += 1000.0;
    const Matrix a = softmax_rows(x);
    const Matrix b = softmax_rows(shifted);
    CHECK((a - b).cwiseAbs().maxCoeff() < 1e-12);

    Matrix huge(1, 3);
    huge << 1e9, 0.0, -1e9;
    const Matrix p = softmax_rows(huge);
    CHECK(p(0, 0) == doctest::Approx(1.0));
    CHECK(std::isfinite(p.sum()));
}

TEST_CASE("softmax backward matches finite differences") {
    Rng rng(3);
    Matrix x = random_matrix(3, 4, rng);
    const Matrix dp = random_matrix(3, 4, rng);
    const Matrix probs = softmax_rows(x);
    const Matrix dx = softmax_rows_backward(probs, dp);
    auto loss = [&] { return (softmax_rows(x).array() * dp.array()).sum(); };
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 4; ++j) {
            CHECK(dx(i, j) == doctest::Approx(fd(loss, x, i, j)).epsilon(1e-5));
        }
    }
}

TEST_CASE("layer_norm output has zero mean and unit variance per row") {
    Rng rng(4);
    const int cols = 16;
    Matrix x = random_matrix(5, cols, rng, 2.5);
    Param gain = make_param("g", 1, cols, rng);
    Param bias = make_param("b", 1, cols, rng);
    gain.value.setOnes();
    bias.value.setZero();
    const Matrix y = layer_norm(x, gain, bias);
    for (int i = 0; i < y.rows(); ++i) {
        CHECK(y.row(i).mean() == doctest::Approx(0.0).epsilon(1e-10));
        const double var = y.row(i).array().square().mean();
        CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
    }
}

TEST_CASE("layer_norm handles a constant row via the epsilon") {
    Matrix x = Matrix::Constant(1, 8, 3.0);
    Rng rng(5);
    Param gain = make_param("g", 1, 8, rng);
    Param bias = make_param("b", 1, 8, rng);
    const Matrix y = layer_norm(x, gain, bias);
    CHECK(std::isfinite(y.sum()));
    // xhat is 0 for a constant row, so y equals the bias.
    CHECK((y - bias.value).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("layer_norm backward matches finite differences") {
    Rng rng(6);
    const int rows = 3, cols = 6;
    Matrix x = random_matrix(rows, cols, rng);
    Param gain = make_param("g", 1, cols, rng);
    Param bias = make_param("b", 1, cols, rng);
    const Matrix dy = random_matrix(rows, cols, rng);

    LayerNormCache cache;
    layer_norm(x, gain, bias, &cache);
    const Matrix dx = layer_norm_backward(dy, cache, gain, bias);

    auto loss = [&] { return (layer_norm(x, gain, bias).array() * dy.array()).sum(); };
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) {
            CHECK(dx(i, j) == doctest::Approx(fd(loss, x, i, j)).epsilon(1e-4));
        }
    }
    for (int j = 0; j < cols; ++j) {
        CHECK(gain.grad(0, j) == doctest::Approx(fd(loss, gain.value, 0, j)).epsilon(1e-5));
        CHECK(bias.grad(0, j) == doctest::Approx(fd(loss, bias.value, 0, j)).epsilon(1e-5));
    }
}

TEST_CASE("linear and its backward match finite differences") {
    Rng rng(7);
    Matrix x = random_matrix(4, 3, rng);
    Param w = make_param("w", 3, 5, rng);
    Param b = make_param("b", 1, 5, rng);
    const Matrix dy = random_matrix(4, 5, rng);

    const Matrix y = linear(x, w, b);
    CHECK(y.rows() == 4);
    CHECK(y.cols() == 5);
    // Row 0 by hand.
    for (int j = 0; j < 5; ++j) {
        double acc = b.value(0, j);
        for (int i = 0; i < 3; ++i) acc += x(0, i) * w.value(i, j);
        CHECK(y(0, j) == doctest::Approx(acc).epsilon(1e-12));
    }

    const Matrix dx = linear_backward(x, dy, w, b);
    auto loss = [&] { return (linear(x, w, b).array() * dy.array()).sum(); };
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 3; ++j) {
            CHECK(dx(i, j) == doctest::Approx(fd(loss, x, i, j)).epsilon(1e-5));
        }
    }
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 5; ++j) {
            CHECK(w.grad(i, j) == doctest::Approx(fd(loss, w.value, i, j)).epsilon(1e-5));
        }
    }
    for (int j = 0; j < 5; ++j) {
        CHECK(b.grad(0, j) == doctest::Approx(fd(loss, b.value, 0, j)).epsilon(1e-5));
    }
}

TEST_CASE("dropout is identity in eval mode and unbiased in train mode") {
    Rng rng(8);
    const Matrix x = Matrix::Constant(50, 40, 1.0);
    Matrix mask;
    const Matrix eval = dropout(x, 0.5, false, rng, mask);
    CHECK((eval - x).cwiseAbs().maxCoeff() == 0.0);
    CHECK(mask.size() == 0);

    const double p = 0.3;
    double total = 0.0;
    int zeros = 0;
    const int reps = 20;
    for (int r = 0; r < reps; ++r) {
        Matrix m;
        const Matrix y = dropout(x, p, true, rng, m);
        REQUIRE(m.size() == x.size());
        for (int i = 0; i < y.size(); ++i) {
            const double v = y(i);
            CHECK((v == 0.0 || v == doctest::Approx(1.0 / (1.0 - p))));
            if (v == 0.0) zeros += 1;
        }
        total += y.sum();
    }
    const double n = static_cast<double>(x.size()) * reps;
    CHECK(zeros / n == doctest::Approx(p).epsilon(0.05));
    CHECK(total / n == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("dropout p=0 keeps everything") {
    Rng rng(9);
    Matrix mask;
    const Matrix x = random_matrix(3, 3, rng);
    const Matrix y = dropout(x, 0.0, true, rng, mask);
    CHECK((y - x).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("dropout backward routes gradients through the mask") {
    Rng rng(10);
    const Matrix x = Matrix::Constant(6, 6, 2.0);
    Matrix mask;
    dropout(x, 0.5, true, rng, mask);
    const Matrix dy = Matrix::Constant(6, 6, 1.0);
    const Matrix dx = dropout_backward(dy, mask);
    CHECK((dx - mask).cwiseAbs().maxCoeff() == 0.0);
    // Eval mode: empty mask, gradient passes through.
    Matrix empty;
    const Matrix dpass = dropout_backward(dy, empty);
    CHECK((dpass - dy).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("mha rows are convex combinations of value projections") {
    const int d = 8, heads = 2, n = 5;
    ModelConfig cfg;
    ModelWeights w(cfg);
    Rng rng(11);
    for (const char* nm : {"t.wq", "t.wk", "t.wv", "t.wo"}) {
        Param& p = w.add(nm, {static_cast<size_t>(d), static_cast<size_t>(d)});
        p.value = random_matrix(d, d, rng, 0.3);
    }
    for (const char* nm : {"t.bq", "t.bk", "t.bv", "t.bo"}) {
        Param& p = w.add(nm, {static_cast<size_t>(d)});
        p.value = random_matrix(1, d, rng, 0.1);
    }
    const Matrix x = random_matrix(n, d, rng);

    AttentionCache cache;
    Rng drop_rng(0);
    const Matrix y = mha_forward(w, "t", x, heads, nullptr, 0.0, false, drop_rng, cache);
    CHECK(y.rows() == n);
    CHECK(y.cols() == d);
    for (const auto& probs : cache.probs) {
        REQUIRE(probs.rows() == n);
        REQUIRE(probs.cols() == n);
        for (int i = 0; i < n; ++i) {
            CHECK(probs.row(i).sum() == doctest::Approx(1.0).epsilon(1e-10));
        }
    }
}

TEST_CASE("mha key mask removes masked positions from attention") {
    const int d = 4, heads = 1, n = 4;
    ModelConfig cfg;
    ModelWeights w(cfg);
    Rng rng(12);
    for (const char* nm : {"t.wq", "t.wk", "t.wv", "t.wo"}) {
        w.add(nm, {static_cast<size_t>(d), static_cast<size_t>(d)}).value =
            random_matrix(d, d, rng, 0.3);
    }
    for (const char* nm : {"t.bq", "t.bk", "t.bv", "t.bo"}) {
        w.add(nm, {static_cast<size_t>(d)}).value = random_matrix(1, d, rng, 0.1);
    }
    const Matrix x = random_matrix(n, d, rng);
    std::vector<bool> mask = {true, true, false, true};

    AttentionCache cache;
    Rng drop_rng(0);
    mha_forward(w, "t", x, heads, &mask, 0.0, false, drop_rng, cache);
    for (const auto& probs : cache.probs) {
        CHECK(probs.col(2).cwiseAbs().maxCoeff() == 0.0);
        for (int i = 0; i < n; ++i) {
            CHECK(probs.row(i).sum() == doctest::Approx(1.0).epsilon(1e-10));
        }
    }
}

TEST_CASE("mha backward matches finite differences") {
    const int d = 6, heads = 2, n = 4;
    ModelConfig cfg;
    ModelWeights w(cfg);
    Rng rng(13);
    for (const char* nm : {"t.wq", "t.wk", "t.wv", "t.wo"}) {
        w.add(nm, {static_cast<size_t>(d), static_cast<size_t>(d)}).value =
            random_matrix(d, d, rng, 0.4);
    }
    for (const char* nm : {"t.bq", "t.bk", "t.bv", "t.bo"}) {
        w.add(nm, {static_cast<size_t>(d)}).value = random_matrix(1, d, rng, 0.1);
    }
    Matrix x = random_matrix(n, d, rng);
    const Matrix dy = random_matrix(n, d, rng);
    std::vector<bool> mask = {true, true, true, false};

    Rng drop_rng(0);
    AttentionCache cache;
    mha_forward(w, "t", x, heads, &mask, 0.0, false, drop_rng, cache);
    const Matrix dx = mha_backward(w, "t", cache, dy, heads);

    auto loss = [&] {
        AttentionCache c;
        Rng r(0);
        return (mha_forward(w, "t", x, heads, &mask, 0.0, false, r, c).array() *
                dy.array())
            .sum();
    };
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j) {
            CHECK(dx(i, j) == doctest::Approx(fd(loss, x, i, j)).epsilon(2e-4));
        }
    }
    for (const char* nm : {"t.wq", "t.wk", "t.wv", "t.wo", "t.bq", "t.bk", "t.bv", "t.bo"}) {
        Param& p = w.at(nm);
        for (int i = 0; i < p.value.rows(); ++i) {
            for (int j = 0; j < p.value.cols(); ++j) {
                CHECK(p.grad(i, j) ==
                      doctest::Approx(fd(loss, p.value, i, j)).epsilon(2e-4));
            }
        }
    }
}

TEST_CASE("weights registry rejects duplicates and shape mismatches") {
    ModelConfig cfg;
    ModelWeights w(cfg);
    w.add("a", {2, 3});
    CHECK_THROWS(w.add("a", {2, 3}));
    CHECK_THROWS(w.at("missing"));
    CHECK(w.find("missing") == nullptr);
    CHECK_NOTHROW(w.ensure("a", {2, 3}));
    CHECK_THROWS(w.ensure("a", {3, 2}));
    CHECK(w.at("a").value.rows() == 2);
    CHECK(w.at("a").value.cols() == 3);
}

TEST_CASE("clip_grad_norm rescales only above the threshold") {
    ModelConfig cfg;
    ModelWeights w(cfg);
    Param& a = w.add("a", {2, 2});
    a.grad = Matrix::Constant(2, 2, 3.0);  // norm 6
    w.clip_grad_norm(5.0);
    CHECK(w.grad_norm() == doctest::Approx(5.0).epsilon(1e-12));
    const Matrix kept = a.grad;
    w.clip_grad_norm(5.0);
    CHECK((a.grad - kept).cwiseAbs().maxCoeff() < 1e-15);
    w.clip_grad_norm(100.0);
    CHECK((a.grad - kept).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("init_weights is deterministic in the seed") {
    ModelConfig cfg;
    cfg.hidden_dim = 8;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.ffn_dim = 16;
    cfg.max_seq_len = 8;
    cfg.token_vocab = 20;
    cfg.entity_vocab = 4;
    cfg.relation_vocab = 3;
    cfg.width_dim = 4;
    const ModelWeights a = init_weights(cfg, 42);
    const ModelWeights b = init_weights(cfg, 42);
    const ModelWeights c = init_weights(cfg, 43);
    REQUIRE(a.params().size() == b.params().size());
    bool any_diff = false;
    for (size_t i = 0; i < a.params().size(); ++i) {
        const auto& pa = *a.params()[i];
        const auto& pb = *b.params()[i];
        CHECK(pa.name == pb.name);
        CHECK((pa.value - pb.value).cwiseAbs().maxCoeff() == 0.0);
        const auto& pc = *c.params()[i];
        if ((pa.value - pc.value).cwiseAbs().maxCoeff() > 0) any_diff = true;
    }
    CHECK(any_diff);
}

TEST_CASE("init_weights skips decay on biases and layer norms") {
    ModelConfig cfg;
    cfg.hidden_dim = 8;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.ffn_dim = 16;
    cfg.max_seq_len = 8;
    cfg.token_vocab = 20;
    cfg.entity_vocab = 4;
    cfg.relation_vocab = 3;
    cfg.width_dim = 4;
    const ModelWeights w = init_weights(cfg, 0);
    for (const auto& p : w.params()) {
        const bool bias_like =
            p->name.find(".b") != std::string::npos ||
            p->name.find("ln") != std::string::npos ||
            p->name.find("bias") != std::string::npos;
        if (bias_like) CHECK_FALSE(p->weight_decay);
    }
}

}  // TEST_SUITE
