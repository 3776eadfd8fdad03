#include "spankt/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace spankt {

namespace {
constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;
constexpr double kMaskedScore = -1e30;
}  // namespace

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

double gelu_grad(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
    const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
    return cdf + x * pdf;
}

Matrix gelu(const Matrix& x) {
    return x.unaryExpr([](double v) { return gelu(v); });
}

Matrix linear(const Matrix& x, const Param& w, const Param& b) {
    Matrix y = x * w.value;
    y.rowwise() += b.value.row(0);
    return y;
}

Matrix linear_backward(const Matrix& x, const Matrix& dy, Param& w, Param& b) {
    w.grad.noalias() += x.transpose() * dy;
    b.grad.row(0) += dy.colwise().sum();
    return dy * w.value.transpose();
}

Matrix layer_norm(const Matrix& x, const Param& gain, const Param& bias,
                  LayerNormCache* cache) {
    Eigen::VectorXd mean = x.rowwise().mean();
    Matrix centered = x.colwise() - mean;
    Eigen::VectorXd var = centered.cwiseProduct(centered).rowwise().mean();
    Eigen::VectorXd inv_std = (var.array() + kLayerNormEps).rsqrt().matrix();
    Matrix xhat = (centered.array().colwise() * inv_std.array()).matrix();
    Matrix y = (xhat.array().rowwise() * gain.value.row(0).array()).matrix();
    y.rowwise() += bias.value.row(0);
    if (cache) {
        cache->xhat = std::move(xhat);
        cache->inv_std = std::move(inv_std);
    }
    return y;
}

Matrix layer_norm_backward(const Matrix& dy, const LayerNormCache& cache,
                           Param& gain, Param& bias) {
    gain.grad.row(0) += dy.cwiseProduct(cache.xhat).colwise().sum();
    bias.grad.row(0) += dy.colwise().sum();

    Matrix dxhat = (dy.array().rowwise() * gain.value.row(0).array()).matrix();
    Eigen::VectorXd mean_dxhat = dxhat.rowwise().mean();
    Eigen::VectorXd mean_dxhat_xhat = dxhat.cwiseProduct(cache.xhat).rowwise().mean();
    Matrix dx = dxhat;
    dx.colwise() -= mean_dxhat;
    dx -= (cache.xhat.array().colwise() * mean_dxhat_xhat.array()).matrix();
    dx.array().colwise() *= cache.inv_std.array();
    return dx;
}

Matrix softmax_rows(const Matrix& scores) {
    Eigen::VectorXd row_max = scores.rowwise().maxCoeff();
    Matrix p = (scores.colwise() - row_max).array().exp().matrix();
    Eigen::VectorXd sums = p.rowwise().sum();
    p.array().colwise() /= sums.array();
    return p;
}

Matrix softmax_rows_backward(const Matrix& probs, const Matrix& dprobs) {
    Eigen::VectorXd dot = dprobs.cwiseProduct(probs).rowwise().sum();
    Matrix ds = dprobs;
    ds.colwise() -= dot;
    return ds.cwiseProduct(probs);
}

Matrix dropout(const Matrix& x, double p, bool train, Rng& rng, Matrix& mask) {
    if (!train || p <= 0.0) {
        mask.resize(0, 0);
        return x;
    }
    const double scale = 1.0 / (1.0 - p);
    mask.resize(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < mask.rows(); ++r) {
        for (Eigen::Index c = 0; c < mask.cols(); ++c) {
            mask(r, c) = rng.uniform() < p ? 0.0 : scale;
        }
    }
    return x.cwiseProduct(mask);
}

Matrix dropout_backward(const Matrix& dy, const Matrix& mask) {
    if (mask.size() == 0) return dy;
    return dy.cwiseProduct(mask);
}

Matrix mha_forward(ModelWeights& w, const std::string& prefix, const Matrix& x,
                   int heads, const std::vector<bool>* key_mask,
                   double attn_dropout, bool train, Rng& rng,
                   AttentionCache& cache) {
    const auto n = x.rows();
    const auto d = x.cols();
    if (d % heads != 0) throw std::invalid_argument("dim not divisible by heads");
    const Eigen::Index dh = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    cache.x = x;
    cache.q = linear(x, w.at(prefix + ".wq"), w.at(prefix + ".bq"));
    cache.k = linear(x, w.at(prefix + ".wk"), w.at(prefix + ".bk"));
    cache.v = linear(x, w.at(prefix + ".wv"), w.at(prefix + ".bv"));
    cache.probs.assign(static_cast<size_t>(heads), Matrix());
    cache.drop_masks.assign(static_cast<size_t>(heads), Matrix());
    cache.ctx.resize(n, d);

    for (int h = 0; h < heads; ++h) {
        const auto qh = cache.q.middleCols(h * dh, dh);
        const auto kh = cache.k.middleCols(h * dh, dh);
        const auto vh = cache.v.middleCols(h * dh, dh);
        Matrix scores = qh * kh.transpose() * scale;
        if (key_mask) {
            for (Eigen::Index j = 0; j < n; ++j) {
                if (!(*key_mask)[static_cast<size_t>(j)]) scores.col(j).setConstant(kMaskedScore);
            }
        }
        Matrix probs = softmax_rows(scores);
        cache.probs[static_cast<size_t>(h)] = probs;
        Matrix dropped = dropout(probs, attn_dropout, train, rng,
                                 cache.drop_masks[static_cast<size_t>(h)]);
        cache.ctx.middleCols(h * dh, dh).noalias() = dropped * vh;
    }
    return linear(cache.ctx, w.at(prefix + ".wo"), w.at(prefix + ".bo"));
}

Matrix mha_backward(ModelWeights& w, const std::string& prefix,
                    const AttentionCache& cache, const Matrix& d_out, int heads) {
    const auto n = cache.x.rows();
    const auto d = cache.x.cols();
    const Eigen::Index dh = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    Matrix d_ctx = linear_backward(cache.ctx, d_out, w.at(prefix + ".wo"), w.at(prefix + ".bo"));
    Matrix dq(n, d), dk(n, d), dv(n, d);

    for (int h = 0; h < heads; ++h) {
        const auto kh = cache.k.middleCols(h * dh, dh);
        const auto qh = cache.q.middleCols(h * dh, dh);
        const auto vh = cache.v.middleCols(h * dh, dh);
        const Matrix& probs = cache.probs[static_cast<size_t>(h)];
        const Matrix& mask = cache.drop_masks[static_cast<size_t>(h)];
        const Matrix dropped = mask.size() ? probs.cwiseProduct(mask) : probs;

        const auto d_ctx_h = d_ctx.middleCols(h * dh, dh);
        dv.middleCols(h * dh, dh).noalias() = dropped.transpose() * d_ctx_h;
        Matrix d_dropped = d_ctx_h * vh.transpose();
        Matrix d_probs = dropout_backward(d_dropped, mask);
        Matrix d_scores = softmax_rows_backward(probs, d_probs);
        dq.middleCols(h * dh, dh).noalias() = d_scores * kh * scale;
        dk.middleCols(h * dh, dh).noalias() = d_scores.transpose() * qh * scale;
    }

    Matrix dx = linear_backward(cache.x, dq, w.at(prefix + ".wq"), w.at(prefix + ".bq"));
    dx += linear_backward(cache.x, dk, w.at(prefix + ".wk"), w.at(prefix + ".bk"));
    dx += linear_backward(cache.x, dv, w.at(prefix + ".wv"), w.at(prefix + ".bv"));
    return dx;
}

}  // namespace spankt
