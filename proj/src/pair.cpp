#include "spankt/pair.hpp"

#include <stdexcept>
#include <string>

namespace spankt {

namespace {
std::string block_prefix(int l) { return "pair.attn." + std::to_string(l); }
}  // namespace

Matrix contextualize_spans(ModelWeights& w, const Matrix& span_reps, bool train_mode,
                           Rng& rng, PairContextCache& cache) {
    if (span_reps.rows() == 0) throw std::invalid_argument("no spans to contextualize");
    const ModelConfig& cfg = w.config();

    cache.e_in = span_reps;
    Matrix x = linear(span_reps, w.at("pair.in_proj.w"), w.at("pair.in_proj.b"));
    cache.proj = x;

    cache.layers.resize(static_cast<size_t>(cfg.pair_attn_layers));
    for (int l = 0; l < cfg.pair_attn_layers; ++l) {
        PairAttnLayerCache& lc = cache.layers[static_cast<size_t>(l)];
        const std::string p = block_prefix(l);
        Matrix att = mha_forward(w, p, x, cfg.pair_attn_heads, nullptr, cfg.dropout_lm,
                                 train_mode, rng, lc.attn);
        att = dropout(att, cfg.dropout_lm, train_mode, rng, lc.drop_mask);
        x = layer_norm(x + att, w.at(p + ".ln.gain"), w.at(p + ".ln.bias"), &lc.ln);
    }
    cache.ctx = x;
    return x;
}

Matrix contextualize_spans_backward(ModelWeights& w, const PairContextCache& cache,
                                    const Matrix& d_ctx) {
    const ModelConfig& cfg = w.config();
    Matrix dx = d_ctx;
    for (int l = cfg.pair_attn_layers - 1; l >= 0; --l) {
        const PairAttnLayerCache& lc = cache.layers[static_cast<size_t>(l)];
        const std::string p = block_prefix(l);
        Matrix d_res = layer_norm_backward(dx, lc.ln, w.at(p + ".ln.gain"), w.at(p + ".ln.bias"));
        Matrix d_att = dropout_backward(d_res, lc.drop_mask);
        dx = d_res;
        dx += mha_backward(w, p, lc.attn, d_att, cfg.pair_attn_heads);
    }
    return linear_backward(cache.e_in, dx, w.at("pair.in_proj.w"), w.at("pair.in_proj.b"));
}

Eigen::VectorXd pair_rep(ModelWeights& w, const Matrix& ctx, int i, int j,
                         PairRepCache* cache) {
    if (i == j) throw std::invalid_argument("pair_rep requires distinct spans");
    if (i < 0 || j < 0 || i >= ctx.rows() || j >= ctx.rows()) {
        throw std::invalid_argument("pair index out of range");
    }
    const auto d = ctx.cols();
    Matrix z(1, 2 * d);
    z.leftCols(d) = ctx.row(i);
    z.rightCols(d) = ctx.row(j);

    Matrix pre = linear(z, w.at("pair.ffn.w1"), w.at("pair.ffn.b1"));
    Matrix act = gelu(pre);
    Matrix out = linear(act, w.at("pair.ffn.w2"), w.at("pair.ffn.b2"));
    if (cache) {
        cache->i = i;
        cache->j = j;
        cache->pre = std::move(pre);
        cache->act = std::move(act);
    }
    return out.row(0).transpose();
}

void pair_rep_backward(ModelWeights& w, const Matrix& ctx, const PairRepCache& cache,
                       const Eigen::VectorXd& d_rep, Matrix& d_ctx) {
    const auto d = ctx.cols();
    Matrix z(1, 2 * d);
    z.leftCols(d) = ctx.row(cache.i);
    z.rightCols(d) = ctx.row(cache.j);

    Matrix d_out = d_rep.transpose();
    Matrix d_act = linear_backward(cache.act, d_out, w.at("pair.ffn.w2"), w.at("pair.ffn.b2"));
    Matrix d_pre = d_act.cwiseProduct(
        cache.pre.unaryExpr([](double v) { return gelu_grad(v); }));
    Matrix d_z = linear_backward(z, d_pre, w.at("pair.ffn.w1"), w.at("pair.ffn.b1"));

    d_ctx.row(cache.i) += d_z.leftCols(d);
    d_ctx.row(cache.j) += d_z.rightCols(d);
}

}  // namespace spankt
