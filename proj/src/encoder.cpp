#include "spankt/encoder.hpp"

#include <stdexcept>
#include <string>

#include "spankt/corpus.hpp"

namespace spankt {

namespace {
std::string layer_prefix(int l) { return "enc." + std::to_string(l); }
}  // namespace

Matrix encode_sequence(ModelWeights& w, const std::vector<int>& token_ids,
                       const std::vector<bool>& attn_mask, bool train_mode,
                       Rng& rng, EncoderCache* cache) {
    const ModelConfig& cfg = w.config();
    const auto n = static_cast<Eigen::Index>(token_ids.size());
    if (n == 0) throw std::invalid_argument("empty token sequence");
    if (n > cfg.max_seq_len) {
        throw CorpusError("sequence length " + std::to_string(n) + " exceeds max_seq_len " +
                          std::to_string(cfg.max_seq_len));
    }
    if (attn_mask.size() != token_ids.size()) {
        throw std::invalid_argument("attention mask length mismatch");
    }

    EncoderCache local;
    EncoderCache& c = cache ? *cache : local;
    c.token_ids = token_ids;
    c.attn_mask = attn_mask;
    c.train_mode = train_mode;

    const Matrix& tok = w.at("tok_emb").value;
    const Matrix& pos = w.at("pos_emb").value;
    const Matrix& seg = w.at("seg_emb").value;
    Matrix x(n, cfg.hidden_dim);
    for (Eigen::Index i = 0; i < n; ++i) {
        const int id = token_ids[static_cast<size_t>(i)];
        if (id < 0 || id >= cfg.token_vocab) {
            throw std::invalid_argument("token id out of range: " + std::to_string(id));
        }
        x.row(i) = tok.row(id) + pos.row(i) + seg.row(0);
    }
    x = layer_norm(x, w.at("emb_ln.gain"), w.at("emb_ln.bias"), &c.emb_ln);
    x = dropout(x, cfg.dropout_lm, train_mode, rng, c.emb_drop_mask);
    c.x0 = x;

    c.layers.resize(static_cast<size_t>(cfg.layers));
    for (int l = 0; l < cfg.layers; ++l) {
        EncoderLayerCache& lc = c.layers[static_cast<size_t>(l)];
        const std::string p = layer_prefix(l);

        Matrix att = mha_forward(w, p + ".attn", x, cfg.heads, &c.attn_mask,
                                 cfg.dropout_lm, train_mode, rng, lc.attn);
        att = dropout(att, cfg.dropout_lm, train_mode, rng, lc.attn_drop_mask);
        Matrix x1 = layer_norm(x + att, w.at(p + ".ln1.gain"), w.at(p + ".ln1.bias"), &lc.ln1);
        lc.x1 = x1;

        lc.ffn_pre = linear(x1, w.at(p + ".ffn.w1"), w.at(p + ".ffn.b1"));
        lc.ffn_act = gelu(lc.ffn_pre);
        Matrix f = linear(lc.ffn_act, w.at(p + ".ffn.w2"), w.at(p + ".ffn.b2"));
        f = dropout(f, cfg.dropout_lm, train_mode, rng, lc.ffn_drop_mask);
        x = layer_norm(x1 + f, w.at(p + ".ln2.gain"), w.at(p + ".ln2.bias"), &lc.ln2);
    }
    c.out = x;
    return x;
}

Matrix encode_sequence(ModelWeights& w, const std::vector<int>& token_ids,
                       bool train_mode, Rng& rng, EncoderCache* cache) {
    return encode_sequence(w, token_ids, std::vector<bool>(token_ids.size(), true),
                           train_mode, rng, cache);
}

void encoder_backward(ModelWeights& w, const EncoderCache& cache, const Matrix& d_out) {
    const ModelConfig& cfg = w.config();
    Matrix dx = d_out;

    for (int l = cfg.layers - 1; l >= 0; --l) {
        const EncoderLayerCache& lc = cache.layers[static_cast<size_t>(l)];
        const std::string p = layer_prefix(l);

        // x2 = ln2(x1 + drop(ffn(x1)))
        Matrix d_res2 = layer_norm_backward(dx, lc.ln2, w.at(p + ".ln2.gain"),
                                            w.at(p + ".ln2.bias"));
        Matrix d_f = dropout_backward(d_res2, lc.ffn_drop_mask);
        Matrix d_act = linear_backward(lc.ffn_act, d_f, w.at(p + ".ffn.w2"), w.at(p + ".ffn.b2"));
        Matrix d_pre = d_act.cwiseProduct(
            lc.ffn_pre.unaryExpr([](double v) { return gelu_grad(v); }));
        Matrix d_x1 = d_res2;
        d_x1 += linear_backward(lc.x1, d_pre, w.at(p + ".ffn.w1"), w.at(p + ".ffn.b1"));

        // x1 = ln1(x + drop(attn(x)))
        Matrix d_res1 = layer_norm_backward(d_x1, lc.ln1, w.at(p + ".ln1.gain"),
                                            w.at(p + ".ln1.bias"));
        Matrix d_att = dropout_backward(d_res1, lc.attn_drop_mask);
        dx = d_res1;
        dx += mha_backward(w, p + ".attn", lc.attn, d_att, cfg.heads);
    }

    // x0 = drop(ln(tok + pos + seg))
    Matrix d_ln = dropout_backward(dx, cache.emb_drop_mask);
    Matrix d_emb = layer_norm_backward(d_ln, cache.emb_ln, w.at("emb_ln.gain"),
                                       w.at("emb_ln.bias"));

    Matrix& d_tok = w.at("tok_emb").grad;
    Matrix& d_pos = w.at("pos_emb").grad;
    Matrix& d_seg = w.at("seg_emb").grad;
    for (Eigen::Index i = 0; i < d_emb.rows(); ++i) {
        d_tok.row(cache.token_ids[static_cast<size_t>(i)]) += d_emb.row(i);
        d_pos.row(i) += d_emb.row(i);
        d_seg.row(0) += d_emb.row(i);
    }
}

}  // namespace spankt
