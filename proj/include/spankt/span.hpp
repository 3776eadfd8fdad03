#pragma once

#include <utility>
#include <vector>

#include "spankt/nn.hpp"
#include "spankt/weights.hpp"

namespace spankt {

using Span = std::pair<int, int>;  // inclusive token indices

struct SpanRep {
    Span span;
    Eigen::VectorXd vec;
};

// Intermediates of one span_rep call, consumed by span_rep_backward.
struct SpanRepCache {
    Span span;
    SpanRepMethod method = SpanRepMethod::kEndAtt;
    int width_row = 0;                 // clamped width embedding row
    Matrix attn_pre;                   // scorer hidden pre-activation (len, d)
    Matrix attn_act;                   // gelu(attn_pre)
    Eigen::VectorXd attn_weights;      // softmax over span positions
    std::vector<Eigen::Index> argmax;  // per dim, row index of the max (maxpool)
};

// [w_start, w_end, E_w[width]] with the width index clamped to the last row.
Eigen::VectorXd endpoint_rep(const Matrix& tokens, Span span, const Param& width_emb,
                             int* width_row = nullptr);

// Softmax-weighted sum of the span's token vectors, scored by the shared
// span.attn_ffn scorer.
Eigen::VectorXd selfattn_rep(ModelWeights& w, const Matrix& tokens, Span span,
                             SpanRepCache* cache = nullptr);

// Elementwise max over the span's token vectors. Ties keep the first index.
Eigen::VectorXd maxpool_rep(const Matrix& tokens, Span span,
                            std::vector<Eigen::Index>* argmax = nullptr);

// Dispatches on method; concatenation variants append parts in the order
// endpoint, selfattn, maxpool.
Eigen::VectorXd span_rep(ModelWeights& w, const Matrix& tokens, Span span,
                         SpanRepMethod method, SpanRepCache* cache = nullptr);

// Accumulates span.* parameter gradients and adds token gradients into
// d_tokens (same shape as tokens).
void span_rep_backward(ModelWeights& w, const Matrix& tokens, const SpanRepCache& cache,
                       const Eigen::VectorXd& d_rep, Matrix& d_tokens);

// All spans through the configured method, in input order, as rows.
Matrix span_rep_batch(ModelWeights& w, const Matrix& tokens, const std::vector<Span>& spans,
                      SpanRepMethod method, std::vector<SpanRepCache>* caches = nullptr);

}  // namespace spankt
