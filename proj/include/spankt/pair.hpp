#pragma once

#include <vector>

#include "spankt/nn.hpp"
#include "spankt/weights.hpp"

namespace spankt {

struct PairAttnLayerCache {
    AttentionCache attn;
    Matrix drop_mask;
    LayerNormCache ln;
};

struct PairContextCache {
    Matrix e_in;  // (m, span_dim) raw span reps
    Matrix proj;  // (m, d) after input projection
    std::vector<PairAttnLayerCache> layers;
    Matrix ctx;  // (m, d) contextualized span reps
};

// Projects span reps to hidden_dim and runs the pair attention stack
// (self-attention blocks with residual + layer norm, no positional encoding,
// so the map is permutation-equivariant). m >= 1 required.
Matrix contextualize_spans(ModelWeights& w, const Matrix& span_reps, bool train_mode,
                           Rng& rng, PairContextCache& cache);
// Returns d(span_reps).
Matrix contextualize_spans_backward(ModelWeights& w, const PairContextCache& cache,
                                    const Matrix& d_ctx);

struct PairRepCache {
    int i = 0, j = 0;
    Matrix pre;  // (1, d)
    Matrix act;
};

// r_ij = FFNN([ctx_i, ctx_j]); direction-sensitive, i != j required.
Eigen::VectorXd pair_rep(ModelWeights& w, const Matrix& ctx, int i, int j,
                         PairRepCache* cache = nullptr);
// Accumulates pair.ffn gradients and adds into d_ctx rows i and j.
void pair_rep_backward(ModelWeights& w, const Matrix& ctx, const PairRepCache& cache,
                       const Eigen::VectorXd& d_rep, Matrix& d_ctx);

}  // namespace spankt
