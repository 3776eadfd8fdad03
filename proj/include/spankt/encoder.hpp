#pragma once

#include <vector>

#include "spankt/nn.hpp"
#include "spankt/weights.hpp"

namespace spankt {

struct EncoderLayerCache {
    AttentionCache attn;
    Matrix attn_drop_mask;
    LayerNormCache ln1;
    Matrix x1;        // ln1 output, input to the feed-forward
    Matrix ffn_pre;   // x1 w1 + b1
    Matrix ffn_act;   // gelu(ffn_pre)
    Matrix ffn_drop_mask;
    LayerNormCache ln2;
};

// Everything the backward pass needs from one forward call.
struct EncoderCache {
    std::vector<int> token_ids;
    std::vector<bool> attn_mask;
    bool train_mode = false;
    LayerNormCache emb_ln;
    Matrix emb_drop_mask;
    Matrix x0;  // embedded, normed, dropped input to layer 0
    std::vector<EncoderLayerCache> layers;
    Matrix out;  // final hidden states (n, d)
};

// Contextual token representations for one sequence. attn_mask marks real
// positions; padded positions are excluded as attention keys. Dropout is
// active only in train mode and draws from rng. The cache, when given, is
// filled for encoder_backward.
Matrix encode_sequence(ModelWeights& w, const std::vector<int>& token_ids,
                       const std::vector<bool>& attn_mask, bool train_mode,
                       Rng& rng, EncoderCache* cache = nullptr);
// All positions attended.
Matrix encode_sequence(ModelWeights& w, const std::vector<int>& token_ids,
                       bool train_mode, Rng& rng, EncoderCache* cache = nullptr);

// Accumulates gradients for every encoder tensor given d(out).
void encoder_backward(ModelWeights& w, const EncoderCache& cache, const Matrix& d_out);

}  // namespace spankt
