#pragma once

#include <string>
#include <vector>

#include "spankt/rng.hpp"
#include "spankt/weights.hpp"

namespace spankt {

constexpr double kLayerNormEps = 1e-5;

// Exact GELU: x * Phi(x) with Phi the standard normal CDF.
double gelu(double x);
double gelu_grad(double x);
Matrix gelu(const Matrix& x);

// y = x W + b with b broadcast over rows. w is (in, out), b is a 1 x out row.
Matrix linear(const Matrix& x, const Param& w, const Param& b);
// Accumulates w.grad and b.grad, returns dx.
Matrix linear_backward(const Matrix& x, const Matrix& dy, Param& w, Param& b);

struct LayerNormCache {
    Matrix xhat;              // (x - mean) / std, per row
    Eigen::VectorXd inv_std;  // per row
};

// Row-wise layer norm: y = gain .* xhat + bias.
Matrix layer_norm(const Matrix& x, const Param& gain, const Param& bias,
                  LayerNormCache* cache = nullptr);
// Accumulates gain.grad and bias.grad, returns dx.
Matrix layer_norm_backward(const Matrix& dy, const LayerNormCache& cache,
                           Param& gain, Param& bias);

// Numerically stable row-wise softmax.
Matrix softmax_rows(const Matrix& scores);
// dscores given probs = softmax_rows(scores) and dprobs.
Matrix softmax_rows_backward(const Matrix& probs, const Matrix& dprobs);

// Inverted dropout. In train mode fills `mask` with 0 or 1/(1-p) entries and
// returns x .* mask; otherwise leaves `mask` empty and returns x unchanged.
Matrix dropout(const Matrix& x, double p, bool train, Rng& rng, Matrix& mask);
// Identity when the mask is empty (eval-mode forward).
Matrix dropout_backward(const Matrix& dy, const Matrix& mask);

// One multi-head self-attention sublayer (projection included, residual and
// layer norm left to the caller). Weights are looked up under `prefix` as
// wq/wk/wv/wo and bq/bk/bv/bo.
struct AttentionCache {
    Matrix x;
    Matrix q, k, v;
    std::vector<Matrix> probs;       // per head, post-softmax
    std::vector<Matrix> drop_masks;  // per head, empty in eval mode
    Matrix ctx;                      // concatenated head outputs
};

// key_mask: nullptr means every position is attended; otherwise positions
// with false are excluded as keys. attn_dropout applies to the probabilities.
Matrix mha_forward(ModelWeights& w, const std::string& prefix, const Matrix& x,
                   int heads, const std::vector<bool>* key_mask,
                   double attn_dropout, bool train, Rng& rng,
                   AttentionCache& cache);
Matrix mha_backward(ModelWeights& w, const std::string& prefix,
                    const AttentionCache& cache, const Matrix& d_out, int heads);

}  // namespace spankt
