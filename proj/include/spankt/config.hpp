#pragma once

#include <map>
#include <stdexcept>
#include <string>

namespace spankt {

// Span representation variants and their concatenations.
enum class SpanRepMethod {
    kEndPoint,
    kSelfAttn,
    kMaxPool,
    kEndAtt,   // default: concat(EndPoint, SelfAttn)
    kEndMax,
    kAttMax,
};

SpanRepMethod span_method_from_string(const std::string& name);
std::string span_method_name(SpanRepMethod m);

struct ModelConfig {
    int hidden_dim = 64;
    int layers = 4;
    int heads = 4;
    int ffn_dim = 256;
    int max_seq_len = 64;
    int token_vocab = 0;
    int entity_vocab = 0;    // including NIL at index 0
    int relation_vocab = 0;  // including NO_REL at index 0
    int width_dim = 16;
    int max_span_len = 8;
    int pair_attn_layers = 2;
    int pair_attn_heads = 8;
    double dropout_lm = 0.1;
    double dropout_task = 0.3;
    SpanRepMethod span_method = SpanRepMethod::kEndAtt;
    // Entities in the adaptive softmax head cluster; <= 0 means entity_vocab/4.
    int ent_cutoff = 0;

    void validate() const;  // throws std::invalid_argument

    int span_rep_dim() const;                      // output dim of span_method
    int span_rep_dim(SpanRepMethod m) const;
    int resolved_ent_cutoff() const;               // clamped to [1, entity_vocab-1]

    std::map<std::string, std::string> to_kv() const;
    static ModelConfig from_kv(const std::map<std::string, std::string>& kv);
};

// Masking rates for the token-level pretraining objective.
struct MaskingConfig {
    double token_mask_rate = 0.10;    // independent, non-entity tokens
    double entity_mask_rate = 0.20;   // whole-entity masking
    double random_replace_frac = 0.10;  // of masked positions
    double keep_frac = 0.10;            // of masked positions

    void validate() const;
};

}  // namespace spankt
