#include "spankt/config.hpp"

#include <algorithm>
#include <sstream>

namespace spankt {

SpanRepMethod span_method_from_string(const std::string& name) {
    if (name == "endpoint") return SpanRepMethod::kEndPoint;
    if (name == "selfattn") return SpanRepMethod::kSelfAttn;
    if (name == "maxpool") return SpanRepMethod::kMaxPool;
    if (name == "end_att") return SpanRepMethod::kEndAtt;
    if (name == "end_max") return SpanRepMethod::kEndMax;
    if (name == "att_max") return SpanRepMethod::kAttMax;
    throw std::invalid_argument("unknown span method: " + name);
}

std::string span_method_name(SpanRepMethod m) {
    switch (m) {
        case SpanRepMethod::kEndPoint: return "endpoint";
        case SpanRepMethod::kSelfAttn: return "selfattn";
        case SpanRepMethod::kMaxPool: return "maxpool";
        case SpanRepMethod::kEndAtt: return "end_att";
        case SpanRepMethod::kEndMax: return "end_max";
        case SpanRepMethod::kAttMax: return "att_max";
    }
    throw std::invalid_argument("unknown span method enum value");
}

void ModelConfig::validate() const {
    auto require = [](bool ok, const std::string& what) {
        if (!ok) throw std::invalid_argument("invalid model config: " + what);
    };
    require(hidden_dim > 0, "hidden_dim must be > 0");
    require(layers >= 0, "layers must be >= 0");
    require(heads > 0 && hidden_dim % heads == 0, "hidden_dim must be divisible by heads");
    require(ffn_dim > 0, "ffn_dim must be > 0");
    require(max_seq_len > 0, "max_seq_len must be > 0");
    require(token_vocab > 0, "token_vocab must be > 0");
    require(entity_vocab > 0, "entity_vocab must be > 0");
    require(relation_vocab > 0, "relation_vocab must be > 0");
    require(width_dim > 0, "width_dim must be > 0");
    require(max_span_len >= 1, "max_span_len must be >= 1");
    require(pair_attn_layers >= 1, "pair_attn_layers must be >= 1");
    require(pair_attn_heads > 0 && hidden_dim % pair_attn_heads == 0,
            "hidden_dim must be divisible by pair_attn_heads");
    require(dropout_lm >= 0 && dropout_lm < 1, "dropout_lm must be in [0,1)");
    require(dropout_task >= 0 && dropout_task < 1, "dropout_task must be in [0,1)");
}

int ModelConfig::span_rep_dim(SpanRepMethod m) const {
    const int endpoint = 2 * hidden_dim + width_dim;
    switch (m) {
        case SpanRepMethod::kEndPoint: return endpoint;
        case SpanRepMethod::kSelfAttn: return hidden_dim;
        case SpanRepMethod::kMaxPool: return hidden_dim;
        case SpanRepMethod::kEndAtt: return endpoint + hidden_dim;
        case SpanRepMethod::kEndMax: return endpoint + hidden_dim;
        case SpanRepMethod::kAttMax: return 2 * hidden_dim;
    }
    throw std::invalid_argument("unknown span method enum value");
}

int ModelConfig::span_rep_dim() const { return span_rep_dim(span_method); }

int ModelConfig::resolved_ent_cutoff() const {
    int c = ent_cutoff > 0 ? ent_cutoff : entity_vocab / 4;
    return std::clamp(c, 1, std::max(1, entity_vocab - 1));
}

std::map<std::string, std::string> ModelConfig::to_kv() const {
    std::map<std::string, std::string> kv;
    auto put = [&kv](const std::string& k, auto v) {
        std::ostringstream os;
        os << v;
        kv[k] = os.str();
    };
    put("hidden_dim", hidden_dim);
    put("layers", layers);
    put("heads", heads);
    put("ffn_dim", ffn_dim);
    put("max_seq_len", max_seq_len);
    put("token_vocab", token_vocab);
    put("entity_vocab", entity_vocab);
    put("relation_vocab", relation_vocab);
    put("width_dim", width_dim);
    put("max_span_len", max_span_len);
    put("pair_attn_layers", pair_attn_layers);
    put("pair_attn_heads", pair_attn_heads);
    put("dropout_lm", dropout_lm);
    put("dropout_task", dropout_task);
    kv["span_method"] = span_method_name(span_method);
    put("ent_cutoff", ent_cutoff);
    return kv;
}

ModelConfig ModelConfig::from_kv(const std::map<std::string, std::string>& kv) {
    ModelConfig c;
    auto geti = [&kv](const std::string& k, int& out) {
        auto it = kv.find(k);
        if (it != kv.end()) out = std::stoi(it->second);
    };
    auto getd = [&kv](const std::string& k, double& out) {
        auto it = kv.find(k);
        if (it != kv.end()) out = std::stod(it->second);
    };
    geti("hidden_dim", c.hidden_dim);
    geti("layers", c.layers);
    geti("heads", c.heads);
    geti("ffn_dim", c.ffn_dim);
    geti("max_seq_len", c.max_seq_len);
    geti("token_vocab", c.token_vocab);
    geti("entity_vocab", c.entity_vocab);
    geti("relation_vocab", c.relation_vocab);
    geti("width_dim", c.width_dim);
    geti("max_span_len", c.max_span_len);
    geti("pair_attn_layers", c.pair_attn_layers);
    geti("pair_attn_heads", c.pair_attn_heads);
    getd("dropout_lm", c.dropout_lm);
    getd("dropout_task", c.dropout_task);
    geti("ent_cutoff", c.ent_cutoff);
    auto it = kv.find("span_method");
    if (it != kv.end()) c.span_method = span_method_from_string(it->second);
    return c;
}

void MaskingConfig::validate() const {
    auto in01 = [](double x) { return x >= 0.0 && x <= 1.0; };
    if (!in01(token_mask_rate) || !in01(entity_mask_rate) ||
        !in01(random_replace_frac) || !in01(keep_frac)) {
        throw std::invalid_argument("masking rates must be in [0,1]");
    }
    if (random_replace_frac + keep_frac > 1.0) {
        throw std::invalid_argument("random_replace_frac + keep_frac must be <= 1");
    }
}

}  // namespace spankt
