#include "spankt/weights.hpp"

#include <cmath>
#include <sstream>

namespace spankt {

namespace {

std::pair<size_t, size_t> matrix_shape(const std::vector<size_t>& dims) {
    if (dims.empty()) throw std::invalid_argument("tensor must have rank >= 1");
    if (dims.size() == 1) return {1, dims[0]};
    size_t cols = 1;
    for (size_t i = 1; i < dims.size(); ++i) cols *= dims[i];
    return {dims[0], cols};
}

}  // namespace

ModelWeights::ModelWeights(const ModelWeights& other) : cfg_(other.cfg_) {
    for (const auto& p : other.params_) {
        auto copy = std::make_unique<Param>(*p);
        by_name_[copy->name] = copy.get();
        params_.push_back(std::move(copy));
    }
}

ModelWeights& ModelWeights::operator=(const ModelWeights& other) {
    if (this == &other) return *this;
    cfg_ = other.cfg_;
    params_.clear();
    by_name_.clear();
    for (const auto& p : other.params_) {
        auto copy = std::make_unique<Param>(*p);
        by_name_[copy->name] = copy.get();
        params_.push_back(std::move(copy));
    }
    return *this;
}

Param& ModelWeights::add(const std::string& name, std::vector<size_t> dims, bool decay) {
    if (by_name_.count(name)) throw std::invalid_argument("duplicate tensor name: " + name);
    auto [rows, cols] = matrix_shape(dims);
    auto p = std::make_unique<Param>();
    p->name = name;
    p->dims = std::move(dims);
    p->value = Matrix::Zero(rows, cols);
    p->grad = Matrix::Zero(rows, cols);
    p->weight_decay = decay;
    Param& ref = *p;
    by_name_[name] = p.get();
    params_.push_back(std::move(p));
    return ref;
}

Param& ModelWeights::at(const std::string& name) {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) throw std::invalid_argument("missing tensor: " + name);
    return *it->second;
}

const Param& ModelWeights::at(const std::string& name) const {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) throw std::invalid_argument("missing tensor: " + name);
    return *it->second;
}

Param* ModelWeights::find(const std::string& name) {
    auto it = by_name_.find(name);
    return it == by_name_.end() ? nullptr : it->second;
}

const Param* ModelWeights::find(const std::string& name) const {
    auto it = by_name_.find(name);
    return it == by_name_.end() ? nullptr : it->second;
}

Param& ModelWeights::ensure(const std::string& name, std::vector<size_t> dims, bool decay) {
    if (Param* p = find(name)) {
        if (p->dims != dims) {
            std::ostringstream os;
            os << "tensor '" << name << "' exists with different shape";
            throw std::invalid_argument(os.str());
        }
        return *p;
    }
    return add(name, std::move(dims), decay);
}

void ModelWeights::zero_grads() {
    for (auto& p : params_) p->grad.setZero();
}

double ModelWeights::grad_norm() const {
    double sq = 0.0;
    for (const auto& p : params_) sq += p->grad.squaredNorm();
    return std::sqrt(sq);
}

void ModelWeights::clip_grad_norm(double max_norm) {
    const double norm = grad_norm();
    if (norm > max_norm && norm > 0.0) {
        const double scale = max_norm / norm;
        for (auto& p : params_) p->grad *= scale;
    }
}

bool ModelWeights::all_finite() const {
    for (const auto& p : params_) {
        if (!p->value.allFinite()) return false;
    }
    return true;
}

void init_gaussian(Param& p, Rng& rng, double scale) {
    for (Eigen::Index r = 0; r < p.value.rows(); ++r) {
        for (Eigen::Index c = 0; c < p.value.cols(); ++c) {
            p.value(r, c) = scale * rng.normal();
        }
    }
}

namespace {

void add_layer_norm(ModelWeights& w, const std::string& prefix, size_t dim) {
    w.add(prefix + ".gain", {dim}, false).value.setOnes();
    w.add(prefix + ".bias", {dim}, false);
}

void add_attention(ModelWeights& w, Rng& rng, const std::string& prefix, size_t dim) {
    for (const char* n : {"wq", "wk", "wv", "wo"}) {
        init_gaussian(w.add(prefix + "." + n, {dim, dim}), rng);
    }
    for (const char* n : {"bq", "bk", "bv", "bo"}) {
        w.add(prefix + "." + n, {dim}, false);
    }
}

}  // namespace

ModelWeights init_weights(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    ModelWeights w(cfg);
    Rng rng(seed);
    const size_t d = static_cast<size_t>(cfg.hidden_dim);

    init_gaussian(w.add("tok_emb", {static_cast<size_t>(cfg.token_vocab), d}), rng);
    init_gaussian(w.add("pos_emb", {static_cast<size_t>(cfg.max_seq_len), d}), rng);
    // Single-segment corpora: the segment term is one learned vector added to
    // every position.
    init_gaussian(w.add("seg_emb", {d}, false), rng);
    add_layer_norm(w, "emb_ln", d);

    for (int l = 0; l < cfg.layers; ++l) {
        const std::string p = "enc." + std::to_string(l);
        add_attention(w, rng, p + ".attn", d);
        add_layer_norm(w, p + ".ln1", d);
        init_gaussian(w.add(p + ".ffn.w1", {d, static_cast<size_t>(cfg.ffn_dim)}), rng);
        w.add(p + ".ffn.b1", {static_cast<size_t>(cfg.ffn_dim)}, false);
        init_gaussian(w.add(p + ".ffn.w2", {static_cast<size_t>(cfg.ffn_dim), d}), rng);
        w.add(p + ".ffn.b2", {d}, false);
        add_layer_norm(w, p + ".ln2", d);
    }

    // MLM output head is tied to tok_emb; only the bias is separate.
    w.add("mlm.bias", {static_cast<size_t>(cfg.token_vocab)}, false);

    // Span encoder: width embedding rows are indexed by width-1, clamped to
    // the last row for spans wider than max_span_len.
    init_gaussian(w.add("span.width_emb", {static_cast<size_t>(cfg.max_span_len),
                                           static_cast<size_t>(cfg.width_dim)}), rng);
    init_gaussian(w.add("span.attn_ffn.w1", {d, d}), rng);
    w.add("span.attn_ffn.b1", {d}, false);
    init_gaussian(w.add("span.attn_ffn.w2", {d, 1}), rng);
    w.add("span.attn_ffn.b2", {1}, false);

    // Pair encoder: project span reps to d, contextualize, then FFNN on the
    // concatenation of an ordered pair.
    const size_t span_dim = static_cast<size_t>(cfg.span_rep_dim());
    init_gaussian(w.add("pair.in_proj.w", {span_dim, d}), rng);
    w.add("pair.in_proj.b", {d}, false);
    for (int l = 0; l < cfg.pair_attn_layers; ++l) {
        const std::string p = "pair.attn." + std::to_string(l);
        add_attention(w, rng, p, d);
        add_layer_norm(w, p + ".ln", d);
    }
    init_gaussian(w.add("pair.ffn.w1", {2 * d, d}), rng);
    w.add("pair.ffn.b1", {d}, false);
    init_gaussian(w.add("pair.ffn.w2", {d, d}), rng);
    w.add("pair.ffn.b2", {d}, false);

    // Entity prediction head (two-tier adaptive softmax over span reps).
    const size_t cutoff = static_cast<size_t>(cfg.resolved_ent_cutoff());
    const size_t n_entities = static_cast<size_t>(cfg.entity_vocab) - 1;  // excluding NIL
    const bool single_cluster = cutoff >= n_entities;
    const size_t head_logits = single_cluster ? 1 + n_entities : 1 + cutoff + 1;
    init_gaussian(w.add("ent_head.head.w", {span_dim, head_logits}), rng);
    w.add("ent_head.head.b", {head_logits}, false);
    if (!single_cluster) {
        const size_t tail_classes = n_entities - cutoff;
        const size_t tail_dim = std::max<size_t>(8, span_dim / 4);
        init_gaussian(w.add("ent_head.tail_proj.w", {span_dim, tail_dim}), rng);
        init_gaussian(w.add("ent_head.tail.w", {tail_dim, tail_classes}), rng);
        w.add("ent_head.tail.b", {tail_classes}, false);
    }

    // Relation prediction head over pair reps. Row 0 scores NO_REL and is only
    // used when negative pairs are enabled.
    init_gaussian(w.add("rel_head.w", {d, static_cast<size_t>(cfg.relation_vocab)}), rng);
    w.add("rel_head.b", {static_cast<size_t>(cfg.relation_vocab)}, false);

    return w;
}

}  // namespace spankt
