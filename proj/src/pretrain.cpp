#include "spankt/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <set>
#include <sstream>

namespace spankt {

PretrainExample apply_masking(const AlignedSentence& s, const Vocab& vocab,
                              const MaskingConfig& cfg, Rng& rng, int max_span_len,
                              int negative_spans, bool rel_negatives) {
    cfg.validate();
    PretrainExample ex;
    ex.original = vocab.encode(s.tokens);
    ex.corrupted = ex.original;
    const int n = static_cast<int>(s.tokens.size());

    std::vector<bool> in_entity(static_cast<size_t>(n), false);
    for (const auto& e : s.entities) {
        for (int i = e.start; i <= e.end; ++i) in_entity[static_cast<size_t>(i)] = true;
    }

    // Token-level masking over non-entity positions, then whole-entity
    // masking; the draw order is part of the reproducibility contract.
    std::vector<bool> selected(static_cast<size_t>(n), false);
    for (int i = 0; i < n; ++i) {
        if (!in_entity[static_cast<size_t>(i)] && rng.bernoulli(cfg.token_mask_rate)) {
            selected[static_cast<size_t>(i)] = true;
        }
    }
    for (const auto& e : s.entities) {
        if (rng.bernoulli(cfg.entity_mask_rate)) {
            for (int i = e.start; i <= e.end; ++i) selected[static_cast<size_t>(i)] = true;
        }
    }

    const int text_tokens = vocab.token_count() - Vocab::kNumReserved;
    const double mask_frac = 1.0 - cfg.random_replace_frac - cfg.keep_frac;
    for (int i = 0; i < n; ++i) {
        if (!selected[static_cast<size_t>(i)]) continue;
        ex.mask_positions.push_back(i);
        const double u = rng.uniform();
        if (u < mask_frac) {
            ex.corrupted[static_cast<size_t>(i)] = Vocab::kMask;
        } else if (u < mask_frac + cfg.random_replace_frac && text_tokens > 0) {
            ex.corrupted[static_cast<size_t>(i)] =
                Vocab::kNumReserved + static_cast<int>(rng.uniform_int(
                                          static_cast<size_t>(text_tokens)));
        }
        // else: keep the original token.
    }

    for (const auto& e : s.entities) {
        ex.spans.emplace_back(e.start, e.end);
        ex.span_classes.push_back(vocab.entity_class(e.entity_id));
    }
    ex.gold_span_count = static_cast<int>(s.entities.size());
    for (const auto& span : sample_negative_spans(s, static_cast<size_t>(negative_spans),
                                                  max_span_len, rng)) {
        ex.spans.push_back(span);
        ex.span_classes.push_back(Vocab::kNilEntity);
    }

    for (const auto& r : s.relations) {
        const int cls = vocab.relation_class(r.relation_id);
        if (cls == Vocab::kNoRelation) continue;  // out-of-vocabulary relation
        ex.rel_pairs.emplace_back(r.head, r.tail);
        ex.rel_classes.push_back(cls);
    }
    if (rel_negatives) {
        std::set<std::pair<int, int>> related;
        for (const auto& r : s.relations) related.insert({r.head, r.tail});
        for (int i = 0; i < ex.gold_span_count; ++i) {
            for (int j = 0; j < ex.gold_span_count; ++j) {
                if (i == j || related.count({i, j})) continue;
                ex.rel_pairs.emplace_back(i, j);
                ex.rel_classes.push_back(Vocab::kNoRelation);
            }
        }
    }
    return ex;
}

double mlm_loss(ModelWeights& w, const Matrix& hidden, const std::vector<int>& original_ids,
                const std::vector<int>& mask_positions, double grad_scale,
                Matrix* d_hidden) {
    if (mask_positions.empty()) return 0.0;
    Param& emb = w.at("tok_emb");
    Param& bias = w.at("mlm.bias");

    double loss = 0.0;
    for (int pos : mask_positions) {
        const int target = original_ids[static_cast<size_t>(pos)];
        Eigen::RowVectorXd logits = hidden.row(pos) * emb.value.transpose();
        logits += bias.value.row(0);
        const double max = logits.maxCoeff();
        const double lse = max + std::log((logits.array() - max).exp().sum());
        loss += lse - logits(target);

        if (d_hidden) {
            Eigen::RowVectorXd p = (logits.array() - lse).exp().matrix();
            p(target) -= 1.0;
            p *= grad_scale;
            d_hidden->row(pos) += p * emb.value;
            emb.grad.noalias() += p.transpose() * hidden.row(pos);
            bias.grad.row(0) += p;
        }
    }
    return loss;
}

namespace {

// Head cluster layout: column 0 = NIL, columns 1..head_entities = entity
// classes 1..head_entities, optional last column = tail gate.
struct AdaptiveLayout {
    int n_entities;    // excluding NIL
    int head_entities; // entity classes scored directly in the head
    bool has_tail;
    int head_cols;
    int gate_col;
};

AdaptiveLayout adaptive_layout(const ModelConfig& cfg) {
    AdaptiveLayout lay;
    lay.n_entities = cfg.entity_vocab - 1;
    lay.head_entities = std::min(cfg.resolved_ent_cutoff(), lay.n_entities);
    lay.has_tail = lay.head_entities < lay.n_entities;
    lay.head_cols = 1 + lay.head_entities + (lay.has_tail ? 1 : 0);
    lay.gate_col = 1 + lay.head_entities;
    return lay;
}

double log_sum_exp(const Eigen::RowVectorXd& v) {
    const double max = v.maxCoeff();
    return max + std::log((v.array() - max).exp().sum());
}

}  // namespace

double adaptive_softmax_loss(ModelWeights& w, const Matrix& span_reps,
                             const std::vector<int>& classes, double grad_scale,
                             Matrix* d_span_reps) {
    if (classes.empty()) return 0.0;
    const AdaptiveLayout lay = adaptive_layout(w.config());
    Param& head_w = w.at("ent_head.head.w");
    Param& head_b = w.at("ent_head.head.b");

    double loss = 0.0;
    for (size_t i = 0; i < classes.size(); ++i) {
        const int cls = classes[i];
        if (cls < 0 || cls > lay.n_entities) {
            throw std::invalid_argument("entity class out of range: " + std::to_string(cls));
        }
        const auto rep = span_reps.row(static_cast<Eigen::Index>(i));
        Eigen::RowVectorXd head_logits = rep * head_w.value + head_b.value.row(0);
        const double head_lse = log_sum_exp(head_logits);

        const bool in_tail = cls > lay.head_entities;
        const int head_target = in_tail ? lay.gate_col : cls;
        loss += head_lse - head_logits(head_target);

        Eigen::RowVectorXd tail_logits;
        Eigen::RowVectorXd tail_proj;
        double tail_lse = 0.0;
        if (in_tail) {
            Param& proj_w = w.at("ent_head.tail_proj.w");
            Param& tail_w = w.at("ent_head.tail.w");
            Param& tail_b = w.at("ent_head.tail.b");
            tail_proj = rep * proj_w.value;
            tail_logits = tail_proj * tail_w.value + tail_b.value.row(0);
            tail_lse = log_sum_exp(tail_logits);
            loss += tail_lse - tail_logits(cls - lay.head_entities - 1);
        }

        if (d_span_reps) {
            Eigen::RowVectorXd dh = (head_logits.array() - head_lse).exp().matrix();
            dh(head_target) -= 1.0;
            dh *= grad_scale;
            d_span_reps->row(static_cast<Eigen::Index>(i)) += dh * head_w.value.transpose();
            head_w.grad.noalias() += rep.transpose() * dh;
            head_b.grad.row(0) += dh;

            if (in_tail) {
                Param& proj_w = w.at("ent_head.tail_proj.w");
                Param& tail_w = w.at("ent_head.tail.w");
                Param& tail_b = w.at("ent_head.tail.b");
                Eigen::RowVectorXd dt = (tail_logits.array() - tail_lse).exp().matrix();
                dt(cls - lay.head_entities - 1) -= 1.0;
                dt *= grad_scale;
                Eigen::RowVectorXd d_proj = dt * tail_w.value.transpose();
                tail_w.grad.noalias() += tail_proj.transpose() * dt;
                tail_b.grad.row(0) += dt;
                d_span_reps->row(static_cast<Eigen::Index>(i)) +=
                    d_proj * proj_w.value.transpose();
                proj_w.grad.noalias() += rep.transpose() * d_proj;
            }
        }
    }
    return loss;
}

Eigen::VectorXd adaptive_softmax_probs(const ModelWeights& w,
                                       const Eigen::VectorXd& span_rep) {
    const AdaptiveLayout lay = adaptive_layout(w.config());
    const Param& head_w = w.at("ent_head.head.w");
    const Param& head_b = w.at("ent_head.head.b");

    Eigen::RowVectorXd head_logits = span_rep.transpose() * head_w.value + head_b.value.row(0);
    const double head_lse = log_sum_exp(head_logits);
    Eigen::RowVectorXd head_p = (head_logits.array() - head_lse).exp().matrix();

    Eigen::VectorXd probs(lay.n_entities + 1);
    for (int c = 0; c <= lay.head_entities; ++c) probs(c) = head_p(c);
    if (lay.has_tail) {
        const Param& proj_w = w.at("ent_head.tail_proj.w");
        const Param& tail_w = w.at("ent_head.tail.w");
        const Param& tail_b = w.at("ent_head.tail.b");
        Eigen::RowVectorXd tail_logits =
            (span_rep.transpose() * proj_w.value) * tail_w.value + tail_b.value.row(0);
        const double tail_lse = log_sum_exp(tail_logits);
        Eigen::RowVectorXd tail_p = (tail_logits.array() - tail_lse).exp().matrix();
        for (int c = 0; c < lay.n_entities - lay.head_entities; ++c) {
            probs(lay.head_entities + 1 + c) = head_p(lay.gate_col) * tail_p(c);
        }
    }
    return probs;
}

double relation_loss(ModelWeights& w, const Matrix& pair_reps,
                     const std::vector<int>& classes, bool include_no_rel,
                     double grad_scale, Matrix* d_pair_reps) {
    if (classes.empty()) return 0.0;
    Param& rw = w.at("rel_head.w");
    Param& rb = w.at("rel_head.b");
    const int first = include_no_rel ? 0 : 1;
    const auto n_cols = rw.value.cols();
    if (n_cols - first < 1) throw std::invalid_argument("no relation classes to score");

    double loss = 0.0;
    for (size_t i = 0; i < classes.size(); ++i) {
        const int cls = classes[i];
        if (cls < first || cls >= n_cols) {
            throw std::invalid_argument("relation class out of range: " + std::to_string(cls));
        }
        const auto rep = pair_reps.row(static_cast<Eigen::Index>(i));
        Eigen::RowVectorXd logits =
            rep * rw.value.rightCols(n_cols - first) + rb.value.row(0).tail(n_cols - first);
        const double lse = log_sum_exp(logits);
        loss += lse - logits(cls - first);

        if (d_pair_reps) {
            Eigen::RowVectorXd p = (logits.array() - lse).exp().matrix();
            p(cls - first) -= 1.0;
            p *= grad_scale;
            d_pair_reps->row(static_cast<Eigen::Index>(i)) +=
                p * rw.value.rightCols(n_cols - first).transpose();
            rw.grad.rightCols(n_cols - first).noalias() += rep.transpose() * p;
            rb.grad.row(0).tail(n_cols - first) += p;
        }
    }
    return loss;
}

LossBreakdown example_losses(ModelWeights& w, const PretrainExample& ex, bool train_mode,
                             Rng& rng, bool rel_negatives, double mlm_scale,
                             double ent_scale, double rel_scale, bool accumulate_grads) {
    const ModelConfig& cfg = w.config();
    LossBreakdown bd;
    bd.mlm_count = static_cast<int>(ex.mask_positions.size());
    bd.ent_count = static_cast<int>(ex.spans.size());
    bd.rel_count = static_cast<int>(ex.rel_pairs.size());

    EncoderCache enc;
    Matrix hidden = encode_sequence(w, ex.corrupted, train_mode, rng, &enc);
    Matrix d_hidden = Matrix::Zero(hidden.rows(), hidden.cols());

    bd.l_mlm = mlm_loss(w, hidden, ex.original, ex.mask_positions, mlm_scale,
                        accumulate_grads ? &d_hidden : nullptr);

    std::vector<SpanRepCache> span_caches;
    Matrix span_reps;
    Matrix d_span_reps;
    if (!ex.spans.empty()) {
        span_reps = span_rep_batch(w, hidden, ex.spans, cfg.span_method, &span_caches);
        d_span_reps = Matrix::Zero(span_reps.rows(), span_reps.cols());
        bd.l_ent = adaptive_softmax_loss(w, span_reps, ex.span_classes, ent_scale,
                                         accumulate_grads ? &d_span_reps : nullptr);
    }

    PairContextCache pair_ctx;
    std::vector<PairRepCache> pair_caches(ex.rel_pairs.size());
    if (!ex.rel_pairs.empty()) {
        Matrix gold = span_reps.topRows(ex.gold_span_count);
        Matrix ctx = contextualize_spans(w, gold, train_mode, rng, pair_ctx);
        Matrix pair_reps(static_cast<Eigen::Index>(ex.rel_pairs.size()), cfg.hidden_dim);
        for (size_t k = 0; k < ex.rel_pairs.size(); ++k) {
            pair_reps.row(static_cast<Eigen::Index>(k)) =
                pair_rep(w, ctx, ex.rel_pairs[k].first, ex.rel_pairs[k].second,
                         &pair_caches[k])
                    .transpose();
        }
        Matrix d_pair_reps = Matrix::Zero(pair_reps.rows(), pair_reps.cols());
        bd.l_rel = relation_loss(w, pair_reps, ex.rel_classes, rel_negatives, rel_scale,
                                 accumulate_grads ? &d_pair_reps : nullptr);

        if (accumulate_grads) {
            Matrix d_ctx = Matrix::Zero(ctx.rows(), ctx.cols());
            for (size_t k = 0; k < ex.rel_pairs.size(); ++k) {
                pair_rep_backward(w, ctx, pair_caches[k],
                                  d_pair_reps.row(static_cast<Eigen::Index>(k)).transpose(),
                                  d_ctx);
            }
            d_span_reps.topRows(ex.gold_span_count) +=
                contextualize_spans_backward(w, pair_ctx, d_ctx);
        }
    }

    if (accumulate_grads) {
        for (size_t i = 0; i < ex.spans.size(); ++i) {
            span_rep_backward(w, hidden, span_caches[i],
                              d_span_reps.row(static_cast<Eigen::Index>(i)).transpose(),
                              d_hidden);
        }
        encoder_backward(w, enc, d_hidden);
    }

    bd.total = bd.l_mlm + bd.l_ent + bd.l_rel;
    return bd;
}

void AdamState::init(const ModelWeights& w) {
    t = 0;
    m.clear();
    v.clear();
    for (const auto& p : w.params()) {
        m.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
        v.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    }
}

void AdamState::step(ModelWeights& w, double lr, double weight_decay) {
    const auto& params = w.params();
    if (m.empty()) init(w);
    if (m.size() != params.size()) {
        throw std::invalid_argument("optimizer state does not match parameter count");
    }
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, t);
    const double bc2 = 1.0 - std::pow(beta2, t);
    for (size_t i = 0; i < params.size(); ++i) {
        Param& p = *params[i];
        m[i] = beta1 * m[i] + (1.0 - beta1) * p.grad;
        v[i] = beta2 * v[i] + (1.0 - beta2) * p.grad.cwiseProduct(p.grad);
        Matrix update = (m[i] / bc1).cwiseQuotient(
            ((v[i] / bc2).cwiseSqrt().array() + eps).matrix());
        if (p.weight_decay && weight_decay > 0.0) update += weight_decay * p.value;
        p.value -= lr * update;
    }
}

double lr_at_step(double base_lr, int step, int total_steps, int warmup) {
    if (warmup > 0 && step < warmup) return base_lr * (step + 1) / warmup;
    if (total_steps <= warmup) return base_lr;
    return base_lr * (total_steps - step) / (total_steps - warmup);
}

LossBreakdown train_step(ModelWeights& w, const std::vector<PretrainExample>& batch,
                         AdamState& opt, double lr, const TrainOptions& opts, Rng& rng) {
    LossBreakdown bd;
    for (const auto& ex : batch) {
        bd.mlm_count += static_cast<int>(ex.mask_positions.size());
        bd.ent_count += static_cast<int>(ex.spans.size());
        bd.rel_count += static_cast<int>(ex.rel_pairs.size());
    }
    const double mlm_scale = bd.mlm_count ? 1.0 / bd.mlm_count : 0.0;
    const double ent_scale = bd.ent_count ? 1.0 / bd.ent_count : 0.0;
    const double rel_scale = bd.rel_count ? 1.0 / bd.rel_count : 0.0;

    w.zero_grads();
    double mlm_sum = 0.0, ent_sum = 0.0, rel_sum = 0.0;
    for (const auto& ex : batch) {
        LossBreakdown one = example_losses(w, ex, true, rng, opts.rel_negatives, mlm_scale,
                                           ent_scale, rel_scale, true);
        mlm_sum += one.l_mlm;
        ent_sum += one.l_ent;
        rel_sum += one.l_rel;
    }
    bd.l_mlm = bd.mlm_count ? mlm_sum / bd.mlm_count : 0.0;
    bd.l_ent = bd.ent_count ? ent_sum / bd.ent_count : 0.0;
    bd.l_rel = bd.rel_count ? rel_sum / bd.rel_count : 0.0;
    bd.total = bd.l_mlm + bd.l_ent + bd.l_rel;

    if (!std::isfinite(bd.total)) {
        throw NumericError("non-finite loss at optimizer step " + std::to_string(opt.t + 1));
    }
    w.clip_grad_norm(opts.clip_norm);
    opt.step(w, lr, opts.weight_decay);
    if (!w.all_finite()) {
        throw NumericError("non-finite parameter after optimizer step " + std::to_string(opt.t));
    }
    return bd;
}

std::string format_log_line(int step, const LossBreakdown& bd) {
    std::ostringstream os;
    os.precision(std::numeric_limits<double>::max_digits10);
    os << step << "," << bd.l_mlm << "," << bd.l_ent << "," << bd.l_rel << "," << bd.total;
    return os.str();
}

void pretrain_loop(ModelWeights& w, const std::vector<AlignedSentence>& corpus,
                   const Vocab& vocab, const TrainOptions& opts, std::ostream* log) {
    const int max_len = w.config().max_seq_len;
    std::vector<size_t> usable;
    for (size_t i = 0; i < corpus.size(); ++i) {
        if (!corpus[i].tokens.empty() &&
            static_cast<int>(corpus[i].tokens.size()) <= max_len) {
            usable.push_back(i);
        }
    }
    if (usable.empty()) throw CorpusError("no sentence fits max_seq_len");

    AdamState opt;
    opt.init(w);

    Rng order_rng(Rng::mix(opts.seed, 0x0edeb));
    std::vector<size_t> order = usable;
    size_t cursor = order.size();  // force an initial shuffle

    for (int step = 0; step < opts.steps; ++step) {
        Rng step_rng(Rng::mix(opts.seed, 0x57e9 + static_cast<uint64_t>(step)));
        std::vector<PretrainExample> batch;
        batch.reserve(static_cast<size_t>(opts.batch_size));
        for (int b = 0; b < opts.batch_size; ++b) {
            if (cursor >= order.size()) {
                for (size_t i = order.size(); i > 1; --i) {
                    std::swap(order[i - 1], order[order_rng.uniform_int(i)]);
                }
                cursor = 0;
            }
            batch.push_back(apply_masking(corpus[order[cursor++]], vocab, opts.masking,
                                          step_rng, w.config().max_span_len,
                                          opts.negative_spans, opts.rel_negatives));
        }
        const double lr = lr_at_step(opts.lr, step, opts.steps, opts.warmup);
        LossBreakdown bd = train_step(w, batch, opt, lr, opts, step_rng);
        if (log) *log << format_log_line(step, bd) << "\n";
    }
}

}  // namespace spankt
