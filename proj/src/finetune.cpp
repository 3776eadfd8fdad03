#include "spankt/finetune.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include "spankt/encoder.hpp"
#include "spankt/nn.hpp"
#include "spankt/pair.hpp"

namespace spankt {

namespace {

const char* marker_name(MarkerKind kind, size_t span_idx) {
    if (kind == MarkerKind::kEntity) return "[ENT]";
    return span_idx == 0 ? "[HD]" : "[TL]";
}

int marker_id(MarkerKind kind, size_t span_idx) {
    if (kind == MarkerKind::kEntity) return Vocab::kEnt;
    return span_idx == 0 ? Vocab::kHd : Vocab::kTl;
}

void check_marker_spans(size_t n, const std::vector<Span>& spans, MarkerKind kind) {
    const size_t expected = kind == MarkerKind::kEntity ? 1 : 2;
    if (spans.size() != expected) {
        throw CorpusError("marker insertion expects " + std::to_string(expected) +
                          " span(s), got " + std::to_string(spans.size()));
    }
    for (const auto& [s, e] : spans) {
        if (s < 0 || e < s || e >= static_cast<int>(n)) {
            throw CorpusError("marker span (" + std::to_string(s) + ", " +
                              std::to_string(e) + ") out of bounds for " +
                              std::to_string(n) + " tokens");
        }
    }
    if (spans.size() == 2) {
        const auto& [as, ae] = spans[0];
        const auto& [bs, be] = spans[1];
        if (std::max(as, bs) <= std::min(ae, be)) {
            throw CorpusError("marker spans overlap");
        }
    }
}

template <typename T, typename MarkerFn>
std::pair<std::vector<T>, std::vector<int>> insert_core(const std::vector<T>& seq,
                                                        const std::vector<Span>& spans,
                                                        MarkerKind kind,
                                                        MarkerFn marker) {
    check_marker_spans(seq.size(), spans, kind);
    std::vector<T> out;
    out.reserve(seq.size() + 2 * spans.size());
    std::vector<int> opening(spans.size(), -1);
    for (size_t pos = 0; pos < seq.size(); ++pos) {
        for (size_t i = 0; i < spans.size(); ++i) {
            if (spans[i].first == static_cast<int>(pos)) {
                opening[i] = static_cast<int>(out.size());
                out.push_back(marker(kind, i));
            }
        }
        out.push_back(seq[pos]);
        for (size_t i = 0; i < spans.size(); ++i) {
            if (spans[i].second == static_cast<int>(pos)) {
                out.push_back(marker(kind, i));
            }
        }
    }
    return {std::move(out), std::move(opening)};
}

// Softmax cross-entropy of a single logit row; fills d with the gradient.
double softmax_ce_row(const Eigen::RowVectorXd& logits, int target,
                      Eigen::RowVectorXd* d) {
    const double mx = logits.maxCoeff();
    Eigen::RowVectorXd p = (logits.array() - mx).exp().matrix();
    const double z = p.sum();
    const double loss = std::log(z) - (logits(target) - mx);
    if (d) {
        *d = p / z;
        (*d)(target) -= 1.0;
    }
    return loss;
}

// Lowest index wins ties, so index 0 (the null class) absorbs them.
int argmax_row(const Eigen::RowVectorXd& logits) {
    int best = 0;
    for (int c = 1; c < logits.size(); ++c) {
        if (logits(c) > logits(best)) best = c;
    }
    return best;
}

void fisher_yates(std::vector<size_t>& order, Rng& rng) {
    for (size_t i = order.size(); i > 1; --i) {
        std::swap(order[i - 1], order[rng.uniform_int(i)]);
    }
}

std::string span_key(size_t sentence, Span sp) {
    return "s" + std::to_string(sentence) + ":" + std::to_string(sp.first) + "-" +
           std::to_string(sp.second);
}

std::string pair_key(size_t sentence, Span head, Span tail) {
    return span_key(sentence, head) + ">" + std::to_string(tail.first) + "-" +
           std::to_string(tail.second);
}

double safe_div(double num, double den) { return den > 0.0 ? num / den : 0.0; }

double f1_of(double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

}  // namespace

MarkedSentence insert_markers(const std::vector<std::string>& tokens,
                              const std::vector<Span>& spans, MarkerKind kind) {
    auto [seq, opening] = insert_core(tokens, spans, kind, [](MarkerKind k, size_t i) {
        return std::string(marker_name(k, i));
    });
    return {std::move(seq), std::move(opening)};
}

MarkedIds insert_marker_ids(const std::vector<int>& ids, const std::vector<Span>& spans,
                            MarkerKind kind) {
    auto [seq, opening] = insert_core(ids, spans, kind, &marker_id);
    return {std::move(seq), std::move(opening)};
}

std::vector<std::string> strip_markers(const std::vector<std::string>& tokens) {
    std::vector<std::string> out;
    out.reserve(tokens.size());
    for (const auto& t : tokens) {
        if (t != "[ENT]" && t != "[HD]" && t != "[TL]") out.push_back(t);
    }
    return out;
}

EvalReport f1_report(const std::vector<LabeledItem>& gold,
                     const std::vector<LabeledItem>& pred, F1Mode mode) {
    std::set<std::pair<std::string, std::string>> gold_set, pred_set;
    for (const auto& it : gold) gold_set.emplace(it.cls, it.key);
    for (const auto& it : pred) pred_set.emplace(it.cls, it.key);

    EvalReport report;
    for (const auto& [cls, key] : gold_set) report.per_class[cls].gold += 1;
    for (const auto& [cls, key] : pred_set) {
        report.per_class[cls].pred += 1;
        if (gold_set.count({cls, key})) report.per_class[cls].correct += 1;
    }

    if (mode == F1Mode::kMicro) {
        double g = 0, p = 0, c = 0;
        for (const auto& [cls, counts] : report.per_class) {
            g += counts.gold;
            p += counts.pred;
            c += counts.correct;
        }
        report.precision = safe_div(c, p);
        report.recall = safe_div(c, g);
        report.f1 = f1_of(report.precision, report.recall);
    } else {
        double sp = 0, sr = 0, sf = 0;
        for (const auto& [cls, counts] : report.per_class) {
            const double cp = safe_div(counts.correct, counts.pred);
            const double cr = safe_div(counts.correct, counts.gold);
            sp += cp;
            sr += cr;
            sf += f1_of(cp, cr);
        }
        const double k = static_cast<double>(report.per_class.size());
        if (k > 0) {
            report.precision = sp / k;
            report.recall = sr / k;
            report.f1 = sf / k;
        }
    }
    return report;
}

int JointHead::type_index(const std::string& label) const {
    for (size_t i = 0; i < entity_types.size(); ++i) {
        if (entity_types[i] == label) return static_cast<int>(i);
    }
    return -1;
}

int JointHead::relation_index(const std::string& label) const {
    for (size_t i = 0; i < relations.size(); ++i) {
        if (relations[i] == label) return static_cast<int>(i);
    }
    return -1;
}

std::vector<std::string> collect_entity_types(const std::vector<AlignedSentence>& data) {
    std::set<std::string> types;
    for (const auto& s : data) {
        for (const auto& e : s.entities) types.insert(entity_type_label(e.entity_id));
    }
    return {types.begin(), types.end()};
}

std::vector<std::string> collect_relation_labels(const std::vector<AlignedSentence>& data) {
    std::set<std::string> labels;
    for (const auto& s : data) {
        for (const auto& r : s.relations) labels.insert(r.relation_id);
    }
    return {labels.begin(), labels.end()};
}

void init_classifier_head(ModelWeights& w, const std::string& weight_name,
                          const std::string& bias_name, int in_dim, int n_labels,
                          uint64_t seed) {
    if (!w.has(weight_name)) {
        Rng rng(Rng::mix(seed, 0x4ead));
        init_gaussian(w.add(weight_name, {static_cast<size_t>(in_dim),
                                          static_cast<size_t>(n_labels)}),
                      rng);
    }
    if (!w.has(bias_name)) {
        w.add(bias_name, {static_cast<size_t>(n_labels)}, false);
    }
}

JointHead init_joint_head(ModelWeights& w, std::vector<std::string> entity_types,
                          std::vector<std::string> relations, uint64_t seed) {
    const int span_dim = w.config().span_rep_dim();
    const int d = w.config().hidden_dim;
    init_classifier_head(w, "joint.span.w", "joint.span.b", span_dim,
                         static_cast<int>(entity_types.size()) + 1, seed);
    init_classifier_head(w, "joint.pair.w", "joint.pair.b", d,
                         static_cast<int>(relations.size()) + 1, seed + 1);
    return {std::move(entity_types), std::move(relations)};
}

JointLogits joint_head_forward(ModelWeights& w, const Matrix& hidden,
                               const std::vector<Span>& candidates) {
    JointLogits out;
    out.candidates = candidates;
    if (candidates.empty()) return out;

    const Matrix reps = span_rep_batch(w, hidden, candidates, w.config().span_method);
    const Param& sw = w.at("joint.span.w");
    const Param& sb = w.at("joint.span.b");
    out.span_logits = reps * sw.value;
    out.span_logits.rowwise() += sb.value.row(0);

    for (Eigen::Index i = 0; i < out.span_logits.rows(); ++i) {
        if (argmax_row(out.span_logits.row(i)) > 0) {
            out.kept.push_back(static_cast<int>(i));
        }
    }
    if (out.kept.size() < 2) return out;

    std::vector<Span> kept_spans;
    for (int i : out.kept) kept_spans.push_back(candidates[static_cast<size_t>(i)]);
    const Matrix kept_reps = span_rep_batch(w, hidden, kept_spans, w.config().span_method);
    Rng rng(0);
    PairContextCache ctx_cache;
    const Matrix ctx = contextualize_spans(w, kept_reps, false, rng, ctx_cache);

    const Param& pw = w.at("joint.pair.w");
    const Param& pb = w.at("joint.pair.b");
    const auto k = out.kept.size();
    out.pair_logits.resize(static_cast<Eigen::Index>(k * (k - 1)), pw.value.cols());
    for (size_t i = 0; i < k; ++i) {
        for (size_t j = 0; j < k; ++j) {
            if (i == j) continue;
            const Eigen::VectorXd rep =
                pair_rep(w, ctx, static_cast<int>(i), static_cast<int>(j));
            const auto row = static_cast<Eigen::Index>(out.pairs.size());
            out.pair_logits.row(row) = rep.transpose() * pw.value + pb.value.row(0);
            out.pairs.emplace_back(out.kept[i], out.kept[j]);
        }
    }
    return out;
}

JointPrediction joint_decode(const JointLogits& logits, const JointHead& head) {
    JointPrediction pred;
    for (Eigen::Index i = 0; i < logits.span_logits.rows(); ++i) {
        const int c = argmax_row(logits.span_logits.row(i));
        if (c > 0) {
            pred.entities.push_back({logits.candidates[static_cast<size_t>(i)],
                                     head.entity_types[static_cast<size_t>(c - 1)]});
        }
    }
    for (size_t p = 0; p < logits.pairs.size(); ++p) {
        const int r = argmax_row(logits.pair_logits.row(static_cast<Eigen::Index>(p)));
        if (r > 0) {
            pred.relations.push_back(
                {logits.candidates[static_cast<size_t>(logits.pairs[p].first)],
                 logits.candidates[static_cast<size_t>(logits.pairs[p].second)],
                 head.relations[static_cast<size_t>(r - 1)]});
        }
    }
    return pred;
}

JointPrediction predict_joint(ModelWeights& w, const Vocab& vocab, const JointHead& head,
                              const AlignedSentence& s, int max_span_len) {
    if (s.tokens.empty() || static_cast<int>(s.tokens.size()) > w.config().max_seq_len) {
        return {};
    }
    Rng rng(0);
    const Matrix hidden = encode_sequence(w, vocab.encode(s.tokens), false, rng);
    const auto candidates = enumerate_spans(static_cast<int>(s.tokens.size()), max_span_len);
    return joint_decode(joint_head_forward(w, hidden, candidates), head);
}

JointLoss joint_example_loss(ModelWeights& w, const Vocab& vocab, const JointHead& head,
                             const AlignedSentence& s, int max_span_len, bool train_mode,
                             Rng& rng, double span_scale, double pair_scale,
                             bool accumulate) {
    JointLoss result;
    EncoderCache ecache;
    const Matrix hidden =
        encode_sequence(w, vocab.encode(s.tokens), train_mode, rng, &ecache);
    Matrix d_hidden = Matrix::Zero(hidden.rows(), hidden.cols());
    const double p_task = w.config().dropout_task;

    // Span classification over all candidates.
    const auto candidates = enumerate_spans(static_cast<int>(s.tokens.size()), max_span_len);
    std::map<Span, int> gold_type;
    for (const auto& e : s.entities) {
        gold_type[{e.start, e.end}] = head.type_index(entity_type_label(e.entity_id));
    }

    std::vector<SpanRepCache> span_caches;
    const Matrix reps =
        span_rep_batch(w, hidden, candidates, w.config().span_method, &span_caches);
    Matrix span_drop_mask;
    const Matrix reps_d = dropout(reps, p_task, train_mode, rng, span_drop_mask);
    Param& sw = w.at("joint.span.w");
    Param& sb = w.at("joint.span.b");
    Matrix span_logits = reps_d * sw.value;
    span_logits.rowwise() += sb.value.row(0);

    Matrix d_span_logits = Matrix::Zero(span_logits.rows(), span_logits.cols());
    for (Eigen::Index i = 0; i < span_logits.rows(); ++i) {
        const auto it = gold_type.find(candidates[static_cast<size_t>(i)]);
        const int target = (it != gold_type.end() && it->second >= 0) ? it->second + 1 : 0;
        Eigen::RowVectorXd d_row;
        result.span += softmax_ce_row(span_logits.row(i), target, accumulate ? &d_row : nullptr);
        if (accumulate) d_span_logits.row(i) = d_row * span_scale;
        result.span_count += 1;
    }
    if (accumulate && result.span_count > 0) {
        sw.grad += reps_d.transpose() * d_span_logits;
        sb.grad.row(0) += d_span_logits.colwise().sum();
        const Matrix d_reps =
            dropout_backward(d_span_logits * sw.value.transpose(), span_drop_mask);
        for (size_t i = 0; i < span_caches.size(); ++i) {
            span_rep_backward(w, hidden, span_caches[i],
                              d_reps.row(static_cast<Eigen::Index>(i)).transpose(), d_hidden);
        }
    }

    // Relation classification over ordered pairs of gold spans.
    const auto k = s.entities.size();
    if (k >= 2) {
        std::vector<Span> gold_spans;
        for (const auto& e : s.entities) gold_spans.emplace_back(e.start, e.end);
        std::map<std::pair<int, int>, int> rel_label;
        for (const auto& r : s.relations) {
            rel_label.try_emplace({r.head, r.tail}, head.relation_index(r.relation_id));
        }

        std::vector<SpanRepCache> gold_caches;
        const Matrix gold_reps =
            span_rep_batch(w, hidden, gold_spans, w.config().span_method, &gold_caches);
        PairContextCache ctx_cache;
        const Matrix ctx = contextualize_spans(w, gold_reps, train_mode, rng, ctx_cache);

        Param& pw = w.at("joint.pair.w");
        Param& pb = w.at("joint.pair.b");
        Matrix pair_reps(static_cast<Eigen::Index>(k * (k - 1)), ctx.cols());
        std::vector<PairRepCache> pair_caches(k * (k - 1));
        std::vector<int> targets;
        Eigen::Index row = 0;
        for (size_t i = 0; i < k; ++i) {
            for (size_t j = 0; j < k; ++j) {
                if (i == j) continue;
                pair_reps.row(row) = pair_rep(w, ctx, static_cast<int>(i),
                                              static_cast<int>(j), &pair_caches[row])
                                         .transpose();
                const auto it = rel_label.find({static_cast<int>(i), static_cast<int>(j)});
                targets.push_back((it != rel_label.end() && it->second >= 0) ? it->second + 1
                                                                             : 0);
                ++row;
            }
        }

        Matrix pair_drop_mask;
        const Matrix pair_reps_d = dropout(pair_reps, p_task, train_mode, rng, pair_drop_mask);
        Matrix pair_logits = pair_reps_d * pw.value;
        pair_logits.rowwise() += pb.value.row(0);

        Matrix d_pair_logits = Matrix::Zero(pair_logits.rows(), pair_logits.cols());
        for (Eigen::Index i = 0; i < pair_logits.rows(); ++i) {
            Eigen::RowVectorXd d_row;
            result.pair += softmax_ce_row(pair_logits.row(i), targets[static_cast<size_t>(i)],
                                          accumulate ? &d_row : nullptr);
            if (accumulate) d_pair_logits.row(i) = d_row * pair_scale;
            result.pair_count += 1;
        }
        if (accumulate) {
            pw.grad += pair_reps_d.transpose() * d_pair_logits;
            pb.grad.row(0) += d_pair_logits.colwise().sum();
            const Matrix d_pair_reps =
                dropout_backward(d_pair_logits * pw.value.transpose(), pair_drop_mask);
            Matrix d_ctx = Matrix::Zero(ctx.rows(), ctx.cols());
            for (Eigen::Index i = 0; i < d_pair_reps.rows(); ++i) {
                pair_rep_backward(w, ctx, pair_caches[static_cast<size_t>(i)],
                                  d_pair_reps.row(i).transpose(), d_ctx);
            }
            const Matrix d_gold_reps = contextualize_spans_backward(w, ctx_cache, d_ctx);
            for (size_t i = 0; i < gold_caches.size(); ++i) {
                span_rep_backward(w, hidden, gold_caches[i],
                                  d_gold_reps.row(static_cast<Eigen::Index>(i)).transpose(),
                                  d_hidden);
            }
        }
    }

    if (accumulate) encoder_backward(w, ecache, d_hidden);
    return result;
}

std::vector<MarkedExample> typing_examples(const Vocab& vocab,
                                           const std::vector<AlignedSentence>& data,
                                           int max_seq_len) {
    std::vector<MarkedExample> out;
    for (const auto& s : data) {
        const std::vector<int> ids = vocab.encode(s.tokens);
        for (const auto& e : s.entities) {
            MarkedIds marked = insert_marker_ids(ids, {{e.start, e.end}}, MarkerKind::kEntity);
            if (static_cast<int>(marked.ids.size()) > max_seq_len) continue;
            out.push_back({std::move(marked.ids),
                           {marked.opening[0]},
                           entity_type_label(e.entity_id)});
        }
    }
    return out;
}

std::vector<MarkedExample> relcls_examples(const Vocab& vocab,
                                           const std::vector<AlignedSentence>& data,
                                           int max_seq_len) {
    std::vector<MarkedExample> out;
    for (const auto& s : data) {
        const std::vector<int> ids = vocab.encode(s.tokens);
        for (const auto& r : s.relations) {
            const auto& h = s.entities[static_cast<size_t>(r.head)];
            const auto& t = s.entities[static_cast<size_t>(r.tail)];
            if (std::max(h.start, t.start) <= std::min(h.end, t.end)) continue;
            MarkedIds marked = insert_marker_ids(
                ids, {{h.start, h.end}, {t.start, t.end}}, MarkerKind::kHeadTail);
            if (static_cast<int>(marked.ids.size()) > max_seq_len) continue;
            out.push_back({std::move(marked.ids),
                           {marked.opening[0], marked.opening[1]},
                           r.relation_id});
        }
    }
    return out;
}

namespace {

Eigen::RowVectorXd marked_rep(const Matrix& hidden, const std::vector<int>& positions) {
    const auto d = hidden.cols();
    Eigen::RowVectorXd rep(static_cast<Eigen::Index>(positions.size()) * d);
    for (size_t i = 0; i < positions.size(); ++i) {
        rep.segment(static_cast<Eigen::Index>(i) * d, d) = hidden.row(positions[i]);
    }
    return rep;
}

}  // namespace

double classify_loss(ModelWeights& w, const std::string& weight_name,
                     const std::string& bias_name, const MarkedExample& ex, int target,
                     bool train_mode, Rng& rng, double grad_scale, bool accumulate) {
    EncoderCache ecache;
    const Matrix hidden = encode_sequence(w, ex.ids, train_mode, rng, &ecache);
    Matrix rep(1, static_cast<Eigen::Index>(ex.positions.size()) * hidden.cols());
    rep.row(0) = marked_rep(hidden, ex.positions);

    Matrix drop_mask;
    const Matrix rep_d = dropout(rep, w.config().dropout_task, train_mode, rng, drop_mask);
    Param& pw = w.at(weight_name);
    Param& pb = w.at(bias_name);
    const Eigen::RowVectorXd logits = rep_d.row(0) * pw.value + pb.value.row(0);

    Eigen::RowVectorXd d_logits;
    const double loss = softmax_ce_row(logits, target, accumulate ? &d_logits : nullptr);
    if (accumulate) {
        d_logits *= grad_scale;
        pw.grad += rep_d.row(0).transpose() * d_logits;
        pb.grad.row(0) += d_logits;
        Matrix d_rep(1, rep.cols());
        d_rep.row(0) = d_logits * pw.value.transpose();
        d_rep = dropout_backward(d_rep, drop_mask);
        Matrix d_hidden = Matrix::Zero(hidden.rows(), hidden.cols());
        const auto d = hidden.cols();
        for (size_t i = 0; i < ex.positions.size(); ++i) {
            d_hidden.row(ex.positions[i]) +=
                d_rep.row(0).segment(static_cast<Eigen::Index>(i) * d, d);
        }
        encoder_backward(w, ecache, d_hidden);
    }
    return loss;
}

int classify_predict(ModelWeights& w, const std::string& weight_name,
                     const std::string& bias_name, const MarkedExample& ex) {
    Rng rng(0);
    const Matrix hidden = encode_sequence(w, ex.ids, false, rng);
    const Eigen::RowVectorXd rep = marked_rep(hidden, ex.positions);
    const Eigen::RowVectorXd logits =
        rep * w.at(weight_name).value + w.at(bias_name).value.row(0);
    return argmax_row(logits);
}

JointScores score_joint(ModelWeights& w, const Vocab& vocab, const JointHead& head,
                        const std::vector<AlignedSentence>& data, int max_span_len) {
    std::vector<LabeledItem> ent_gold, ent_pred, rel_gold, rel_pred;
    for (size_t si = 0; si < data.size(); ++si) {
        const auto& s = data[si];
        for (const auto& e : s.entities) {
            ent_gold.push_back(
                {entity_type_label(e.entity_id), span_key(si, {e.start, e.end})});
        }
        for (const auto& r : s.relations) {
            const auto& h = s.entities[static_cast<size_t>(r.head)];
            const auto& t = s.entities[static_cast<size_t>(r.tail)];
            rel_gold.push_back({r.relation_id,
                                pair_key(si, {h.start, h.end}, {t.start, t.end})});
        }
        const JointPrediction pred = predict_joint(w, vocab, head, s, max_span_len);
        for (const auto& e : pred.entities) {
            ent_pred.push_back({e.label, span_key(si, e.span)});
        }
        for (const auto& r : pred.relations) {
            rel_pred.push_back({r.label, pair_key(si, r.head, r.tail)});
        }
    }
    return {f1_report(ent_gold, ent_pred, F1Mode::kMicro),
            f1_report(rel_gold, rel_pred, F1Mode::kMicro)};
}

JointResult finetune_joint(ModelWeights& w, const Vocab& vocab, const JointHead& head,
                           const std::vector<AlignedSentence>& train,
                           const std::vector<AlignedSentence>& dev,
                           const std::vector<AlignedSentence>& test,
                           const FinetuneOptions& opts, std::ostream* log) {
    std::vector<size_t> usable;
    for (size_t i = 0; i < train.size(); ++i) {
        if (!train[i].tokens.empty() &&
            static_cast<int>(train[i].tokens.size()) <= w.config().max_seq_len) {
            usable.push_back(i);
        }
    }
    if (usable.empty()) throw CorpusError("no usable training sentences");

    const int steps_per_epoch =
        static_cast<int>((usable.size() + opts.batch_size - 1) / opts.batch_size);
    const int total_steps = opts.epochs * steps_per_epoch;

    AdamState adam;
    adam.init(w);
    JointResult result;
    ModelWeights best = w;
    double best_rel = -1.0, best_ent = -1.0;
    int bad_epochs = 0, global_step = 0;

    for (int epoch = 0; epoch < opts.epochs; ++epoch) {
        Rng order_rng(Rng::mix(opts.seed, 0xf17e00 + static_cast<uint64_t>(epoch)));
        std::vector<size_t> order = usable;
        fisher_yates(order, order_rng);

        for (size_t start = 0; start < order.size(); start += opts.batch_size) {
            const size_t stop = std::min(order.size(), start + opts.batch_size);
            int span_total = 0, pair_total = 0;
            for (size_t b = start; b < stop; ++b) {
                const auto& s = train[order[b]];
                span_total += static_cast<int>(
                    enumerate_spans(static_cast<int>(s.tokens.size()), opts.max_span_len)
                        .size());
                const int k = static_cast<int>(s.entities.size());
                pair_total += k * (k - 1);
            }
            const double span_scale = span_total > 0 ? 1.0 / span_total : 0.0;
            const double pair_scale = pair_total > 0 ? 1.0 / pair_total : 0.0;

            Rng step_rng(Rng::mix(opts.seed, 0xf1e7 + static_cast<uint64_t>(global_step)));
            const double lr = lr_at_step(opts.lr, global_step, total_steps, opts.warmup);
            w.zero_grads();
            double span_sum = 0.0, pair_sum = 0.0;
            for (size_t b = start; b < stop; ++b) {
                const JointLoss l =
                    joint_example_loss(w, vocab, head, train[order[b]], opts.max_span_len,
                                       true, step_rng, span_scale, pair_scale, true);
                span_sum += l.span;
                pair_sum += l.pair;
            }
            const double loss = span_sum * span_scale + pair_sum * pair_scale;
            if (!std::isfinite(loss)) throw NumericError("non-finite fine-tuning loss");
            w.clip_grad_norm(opts.clip_norm);
            adam.step(w, lr, opts.weight_decay);
            if (!w.all_finite()) throw NumericError("non-finite parameter after update");
            ++global_step;
        }

        const JointScores dev_scores = score_joint(w, vocab, head, dev, opts.max_span_len);
        std::ostringstream line;
        line << "epoch=" << epoch << " dev_entity_f1=" << dev_scores.entity.f1
             << " dev_relation_f1=" << dev_scores.relation.f1;
        result.log.push_back(line.str());
        if (log) *log << line.str() << "\n";

        const bool improved =
            dev_scores.relation.f1 > best_rel ||
            (dev_scores.relation.f1 == best_rel && dev_scores.entity.f1 > best_ent);
        if (improved) {
            best_rel = dev_scores.relation.f1;
            best_ent = dev_scores.entity.f1;
            best = w;
            result.best_epoch = epoch;
            bad_epochs = 0;
        } else if (++bad_epochs >= opts.patience) {
            break;
        }
    }

    w = best;
    result.dev = score_joint(w, vocab, head, dev, opts.max_span_len);
    result.test = score_joint(w, vocab, head, test, opts.max_span_len);
    return result;
}

LabelScores score_classifier(ModelWeights& w, const std::string& weight_name,
                             const std::string& bias_name,
                             const std::vector<std::string>& labels,
                             const std::vector<MarkedExample>& data) {
    std::vector<LabeledItem> gold, pred;
    for (size_t i = 0; i < data.size(); ++i) {
        const std::string key = "x" + std::to_string(i);
        gold.push_back({data[i].label, key});
        const int c = classify_predict(w, weight_name, bias_name, data[i]);
        pred.push_back({labels[static_cast<size_t>(c)], key});
    }
    return {f1_report(gold, pred, F1Mode::kMicro), f1_report(gold, pred, F1Mode::kMacro)};
}

LabelResult finetune_classifier(ModelWeights& w, const std::string& weight_name,
                                const std::string& bias_name,
                                const std::vector<std::string>& labels,
                                const std::vector<MarkedExample>& train,
                                const std::vector<MarkedExample>& dev,
                                const std::vector<MarkedExample>& test,
                                const FinetuneOptions& opts, std::ostream* log) {
    std::vector<size_t> usable;
    for (size_t i = 0; i < train.size(); ++i) {
        if (!train[i].ids.empty() &&
            static_cast<int>(train[i].ids.size()) <= w.config().max_seq_len) {
            usable.push_back(i);
        }
    }
    if (usable.empty()) throw CorpusError("no usable training examples");

    auto label_of = [&labels](const std::string& name) {
        for (size_t i = 0; i < labels.size(); ++i) {
            if (labels[i] == name) return static_cast<int>(i);
        }
        return -1;
    };

    const int steps_per_epoch =
        static_cast<int>((usable.size() + opts.batch_size - 1) / opts.batch_size);
    const int total_steps = opts.epochs * steps_per_epoch;

    AdamState adam;
    adam.init(w);
    LabelResult result;
    ModelWeights best = w;
    double best_f1 = -1.0;
    int bad_epochs = 0, global_step = 0;

    for (int epoch = 0; epoch < opts.epochs; ++epoch) {
        Rng order_rng(Rng::mix(opts.seed, 0xf17e00 + static_cast<uint64_t>(epoch)));
        std::vector<size_t> order = usable;
        fisher_yates(order, order_rng);

        for (size_t start = 0; start < order.size(); start += opts.batch_size) {
            const size_t stop = std::min(order.size(), start + opts.batch_size);
            const double scale = 1.0 / static_cast<double>(stop - start);
            Rng step_rng(Rng::mix(opts.seed, 0xf1e7 + static_cast<uint64_t>(global_step)));
            const double lr = lr_at_step(opts.lr, global_step, total_steps, opts.warmup);
            w.zero_grads();
            double loss = 0.0;
            for (size_t b = start; b < stop; ++b) {
                const auto& ex = train[order[b]];
                const int target = label_of(ex.label);
                if (target < 0) throw CorpusError("label not in head: " + ex.label);
                loss += scale * classify_loss(w, weight_name, bias_name, ex, target, true,
                                              step_rng, scale, true);
            }
            if (!std::isfinite(loss)) throw NumericError("non-finite fine-tuning loss");
            w.clip_grad_norm(opts.clip_norm);
            adam.step(w, lr, opts.weight_decay);
            if (!w.all_finite()) throw NumericError("non-finite parameter after update");
            ++global_step;
        }

        const LabelScores dev_scores =
            score_classifier(w, weight_name, bias_name, labels, dev);
        std::ostringstream line;
        line << "epoch=" << epoch << " dev_micro_f1=" << dev_scores.micro.f1
             << " dev_macro_f1=" << dev_scores.macro.f1;
        result.log.push_back(line.str());
        if (log) *log << line.str() << "\n";

        if (dev_scores.micro.f1 > best_f1) {
            best_f1 = dev_scores.micro.f1;
            best = w;
            result.best_epoch = epoch;
            bad_epochs = 0;
        } else if (++bad_epochs >= opts.patience) {
            break;
        }
    }

    w = best;
    result.dev = score_classifier(w, weight_name, bias_name, labels, dev);
    result.test = score_classifier(w, weight_name, bias_name, labels, test);
    return result;
}

}  // namespace spankt
