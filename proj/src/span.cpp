#include "spankt/span.hpp"

#include <stdexcept>
#include <string>

namespace spankt {

namespace {

void check_span(const Matrix& tokens, Span span) {
    if (span.first < 0 || span.second < span.first || span.second >= tokens.rows()) {
        throw std::invalid_argument("invalid span (" + std::to_string(span.first) + "," +
                                    std::to_string(span.second) + ") for " +
                                    std::to_string(tokens.rows()) + " tokens");
    }
}

int clamped_width_row(Span span, const Param& width_emb) {
    const int width = span.second - span.first + 1;
    const int rows = static_cast<int>(width_emb.value.rows());
    return std::min(width, rows) - 1;
}

}  // namespace

Eigen::VectorXd endpoint_rep(const Matrix& tokens, Span span, const Param& width_emb,
                             int* width_row) {
    check_span(tokens, span);
    const auto d = tokens.cols();
    const auto dw = width_emb.value.cols();
    const int row = clamped_width_row(span, width_emb);
    if (width_row) *width_row = row;

    Eigen::VectorXd out(2 * d + dw);
    out.head(d) = tokens.row(span.first).transpose();
    out.segment(d, d) = tokens.row(span.second).transpose();
    out.tail(dw) = width_emb.value.row(row).transpose();
    return out;
}

Eigen::VectorXd selfattn_rep(ModelWeights& w, const Matrix& tokens, Span span,
                             SpanRepCache* cache) {
    check_span(tokens, span);
    const auto len = span.second - span.first + 1;
    const Matrix slice = tokens.middleRows(span.first, len);

    Matrix pre = linear(slice, w.at("span.attn_ffn.w1"), w.at("span.attn_ffn.b1"));
    Matrix act = gelu(pre);
    Matrix scores = linear(act, w.at("span.attn_ffn.w2"), w.at("span.attn_ffn.b2"));
    Eigen::VectorXd weights = softmax_rows(scores.transpose()).transpose();

    if (cache) {
        cache->attn_pre = std::move(pre);
        cache->attn_act = std::move(act);
        cache->attn_weights = weights;
    }
    return slice.transpose() * weights;
}

Eigen::VectorXd maxpool_rep(const Matrix& tokens, Span span,
                            std::vector<Eigen::Index>* argmax) {
    check_span(tokens, span);
    const auto len = span.second - span.first + 1;
    const auto d = tokens.cols();
    Eigen::VectorXd out(d);
    if (argmax) argmax->assign(static_cast<size_t>(d), 0);
    for (Eigen::Index c = 0; c < d; ++c) {
        Eigen::Index best = span.first;
        for (Eigen::Index r = span.first + 1; r < span.first + len; ++r) {
            if (tokens(r, c) > tokens(best, c)) best = r;
        }
        out(c) = tokens(best, c);
        if (argmax) (*argmax)[static_cast<size_t>(c)] = best;
    }
    return out;
}

Eigen::VectorXd span_rep(ModelWeights& w, const Matrix& tokens, Span span,
                         SpanRepMethod method, SpanRepCache* cache) {
    if (cache) {
        cache->span = span;
        cache->method = method;
    }
    auto ep = [&] {
        int row = 0;
        Eigen::VectorXd v = endpoint_rep(tokens, span, w.at("span.width_emb"), &row);
        if (cache) cache->width_row = row;
        return v;
    };
    auto att = [&] { return selfattn_rep(w, tokens, span, cache); };
    auto maxp = [&] {
        return maxpool_rep(tokens, span, cache ? &cache->argmax : nullptr);
    };
    auto concat = [](const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
        Eigen::VectorXd out(a.size() + b.size());
        out << a, b;
        return out;
    };

    switch (method) {
        case SpanRepMethod::kEndPoint: return ep();
        case SpanRepMethod::kSelfAttn: return att();
        case SpanRepMethod::kMaxPool: return maxp();
        case SpanRepMethod::kEndAtt: return concat(ep(), att());
        case SpanRepMethod::kEndMax: return concat(ep(), maxp());
        case SpanRepMethod::kAttMax: return concat(att(), maxp());
    }
    throw std::invalid_argument("unknown span method enum value");
}

namespace {

void endpoint_backward(ModelWeights& w, const SpanRepCache& cache,
                       const Eigen::VectorXd& d_rep, Matrix& d_tokens) {
    const auto d = d_tokens.cols();
    Param& width_emb = w.at("span.width_emb");
    d_tokens.row(cache.span.first) += d_rep.head(d).transpose();
    d_tokens.row(cache.span.second) += d_rep.segment(d, d).transpose();
    width_emb.grad.row(cache.width_row) += d_rep.tail(width_emb.value.cols()).transpose();
}

void selfattn_backward(ModelWeights& w, const Matrix& tokens, const SpanRepCache& cache,
                       const Eigen::VectorXd& d_rep, Matrix& d_tokens) {
    const int start = cache.span.first;
    const auto len = cache.span.second - start + 1;
    const Matrix slice = tokens.middleRows(start, len);
    const Eigen::VectorXd& a = cache.attn_weights;

    // rep = slice^T a
    Matrix d_slice = a * d_rep.transpose();
    Eigen::VectorXd d_a = slice * d_rep;

    // a = softmax(scores)
    const double dot = a.dot(d_a);
    Eigen::VectorXd d_scores = (a.array() * (d_a.array() - dot)).matrix();

    Matrix d_scores_m = d_scores;  // (len, 1)
    Matrix d_act = linear_backward(cache.attn_act, d_scores_m, w.at("span.attn_ffn.w2"),
                                   w.at("span.attn_ffn.b2"));
    Matrix d_pre = d_act.cwiseProduct(
        cache.attn_pre.unaryExpr([](double v) { return gelu_grad(v); }));
    d_slice += linear_backward(slice, d_pre, w.at("span.attn_ffn.w1"), w.at("span.attn_ffn.b1"));

    d_tokens.middleRows(start, len) += d_slice;
}

void maxpool_backward(const SpanRepCache& cache, const Eigen::VectorXd& d_rep,
                      Matrix& d_tokens) {
    for (Eigen::Index c = 0; c < d_tokens.cols(); ++c) {
        d_tokens(cache.argmax[static_cast<size_t>(c)], c) += d_rep(c);
    }
}

}  // namespace

void span_rep_backward(ModelWeights& w, const Matrix& tokens, const SpanRepCache& cache,
                       const Eigen::VectorXd& d_rep, Matrix& d_tokens) {
    const auto d = tokens.cols();
    const auto ep_dim = 2 * d + w.at("span.width_emb").value.cols();
    switch (cache.method) {
        case SpanRepMethod::kEndPoint:
            endpoint_backward(w, cache, d_rep, d_tokens);
            return;
        case SpanRepMethod::kSelfAttn:
            selfattn_backward(w, tokens, cache, d_rep, d_tokens);
            return;
        case SpanRepMethod::kMaxPool:
            maxpool_backward(cache, d_rep, d_tokens);
            return;
        case SpanRepMethod::kEndAtt:
            endpoint_backward(w, cache, d_rep.head(ep_dim), d_tokens);
            selfattn_backward(w, tokens, cache, d_rep.tail(d), d_tokens);
            return;
        case SpanRepMethod::kEndMax:
            endpoint_backward(w, cache, d_rep.head(ep_dim), d_tokens);
            maxpool_backward(cache, d_rep.tail(d), d_tokens);
            return;
        case SpanRepMethod::kAttMax:
            selfattn_backward(w, tokens, cache, d_rep.head(d), d_tokens);
            maxpool_backward(cache, d_rep.tail(d), d_tokens);
            return;
    }
    throw std::invalid_argument("unknown span method enum value");
}

Matrix span_rep_batch(ModelWeights& w, const Matrix& tokens, const std::vector<Span>& spans,
                      SpanRepMethod method, std::vector<SpanRepCache>* caches) {
    const int dim = w.config().span_rep_dim(method);
    Matrix out(static_cast<Eigen::Index>(spans.size()), dim);
    if (caches) caches->assign(spans.size(), SpanRepCache());
    for (size_t i = 0; i < spans.size(); ++i) {
        out.row(static_cast<Eigen::Index>(i)) =
            span_rep(w, tokens, spans[i], method, caches ? &(*caches)[i] : nullptr)
                .transpose();
    }
    return out;
}

}  // namespace spankt
