#include "spankt/cluster.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>
#include <unordered_map>

#include "spankt/encoder.hpp"
#include "spankt/pair.hpp"
#include "spankt/span.hpp"

namespace spankt {

namespace {

// Shared eval-mode forward up to contextual token reps; skips over-long
// sentences by returning false.
bool encode_eval(ModelWeights& w, const AlignedSentence& s, const Vocab& vocab,
                 Rng& rng, Matrix& hidden) {
    if (s.tokens.empty() ||
        static_cast<int>(s.tokens.size()) > w.config().max_seq_len) {
        return false;
    }
    hidden = encode_sequence(w, vocab.encode(s.tokens), false, rng);
    return true;
}

}  // namespace

EmbeddingSet extract_entity_embeddings(ModelWeights& w, const Vocab& vocab,
                                       const std::vector<AlignedSentence>& corpus) {
    Rng rng(0);
    std::vector<std::string> order;
    std::unordered_map<std::string, Eigen::VectorXd> sums;
    std::unordered_map<std::string, int> counts;

    for (const auto& s : corpus) {
        Matrix hidden;
        if (!encode_eval(w, s, vocab, rng, hidden)) continue;
        for (const auto& e : s.entities) {
            Eigen::VectorXd rep =
                span_rep(w, hidden, {e.start, e.end}, w.config().span_method);
            auto [it, inserted] = sums.try_emplace(e.entity_id, rep);
            if (inserted) {
                order.push_back(e.entity_id);
            } else {
                it->second += rep;
            }
            counts[e.entity_id] += 1;
        }
    }

    EmbeddingSet set;
    set.vectors.resize(static_cast<Eigen::Index>(order.size()), w.config().span_rep_dim());
    for (size_t i = 0; i < order.size(); ++i) {
        set.keys.push_back(order[i]);
        set.labels.push_back(entity_type_label(order[i]));
        set.vectors.row(static_cast<Eigen::Index>(i)) =
            (sums.at(order[i]) / counts.at(order[i])).transpose();
    }
    return set;
}

EmbeddingSet extract_relation_embeddings(ModelWeights& w, const Vocab& vocab,
                                         const std::vector<AlignedSentence>& corpus) {
    Rng rng(0);
    EmbeddingSet set;
    std::vector<Eigen::VectorXd> rows;

    for (size_t si = 0; si < corpus.size(); ++si) {
        const auto& s = corpus[si];
        if (s.relations.empty()) continue;
        Matrix hidden;
        if (!encode_eval(w, s, vocab, rng, hidden)) continue;

        std::vector<Span> spans;
        for (const auto& e : s.entities) spans.emplace_back(e.start, e.end);
        Matrix reps = span_rep_batch(w, hidden, spans, w.config().span_method);
        PairContextCache ctx_cache;
        Matrix ctx = contextualize_spans(w, reps, false, rng, ctx_cache);

        for (size_t ri = 0; ri < s.relations.size(); ++ri) {
            const auto& r = s.relations[ri];
            rows.push_back(pair_rep(w, ctx, r.head, r.tail));
            set.keys.push_back("s" + std::to_string(si) + ":r" + std::to_string(ri));
            set.labels.push_back(r.relation_id);
        }
    }

    set.vectors.resize(static_cast<Eigen::Index>(rows.size()), w.config().hidden_dim);
    for (size_t i = 0; i < rows.size(); ++i) {
        set.vectors.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
    }
    return set;
}

std::vector<int> kmeans(const Matrix& vectors, int k, uint64_t seed) {
    const auto n = vectors.rows();
    if (k < 1 || k > n) throw std::invalid_argument("kmeans: need 1 <= k <= item count");

    Matrix x = vectors;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double norm = x.row(i).norm();
        if (norm > 0.0) x.row(i) /= norm;
    }

    Rng rng(seed);
    Matrix centers(k, x.cols());

    // k-means++ seeding.
    centers.row(0) = x.row(static_cast<Eigen::Index>(rng.uniform_int(static_cast<size_t>(n))));
    Eigen::VectorXd dist2 = (x.rowwise() - centers.row(0)).rowwise().squaredNorm();
    for (int c = 1; c < k; ++c) {
        const double total = dist2.sum();
        Eigen::Index pick = 0;
        if (total > 0.0) {
            double threshold = rng.uniform() * total;
            double acc = 0.0;
            for (Eigen::Index i = 0; i < n; ++i) {
                acc += dist2(i);
                if (acc >= threshold) {
                    pick = i;
                    break;
                }
                if (i + 1 == n) pick = i;
            }
        } else {
            pick = static_cast<Eigen::Index>(rng.uniform_int(static_cast<size_t>(n)));
        }
        centers.row(c) = x.row(pick);
        dist2 = dist2.cwiseMin((x.rowwise() - centers.row(c)).rowwise().squaredNorm());
    }

    std::vector<int> assign(static_cast<size_t>(n), 0);
    for (int iter = 0; iter < 300; ++iter) {
        bool changed = false;
        for (Eigen::Index i = 0; i < n; ++i) {
            int best = 0;
            double best_d = (x.row(i) - centers.row(0)).squaredNorm();
            for (int c = 1; c < k; ++c) {
                const double d = (x.row(i) - centers.row(c)).squaredNorm();
                if (d < best_d) {
                    best_d = d;
                    best = c;
                }
            }
            if (assign[static_cast<size_t>(i)] != best) {
                assign[static_cast<size_t>(i)] = best;
                changed = true;
            }
        }
        if (!changed && iter > 0) break;

        Matrix sums = Matrix::Zero(k, x.cols());
        std::vector<int> counts(static_cast<size_t>(k), 0);
        for (Eigen::Index i = 0; i < n; ++i) {
            sums.row(assign[static_cast<size_t>(i)]) += x.row(i);
            counts[static_cast<size_t>(assign[static_cast<size_t>(i)])] += 1;
        }
        for (int c = 0; c < k; ++c) {
            if (counts[static_cast<size_t>(c)] > 0) {
                centers.row(c) = sums.row(c) / counts[static_cast<size_t>(c)];
            } else {
                // Re-seed an emptied cluster to the point farthest from its
                // current centroid.
                Eigen::Index far = 0;
                double far_d = -1.0;
                for (Eigen::Index i = 0; i < n; ++i) {
                    const double d =
                        (x.row(i) - centers.row(assign[static_cast<size_t>(i)])).squaredNorm();
                    if (d > far_d) {
                        far_d = d;
                        far = i;
                    }
                }
                centers.row(c) = x.row(far);
            }
        }
    }
    return assign;
}

std::vector<int> label_indices(const std::vector<std::string>& labels) {
    std::unordered_map<std::string, int> index;
    std::vector<int> out;
    out.reserve(labels.size());
    for (const auto& l : labels) {
        auto [it, inserted] = index.try_emplace(l, static_cast<int>(index.size()));
        out.push_back(it->second);
    }
    return out;
}

std::vector<int> hungarian_min_cost(const Matrix& cost) {
    const int n = static_cast<int>(cost.rows());
    if (cost.cols() != n) throw std::invalid_argument("cost matrix must be square");
    const double kInf = std::numeric_limits<double>::infinity();

    // Potentials-based assignment, 1-indexed internally.
    std::vector<double> u(static_cast<size_t>(n) + 1, 0.0), v(static_cast<size_t>(n) + 1, 0.0);
    std::vector<int> p(static_cast<size_t>(n) + 1, 0), way(static_cast<size_t>(n) + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(static_cast<size_t>(n) + 1, kInf);
        std::vector<bool> used(static_cast<size_t>(n) + 1, false);
        do {
            used[static_cast<size_t>(j0)] = true;
            const int i0 = p[static_cast<size_t>(j0)];
            double delta = kInf;
            int j1 = 0;
            for (int j = 1; j <= n; ++j) {
                if (used[static_cast<size_t>(j)]) continue;
                const double cur = cost(i0 - 1, j - 1) - u[static_cast<size_t>(i0)] -
                                   v[static_cast<size_t>(j)];
                if (cur < minv[static_cast<size_t>(j)]) {
                    minv[static_cast<size_t>(j)] = cur;
                    way[static_cast<size_t>(j)] = j0;
                }
                if (minv[static_cast<size_t>(j)] < delta) {
                    delta = minv[static_cast<size_t>(j)];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[static_cast<size_t>(j)]) {
                    u[static_cast<size_t>(p[static_cast<size_t>(j)])] += delta;
                    v[static_cast<size_t>(j)] -= delta;
                } else {
                    minv[static_cast<size_t>(j)] -= delta;
                }
            }
            j0 = j1;
        } while (p[static_cast<size_t>(j0)] != 0);
        do {
            const int j1 = way[static_cast<size_t>(j0)];
            p[static_cast<size_t>(j0)] = p[static_cast<size_t>(j1)];
            j0 = j1;
        } while (j0);
    }

    std::vector<int> row_to_col(static_cast<size_t>(n), -1);
    for (int j = 1; j <= n; ++j) {
        if (p[static_cast<size_t>(j)] > 0) row_to_col[static_cast<size_t>(p[static_cast<size_t>(j)]) - 1] = j - 1;
    }
    return row_to_col;
}

double clustering_accuracy(const std::vector<int>& gold, const std::vector<int>& pred) {
    if (gold.size() != pred.size()) throw std::invalid_argument("label length mismatch");
    if (gold.empty()) return 0.0;
    const int kg = *std::max_element(gold.begin(), gold.end()) + 1;
    const int kp = *std::max_element(pred.begin(), pred.end()) + 1;
    const int m = std::max(kg, kp);

    Matrix confusion = Matrix::Zero(m, m);
    for (size_t i = 0; i < gold.size(); ++i) {
        confusion(gold[i], pred[i]) += 1.0;
    }
    const std::vector<int> match = hungarian_min_cost(-confusion);
    double correct = 0.0;
    for (int g = 0; g < m; ++g) correct += confusion(g, match[static_cast<size_t>(g)]);
    return correct / static_cast<double>(gold.size());
}

namespace {

Matrix contingency(const std::vector<int>& gold, const std::vector<int>& pred) {
    const int kg = *std::max_element(gold.begin(), gold.end()) + 1;
    const int kp = *std::max_element(pred.begin(), pred.end()) + 1;
    Matrix c = Matrix::Zero(kg, kp);
    for (size_t i = 0; i < gold.size(); ++i) c(gold[i], pred[i]) += 1.0;
    return c;
}

}  // namespace

double nmi(const std::vector<int>& gold, const std::vector<int>& pred) {
    if (gold.size() != pred.size()) throw std::invalid_argument("label length mismatch");
    if (gold.empty()) return 0.0;
    const Matrix c = contingency(gold, pred);
    const double n = static_cast<double>(gold.size());
    const Eigen::VectorXd a = c.rowwise().sum();
    const Eigen::VectorXd b = c.colwise().sum().transpose();

    double hg = 0.0, ha = 0.0, mi = 0.0;
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        if (a(i) > 0) hg -= a(i) / n * std::log(a(i) / n);
    }
    for (Eigen::Index j = 0; j < b.size(); ++j) {
        if (b(j) > 0) ha -= b(j) / n * std::log(b(j) / n);
    }
    for (Eigen::Index i = 0; i < c.rows(); ++i) {
        for (Eigen::Index j = 0; j < c.cols(); ++j) {
            if (c(i, j) > 0) {
                mi += c(i, j) / n * std::log(n * c(i, j) / (a(i) * b(j)));
            }
        }
    }
    if (hg <= 0.0 || ha <= 0.0) return 0.0;
    return mi / std::sqrt(hg * ha);
}

double ari(const std::vector<int>& gold, const std::vector<int>& pred) {
    if (gold.size() != pred.size()) throw std::invalid_argument("label length mismatch");
    if (gold.empty()) return 0.0;
    const Matrix c = contingency(gold, pred);
    auto pairs = [](double x) { return x * (x - 1.0) / 2.0; };

    double sum_cells = 0.0;
    for (Eigen::Index i = 0; i < c.rows(); ++i) {
        for (Eigen::Index j = 0; j < c.cols(); ++j) sum_cells += pairs(c(i, j));
    }
    double sum_a = 0.0, sum_b = 0.0;
    const Eigen::VectorXd a = c.rowwise().sum();
    const Eigen::VectorXd b = c.colwise().sum().transpose();
    for (Eigen::Index i = 0; i < a.size(); ++i) sum_a += pairs(a(i));
    for (Eigen::Index j = 0; j < b.size(); ++j) sum_b += pairs(b(j));

    const double total = pairs(static_cast<double>(gold.size()));
    const double expected = sum_a * sum_b / total;
    const double max_index = 0.5 * (sum_a + sum_b);
    const double denom = max_index - expected;
    if (denom == 0.0) return 0.0;
    return (sum_cells - expected) / denom;
}

ClusterReport cluster_and_score(const EmbeddingSet& set, int k, uint64_t seed) {
    ClusterReport report;
    report.k = k;
    report.seed = seed;
    report.assignments = kmeans(set.vectors, k, seed);
    const std::vector<int> gold = label_indices(set.labels);
    report.acc = clustering_accuracy(gold, report.assignments);
    report.nmi = nmi(gold, report.assignments);
    report.ari = ari(gold, report.assignments);
    return report;
}

Matrix project_2d(const Matrix& vectors) {
    const auto n = vectors.rows();
    if (n < 2) throw std::invalid_argument("project_2d needs at least 2 items");
    Matrix centered = vectors.rowwise() - vectors.colwise().mean();

    Eigen::BDCSVD<Matrix> svd(centered, Eigen::ComputeThinV);
    Matrix out = Matrix::Zero(n, 2);
    const auto rank_cols = std::min<Eigen::Index>(2, svd.matrixV().cols());
    for (Eigen::Index comp = 0; comp < rank_cols; ++comp) {
        Eigen::VectorXd axis = svd.matrixV().col(comp);
        if (comp < svd.singularValues().size() &&
            svd.singularValues()(comp) <= 1e-12 * svd.singularValues()(0)) {
            continue;  // rank-deficient: leave the coordinate zeroed
        }
        Eigen::Index max_i = 0;
        axis.cwiseAbs().maxCoeff(&max_i);
        if (axis(max_i) < 0.0) axis = -axis;
        out.col(comp) = centered * axis;
    }
    return out;
}

void write_scatter_svg(std::ostream& out, const Matrix& xy,
                       const std::vector<std::string>& labels) {
    static const char* kPalette[] = {"#4e79a7", "#f28e2b", "#59a14f", "#e15759",
                                     "#b07aa1", "#76b7b2", "#edc948", "#9c755f"};
    constexpr int kPaletteSize = 8;
    const double width = 640, height = 480, margin = 48;

    double xmin = xy.col(0).minCoeff(), xmax = xy.col(0).maxCoeff();
    double ymin = xy.col(1).minCoeff(), ymax = xy.col(1).maxCoeff();
    if (xmax - xmin < 1e-12) xmax = xmin + 1.0;
    if (ymax - ymin < 1e-12) ymax = ymin + 1.0;

    std::map<std::string, int> color;
    for (const auto& l : labels) color.try_emplace(l, static_cast<int>(color.size()));

    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    for (Eigen::Index i = 0; i < xy.rows(); ++i) {
        const double px = margin + (xy(i, 0) - xmin) / (xmax - xmin) * (width - 2 * margin);
        const double py =
            height - margin - (xy(i, 1) - ymin) / (ymax - ymin) * (height - 2 * margin);
        const int ci = color.at(labels[static_cast<size_t>(i)]) % kPaletteSize;
        out << "<circle cx=\"" << px << "\" cy=\"" << py << "\" r=\"3.5\" fill=\""
            << kPalette[ci] << "\" fill-opacity=\"0.8\"/>\n";
    }
    double ly = margin;
    for (const auto& [label, idx] : color) {
        out << "<circle cx=\"" << width - margin - 120 << "\" cy=\"" << ly
            << "\" r=\"4\" fill=\"" << kPalette[idx % kPaletteSize] << "\"/>\n";
        out << "<text x=\"" << width - margin - 110 << "\" y=\"" << ly + 4
            << "\" font-family=\"sans-serif\" font-size=\"12\">" << label << "</text>\n";
        ly += 18;
    }
    out << "</svg>\n";
}

}  // namespace spankt
