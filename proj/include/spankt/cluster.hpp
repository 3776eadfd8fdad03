#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "spankt/corpus.hpp"
#include "spankt/weights.hpp"

namespace spankt {

struct EmbeddingSet {
    std::vector<std::string> keys;    // unique identifiers
    std::vector<std::string> labels;  // gold label per item
    Matrix vectors;                   // one row per item
};

// Mention-averaged span representations per distinct entity, gold label =
// the entity's type. Sentences longer than max_seq_len are skipped. The vocab
// must be the one the model was trained with.
EmbeddingSet extract_entity_embeddings(ModelWeights& w, const Vocab& vocab,
                                       const std::vector<AlignedSentence>& corpus);

// One pair representation per gold relation instance, gold label = the
// relation id.
EmbeddingSet extract_relation_embeddings(ModelWeights& w, const Vocab& vocab,
                                         const std::vector<AlignedSentence>& corpus);

// Lloyd's algorithm on L2-normalized rows, k-means++ seeding, run to the
// assignment fixpoint or 300 iterations; an emptied cluster is re-seeded to
// the point farthest from its assigned centroid.
std::vector<int> kmeans(const Matrix& vectors, int k, uint64_t seed);

// Dense labels in order of first appearance, for feeding string labels to the
// metrics below.
std::vector<int> label_indices(const std::vector<std::string>& labels);

// Minimum-cost assignment on a square cost matrix; returns the column chosen
// for each row.
std::vector<int> hungarian_min_cost(const Matrix& cost);

// Accuracy under the best one-to-one mapping between cluster ids and gold
// labels (Hungarian on the confusion matrix).
double clustering_accuracy(const std::vector<int>& gold, const std::vector<int>& pred);

// I(G;A) / sqrt(H(G) H(A)) with natural logs; 0 when either entropy is 0.
double nmi(const std::vector<int>& gold, const std::vector<int>& pred);

// Adjusted Rand Index by pair counting; 0 when the correction denominator is 0.
double ari(const std::vector<int>& gold, const std::vector<int>& pred);

struct ClusterReport {
    std::vector<int> assignments;
    double acc = 0.0, nmi = 0.0, ari = 0.0;
    int k = 0;
    uint64_t seed = 0;
};

ClusterReport cluster_and_score(const EmbeddingSet& set, int k, uint64_t seed);

// PCA to two components after mean-centering. Component signs are fixed by
// making the largest-magnitude loading positive; with rank < 2 the second
// coordinate is zeroed.
Matrix project_2d(const Matrix& vectors);

// Standalone SVG scatter of 2D points colored by label, with a legend.
void write_scatter_svg(std::ostream& out, const Matrix& xy,
                       const std::vector<std::string>& labels);

}  // namespace spankt
