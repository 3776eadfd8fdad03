#pragma once

#include <iosfwd>
#include <stdexcept>
#include <vector>

#include "spankt/corpus.hpp"
#include "spankt/encoder.hpp"
#include "spankt/pair.hpp"
#include "spankt/span.hpp"

namespace spankt {

// Non-finite loss or parameter detected; the CLI maps this to exit code 3.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// One sentence prepared for a training step: corrupted input, mask positions,
// gold + negative spans with entity classes, and relation pairs over the gold
// span prefix.
struct PretrainExample {
    std::vector<int> original;
    std::vector<int> corrupted;
    std::vector<int> mask_positions;  // sorted, unique
    std::vector<Span> spans;          // gold mentions first, then negatives
    std::vector<int> span_classes;    // entity class per span; NIL for negatives
    int gold_span_count = 0;
    std::vector<std::pair<int, int>> rel_pairs;  // indices into the gold prefix
    std::vector<int> rel_classes;
};

// Token masking at token_mask_rate over non-entity positions, then
// whole-entity masking at entity_mask_rate (all tokens of a selected entity).
// Each masked position independently becomes [MASK] / a random text token /
// stays unchanged with probabilities (1-r-k) / r / k. Also assembles the
// span and relation targets: gold mentions keep their entity class (NIL when
// out of vocabulary), `negative_spans` sampled non-entity spans get NIL, and
// with rel_negatives every unrelated ordered gold pair is added as NO_REL.
PretrainExample apply_masking(const AlignedSentence& s, const Vocab& vocab,
                              const MaskingConfig& cfg, Rng& rng,
                              int max_span_len = 8, int negative_spans = 2,
                              bool rel_negatives = false);

// Summed -log p(original token) over the masked positions. The output head is
// tied to tok_emb with a separate bias. When d_hidden is given, parameter
// gradients scaled by grad_scale are accumulated and d(hidden) rows added.
double mlm_loss(ModelWeights& w, const Matrix& hidden, const std::vector<int>& original_ids,
                const std::vector<int>& mask_positions, double grad_scale,
                Matrix* d_hidden);

// Summed -log p(class) over spans via the two-tier adaptive softmax: the head
// cluster scores NIL, the top `cutoff` entity classes and one tail gate; tail
// classes are scored within the projected tail cluster. With a single cluster
// (cutoff >= entity_vocab - 1) this is exactly a full softmax.
double adaptive_softmax_loss(ModelWeights& w, const Matrix& span_reps,
                             const std::vector<int>& classes, double grad_scale,
                             Matrix* d_span_reps);

// Full probability vector over all entity classes (for tests and inspection).
Eigen::VectorXd adaptive_softmax_probs(const ModelWeights& w,
                                       const Eigen::VectorXd& span_rep);

// Summed -log p(relation) over pair reps. NO_REL (class 0) is excluded from
// the softmax unless include_no_rel.
double relation_loss(ModelWeights& w, const Matrix& pair_reps,
                     const std::vector<int>& classes, bool include_no_rel,
                     double grad_scale, Matrix* d_pair_reps);

struct LossBreakdown {
    double l_mlm = 0.0, l_ent = 0.0, l_rel = 0.0, total = 0.0;
    int mlm_count = 0, ent_count = 0, rel_count = 0;
};

// Losses (sums and counts) for one example; with accumulate_grads the full
// backward pass runs with the given per-loss gradient scales.
LossBreakdown example_losses(ModelWeights& w, const PretrainExample& ex, bool train_mode,
                             Rng& rng, bool rel_negatives, double mlm_scale,
                             double ent_scale, double rel_scale, bool accumulate_grads);

// Adam with optional decoupled weight decay (skipped for tensors flagged
// weight_decay = false).
struct AdamState {
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    int t = 0;
    std::vector<Matrix> m, v;

    void init(const ModelWeights& w);
    void step(ModelWeights& w, double lr, double weight_decay);
};

// Linear decay to zero with warmup; step is 0-based in [0, total_steps).
double lr_at_step(double base_lr, int step, int total_steps, int warmup);

struct TrainOptions {
    int steps = 5000;
    int batch_size = 16;
    double lr = 5e-5;
    int warmup = 300;
    double weight_decay = 0.0;
    double clip_norm = 5.0;
    uint64_t seed = 0;
    MaskingConfig masking;
    int negative_spans = 2;
    bool rel_negatives = false;
};

// One optimizer step over a batch of prepared examples. Losses are means over
// the pooled per-loss item counts of the batch; total is their exact sum.
// Throws NumericError on a non-finite loss or parameter.
LossBreakdown train_step(ModelWeights& w, const std::vector<PretrainExample>& batch,
                         AdamState& opt, double lr, const TrainOptions& opts, Rng& rng);

// Full pretraining loop. Sentences longer than max_seq_len are skipped.
// Writes one CSV line per step ("step,l_mlm,l_ent,l_rel,total") to log when
// given, with enough digits that parsing the fields back reproduces the exact
// doubles.
void pretrain_loop(ModelWeights& w, const std::vector<AlignedSentence>& corpus,
                   const Vocab& vocab, const TrainOptions& opts, std::ostream* log);

// CSV line formatting used by the training log.
std::string format_log_line(int step, const LossBreakdown& bd);

}  // namespace spankt
