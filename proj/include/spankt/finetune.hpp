#pragma once

#include <cstdint>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "spankt/corpus.hpp"
#include "spankt/pretrain.hpp"
#include "spankt/span.hpp"
#include "spankt/weights.hpp"

namespace spankt {

// ---- marker insertion ----

enum class MarkerKind {
    kEntity,    // one span, bracketed by [ENT] ... [ENT]
    kHeadTail,  // two spans, bracketed by [HD] ... [HD] and [TL] ... [TL]
};

struct MarkedSentence {
    std::vector<std::string> tokens;
    std::vector<int> opening;  // index of the opening marker, one per input span
};

struct MarkedIds {
    std::vector<int> ids;
    std::vector<int> opening;
};

// Brackets each span with its marker token. Spans must lie within the
// sentence and must not overlap each other; kEntity takes exactly one span,
// kHeadTail exactly two (head first). Throws CorpusError otherwise.
MarkedSentence insert_markers(const std::vector<std::string>& tokens,
                              const std::vector<Span>& spans, MarkerKind kind);
MarkedIds insert_marker_ids(const std::vector<int>& ids, const std::vector<Span>& spans,
                            MarkerKind kind);

// Removes every marker token, recovering the pre-insertion sentence.
std::vector<std::string> strip_markers(const std::vector<std::string>& tokens);

// ---- evaluation ----

struct LabeledItem {
    std::string cls;  // class label
    std::string key;  // identity of the item, class excluded
};

struct ClassCounts {
    int gold = 0;
    int pred = 0;
    int correct = 0;
};

struct EvalReport {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::map<std::string, ClassCounts> per_class;
};

enum class F1Mode { kMicro, kMacro };

// Strict-match P/R/F1 over deduplicated (cls, key) items. Precision is 0 when
// nothing was predicted; f1 is 0 when p + r is 0. Macro averages per-class
// scores over the classes present in gold or predicted.
EvalReport f1_report(const std::vector<LabeledItem>& gold,
                     const std::vector<LabeledItem>& pred, F1Mode mode);

// ---- joint entity + relation extraction ----

struct TypedSpan {
    Span span{0, 0};
    std::string label;
};

struct LabeledRelation {
    Span head{0, 0};
    Span tail{0, 0};
    std::string label;
};

struct JointPrediction {
    std::vector<TypedSpan> entities;
    std::vector<LabeledRelation> relations;
};

// Task label sets; logit column 0 is the null class for both heads.
struct JointHead {
    std::vector<std::string> entity_types;
    std::vector<std::string> relations;

    int type_index(const std::string& label) const;      // -1 when unknown
    int relation_index(const std::string& label) const;  // -1 when unknown
};

struct JointLogits {
    std::vector<Span> candidates;
    Matrix span_logits;                         // (candidates, types + 1)
    std::vector<int> kept;                      // candidate indices typed non-null
    std::vector<std::pair<int, int>> pairs;     // ordered pairs of kept indices
    Matrix pair_logits;                         // (pairs, relations + 1)
};

// Sorted unique labels observed in the data.
std::vector<std::string> collect_entity_types(const std::vector<AlignedSentence>& data);
std::vector<std::string> collect_relation_labels(const std::vector<AlignedSentence>& data);

// Adds the task tensors if absent (Gaussian weights, zero biases); loaded
// checkpoints keep their values.
JointHead init_joint_head(ModelWeights& w, std::vector<std::string> entity_types,
                          std::vector<std::string> relations, uint64_t seed);
void init_classifier_head(ModelWeights& w, const std::string& weight_name,
                          const std::string& bias_name, int in_dim, int n_labels,
                          uint64_t seed);

// Eval-mode head pass: classifies every candidate span, then scores all
// ordered pairs of the spans whose argmax is non-null. Ties go to null.
JointLogits joint_head_forward(ModelWeights& w, const Matrix& hidden,
                               const std::vector<Span>& candidates);

// Argmax decode of the logits; null suppresses the span or pair.
JointPrediction joint_decode(const JointLogits& logits, const JointHead& head);

// Full eval-mode pipeline on one sentence. Sentences that are empty or longer
// than max_seq_len yield an empty prediction.
JointPrediction predict_joint(ModelWeights& w, const Vocab& vocab, const JointHead& head,
                              const AlignedSentence& s, int max_span_len);

// Training loss for one sentence: cross-entropy over all candidate spans
// (gold type or null) plus cross-entropy over all ordered pairs of gold
// spans (gold relation or null). Scales multiply each term's contribution;
// with accumulate set the scaled gradients are added to w.
struct JointLoss {
    double span = 0.0;
    double pair = 0.0;
    int span_count = 0;
    int pair_count = 0;
};

JointLoss joint_example_loss(ModelWeights& w, const Vocab& vocab, const JointHead& head,
                             const AlignedSentence& s, int max_span_len, bool train_mode,
                             Rng& rng, double span_scale, double pair_scale,
                             bool accumulate);

// ---- single-label classification over marked sentences ----

struct MarkedExample {
    std::vector<int> ids;
    std::vector<int> positions;  // opening-marker indices feeding the head
    std::string label;
};

// One example per gold mention, [ENT]-marked, label = the entity's type.
std::vector<MarkedExample> typing_examples(const Vocab& vocab,
                                           const std::vector<AlignedSentence>& data,
                                           int max_seq_len);
// One example per gold relation, [HD]/[TL]-marked, label = the relation id.
std::vector<MarkedExample> relcls_examples(const Vocab& vocab,
                                           const std::vector<AlignedSentence>& data,
                                           int max_seq_len);

// Cross-entropy of the marked example under the named linear head, which
// reads the concatenated token reps at ex.positions.
double classify_loss(ModelWeights& w, const std::string& weight_name,
                     const std::string& bias_name, const MarkedExample& ex, int target,
                     bool train_mode, Rng& rng, double grad_scale, bool accumulate);
int classify_predict(ModelWeights& w, const std::string& weight_name,
                     const std::string& bias_name, const MarkedExample& ex);

// ---- training loops ----

struct FinetuneOptions {
    int epochs = 10;
    int batch_size = 16;
    double lr = 2e-5;
    int warmup = 300;
    double weight_decay = 0.01;
    double clip_norm = 5.0;
    uint64_t seed = 0;
    int patience = 3;       // epochs without dev improvement before stopping
    int max_span_len = 5;   // joint candidate enumeration
};

struct JointScores {
    EvalReport entity;    // micro
    EvalReport relation;  // micro
};

struct JointResult {
    JointScores dev;
    JointScores test;
    int best_epoch = 0;
    std::vector<std::string> log;
};

JointScores score_joint(ModelWeights& w, const Vocab& vocab, const JointHead& head,
                        const std::vector<AlignedSentence>& data, int max_span_len);

// Early-stops on dev relation F1 (entity F1 breaks ties); w ends at the best
// epoch's weights.
JointResult finetune_joint(ModelWeights& w, const Vocab& vocab, const JointHead& head,
                           const std::vector<AlignedSentence>& train,
                           const std::vector<AlignedSentence>& dev,
                           const std::vector<AlignedSentence>& test,
                           const FinetuneOptions& opts, std::ostream* log);

struct LabelScores {
    EvalReport micro;
    EvalReport macro;
};

struct LabelResult {
    LabelScores dev;
    LabelScores test;
    int best_epoch = 0;
    std::vector<std::string> log;
};

LabelScores score_classifier(ModelWeights& w, const std::string& weight_name,
                             const std::string& bias_name,
                             const std::vector<std::string>& labels,
                             const std::vector<MarkedExample>& data);

// Early-stops on dev micro F1; w ends at the best epoch's weights.
LabelResult finetune_classifier(ModelWeights& w, const std::string& weight_name,
                                const std::string& bias_name,
                                const std::vector<std::string>& labels,
                                const std::vector<MarkedExample>& train,
                                const std::vector<MarkedExample>& dev,
                                const std::vector<MarkedExample>& test,
                                const FinetuneOptions& opts, std::ostream* log);

}  // namespace spankt
