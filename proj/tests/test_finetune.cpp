#include <cmath>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "spankt/finetune.hpp"
#include "spankt/weights.hpp"

using namespace spankt;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.hidden_dim = 8;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.ffn_dim = 16;
    cfg.max_seq_len = 16;
    cfg.width_dim = 4;
    cfg.max_span_len = 4;
    cfg.pair_attn_layers = 1;
    cfg.pair_attn_heads = 2;
    return cfg;
}

struct Setup {
    Vocab vocab;
    ModelWeights weights;
};

Setup make_setup(const std::vector<AlignedSentence>& corpus, uint64_t seed) {
    Vocab vocab = build_vocab(corpus, 1, 100);
    ModelConfig cfg = tiny_config();
    cfg.token_vocab = vocab.token_count();
    cfg.entity_vocab = vocab.entity_count();
    cfg.relation_vocab = vocab.relation_count();
    return {std::move(vocab), init_weights(cfg, seed)};
}

AlignedSentence abc_sentence() {
    AlignedSentence s;
    s.tokens = {"a", "b", "c"};
    s.entities = {{1, 1, "T0:b"}};
    return s;
}

}  // namespace

TEST_SUITE("finetune") {

TEST_CASE("entity markers bracket the span") {
    const auto m = insert_markers({"a", "b", "c"}, {{1, 1}}, MarkerKind::kEntity);
    CHECK(m.tokens == std::vector<std::string>{"a", "[ENT]", "b", "[ENT]", "c"});
    REQUIRE(m.opening.size() == 1);
    CHECK(m.opening[0] == 1);
}

TEST_CASE("head/tail markers bracket both spans, head first") {
    const auto m =
        insert_markers({"a", "b", "c"}, {{0, 0}, {2, 2}}, MarkerKind::kHeadTail);
    CHECK(m.tokens == std::vector<std::string>{"[HD]", "a", "[HD]", "b", "[TL]", "c",
                                               "[TL]"});
    REQUIRE(m.opening.size() == 2);
    CHECK(m.opening[0] == 0);
    CHECK(m.opening[1] == 4);
    CHECK(m.tokens[static_cast<size_t>(m.opening[0])] == "[HD]");
    CHECK(m.tokens[static_cast<size_t>(m.opening[1])] == "[TL]");
}

TEST_CASE("marker order is position-stable when the tail precedes the head") {
    const auto m =
        insert_markers({"a", "b", "c"}, {{2, 2}, {0, 0}}, MarkerKind::kHeadTail);
    // Head span {2,2} gets [HD], tail span {0,0} gets [TL], placed by position.
    CHECK(m.tokens == std::vector<std::string>{"[TL]", "a", "[TL]", "b", "[HD]", "c",
                                               "[HD]"});
    CHECK(m.opening[0] == 4);
    CHECK(m.opening[1] == 0);
}

TEST_CASE("multi-token spans keep inner tokens contiguous") {
    const auto m = insert_markers({"a", "b", "c", "d"}, {{1, 2}}, MarkerKind::kEntity);
    CHECK(m.tokens ==
          std::vector<std::string>{"a", "[ENT]", "b", "c", "[ENT]", "d"});
}

TEST_CASE("marker insertion validates spans") {
    CHECK_THROWS_AS(insert_markers({"a"}, {}, MarkerKind::kEntity), CorpusError);
    CHECK_THROWS_AS(insert_markers({"a"}, {{0, 0}, {0, 0}}, MarkerKind::kEntity),
                    CorpusError);
    CHECK_THROWS_AS(insert_markers({"a", "b"}, {{0, 2}}, MarkerKind::kEntity),
                    CorpusError);
    CHECK_THROWS_AS(
        insert_markers({"a", "b", "c"}, {{0, 1}, {1, 2}}, MarkerKind::kHeadTail),
        CorpusError);
    CHECK_THROWS_AS(insert_markers({"a", "b"}, {{0, 0}}, MarkerKind::kHeadTail),
                    CorpusError);
}

TEST_CASE("strip_markers undoes insertion") {
    const std::vector<std::string> tokens = {"x", "y", "z", "w"};
    const auto m = insert_markers(tokens, {{1, 2}}, MarkerKind::kEntity);
    CHECK(strip_markers(m.tokens) == tokens);
    const auto m2 = insert_markers(tokens, {{0, 0}, {3, 3}}, MarkerKind::kHeadTail);
    CHECK(strip_markers(m2.tokens) == tokens);
}

TEST_CASE("insert_marker_ids mirrors the string version with reserved ids") {
    AlignedSentence s;
    s.tokens = {"a", "b", "c"};
    const Vocab vocab = build_vocab({s}, 1, 10);
    const auto ids = vocab.encode(s.tokens);
    const auto m = insert_marker_ids(ids, {{1, 1}}, MarkerKind::kEntity);
    REQUIRE(m.ids.size() == 5);
    CHECK(m.ids[1] == Vocab::kEnt);
    CHECK(m.ids[3] == Vocab::kEnt);
    CHECK(m.opening == std::vector<int>{1});
    const auto m2 = insert_marker_ids(ids, {{0, 0}, {2, 2}}, MarkerKind::kHeadTail);
    CHECK(m2.ids[0] == Vocab::kHd);
    CHECK(m2.ids[4] == Vocab::kTl);
}

TEST_CASE("f1_report matches the {A} vs {A,B} hand case") {
    const std::vector<LabeledItem> gold = {{"A", "k1"}};
    const std::vector<LabeledItem> pred = {{"A", "k1"}, {"B", "k2"}};
    const auto rep = f1_report(gold, pred, F1Mode::kMicro);
    CHECK(rep.precision == doctest::Approx(0.5));
    CHECK(rep.recall == doctest::Approx(1.0));
    CHECK(rep.f1 == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("f1_report requires the class to match, not just the key") {
    const std::vector<LabeledItem> gold = {{"A", "k1"}};
    const std::vector<LabeledItem> pred = {{"B", "k1"}};
    const auto rep = f1_report(gold, pred, F1Mode::kMicro);
    CHECK(rep.f1 == doctest::Approx(0.0));
}

TEST_CASE("f1_report deduplicates items") {
    const std::vector<LabeledItem> gold = {{"A", "k1"}, {"A", "k1"}};
    const std::vector<LabeledItem> pred = {{"A", "k1"}, {"A", "k1"}, {"A", "k1"}};
    const auto rep = f1_report(gold, pred, F1Mode::kMicro);
    CHECK(rep.precision == doctest::Approx(1.0));
    CHECK(rep.recall == doctest::Approx(1.0));
}

TEST_CASE("empty predictions give zero precision without dividing by zero") {
    const std::vector<LabeledItem> gold = {{"A", "k1"}};
    const auto rep = f1_report(gold, {}, F1Mode::kMicro);
    CHECK(rep.precision == 0.0);
    CHECK(rep.recall == 0.0);
    CHECK(rep.f1 == 0.0);
}

TEST_CASE("macro averages per-class f1 over gold and predicted classes") {
    // Class A: perfect. Class B: predicted only, f1 0. Class C: missed, f1 0.
    const std::vector<LabeledItem> gold = {{"A", "k1"}, {"C", "k3"}};
    const std::vector<LabeledItem> pred = {{"A", "k1"}, {"B", "k2"}};
    const auto rep = f1_report(gold, pred, F1Mode::kMacro);
    CHECK(rep.f1 == doctest::Approx(1.0 / 3.0));
    CHECK(rep.per_class.size() == 3);
}

TEST_CASE("joint head index lookups") {
    JointHead head;
    head.entity_types = {"T0", "T1"};
    head.relations = {"R0"};
    CHECK(head.type_index("T0") == 0);
    CHECK(head.type_index("T1") == 1);
    CHECK(head.type_index("nope") == -1);
    CHECK(head.relation_index("R0") == 0);
    CHECK(head.relation_index("nope") == -1);
}

TEST_CASE("collect label sets are sorted and unique") {
    AlignedSentence s1;
    s1.tokens = {"a", "b"};
    s1.entities = {{0, 0, "T1:x"}, {1, 1, "T0:y"}};
    s1.relations = {{0, 1, "Rb"}};
    AlignedSentence s2;
    s2.tokens = {"c", "d"};
    s2.entities = {{0, 0, "T0:z"}, {1, 1, "T1:q"}};
    s2.relations = {{0, 1, "Ra"}};
    CHECK(collect_entity_types({s1, s2}) == std::vector<std::string>{"T0", "T1"});
    CHECK(collect_relation_labels({s1, s2}) == std::vector<std::string>{"Ra", "Rb"});
}

TEST_CASE("joint forward shapes: all candidates scored, kept pairs ordered") {
    AlignedSentence s;
    s.tokens = {"a", "b", "c", "d"};
    s.entities = {{0, 0, "T0:a"}, {2, 2, "T1:c"}};
    s.relations = {{0, 1, "R0"}};
    Setup su = make_setup({s}, 0);

    JointHead head = init_joint_head(su.weights, {"T0", "T1"}, {"R0"}, 7);
    Rng rng(0);
    const Matrix hidden =
        encode_sequence(su.weights, su.vocab.encode(s.tokens), false, rng);
    const auto spans = enumerate_spans(static_cast<int>(s.tokens.size()), 2);
    const JointLogits logits = joint_head_forward(su.weights, hidden, spans);

    CHECK(logits.candidates.size() == spans.size());
    CHECK(logits.span_logits.rows() == static_cast<Eigen::Index>(spans.size()));
    CHECK(logits.span_logits.cols() == 3);  // null + 2 types
    CHECK(logits.pairs.size() == logits.kept.size() * (logits.kept.size() - 1));
    if (!logits.pairs.empty()) {
        CHECK(logits.pair_logits.rows() == static_cast<Eigen::Index>(logits.pairs.size()));
        CHECK(logits.pair_logits.cols() == 2);  // null + 1 relation
    }
}

TEST_CASE("decode ties go to null") {
    JointHead head;
    head.entity_types = {"T0"};
    head.relations = {"R0"};
    JointLogits logits;
    logits.candidates = {{0, 0}, {1, 1}};
    logits.span_logits = Matrix::Zero(2, 2);      // tie everywhere -> null
    logits.span_logits(1, 1) = 1.0;               // only span 1 is typed
    logits.kept = {1};
    const JointPrediction pred = joint_decode(logits, head);
    REQUIRE(pred.entities.size() == 1);
    CHECK(pred.entities[0].span == Span{1, 1});
    CHECK(pred.entities[0].label == "T0");
    CHECK(pred.relations.empty());
}

TEST_CASE("joint loss counts candidates and gold pairs") {
    AlignedSentence s;
    s.tokens = {"a", "b", "c", "d", "e"};
    s.entities = {{0, 0, "T0:a"}, {2, 3, "T1:cd"}};
    s.relations = {{0, 1, "R0"}};
    Setup su = make_setup({s}, 1);
    JointHead head = init_joint_head(su.weights, {"T0", "T1"}, {"R0"}, 8);

    Rng rng(3);
    const JointLoss loss =
        joint_example_loss(su.weights, su.vocab, head, s, 3, false, rng, 1.0, 1.0, false);
    // 5 + 4 + 3 candidate spans of len 1..3.
    CHECK(loss.span_count == 12);
    CHECK(loss.pair_count == 2);  // 2 gold spans, both ordered pairs
    CHECK(loss.span > 0.0);
    CHECK(loss.pair > 0.0);
}

TEST_CASE("joint loss gradients match finite differences") {
    AlignedSentence s;
    s.tokens = {"a", "b", "c", "d"};
    s.entities = {{0, 0, "T0:a"}, {2, 2, "T1:c"}};
    s.relations = {{0, 1, "R0"}};
    Setup su = make_setup({s}, 2);
    ModelWeights& w = su.weights;
    JointHead head = init_joint_head(w, {"T0", "T1"}, {"R0"}, 9);
    Rng noise(4);
    for (auto& p : w.params()) {
        for (int i = 0; i < p->value.size(); ++i) p->value(i) += 0.3 * noise.normal();
    }

    auto total = [&] {
        Rng r(0);
        const JointLoss l =
            joint_example_loss(w, su.vocab, head, s, 2, false, r, 1.0, 1.0, false);
        return l.span + l.pair;
    };

    w.zero_grads();
    Rng r0(0);
    joint_example_loss(w, su.vocab, head, s, 2, false, r0, 1.0, 1.0, true);

    const double eps = 1e-5;
    double max_err = 0.0;
    std::string worst;
    for (const auto& p : w.params()) {
        for (int i = 0; i < p->value.size(); ++i) {
            const double orig = p->value(i);
            p->value(i) = orig + eps;
            const double hi = total();
            p->value(i) = orig - eps;
            const double lo = total();
            p->value(i) = orig;
            const double num = (hi - lo) / (2 * eps);
            const double ana = p->grad(i);
            const double err =
                std::abs(ana - num) / std::max(1e-3, std::abs(ana) + std::abs(num));
            if (err > max_err) {
                max_err = err;
                worst = p->name;
            }
        }
    }
    INFO("worst param: ", worst);
    CHECK(max_err < 1e-4);
}

TEST_CASE("typing examples mark each mention and carry its type") {
    AlignedSentence s;
    s.tokens = {"a", "b", "c"};
    s.entities = {{0, 0, "T0:a"}, {2, 2, "T1:c"}};
    const Vocab vocab = build_vocab({s}, 1, 10);
    const auto exs = typing_examples(vocab, {s}, 16);
    REQUIRE(exs.size() == 2);
    CHECK(exs[0].label == "T0");
    CHECK(exs[1].label == "T1");
    CHECK(exs[0].ids[static_cast<size_t>(exs[0].positions[0])] == Vocab::kEnt);
    CHECK(exs[0].positions.size() == 1);
}

TEST_CASE("relcls examples mark head and tail and skip overlapping pairs") {
    AlignedSentence s;
    s.tokens = {"a", "b", "c", "d"};
    s.entities = {{0, 1, "T0:ab"}, {1, 2, "T1:bc"}, {3, 3, "T1:d"}};
    s.relations = {{0, 1, "R0"}, {0, 2, "R1"}};
    const Vocab vocab = build_vocab({s}, 1, 10);
    const auto exs = relcls_examples(vocab, {s}, 16);
    // The (0,1) pair overlaps and is skipped; (0,2) survives.
    REQUIRE(exs.size() == 1);
    CHECK(exs[0].label == "R1");
    CHECK(exs[0].positions.size() == 2);
    CHECK(exs[0].ids[static_cast<size_t>(exs[0].positions[0])] == Vocab::kHd);
    CHECK(exs[0].ids[static_cast<size_t>(exs[0].positions[1])] == Vocab::kTl);
}

TEST_CASE("over-long marked sentences are dropped") {
    AlignedSentence s;
    for (int i = 0; i < 15; ++i) s.tokens.push_back("t" + std::to_string(i));
    s.entities = {{0, 0, "T0:x"}};
    const Vocab vocab = build_vocab({s}, 1, 10);
    CHECK(typing_examples(vocab, {s}, 16).size() == 0);  // 15 + 2 markers > 16
    CHECK(typing_examples(vocab, {s}, 17).size() == 1);
}

TEST_CASE("classifier loss is ln(k) under a zero head and learns a toy task") {
    AlignedSentence s1 = abc_sentence();
    Setup su = make_setup({s1}, 3);
    ModelWeights& w = su.weights;
    const int d = w.config().hidden_dim;
    init_classifier_head(w, "typing.w", "typing.b", d, 3, 5);
    w.at("typing.w").value.setZero();
    w.at("typing.b").value.setZero();

    const auto exs = typing_examples(su.vocab, {s1}, 16);
    REQUIRE(exs.size() == 1);
    Rng rng(6);
    const double loss =
        classify_loss(w, "typing.w", "typing.b", exs[0], 1, false, rng, 1.0, false);
    CHECK(loss == doctest::Approx(std::log(3.0)).epsilon(1e-12));
}

TEST_CASE("classify_loss gradients match finite differences") {
    AlignedSentence s;
    s.tokens = {"a", "b", "c", "d"};
    s.entities = {{1, 2, "T0:bc"}};
    Setup su = make_setup({s}, 4);
    ModelWeights& w = su.weights;
    init_classifier_head(w, "cls.w", "cls.b", w.config().hidden_dim, 2, 10);
    Rng noise(7);
    for (auto& p : w.params()) {
        for (int i = 0; i < p->value.size(); ++i) p->value(i) += 0.3 * noise.normal();
    }
    const auto exs = typing_examples(su.vocab, {s}, 16);
    REQUIRE(exs.size() == 1);

    auto loss = [&] {
        Rng r(0);
        return classify_loss(w, "cls.w", "cls.b", exs[0], 1, false, r, 1.0, false);
    };
    w.zero_grads();
    Rng r0(0);
    classify_loss(w, "cls.w", "cls.b", exs[0], 1, false, r0, 1.0, true);

    const double eps = 1e-5;
    double max_err = 0.0;
    for (const auto& p : w.params()) {
        for (int i = 0; i < p->value.size(); ++i) {
            const double orig = p->value(i);
            p->value(i) = orig + eps;
            const double hi = loss();
            p->value(i) = orig - eps;
            const double lo = loss();
            p->value(i) = orig;
            const double num = (hi - lo) / (2 * eps);
            const double err = std::abs(p->grad(i) - num) /
                               std::max(1e-3, std::abs(p->grad(i)) + std::abs(num));
            max_err = std::max(max_err, err);
        }
    }
    CHECK(max_err < 1e-4);
}

TEST_CASE("finetune_joint improves over the initial scores on a tiny task") {
    SynthSpec spec;
    spec.sentence_count = 60;
    spec.entities_per_type = 4;
    spec.rng_seed = 3;
    spec.relation_schema = default_relation_schema(2, 2);
    const auto corpus = generate_synthetic(spec);
    std::vector<AlignedSentence> train(corpus.begin(), corpus.begin() + 40);
    std::vector<AlignedSentence> dev(corpus.begin() + 40, corpus.begin() + 50);
    std::vector<AlignedSentence> test(corpus.begin() + 50, corpus.end());

    Vocab vocab = build_vocab(corpus, 1, 100);
    ModelConfig cfg = tiny_config();
    cfg.max_seq_len = 32;
    cfg.token_vocab = vocab.token_count();
    cfg.entity_vocab = vocab.entity_count();
    cfg.relation_vocab = vocab.relation_count();
    ModelWeights w = init_weights(cfg, 5);

    JointHead head = init_joint_head(w, collect_entity_types(corpus),
                                     collect_relation_labels(corpus), 11);
    const JointScores before = score_joint(w, vocab, head, train, 4);

    FinetuneOptions opts;
    opts.epochs = 6;
    opts.batch_size = 8;
    opts.lr = 1e-3;
    opts.warmup = 5;
    opts.patience = 6;
    opts.max_span_len = 4;
    opts.seed = 1;
    const JointResult res = finetune_joint(w, vocab, head, train, dev, test, opts, nullptr);

    // w holds the best epoch's weights afterwards.
    const JointScores after = score_joint(w, vocab, head, train, 4);
    CHECK(after.entity.f1 > before.entity.f1);
    CHECK(res.best_epoch >= 0);
    CHECK(res.log.size() >= 1);
}

TEST_CASE("finetune_classifier learns sign of a separable toy set") {
    SynthSpec spec;
    spec.sentence_count = 50;
    spec.entities_per_type = 4;
    spec.rng_seed = 4;
    spec.relation_schema = default_relation_schema(2, 2);
    const auto corpus = generate_synthetic(spec);
    std::vector<AlignedSentence> train(corpus.begin(), corpus.begin() + 30);
    std::vector<AlignedSentence> dev(corpus.begin() + 30, corpus.begin() + 40);
    std::vector<AlignedSentence> test(corpus.begin() + 40, corpus.end());

    Vocab vocab = build_vocab(corpus, 1, 100);
    ModelConfig cfg = tiny_config();
    cfg.max_seq_len = 32;
    cfg.token_vocab = vocab.token_count();
    cfg.entity_vocab = vocab.entity_count();
    cfg.relation_vocab = vocab.relation_count();
    ModelWeights w = init_weights(cfg, 6);

    const auto labels = collect_entity_types(corpus);
    init_classifier_head(w, "typing.w", "typing.b", cfg.hidden_dim,
                         static_cast<int>(labels.size()), 12);
    const auto tr = typing_examples(vocab, train, cfg.max_seq_len);
    const auto dv = typing_examples(vocab, dev, cfg.max_seq_len);
    const auto te = typing_examples(vocab, test, cfg.max_seq_len);
    REQUIRE(!tr.empty());

    FinetuneOptions opts;
    opts.epochs = 5;
    opts.batch_size = 8;
    opts.lr = 1e-3;
    opts.warmup = 5;
    opts.patience = 5;
    opts.seed = 2;
    std::ostringstream log;
    const LabelResult res =
        finetune_classifier(w, "typing.w", "typing.b", labels, tr, dv, te, opts, &log);
    // Morpheme-cued types are learnable quickly even from random init.
    CHECK(res.dev.micro.f1 > 0.5);
    CHECK(res.test.micro.f1 > 0.5);
    CHECK(log.str().find("epoch=0") != std::string::npos);
}

TEST_CASE("identical seeds reproduce the fine-tuning trajectory") {
    SynthSpec spec;
    spec.sentence_count = 30;
    spec.entities_per_type = 3;
    spec.rng_seed = 6;
    spec.relation_schema = default_relation_schema(2, 2);
    const auto corpus = generate_synthetic(spec);
    std::vector<AlignedSentence> train(corpus.begin(), corpus.begin() + 20);
    std::vector<AlignedSentence> dev(corpus.begin() + 20, corpus.begin() + 25);
    std::vector<AlignedSentence> test(corpus.begin() + 25, corpus.end());
    Vocab vocab = build_vocab(corpus, 1, 100);
    ModelConfig cfg = tiny_config();
    cfg.max_seq_len = 32;
    cfg.token_vocab = vocab.token_count();
    cfg.entity_vocab = vocab.entity_count();
    cfg.relation_vocab = vocab.relation_count();

    auto run = [&] {
        ModelWeights w = init_weights(cfg, 7);
        JointHead head = init_joint_head(w, collect_entity_types(corpus),
                                         collect_relation_labels(corpus), 13);
        FinetuneOptions opts;
        opts.epochs = 2;
        opts.batch_size = 8;
        opts.lr = 5e-4;
        opts.warmup = 2;
        opts.max_span_len = 3;
        opts.seed = 3;
        std::ostringstream log;
        finetune_joint(w, vocab, head, train, dev, test, opts, &log);
        return log.str();
    };
    CHECK(run() == run());
}

}  // TEST_SUITE
