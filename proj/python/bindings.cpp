#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <limits>

#include "spankt/checkpoint.hpp"
#include "spankt/cluster.hpp"
#include "spankt/corpus.hpp"
#include "spankt/encoder.hpp"
#include "spankt/finetune.hpp"
#include "spankt/gradcheck.hpp"
#include "spankt/span.hpp"

namespace py = pybind11;
using namespace spankt;

namespace {

// Checkpoint-backed model handle for the read-only operations the bindings
// expose: contextual encoding, span representations, embedding extraction.
struct Model {
    Checkpoint ckpt;

    explicit Model(const std::string& path) : ckpt(load_checkpoint(path)) {}

    Matrix encode(const std::vector<std::string>& tokens) {
        Rng rng(0);
        return encode_sequence(ckpt.weights, ckpt.vocab.encode(tokens), false, rng);
    }

    Eigen::VectorXd span_vector(const std::vector<std::string>& tokens, int start, int end) {
        const Matrix hidden = encode(tokens);
        return span_rep(ckpt.weights, hidden, {start, end}, ckpt.weights.config().span_method);
    }
};

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "span-based knowledge transformer core";

    py::register_exception<CorpusError>(m, "CorpusError");

    py::class_<EntityMention>(m, "EntityMention")
        .def(py::init<>())
        .def_readwrite("start", &EntityMention::start)
        .def_readwrite("end", &EntityMention::end)
        .def_readwrite("entity_id", &EntityMention::entity_id);

    py::class_<RelationTriple>(m, "RelationTriple")
        .def(py::init<>())
        .def_readwrite("head", &RelationTriple::head)
        .def_readwrite("tail", &RelationTriple::tail)
        .def_readwrite("relation_id", &RelationTriple::relation_id);

    py::class_<AlignedSentence>(m, "AlignedSentence")
        .def(py::init<>())
        .def_readwrite("tokens", &AlignedSentence::tokens)
        .def_readwrite("entities", &AlignedSentence::entities)
        .def_readwrite("relations", &AlignedSentence::relations)
        .def("validate", &AlignedSentence::validate);

    m.def("load_corpus", &load_corpus, py::arg("path"));
    m.def("write_corpus", &write_corpus, py::arg("path"), py::arg("corpus"));
    m.def(
        "gen_synth",
        [](int sentences, int entity_types, int relation_types, int entities_per_type,
           uint64_t seed) {
            SynthSpec spec;
            spec.sentence_count = sentences;
            spec.entity_type_count = entity_types;
            spec.entities_per_type = entities_per_type;
            spec.rng_seed = seed;
            spec.relation_schema = default_relation_schema(entity_types, relation_types);
            return generate_synthetic(spec);
        },
        py::arg("sentences"), py::arg("entity_types") = 2, py::arg("relation_types") = 4,
        py::arg("entities_per_type") = 30, py::arg("seed") = 0);
    m.def("entity_type_label", &entity_type_label, py::arg("entity_id"));
    m.def(
        "enumerate_spans",
        [](int n_tokens, int max_len) { return enumerate_spans(n_tokens, max_len); },
        py::arg("n_tokens"), py::arg("max_len"));

    m.def(
        "insert_markers",
        [](const std::vector<std::string>& tokens, const std::vector<Span>& spans,
           const std::string& kind) {
            const MarkerKind mk =
                kind == "entity" ? MarkerKind::kEntity : MarkerKind::kHeadTail;
            const MarkedSentence marked = insert_markers(tokens, spans, mk);
            return py::make_tuple(marked.tokens, marked.opening);
        },
        py::arg("tokens"), py::arg("spans"), py::arg("kind"));
    m.def("strip_markers", &strip_markers, py::arg("tokens"));

    m.def("kmeans", &kmeans, py::arg("vectors"), py::arg("k"), py::arg("seed") = 0);
    m.def("clustering_accuracy", &clustering_accuracy, py::arg("gold"), py::arg("pred"));
    m.def("nmi", &nmi, py::arg("gold"), py::arg("pred"));
    m.def("ari", &ari, py::arg("gold"), py::arg("pred"));
    m.def("project_2d", &project_2d, py::arg("vectors"));

    m.def(
        "gradcheck",
        [](uint64_t seed) {
            const GradcheckReport r = run_gradcheck(seed);
            py::dict out;
            out["max_rel_err"] = r.max_rel_err;
            out["worst_param"] = r.worst_param;
            out["elements"] = r.elements;
            return out;
        },
        py::arg("seed") = 0);

    py::class_<Model>(m, "Model")
        .def(py::init<const std::string&>(), py::arg("path"))
        .def("encode", &Model::encode, py::arg("tokens"))
        .def("span_vector", &Model::span_vector, py::arg("tokens"), py::arg("start"),
             py::arg("end"))
        .def_property_readonly("hidden_dim",
                               [](const Model& m2) { return m2.ckpt.weights.config().hidden_dim; })
        .def_property_readonly("span_rep_dim",
                               [](const Model& m2) { return m2.ckpt.weights.config().span_rep_dim(); })
        .def_property_readonly("token_count",
                               [](const Model& m2) { return m2.ckpt.vocab.token_count(); })
        .def(
            "entity_embeddings",
            [](Model& m2, const std::vector<AlignedSentence>& corpus) {
                const EmbeddingSet set =
                    extract_entity_embeddings(m2.ckpt.weights, m2.ckpt.vocab, corpus);
                return py::make_tuple(set.keys, set.labels, set.vectors);
            },
            py::arg("corpus"))
        .def(
            "relation_embeddings",
            [](Model& m2, const std::vector<AlignedSentence>& corpus) {
                const EmbeddingSet set =
                    extract_relation_embeddings(m2.ckpt.weights, m2.ckpt.vocab, corpus);
                return py::make_tuple(set.keys, set.labels, set.vectors);
            },
            py::arg("corpus"));
}
