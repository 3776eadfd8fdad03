#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "spankt/rng.hpp"

namespace spankt {

// Data or validation problem in user-supplied input. The CLI maps this to
// exit code 2.
class CorpusError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct EntityMention {
    int start = 0;  // token index, inclusive
    int end = 0;    // token index, inclusive
    std::string entity_id;
};

struct RelationTriple {
    int head = 0;  // index into AlignedSentence::entities
    int tail = 0;
    std::string relation_id;
};

// One sentence of text aligned to a knowledge graph: tokens, entity mention
// spans carrying KG entity ids, and relation triples between those mentions.
struct AlignedSentence {
    std::vector<std::string> tokens;
    std::vector<EntityMention> entities;
    std::vector<RelationTriple> relations;

    // Throws CorpusError naming the offending span/relation if any invariant
    // is violated: span bounds, duplicate (start,end) pairs, relation indices,
    // head != tail.
    void validate() const;
};

// Token/entity/relation vocabularies with reserved ids. Reserved token ids
// occupy the lowest range and are never produced by tokenizing raw text.
struct Vocab {
    static constexpr int kPad = 0;
    static constexpr int kMask = 1;
    static constexpr int kUnk = 2;
    static constexpr int kCls = 3;
    static constexpr int kEnt = 4;
    static constexpr int kHd = 5;
    static constexpr int kTl = 6;
    static constexpr int kNumReserved = 7;

    static constexpr int kNilEntity = 0;    // reserved entity class
    static constexpr int kNoRelation = 0;   // reserved relation class

    std::vector<std::string> id_to_token;   // starts with the reserved names
    std::unordered_map<std::string, int> token_to_id;

    std::vector<std::string> entity_ids;    // index 0 is NIL
    std::unordered_map<std::string, int> entity_to_index;

    std::vector<std::string> relation_ids;  // index 0 is NO_REL
    std::unordered_map<std::string, int> relation_to_index;

    Vocab();

    int token_count() const { return static_cast<int>(id_to_token.size()); }
    int entity_count() const { return static_cast<int>(entity_ids.size()); }
    int relation_count() const { return static_cast<int>(relation_ids.size()); }

    // Tokenizing raw text: reserved surface forms fall back to [UNK].
    int text_token_id(const std::string& tok) const;
    std::vector<int> encode(const std::vector<std::string>& tokens) const;

    // NIL / NO_REL when unknown.
    int entity_class(const std::string& id) const;
    int relation_class(const std::string& id) const;

    bool is_reserved(int token_id) const { return token_id < kNumReserved; }
};

struct RelationSpec {
    std::string relation_id;
    int head_type = 0;
    int tail_type = 0;
    std::vector<std::string> templates;  // each contains {head} and {tail} once
};

// Recipe for a synthetic KG-aligned corpus. Deterministic given rng_seed.
struct SynthSpec {
    int entity_type_count = 2;
    int entities_per_type = 30;
    std::vector<RelationSpec> relation_schema;
    int sentence_count = 1000;
    uint64_t rng_seed = 0;

    void validate() const;  // throws CorpusError
};

// JSONL aligned-corpus format, one record per line:
//   {"tokens":[...],"entities":[[start,end,"id"],...],
//    "relations":[[head_idx,tail_idx,"rid"],...]}
// Span indices are inclusive on both ends.
std::vector<AlignedSentence> load_corpus(const std::string& path);
void write_corpus(const std::string& path, const std::vector<AlignedSentence>& corpus);
AlignedSentence parse_record(const std::string& line, size_t line_no);
std::string format_record(const AlignedSentence& s);

// Token vocab keeps tokens with frequency >= min_freq; entity vocab keeps the
// top_k_entities most frequent entity ids (frequency desc, then id asc), so
// entity class indices are frequency-ranked for the adaptive softmax; all
// observed relation ids are kept (sorted, after NO_REL).
Vocab build_vocab(const std::vector<AlignedSentence>& corpus, int min_freq,
                  int top_k_entities);

// Deterministic synthetic corpus. Every sentence carries exactly one relation
// instance; entity ids have the form "T<type>:<name-slug>" so gold type labels
// are recoverable from the id prefix.
std::vector<AlignedSentence> generate_synthetic(const SynthSpec& spec);

// Schema of `relation_types` relations ("R0", "R1", ...) over `entity_types`
// entity types. Head/tail types alternate across relations so type signatures
// alone do not identify a relation; each relation carries three templates
// with relation-specific keyword tokens plus shared filler words.
std::vector<RelationSpec> default_relation_schema(int entity_types, int relation_types);

// Entity type label encoded in a (synthetic) entity id: prefix before ':',
// or the whole id if there is none.
std::string entity_type_label(const std::string& entity_id);

// All (start, end) with end - start + 1 <= max_len, ordered by (start, end).
std::vector<std::pair<int, int>> enumerate_spans(int n_tokens, int max_len);
std::vector<std::pair<int, int>> enumerate_spans(const AlignedSentence& s, int max_len);

// Uniform sample (without replacement) of candidate spans that are not gold
// entity spans. Returns all candidates when fewer than `count` exist.
std::vector<std::pair<int, int>> sample_negative_spans(const AlignedSentence& s,
                                                       size_t count, int max_len,
                                                       Rng& rng);

}  // namespace spankt
