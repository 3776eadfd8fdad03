#include "spankt/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"

namespace spankt {

using nlohmann::json;

namespace {

const char* kReservedNames[Vocab::kNumReserved] = {
    "[PAD]", "[MASK]", "[UNK]", "[CLS]", "[ENT]", "[HD]", "[TL]"};

}  // namespace

void AlignedSentence::validate() const {
    const int n = static_cast<int>(tokens.size());
    std::set<std::pair<int, int>> seen;
    for (size_t i = 0; i < entities.size(); ++i) {
        const auto& e = entities[i];
        if (e.start < 0 || e.start > e.end || e.end >= n) {
            std::ostringstream os;
            os << "entity span (" << e.start << "," << e.end << ") id '"
               << e.entity_id << "' out of range for " << n << " tokens";
            throw CorpusError(os.str());
        }
        if (!seen.insert({e.start, e.end}).second) {
            std::ostringstream os;
            os << "duplicate entity span (" << e.start << "," << e.end << ")";
            throw CorpusError(os.str());
        }
    }
    const int m = static_cast<int>(entities.size());
    for (const auto& r : relations) {
        if (r.head < 0 || r.head >= m || r.tail < 0 || r.tail >= m) {
            std::ostringstream os;
            os << "relation '" << r.relation_id << "' references entity index "
               << r.head << "/" << r.tail << " but sentence has " << m << " entities";
            throw CorpusError(os.str());
        }
        if (r.head == r.tail) {
            throw CorpusError("relation '" + r.relation_id + "' has head == tail");
        }
    }
}

Vocab::Vocab() {
    for (int i = 0; i < kNumReserved; ++i) {
        id_to_token.emplace_back(kReservedNames[i]);
        token_to_id[kReservedNames[i]] = i;
    }
    entity_ids.emplace_back("[NIL]");
    entity_to_index["[NIL]"] = 0;
    relation_ids.emplace_back("[NO_REL]");
    relation_to_index["[NO_REL]"] = 0;
}

int Vocab::text_token_id(const std::string& tok) const {
    auto it = token_to_id.find(tok);
    if (it == token_to_id.end() || it->second < kNumReserved) return kUnk;
    return it->second;
}

std::vector<int> Vocab::encode(const std::vector<std::string>& tokens) const {
    std::vector<int> ids;
    ids.reserve(tokens.size());
    for (const auto& t : tokens) ids.push_back(text_token_id(t));
    return ids;
}

int Vocab::entity_class(const std::string& id) const {
    auto it = entity_to_index.find(id);
    return it == entity_to_index.end() ? kNilEntity : it->second;
}

int Vocab::relation_class(const std::string& id) const {
    auto it = relation_to_index.find(id);
    return it == relation_to_index.end() ? kNoRelation : it->second;
}

void SynthSpec::validate() const {
    if (sentence_count <= 0) throw CorpusError("sentence_count must be > 0");
    if (entity_type_count <= 0) throw CorpusError("entity_type_count must be > 0");
    if (entities_per_type <= 0) throw CorpusError("entities_per_type must be > 0");
    if (relation_schema.empty()) throw CorpusError("relation_schema is empty");
    for (const auto& r : relation_schema) {
        if (r.head_type < 0 || r.head_type >= entity_type_count ||
            r.tail_type < 0 || r.tail_type >= entity_type_count) {
            throw CorpusError("relation '" + r.relation_id + "' references unknown entity type");
        }
        if (r.templates.empty()) {
            throw CorpusError("relation '" + r.relation_id + "' has no templates");
        }
        for (const auto& t : r.templates) {
            size_t heads = 0, tails = 0, pos = 0;
            while ((pos = t.find("{head}", pos)) != std::string::npos) { ++heads; pos += 6; }
            pos = 0;
            while ((pos = t.find("{tail}", pos)) != std::string::npos) { ++tails; pos += 6; }
            if (heads != 1 || tails != 1) {
                throw CorpusError("template '" + t + "' must mention {head} and {tail} exactly once");
            }
        }
    }
}

AlignedSentence parse_record(const std::string& line, size_t line_no) {
    json j;
    try {
        j = json::parse(line);
    } catch (const json::exception& e) {
        std::ostringstream os;
        os << "line " << line_no << ": malformed record: " << e.what();
        throw CorpusError(os.str());
    }
    AlignedSentence s;
    try {
        s.tokens = j.at("tokens").get<std::vector<std::string>>();
        for (const auto& ent : j.at("entities")) {
            EntityMention m;
            m.start = ent.at(0).get<int>();
            m.end = ent.at(1).get<int>();
            m.entity_id = ent.at(2).get<std::string>();
            s.entities.push_back(std::move(m));
        }
        for (const auto& rel : j.at("relations")) {
            RelationTriple t;
            t.head = rel.at(0).get<int>();
            t.tail = rel.at(1).get<int>();
            t.relation_id = rel.at(2).get<std::string>();
            s.relations.push_back(std::move(t));
        }
    } catch (const json::exception& e) {
        std::ostringstream os;
        os << "line " << line_no << ": malformed record: " << e.what();
        throw CorpusError(os.str());
    }
    try {
        s.validate();
    } catch (const CorpusError& e) {
        std::ostringstream os;
        os << "line " << line_no << ": " << e.what();
        throw CorpusError(os.str());
    }
    return s;
}

std::string format_record(const AlignedSentence& s) {
    json j;
    j["tokens"] = s.tokens;
    json ents = json::array();
    for (const auto& e : s.entities) ents.push_back({e.start, e.end, e.entity_id});
    j["entities"] = std::move(ents);
    json rels = json::array();
    for (const auto& r : s.relations) rels.push_back({r.head, r.tail, r.relation_id});
    j["relations"] = std::move(rels);
    return j.dump();
}

std::vector<AlignedSentence> load_corpus(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw CorpusError("cannot open corpus file: " + path);
    std::vector<AlignedSentence> corpus;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        corpus.push_back(parse_record(line, line_no));
    }
    return corpus;
}

void write_corpus(const std::string& path, const std::vector<AlignedSentence>& corpus) {
    std::ofstream out(path);
    if (!out) throw CorpusError("cannot open output file: " + path);
    for (const auto& s : corpus) out << format_record(s) << "\n";
}

Vocab build_vocab(const std::vector<AlignedSentence>& corpus, int min_freq,
                  int top_k_entities) {
    std::map<std::string, long> token_freq;
    std::map<std::string, long> entity_freq;
    std::set<std::string> relation_ids;
    for (const auto& s : corpus) {
        for (const auto& t : s.tokens) ++token_freq[t];
        for (const auto& e : s.entities) ++entity_freq[e.entity_id];
        for (const auto& r : s.relations) relation_ids.insert(r.relation_id);
    }

    Vocab v;
    // Frequency-descending order, id ascending on ties. Keeps token and
    // entity indices frequency-ranked (the entity head cluster of the
    // adaptive softmax relies on this).
    std::vector<std::pair<std::string, long>> toks(token_freq.begin(), token_freq.end());
    std::sort(toks.begin(), toks.end(), [](const auto& a, const auto& b) {
        return a.second != b.second ? a.second > b.second : a.first < b.first;
    });
    for (const auto& [tok, freq] : toks) {
        if (freq < min_freq) continue;
        if (v.token_to_id.count(tok)) continue;  // reserved surface form in raw text
        v.token_to_id[tok] = v.token_count();
        v.id_to_token.push_back(tok);
    }

    std::vector<std::pair<std::string, long>> ents(entity_freq.begin(), entity_freq.end());
    std::sort(ents.begin(), ents.end(), [](const auto& a, const auto& b) {
        return a.second != b.second ? a.second > b.second : a.first < b.first;
    });
    for (int i = 0; i < std::min<int>(top_k_entities, static_cast<int>(ents.size())); ++i) {
        v.entity_to_index[ents[i].first] = v.entity_count();
        v.entity_ids.push_back(ents[i].first);
    }

    for (const auto& r : relation_ids) {
        v.relation_to_index[r] = v.relation_count();
        v.relation_ids.push_back(r);
    }
    return v;
}

std::string entity_type_label(const std::string& entity_id) {
    auto pos = entity_id.find(':');
    return pos == std::string::npos ? entity_id : entity_id.substr(0, pos);
}

namespace {

// Pronounceable unique pseudo-words for entity names, disjoint from the
// template vocabulary by construction.
std::string pseudo_word(size_t index) {
    static const char* syll[] = {"ba", "de", "ki", "lo", "mu", "ner", "pi",
                                 "quo", "ras", "tev", "wi", "zol", "fa", "gen",
                                 "hu", "jor", "ca", "sy", "vu", "xim"};
    constexpr size_t kBase = 20;
    std::string w;
    size_t x = index;
    for (int i = 0; i < 3; ++i) {
        w += syll[x % kBase];
        x /= kBase;
    }
    return w;
}

struct SynthEntity {
    std::string id;
    int type;
    std::vector<std::string> name_tokens;
};

std::vector<std::string> split_ws(const std::string& text) {
    std::istringstream is(text);
    std::vector<std::string> out;
    std::string tok;
    while (is >> tok) out.push_back(tok);
    return out;
}

}  // namespace

std::vector<AlignedSentence> generate_synthetic(const SynthSpec& spec) {
    spec.validate();
    Rng rng(spec.rng_seed);

    // Entities: globally unique name tokens around a type morpheme drawn
    // from a small per-type pool, the way chemical names share a root affix.
    // The morpheme sits mid-name, never on a span boundary.
    constexpr size_t kMorphemesPerType = 4;
    size_t word_counter = 0;
    std::vector<std::vector<std::string>> morphemes(spec.entity_type_count);
    for (int t = 0; t < spec.entity_type_count; ++t) {
        for (size_t k = 0; k < kMorphemesPerType; ++k) {
            morphemes[t].push_back(pseudo_word(word_counter++));
        }
    }
    std::vector<SynthEntity> entities;
    for (int t = 0; t < spec.entity_type_count; ++t) {
        for (int i = 0; i < spec.entities_per_type; ++i) {
            SynthEntity e;
            e.type = t;
            e.name_tokens.push_back(pseudo_word(word_counter++));
            e.name_tokens.push_back(morphemes[t][rng.uniform_int(morphemes[t].size())]);
            const size_t tail_len = 1 + rng.uniform_int(2);
            for (size_t k = 0; k < tail_len; ++k) {
                e.name_tokens.push_back(pseudo_word(word_counter++));
            }
            std::string slug;
            for (const auto& w : e.name_tokens) {
                if (!slug.empty()) slug += "-";
                slug += w;
            }
            e.id = "T" + std::to_string(t) + ":" + slug;
            entities.push_back(std::move(e));
        }
    }
    std::vector<std::vector<int>> by_type(spec.entity_type_count);
    for (size_t i = 0; i < entities.size(); ++i) by_type[entities[i].type].push_back(static_cast<int>(i));

    // KG edges: every type-compatible ordered entity pair gets exactly one
    // relation, spread round-robin over the compatible relations after a
    // seeded shuffle. One relation per pair keeps the gold label a function
    // of the pair.
    std::vector<std::vector<std::pair<int, int>>> edges(spec.relation_schema.size());
    std::map<std::pair<int, int>, std::vector<int>> compat;  // (head_type, tail_type) -> relation indices
    for (size_t r = 0; r < spec.relation_schema.size(); ++r) {
        compat[{spec.relation_schema[r].head_type, spec.relation_schema[r].tail_type}].push_back(static_cast<int>(r));
    }
    for (const auto& [types, rels] : compat) {
        std::vector<std::pair<int, int>> pairs;
        for (int h : by_type[types.first]) {
            for (int t : by_type[types.second]) {
                if (h != t) pairs.emplace_back(h, t);
            }
        }
        for (size_t i = pairs.size(); i > 1; --i) {
            std::swap(pairs[i - 1], pairs[rng.uniform_int(i)]);
        }
        for (size_t i = 0; i < pairs.size(); ++i) {
            edges[rels[i % rels.size()]].push_back(pairs[i]);
        }
    }
    for (size_t r = 0; r < edges.size(); ++r) {
        if (edges[r].empty()) {
            throw CorpusError("relation '" + spec.relation_schema[r].relation_id +
                              "' received no entity pairs; increase entities_per_type");
        }
    }

    std::vector<AlignedSentence> corpus;
    corpus.reserve(spec.sentence_count);
    for (int i = 0; i < spec.sentence_count; ++i) {
        const size_t r = rng.uniform_int(spec.relation_schema.size());
        const auto& rel = spec.relation_schema[r];
        const auto [h, t] = edges[r][rng.uniform_int(edges[r].size())];
        const auto& tmpl = rel.templates[rng.uniform_int(rel.templates.size())];

        AlignedSentence s;
        int head_idx = -1, tail_idx = -1;
        for (const auto& word : split_ws(tmpl)) {
            if (word == "{head}" || word == "{tail}") {
                const SynthEntity& ent = entities[word == "{head}" ? h : t];
                EntityMention m;
                m.start = static_cast<int>(s.tokens.size());
                for (const auto& nt : ent.name_tokens) s.tokens.push_back(nt);
                m.end = static_cast<int>(s.tokens.size()) - 1;
                m.entity_id = ent.id;
                (word == "{head}" ? head_idx : tail_idx) = static_cast<int>(s.entities.size());
                s.entities.push_back(std::move(m));
            } else {
                s.tokens.push_back(word);
            }
        }
        s.relations.push_back({head_idx, tail_idx, rel.relation_id});
        s.validate();
        corpus.push_back(std::move(s));
    }
    return corpus;
}

std::vector<RelationSpec> default_relation_schema(int entity_types, int relation_types) {
    if (entity_types <= 0 || relation_types <= 0) {
        throw CorpusError("entity_types and relation_types must be > 0");
    }
    std::vector<RelationSpec> schema;
    for (int r = 0; r < relation_types; ++r) {
        const std::string a = "w" + std::to_string(r) + "a";
        const std::string b = "w" + std::to_string(r) + "b";
        const std::string c = "w" + std::to_string(r) + "c";
        RelationSpec spec;
        spec.relation_id = "R" + std::to_string(r);
        spec.head_type = r % entity_types;
        spec.tail_type = (r + 1) % entity_types;
        // Consecutive relations (2r, 2r+1) run in opposite type directions and
        // share their sentence shapes, so a mention slot carries no type
        // information on its own; relations with the same type signature never
        // share a shape. Keywords stay relation-specific. Some shapes put the
        // tail mention first.
        switch ((r / 2) % 4) {
            case 0:
                spec.templates = {
                    "the {head} " + a + " " + b + " the {tail} today",
                    "{tail} was " + a + " by the {head} " + b,
                    "sources say the {head} " + c + " {tail} these days",
                };
                break;
            case 1:
                spec.templates = {
                    a + " studies link {head} " + c + " to the {tail}",
                    "no {tail} " + b + " escapes " + a + " the {head}",
                    "every " + c + " {head} has " + b + " one {tail}",
                };
                break;
            case 2:
                spec.templates = {
                    "{head} often " + a + " the {tail} " + c,
                    "{tail} " + c + " owes its " + a + " to {head}",
                    "in " + b + " trials {head} " + a + " {tail} again",
                };
                break;
            default:
                spec.templates = {
                    "reports call {tail} " + c + " " + a + " of {head}",
                    "analysts rank {tail} " + a + " behind {head} " + c + " overall",
                    "{head} remains " + b + " under {tail} so far",
                };
                break;
        }
        schema.push_back(std::move(spec));
    }
    return schema;
}

std::vector<std::pair<int, int>> enumerate_spans(int n_tokens, int max_len) {
    if (max_len < 1) throw std::invalid_argument("max_len must be >= 1");
    std::vector<std::pair<int, int>> spans;
    for (int s = 0; s < n_tokens; ++s) {
        for (int e = s; e < n_tokens && e - s + 1 <= max_len; ++e) {
            spans.emplace_back(s, e);
        }
    }
    return spans;
}

std::vector<std::pair<int, int>> enumerate_spans(const AlignedSentence& s, int max_len) {
    return enumerate_spans(static_cast<int>(s.tokens.size()), max_len);
}

std::vector<std::pair<int, int>> sample_negative_spans(const AlignedSentence& s,
                                                       size_t count, int max_len,
                                                       Rng& rng) {
    std::set<std::pair<int, int>> gold;
    for (const auto& e : s.entities) gold.insert({e.start, e.end});
    std::vector<std::pair<int, int>> candidates;
    for (const auto& span : enumerate_spans(s, max_len)) {
        if (!gold.count(span)) candidates.push_back(span);
    }
    if (candidates.size() <= count) return candidates;
    // Partial Fisher-Yates: first `count` slots end up a uniform sample.
    for (size_t i = 0; i < count; ++i) {
        const size_t j = i + rng.uniform_int(candidates.size() - i);
        std::swap(candidates[i], candidates[j]);
    }
    candidates.resize(count);
    return candidates;
}

}  // namespace spankt
