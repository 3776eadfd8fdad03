#include "spankt/cli.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

#include "spankt/checkpoint.hpp"
#include "spankt/cluster.hpp"
#include "spankt/corpus.hpp"
#include "spankt/finetune.hpp"
#include "spankt/gradcheck.hpp"
#include "spankt/pretrain.hpp"

namespace spankt {

namespace {

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct KeySpec {
    const char* key;
    const char* fallback;  // nullptr marks a required key
    const char* help;
};

// Shared key groups.
const std::vector<KeySpec> kModelKeys = {
    {"hidden_dim", "64", "transformer width"},
    {"layers", "4", "encoder layers"},
    {"heads", "4", "attention heads"},
    {"ffn_dim", "256", "feed-forward width"},
    {"max_seq_len", "64", "longest trainable sentence"},
    {"width_dim", "16", "span width embedding size"},
    {"max_span_len", "8", "width embedding rows / negative span cap"},
    {"pair_attn_layers", "2", "span-pair attention blocks"},
    {"pair_attn_heads", "8", "span-pair attention heads"},
    {"dropout_lm", "0.1", "encoder dropout"},
    {"dropout_task", "0.3", "task-head dropout"},
    {"span_method", "end_att", "endpoint|selfattn|maxpool|end_att|end_max|att_max"},
    {"ent_cutoff", "0", "adaptive softmax head size; 0 means entity_vocab/4"},
};

const std::vector<KeySpec> kMaskingKeys = {
    {"token_mask_rate", "0.1", "independent token mask rate"},
    {"entity_mask_rate", "0.2", "whole-entity mask rate"},
    {"random_replace_frac", "0.1", "masked positions replaced by random tokens"},
    {"keep_frac", "0.1", "masked positions left unchanged"},
};

struct RunConfig {
    std::map<std::string, std::string> values;

    const std::string& get(const std::string& key) const {
        auto it = values.find(key);
        if (it == values.end()) throw UsageError("missing required option --" + key);
        return it->second;
    }
    int get_int(const std::string& key) const {
        try {
            size_t used = 0;
            const int v = std::stoi(get(key), &used);
            if (used != get(key).size()) throw std::invalid_argument(key);
            return v;
        } catch (const UsageError&) {
            throw;
        } catch (const std::exception&) {
            throw UsageError("option --" + key + " expects an integer, got '" + get(key) + "'");
        }
    }
    double get_double(const std::string& key) const {
        try {
            size_t used = 0;
            const double v = std::stod(get(key), &used);
            if (used != get(key).size()) throw std::invalid_argument(key);
            return v;
        } catch (const UsageError&) {
            throw;
        } catch (const std::exception&) {
            throw UsageError("option --" + key + " expects a number, got '" + get(key) + "'");
        }
    }
    uint64_t get_u64(const std::string& key) const {
        try {
            size_t used = 0;
            const uint64_t v = std::stoull(get(key), &used);
            if (used != get(key).size()) throw std::invalid_argument(key);
            return v;
        } catch (const UsageError&) {
            throw;
        } catch (const std::exception&) {
            throw UsageError("option --" + key + " expects an unsigned integer, got '" +
                             get(key) + "'");
        }
    }
    bool get_bool(const std::string& key) const {
        const std::string& v = get(key);
        if (v == "true" || v == "1" || v == "yes") return true;
        if (v == "false" || v == "0" || v == "no") return false;
        throw UsageError("option --" + key + " expects true or false, got '" + v + "'");
    }
};

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

std::map<std::string, std::string> parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config file '" + path + "'");
    std::map<std::string, std::string> out;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw UsageError(path + ":" + std::to_string(line_no) +
                             ": expected key=value, got '" + line + "'");
        }
        const std::string key = trim(line.substr(0, eq));
        if (key.empty()) {
            throw UsageError(path + ":" + std::to_string(line_no) + ": empty key");
        }
        out[key] = trim(line.substr(eq + 1));
    }
    return out;
}

std::string normalize_key(std::string key) {
    for (char& c : key) {
        if (c == '-') c = '_';
    }
    return key;
}

std::map<std::string, std::string> parse_flags(const std::vector<std::string>& args,
                                               size_t start) {
    std::map<std::string, std::string> out;
    for (size_t i = start; i < args.size(); ++i) {
        const std::string& arg = args[i];
        if (arg.rfind("--", 0) != 0 || arg.size() == 2) {
            throw UsageError("expected --key value, got '" + arg + "'");
        }
        std::string key = arg.substr(2), value;
        const auto eq = key.find('=');
        if (eq != std::string::npos) {
            value = key.substr(eq + 1);
            key = key.substr(0, eq);
        } else if (i + 1 < args.size() && args[i + 1].rfind("--", 0) != 0) {
            value = args[++i];
        } else {
            value = "true";  // bare boolean flag
        }
        out[normalize_key(key)] = value;
    }
    return out;
}

// File values first, flags override, declared fallbacks fill the rest.
// Unknown keys are rejected so typos cannot silently fall back to defaults.
RunConfig resolve_config(const std::string& subcommand,
                         const std::vector<std::string>& args, size_t start,
                         const std::vector<KeySpec>& keys) {
    const auto flags = parse_flags(args, start);
    RunConfig cfg;
    auto file_it = flags.find("config");
    if (file_it != flags.end()) cfg.values = parse_config_file(file_it->second);
    for (const auto& [k, v] : flags) {
        if (k != "config") cfg.values[k] = v;
    }

    std::set<std::string> known;
    for (const auto& spec : keys) known.insert(spec.key);
    for (const auto& [k, v] : cfg.values) {
        if (!known.count(k)) {
            throw UsageError("unknown option --" + k + " for " + subcommand);
        }
    }
    for (const auto& spec : keys) {
        if (cfg.values.count(spec.key) || spec.fallback == nullptr) continue;
        cfg.values[spec.key] = spec.fallback;
    }
    if (known.count("seed") && !cfg.values.count("seed")) {
        const char* env = std::getenv("SPANKT_SEED");
        cfg.values["seed"] = env != nullptr ? env : "0";
    }

    std::cerr << "[" << subcommand << "]";
    for (const auto& [k, v] : cfg.values) std::cerr << " " << k << "=" << v;
    std::cerr << "\n";
    return cfg;
}

ModelConfig model_config_from(const RunConfig& cfg, const Vocab& vocab) {
    ModelConfig mc;
    mc.hidden_dim = cfg.get_int("hidden_dim");
    mc.layers = cfg.get_int("layers");
    mc.heads = cfg.get_int("heads");
    mc.ffn_dim = cfg.get_int("ffn_dim");
    mc.max_seq_len = cfg.get_int("max_seq_len");
    mc.width_dim = cfg.get_int("width_dim");
    mc.max_span_len = cfg.get_int("max_span_len");
    mc.pair_attn_layers = cfg.get_int("pair_attn_layers");
    mc.pair_attn_heads = cfg.get_int("pair_attn_heads");
    mc.dropout_lm = cfg.get_double("dropout_lm");
    mc.dropout_task = cfg.get_double("dropout_task");
    mc.span_method = span_method_from_string(cfg.get("span_method"));
    mc.ent_cutoff = cfg.get_int("ent_cutoff");
    mc.token_vocab = vocab.token_count();
    mc.entity_vocab = vocab.entity_count();
    mc.relation_vocab = vocab.relation_count();
    try {
        mc.validate();
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    return mc;
}

MaskingConfig masking_config_from(const RunConfig& cfg) {
    MaskingConfig m;
    m.token_mask_rate = cfg.get_double("token_mask_rate");
    m.entity_mask_rate = cfg.get_double("entity_mask_rate");
    m.random_replace_frac = cfg.get_double("random_replace_frac");
    m.keep_frac = cfg.get_double("keep_frac");
    try {
        m.validate();
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    return m;
}

std::vector<std::string> labels_from_kv(const std::map<std::string, std::string>& kv,
                                        const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) return {};
    return nlohmann::json::parse(it->second).get<std::vector<std::string>>();
}

std::map<std::string, std::string> task_kv(const std::map<std::string, std::string>& kv) {
    std::map<std::string, std::string> out;
    for (const auto& [k, v] : kv) {
        if (k.rfind("task.", 0) == 0) out[k] = v;
    }
    return out;
}

void print_report(const std::string& prefix, const EvalReport& r) {
    std::cout << prefix << "_p=" << r.precision << " " << prefix << "_r=" << r.recall << " "
              << prefix << "_f1=" << r.f1 << "\n";
}

EmbeddingSet extract_embeddings(ModelWeights& w, const Vocab& vocab,
                                const std::vector<AlignedSentence>& corpus,
                                const std::string& kind) {
    if (kind == "entity") return extract_entity_embeddings(w, vocab, corpus);
    if (kind == "relation") return extract_relation_embeddings(w, vocab, corpus);
    throw UsageError("option --kind expects entity or relation, got '" + kind + "'");
}

int distinct_label_count(const EmbeddingSet& set) {
    std::set<std::string> seen(set.labels.begin(), set.labels.end());
    return static_cast<int>(seen.size());
}

// ---- subcommands ----

int cmd_gen_synth(const std::vector<std::string>& args) {
    const std::vector<KeySpec> keys = {
        {"config", nullptr, "key=value config file"},
        {"out", nullptr, "output corpus path (JSONL)"},
        {"sentences", "5000", "sentences to generate"},
        {"entity_types", "2", "entity type count"},
        {"relation_types", "4", "relation type count"},
        {"entities_per_type", "30", "distinct entities per type"},
        {"seed", nullptr, "generation seed"},
    };
    const RunConfig cfg = resolve_config("gen-synth", args, 1, keys);

    SynthSpec spec;
    spec.entity_type_count = cfg.get_int("entity_types");
    spec.entities_per_type = cfg.get_int("entities_per_type");
    spec.sentence_count = cfg.get_int("sentences");
    spec.rng_seed = cfg.get_u64("seed");
    spec.relation_schema =
        default_relation_schema(spec.entity_type_count, cfg.get_int("relation_types"));

    const auto corpus = generate_synthetic(spec);
    write_corpus(cfg.get("out"), corpus);
    std::cout << "sentences=" << corpus.size() << " out=" << cfg.get("out") << "\n";
    return 0;
}

int cmd_pretrain(const std::vector<std::string>& args) {
    std::vector<KeySpec> keys = {
        {"config", nullptr, "key=value config file"},
        {"corpus", nullptr, "training corpus (JSONL)"},
        {"out", nullptr, "checkpoint output path"},
        {"steps", "5000", "optimizer steps"},
        {"batch_size", "16", "sentences per step"},
        {"lr", "5e-5", "peak learning rate"},
        {"warmup", "300", "warmup steps"},
        {"weight_decay", "0", "decoupled weight decay"},
        {"clip_norm", "5", "global gradient clip"},
        {"seed", nullptr, "training seed"},
        {"negative_spans", "2", "NIL spans sampled per sentence"},
        {"rel_negatives", "false", "train NO_REL on unrelated gold pairs"},
        {"min_freq", "1", "token vocabulary frequency floor"},
        {"top_k_entities", "0", "entity vocabulary cap; 0 keeps all"},
        {"log", "", "write the training log here instead of stdout"},
    };
    keys.insert(keys.end(), kModelKeys.begin(), kModelKeys.end());
    keys.insert(keys.end(), kMaskingKeys.begin(), kMaskingKeys.end());
    const RunConfig cfg = resolve_config("pretrain", args, 1, keys);

    const auto corpus = load_corpus(cfg.get("corpus"));
    const int top_k = cfg.get_int("top_k_entities");
    const Vocab vocab = build_vocab(corpus, cfg.get_int("min_freq"),
                                    top_k > 0 ? top_k : std::numeric_limits<int>::max());

    ModelWeights w = init_weights(model_config_from(cfg, vocab), cfg.get_u64("seed"));

    TrainOptions opts;
    opts.steps = cfg.get_int("steps");
    opts.batch_size = cfg.get_int("batch_size");
    opts.lr = cfg.get_double("lr");
    opts.warmup = cfg.get_int("warmup");
    opts.weight_decay = cfg.get_double("weight_decay");
    opts.clip_norm = cfg.get_double("clip_norm");
    opts.seed = cfg.get_u64("seed");
    opts.masking = masking_config_from(cfg);
    opts.negative_spans = cfg.get_int("negative_spans");
    opts.rel_negatives = cfg.get_bool("rel_negatives");

    const std::string log_path = cfg.get("log");
    if (log_path.empty()) {
        pretrain_loop(w, corpus, vocab, opts, &std::cout);
    } else {
        std::ofstream log(log_path);
        if (!log) throw UsageError("cannot open log file '" + log_path + "'");
        pretrain_loop(w, corpus, vocab, opts, &log);
    }
    save_checkpoint(cfg.get("out"), w, vocab);
    std::cout << "checkpoint=" << cfg.get("out") << "\n";
    return 0;
}

std::vector<AlignedSentence> load_optional_corpus(const std::string& path) {
    return path.empty() ? std::vector<AlignedSentence>{} : load_corpus(path);
}

int cmd_finetune_joint(const std::vector<std::string>& args) {
    const std::vector<KeySpec> keys = {
        {"config", nullptr, "key=value config file"},
        {"ckpt", nullptr, "input checkpoint"},
        {"train", nullptr, "training corpus"},
        {"dev", nullptr, "development corpus"},
        {"test", "", "test corpus"},
        {"out", "", "write the fine-tuned checkpoint here"},
        {"preds", "", "write test predictions here (JSONL)"},
        {"epochs", "10", "training epochs"},
        {"batch_size", "16", "sentences per step"},
        {"lr", "2e-5", "peak learning rate"},
        {"warmup", "300", "warmup steps"},
        {"weight_decay", "0.01", "decoupled weight decay"},
        {"clip_norm", "5", "global gradient clip"},
        {"patience", "3", "epochs without dev improvement before stopping"},
        {"max_span_len", "5", "candidate span length cap"},
        {"seed", nullptr, "training seed"},
        {"random_init", "false", "discard learned weights, keep config and vocab"},
    };
    const RunConfig cfg = resolve_config("finetune-joint", args, 1, keys);

    Checkpoint ckpt = load_checkpoint(cfg.get("ckpt"));
    if (cfg.get_bool("random_init")) {
        ckpt.weights = init_weights(ckpt.weights.config(), cfg.get_u64("seed"));
    }
    const auto train = load_corpus(cfg.get("train"));
    const auto dev = load_corpus(cfg.get("dev"));
    const auto test = load_optional_corpus(cfg.get("test"));

    std::vector<std::string> types = labels_from_kv(ckpt.kv, "task.joint.entity_types");
    std::vector<std::string> rels = labels_from_kv(ckpt.kv, "task.joint.relations");
    if (types.empty()) types = collect_entity_types(train);
    if (rels.empty()) rels = collect_relation_labels(train);
    const JointHead head =
        init_joint_head(ckpt.weights, types, rels, cfg.get_u64("seed"));

    FinetuneOptions opts;
    opts.epochs = cfg.get_int("epochs");
    opts.batch_size = cfg.get_int("batch_size");
    opts.lr = cfg.get_double("lr");
    opts.warmup = cfg.get_int("warmup");
    opts.weight_decay = cfg.get_double("weight_decay");
    opts.clip_norm = cfg.get_double("clip_norm");
    opts.patience = cfg.get_int("patience");
    opts.max_span_len = cfg.get_int("max_span_len");
    opts.seed = cfg.get_u64("seed");

    const JointResult result = finetune_joint(ckpt.weights, ckpt.vocab, head, train, dev,
                                              test, opts, &std::cout);
    std::cout << "best_epoch=" << result.best_epoch << "\n";
    print_report("dev_entity", result.dev.entity);
    print_report("dev_relation", result.dev.relation);
    if (!test.empty()) {
        print_report("test_entity", result.test.entity);
        print_report("test_relation", result.test.relation);
    }

    if (!cfg.get("out").empty()) {
        auto extra = task_kv(ckpt.kv);
        extra["task.joint.entity_types"] = nlohmann::json(head.entity_types).dump();
        extra["task.joint.relations"] = nlohmann::json(head.relations).dump();
        save_checkpoint(cfg.get("out"), ckpt.weights, ckpt.vocab, extra);
        std::cout << "checkpoint=" << cfg.get("out") << "\n";
    }
    if (!cfg.get("preds").empty() && !test.empty()) {
        std::vector<AlignedSentence> preds;
        for (const auto& s : test) {
            const JointPrediction p =
                predict_joint(ckpt.weights, ckpt.vocab, head, s, opts.max_span_len);
            AlignedSentence out;
            out.tokens = s.tokens;
            std::map<Span, int> index;
            for (const auto& e : p.entities) {
                index[e.span] = static_cast<int>(out.entities.size());
                out.entities.push_back({e.span.first, e.span.second, e.label});
            }
            for (const auto& r : p.relations) {
                out.relations.push_back({index.at(r.head), index.at(r.tail), r.label});
            }
            preds.push_back(std::move(out));
        }
        write_corpus(cfg.get("preds"), preds);
        std::cout << "preds=" << cfg.get("preds") << "\n";
    }
    return 0;
}

int cmd_finetune_classifier(const std::vector<std::string>& args, const std::string& name) {
    const bool typing = name == "finetune-typing";
    const std::vector<KeySpec> keys = {
        {"config", nullptr, "key=value config file"},
        {"ckpt", nullptr, "input checkpoint"},
        {"train", nullptr, "training corpus"},
        {"dev", nullptr, "development corpus"},
        {"test", "", "test corpus"},
        {"out", "", "write the fine-tuned checkpoint here"},
        {"epochs", "10", "training epochs"},
        {"batch_size", typing ? "16" : "32", "examples per step"},
        {"lr", "2e-5", "peak learning rate"},
        {"warmup", "300", "warmup steps"},
        {"weight_decay", "0.01", "decoupled weight decay"},
        {"clip_norm", "5", "global gradient clip"},
        {"patience", "3", "epochs without dev improvement before stopping"},
        {"seed", nullptr, "training seed"},
        {"random_init", "false", "discard learned weights, keep config and vocab"},
    };
    const RunConfig cfg = resolve_config(name, args, 1, keys);

    Checkpoint ckpt = load_checkpoint(cfg.get("ckpt"));
    if (cfg.get_bool("random_init")) {
        ckpt.weights = init_weights(ckpt.weights.config(), cfg.get_u64("seed"));
    }
    const auto train = load_corpus(cfg.get("train"));
    const auto dev = load_corpus(cfg.get("dev"));
    const auto test = load_optional_corpus(cfg.get("test"));

    const int max_len = ckpt.weights.config().max_seq_len;
    const auto make = [&](const std::vector<AlignedSentence>& data) {
        return typing ? typing_examples(ckpt.vocab, data, max_len)
                      : relcls_examples(ckpt.vocab, data, max_len);
    };
    const auto train_ex = make(train), dev_ex = make(dev), test_ex = make(test);

    const std::string label_key = typing ? "task.typing.labels" : "task.relcls.labels";
    std::vector<std::string> labels = labels_from_kv(ckpt.kv, label_key);
    if (labels.empty()) {
        std::set<std::string> seen;
        for (const auto& ex : train_ex) seen.insert(ex.label);
        labels.assign(seen.begin(), seen.end());
    }
    if (labels.empty()) throw CorpusError("no labels in the training corpus");

    const std::string wname = typing ? "typing.w" : "relcls.w";
    const std::string bname = typing ? "typing.b" : "relcls.b";
    const int in_dim = (typing ? 1 : 2) * ckpt.weights.config().hidden_dim;
    init_classifier_head(ckpt.weights, wname, bname, in_dim,
                         static_cast<int>(labels.size()), cfg.get_u64("seed"));

    FinetuneOptions opts;
    opts.epochs = cfg.get_int("epochs");
    opts.batch_size = cfg.get_int("batch_size");
    opts.lr = cfg.get_double("lr");
    opts.warmup = cfg.get_int("warmup");
    opts.weight_decay = cfg.get_double("weight_decay");
    opts.clip_norm = cfg.get_double("clip_norm");
    opts.patience = cfg.get_int("patience");
    opts.seed = cfg.get_u64("seed");

    const LabelResult result = finetune_classifier(ckpt.weights, wname, bname, labels,
                                                   train_ex, dev_ex, test_ex, opts,
                                                   &std::cout);
    std::cout << "best_epoch=" << result.best_epoch << "\n";
    print_report("dev_micro", result.dev.micro);
    print_report("dev_macro", result.dev.macro);
    if (!test_ex.empty()) {
        print_report("test_micro", result.test.micro);
        print_report("test_macro", result.test.macro);
    }

    if (!cfg.get("out").empty()) {
        auto extra = task_kv(ckpt.kv);
        extra[label_key] = nlohmann::json(labels).dump();
        save_checkpoint(cfg.get("out"), ckpt.weights, ckpt.vocab, extra);
        std::cout << "checkpoint=" << cfg.get("out") << "\n";
    }
    return 0;
}

int cmd_embed(const std::vector<std::string>& args) {
    const std::vector<KeySpec> keys = {
        {"config", nullptr, "key=value config file"},
        {"ckpt", nullptr, "input checkpoint"},
        {"corpus", nullptr, "corpus to embed"},
        {"kind", "entity", "entity|relation"},
        {"out", nullptr, "output CSV path"},
    };
    const RunConfig cfg = resolve_config("embed", args, 1, keys);

    Checkpoint ckpt = load_checkpoint(cfg.get("ckpt"));
    const auto corpus = load_corpus(cfg.get("corpus"));
    const EmbeddingSet set =
        extract_embeddings(ckpt.weights, ckpt.vocab, corpus, cfg.get("kind"));

    std::ofstream out(cfg.get("out"));
    if (!out) throw UsageError("cannot open output file '" + cfg.get("out") + "'");
    out << std::setprecision(std::numeric_limits<double>::max_digits10);
    out << "key,label";
    for (Eigen::Index j = 0; j < set.vectors.cols(); ++j) out << ",v" << j;
    out << "\n";
    for (Eigen::Index i = 0; i < set.vectors.rows(); ++i) {
        out << set.keys[static_cast<size_t>(i)] << "," << set.labels[static_cast<size_t>(i)];
        for (Eigen::Index j = 0; j < set.vectors.cols(); ++j) out << "," << set.vectors(i, j);
        out << "\n";
    }
    std::cout << "items=" << set.vectors.rows() << " dims=" << set.vectors.cols()
              << " out=" << cfg.get("out") << "\n";
    return 0;
}

int cmd_cluster(const std::vector<std::string>& args) {
    const std::vector<KeySpec> keys = {
        {"config", nullptr, "key=value config file"},
        {"ckpt", nullptr, "input checkpoint"},
        {"corpus", nullptr, "corpus to embed"},
        {"kind", "entity", "entity|relation"},
        {"k", "0", "cluster count; 0 uses the distinct gold label count"},
        {"repeats", "5", "k-means restarts, seeds seed..seed+repeats-1"},
        {"seed", nullptr, "base k-means seed"},
    };
    const RunConfig cfg = resolve_config("cluster", args, 1, keys);

    Checkpoint ckpt = load_checkpoint(cfg.get("ckpt"));
    const auto corpus = load_corpus(cfg.get("corpus"));
    const EmbeddingSet set =
        extract_embeddings(ckpt.weights, ckpt.vocab, corpus, cfg.get("kind"));
    if (set.vectors.rows() == 0) throw CorpusError("nothing to cluster");

    int k = cfg.get_int("k");
    if (k <= 0) k = distinct_label_count(set);
    const int repeats = cfg.get_int("repeats");
    if (repeats <= 0) throw UsageError("option --repeats must be > 0");
    const uint64_t base_seed = cfg.get_u64("seed");

    std::vector<double> accs, nmis, aris;
    for (int r = 0; r < repeats; ++r) {
        const ClusterReport report = cluster_and_score(set, k, base_seed + r);
        std::cout << "run=" << r << " seed=" << report.seed << " acc=" << report.acc
                  << " nmi=" << report.nmi << " ari=" << report.ari << "\n";
        accs.push_back(report.acc);
        nmis.push_back(report.nmi);
        aris.push_back(report.ari);
    }
    const auto mean = [](const std::vector<double>& xs) {
        double s = 0;
        for (double x : xs) s += x;
        return s / static_cast<double>(xs.size());
    };
    const auto stddev = [&mean](const std::vector<double>& xs) {
        if (xs.size() < 2) return 0.0;
        const double m = mean(xs);
        double s = 0;
        for (double x : xs) s += (x - m) * (x - m);
        return std::sqrt(s / static_cast<double>(xs.size() - 1));
    };
    std::cout << "items=" << set.vectors.rows() << " k=" << k << "\n";
    std::cout << "acc_mean=" << mean(accs) << " acc_std=" << stddev(accs)
              << " nmi_mean=" << mean(nmis) << " nmi_std=" << stddev(nmis)
              << " ari_mean=" << mean(aris) << " ari_std=" << stddev(aris) << "\n";
    return 0;
}

int cmd_project(const std::vector<std::string>& args) {
    const std::vector<KeySpec> keys = {
        {"config", nullptr, "key=value config file"},
        {"ckpt", nullptr, "input checkpoint"},
        {"corpus", nullptr, "corpus to embed"},
        {"kind", "entity", "entity|relation"},
        {"out", nullptr, "output CSV path"},
        {"svg", "", "also write an SVG scatter here"},
    };
    const RunConfig cfg = resolve_config("project", args, 1, keys);

    Checkpoint ckpt = load_checkpoint(cfg.get("ckpt"));
    const auto corpus = load_corpus(cfg.get("corpus"));
    const EmbeddingSet set =
        extract_embeddings(ckpt.weights, ckpt.vocab, corpus, cfg.get("kind"));
    if (set.vectors.rows() < 2) throw CorpusError("need at least 2 items to project");
    const Matrix xy = project_2d(set.vectors);

    std::ofstream out(cfg.get("out"));
    if (!out) throw UsageError("cannot open output file '" + cfg.get("out") + "'");
    out << std::setprecision(std::numeric_limits<double>::max_digits10);
    out << "key,label,x,y\n";
    for (Eigen::Index i = 0; i < xy.rows(); ++i) {
        out << set.keys[static_cast<size_t>(i)] << "," << set.labels[static_cast<size_t>(i)]
            << "," << xy(i, 0) << "," << xy(i, 1) << "\n";
    }
    if (!cfg.get("svg").empty()) {
        std::ofstream svg(cfg.get("svg"));
        if (!svg) throw UsageError("cannot open output file '" + cfg.get("svg") + "'");
        write_scatter_svg(svg, xy, set.labels);
    }
    std::cout << "items=" << xy.rows() << " out=" << cfg.get("out") << "\n";
    return 0;
}

int cmd_gradcheck(const std::vector<std::string>& args) {
    const std::vector<KeySpec> keys = {
        {"config", nullptr, "key=value config file"},
        {"seed", nullptr, "model init seed"},
    };
    const RunConfig cfg = resolve_config("gradcheck", args, 1, keys);
    const GradcheckReport report = run_gradcheck(cfg.get_u64("seed"));
    std::cout << std::setprecision(6) << "max_rel_err=" << report.max_rel_err
              << " elements=" << report.elements << " worst=" << report.worst_param << "\n";
    return report.max_rel_err < 1e-4 ? 0 : 1;
}

int cmd_inspect(const std::vector<std::string>& args) {
    const std::vector<KeySpec> keys = {
        {"config", nullptr, "key=value config file"},
        {"ckpt", nullptr, "checkpoint to describe"},
    };
    const RunConfig cfg = resolve_config("inspect", args, 1, keys);
    std::cout << describe_checkpoint(cfg.get("ckpt"));
    return 0;
}

void print_usage(std::ostream& out) {
    out << "usage: spankt <subcommand> [--config FILE] [--key value]...\n"
           "\n"
           "subcommands:\n"
           "  gen-synth        generate a synthetic KG-aligned corpus\n"
           "  pretrain         train the three-level objective from scratch\n"
           "  finetune-joint   joint entity + relation extraction\n"
           "  finetune-typing  entity typing with [ENT] markers\n"
           "  finetune-rel     relation classification with [HD]/[TL] markers\n"
           "  embed            write entity or relation embeddings as CSV\n"
           "  cluster          k-means over embeddings with ACC/NMI/ARI\n"
           "  project          2D PCA projection as CSV (optional SVG)\n"
           "  gradcheck        finite-difference check of the full backward pass\n"
           "  inspect          list a checkpoint's tensors and config\n"
           "\n"
           "Options come from the config file first, then flags override.\n"
           "SPANKT_SEED provides the default --seed. Exit codes: 0 ok,\n"
           "1 usage, 2 data, 3 numerical.\n";
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
    try {
        if (args.empty()) {
            print_usage(std::cerr);
            return 1;
        }
        const std::string& cmd = args[0];
        if (cmd == "help" || cmd == "--help" || cmd == "-h") {
            print_usage(std::cout);
            return 0;
        }
        if (cmd == "gen-synth") return cmd_gen_synth(args);
        if (cmd == "pretrain") return cmd_pretrain(args);
        if (cmd == "finetune-joint") return cmd_finetune_joint(args);
        if (cmd == "finetune-typing" || cmd == "finetune-rel") {
            return cmd_finetune_classifier(args, cmd);
        }
        if (cmd == "embed") return cmd_embed(args);
        if (cmd == "cluster") return cmd_cluster(args);
        if (cmd == "project") return cmd_project(args);
        if (cmd == "gradcheck") return cmd_gradcheck(args);
        if (cmd == "inspect") return cmd_inspect(args);
        throw UsageError("unknown subcommand '" + cmd + "'");
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        std::cerr << "run 'spankt help' for usage\n";
        return 1;
    } catch (const NumericError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const CorpusError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace spankt
