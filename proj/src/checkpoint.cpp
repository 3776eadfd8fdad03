#include "spankt/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace spankt {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'S', 'P', 'O', 'T', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw CorpusError("truncated checkpoint file");
    return v;
}

std::string vocab_tail_json(const std::vector<std::string>& items, size_t skip) {
    json arr = json::array();
    for (size_t i = skip; i < items.size(); ++i) arr.push_back(items[i]);
    return arr.dump();
}

void append_vocab_tail(const std::string& encoded, size_t expected_skip,
                       std::vector<std::string>& items,
                       std::unordered_map<std::string, int>& index) {
    json arr = json::parse(encoded);
    if (items.size() != expected_skip) throw CorpusError("corrupt vocab block");
    for (const auto& v : arr) {
        const std::string s = v.get<std::string>();
        index[s] = static_cast<int>(items.size());
        items.push_back(s);
    }
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelWeights& weights,
                     const Vocab& vocab,
                     const std::map<std::string, std::string>& extra_kv) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CorpusError("cannot open checkpoint for writing: " + path);

    out.write(kMagic, sizeof(kMagic));
    write_pod<uint32_t>(out, kVersion);
    write_pod<uint32_t>(out, static_cast<uint32_t>(weights.params().size()));

    std::vector<float> buf;
    for (const auto& p : weights.params()) {
        write_pod<uint16_t>(out, static_cast<uint16_t>(p->name.size()));
        out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
        write_pod<uint8_t>(out, static_cast<uint8_t>(p->dims.size()));
        for (size_t d : p->dims) write_pod<uint64_t>(out, d);
        buf.resize(p->size());
        size_t k = 0;
        for (Eigen::Index r = 0; r < p->value.rows(); ++r) {
            for (Eigen::Index c = 0; c < p->value.cols(); ++c) {
                buf[k++] = static_cast<float>(p->value(r, c));
            }
        }
        out.write(reinterpret_cast<const char*>(buf.data()),
                  static_cast<std::streamsize>(buf.size() * sizeof(float)));
    }

    std::map<std::string, std::string> kv = weights.config().to_kv();
    kv["vocab.tokens"] = vocab_tail_json(vocab.id_to_token, Vocab::kNumReserved);
    kv["vocab.entities"] = vocab_tail_json(vocab.entity_ids, 1);
    kv["vocab.relations"] = vocab_tail_json(vocab.relation_ids, 1);
    for (const auto& [k, v] : extra_kv) kv[k] = v;

    std::ostringstream block;
    for (const auto& [k, v] : kv) block << k << "=" << v << "\n";
    const std::string text = block.str();
    write_pod<uint32_t>(out, static_cast<uint32_t>(text.size()));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw CorpusError("failed writing checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CorpusError("cannot open checkpoint: " + path);

    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw CorpusError("not a checkpoint file: " + path);
    }
    const auto version = read_pod<uint32_t>(in);
    if (version != kVersion) {
        throw CorpusError("unsupported checkpoint version " + std::to_string(version));
    }
    const auto tensor_count = read_pod<uint32_t>(in);

    struct RawTensor {
        std::string name;
        std::vector<size_t> dims;
        std::vector<float> data;
    };
    std::vector<RawTensor> tensors(tensor_count);
    for (auto& t : tensors) {
        const auto name_len = read_pod<uint16_t>(in);
        t.name.resize(name_len);
        in.read(t.name.data(), name_len);
        const auto rank = read_pod<uint8_t>(in);
        size_t total = 1;
        for (int i = 0; i < rank; ++i) {
            const auto d = read_pod<uint64_t>(in);
            t.dims.push_back(static_cast<size_t>(d));
            total *= static_cast<size_t>(d);
        }
        t.data.resize(total);
        in.read(reinterpret_cast<char*>(t.data.data()),
                static_cast<std::streamsize>(total * sizeof(float)));
        if (!in) throw CorpusError("truncated checkpoint file");
    }

    const auto block_len = read_pod<uint32_t>(in);
    std::string block(block_len, '\0');
    in.read(block.data(), block_len);
    if (!in) throw CorpusError("truncated checkpoint file");

    Checkpoint ckpt;
    std::istringstream bs(block);
    std::string line;
    while (std::getline(bs, line)) {
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw CorpusError("corrupt config block");
        ckpt.kv[line.substr(0, eq)] = line.substr(eq + 1);
    }

    ckpt.weights = ModelWeights(ModelConfig::from_kv(ckpt.kv));
    for (const auto& t : tensors) {
        Param& p = ckpt.weights.add(t.name, t.dims);
        size_t k = 0;
        for (Eigen::Index r = 0; r < p.value.rows(); ++r) {
            for (Eigen::Index c = 0; c < p.value.cols(); ++c) {
                p.value(r, c) = static_cast<double>(t.data[k++]);
            }
        }
        // Restore the no-decay convention for biases and layer norms.
        const auto& n = t.name;
        if (n.ends_with(".gain") || n.ends_with(".bias") || n == "seg_emb" ||
            (n.size() > 2 && n.compare(n.size() - 2, 2, ".b") == 0) ||
            n.ends_with(".b1") || n.ends_with(".b2") || n.ends_with(".bq") ||
            n.ends_with(".bk") || n.ends_with(".bv") || n.ends_with(".bo")) {
            p.weight_decay = false;
        }
    }

    if (auto it = ckpt.kv.find("vocab.tokens"); it != ckpt.kv.end()) {
        append_vocab_tail(it->second, Vocab::kNumReserved, ckpt.vocab.id_to_token,
                          ckpt.vocab.token_to_id);
    }
    if (auto it = ckpt.kv.find("vocab.entities"); it != ckpt.kv.end()) {
        append_vocab_tail(it->second, 1, ckpt.vocab.entity_ids, ckpt.vocab.entity_to_index);
    }
    if (auto it = ckpt.kv.find("vocab.relations"); it != ckpt.kv.end()) {
        append_vocab_tail(it->second, 1, ckpt.vocab.relation_ids, ckpt.vocab.relation_to_index);
    }
    return ckpt;
}

std::string describe_checkpoint(const std::string& path) {
    Checkpoint ckpt = load_checkpoint(path);
    std::ostringstream os;
    os << "tensors: " << ckpt.weights.params().size() << "\n";
    for (const auto& p : ckpt.weights.params()) {
        os << "  " << p->name << " [";
        for (size_t i = 0; i < p->dims.size(); ++i) {
            if (i) os << " x ";
            os << p->dims[i];
        }
        os << "]\n";
    }
    os << "config:\n";
    for (const auto& [k, v] : ckpt.kv) {
        std::string shown = v;
        if (shown.size() > 72) shown = shown.substr(0, 69) + "...";
        os << "  " << k << "=" << shown << "\n";
    }
    return os.str();
}

}  // namespace spankt
