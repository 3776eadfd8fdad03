#pragma once

#include <map>
#include <string>

#include "spankt/corpus.hpp"
#include "spankt/weights.hpp"

namespace spankt {

// Binary checkpoint: magic "SPOTCKPT", u32 version=1, u32 tensor_count, then
// per tensor u16 name length + name, u8 rank, rank x u64 dims, row-major
// little-endian f32 payload; finally a u32-length-prefixed UTF-8 key=value
// block (one pair per line) holding the model config, the vocabulary
// (vocab.* keys, JSON-encoded arrays) and any task label sets.
struct Checkpoint {
    ModelWeights weights;
    Vocab vocab;
    std::map<std::string, std::string> kv;  // full key=value block
};

void save_checkpoint(const std::string& path, const ModelWeights& weights,
                     const Vocab& vocab,
                     const std::map<std::string, std::string>& extra_kv = {});

Checkpoint load_checkpoint(const std::string& path);

// Human-readable listing of tensor names, shapes, and the config block.
std::string describe_checkpoint(const std::string& path);

}  // namespace spankt
