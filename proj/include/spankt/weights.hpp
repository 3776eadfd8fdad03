#pragma once

#include <Eigen/Dense>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "spankt/config.hpp"
#include "spankt/rng.hpp"

namespace spankt {

using Matrix = Eigen::MatrixXd;

// One named trainable tensor plus its gradient accumulator. Rank-1 tensors
// are stored as a single-row matrix; `dims` keeps the true rank for
// serialization.
struct Param {
    std::string name;
    std::vector<size_t> dims;
    Matrix value;
    Matrix grad;
    bool weight_decay = true;  // false for biases and layer-norm parameters

    size_t size() const { return static_cast<size_t>(value.size()); }
};

// Named tensor registry holding every trainable tensor of the model plus the
// config it was built for. Iteration order is insertion order, which keeps
// optimizer updates and checkpoints deterministic.
class ModelWeights {
public:
    ModelWeights() = default;
    explicit ModelWeights(const ModelConfig& cfg) : cfg_(cfg) {}

    ModelWeights(const ModelWeights& other);
    ModelWeights& operator=(const ModelWeights& other);
    ModelWeights(ModelWeights&&) = default;
    ModelWeights& operator=(ModelWeights&&) = default;

    const ModelConfig& config() const { return cfg_; }
    ModelConfig& config() { return cfg_; }

    // Registers a new tensor (zero-initialized). Throws if the name exists.
    Param& add(const std::string& name, std::vector<size_t> dims, bool decay = true);
    // Fetches an existing tensor; throws if missing or the shape mismatches.
    Param& at(const std::string& name);
    const Param& at(const std::string& name) const;
    Param* find(const std::string& name);
    const Param* find(const std::string& name) const;
    bool has(const std::string& name) const { return by_name_.count(name) > 0; }
    // Fetches or creates; validates shape when it already exists.
    Param& ensure(const std::string& name, std::vector<size_t> dims, bool decay = true);

    const std::vector<std::unique_ptr<Param>>& params() const { return params_; }

    void zero_grads();
    double grad_norm() const;
    // Scales all gradients so the global norm is at most `max_norm`.
    void clip_grad_norm(double max_norm);
    bool all_finite() const;

private:
    ModelConfig cfg_;
    std::vector<std::unique_ptr<Param>> params_;
    std::unordered_map<std::string, Param*> by_name_;
};

// Builds all pretraining tensors for the config, deterministically from the
// seed: N(0, 0.02^2) for weights and embeddings, zeros for biases, gain 1 /
// bias 0 for layer norms.
ModelWeights init_weights(const ModelConfig& cfg, uint64_t seed);

// Gaussian fill used by init_weights and by task heads created later.
void init_gaussian(Param& p, Rng& rng, double scale = 0.02);

}  // namespace spankt
