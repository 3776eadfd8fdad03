#pragma once

#include <cstdint>
#include <string>

namespace spankt {

struct GradcheckReport {
    double max_rel_err = 0.0;
    std::string worst_param;
    int elements = 0;
};

// Central finite differences against the analytic gradients of the complete
// pretraining objective (encoder, span encoder, pair encoder, all three loss
// terms) on a tiny model: hidden 8, one layer, two heads, a six-token
// sentence. Eval mode with a fixed masking draw, so the loss is a pure
// function of the parameters. Checks every element of every tensor.
GradcheckReport run_gradcheck(uint64_t seed);

}  // namespace spankt
