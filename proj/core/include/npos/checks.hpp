#pragma once

#include <cstdint>

#include "npos/losses.hpp"

namespace npos {

// Finite-difference verification of the analytic loss gradients on a random
// small instance. Returns the max relative error over all checked
// coordinates (phi parameters and ID inputs for r_open; z inputs for
// r_closed). Instances whose ReLU pre-activations sit within 10*epsilon of
// the kink are re-drawn.
double check_r_open_grads(std::uint64_t seed, double epsilon = 1e-5);
double check_r_closed_grads(std::uint64_t seed, double epsilon = 1e-5,
                            bool logit_norm = true);

}  // namespace npos
