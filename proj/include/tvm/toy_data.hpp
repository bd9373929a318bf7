#pragma once

#include <string>
#include <vector>

#include "tvm/rng.hpp"
#include "tvm/tensor.hpp"

namespace tvm {

enum class ToyKind { kTwoMoons, kEightGaussians, kCheckerboard };

ToyKind toy_kind_from_string(const std::string& s);
std::string to_string(ToyKind k);

int64_t toy_label_count(ToyKind k);

// Draws n points (and mode labels where the dataset has them; labels is
// ignored when null).
void sample_toy(ToyKind kind, int64_t n, Rng& rng, Tensor& x,
                std::vector<int64_t>* labels);

}  // namespace tvm
