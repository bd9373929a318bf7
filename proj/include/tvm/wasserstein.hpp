#pragma once

#include <vector>

#include "tvm/rng.hpp"
#include "tvm/tensor.hpp"

namespace tvm {

// Minimum-cost assignment on a dense square cost matrix (Hungarian with
// potentials, O(n^3)). Returns total cost; rowsol[j] = row matched to col j.
double solve_assignment(const std::vector<double>& cost, int n, std::vector<int>& rowsol);

// Exact 2-Wasserstein distance between equal-size point sets (squared
// Euclidean ground cost, mean-normalized). Throws on unequal sizes or more
// than 2048 points.
double w2_exact(const Tensor& a, const Tensor& b);

// Sliced approximation: averages 1-D transport over random projections.
double w2_sliced(const Tensor& a, const Tensor& b, int n_proj, Rng& rng);

}  // namespace tvm
