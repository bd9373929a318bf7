#pragma once

#include <functional>
#include <vector>

#include "tvm/network.hpp"
#include "tvm/param_store.hpp"

namespace tvm {

// n uniform displacement steps from time 1 down to 0:
// x <- x + (s - t) * [w] * F(x, t, s, c, w).
Tensor sample_n_steps(const ParamStore& params, const ModelConfig& cfg, const Tensor& x1,
                      int n, double w, const std::vector<int64_t>& labels,
                      bool scaled_param);

// Same stepping rule over an arbitrary rate function (analytic plug-ins).
Tensor sample_n_steps_fn(
    const std::function<Tensor(const Tensor& x, double t, double s)>& rate,
    const Tensor& x1, int n);

}  // namespace tvm
