#pragma once

#include <functional>

#include "tvm/gaussian_task.hpp"
#include "tvm/network.hpp"
#include "tvm/param_store.hpp"

namespace tvm {

// Batched displacement-map probe: fills f(x, t, s) and its terminal
// derivative for a whole [n, d] batch at fixed times.
using MapFn = std::function<void(const Tensor& x, double t, double s, Tensor& f,
                                 Tensor& dfds)>;

MapFn map_from_network(const ParamStore& params, const ModelConfig& cfg, double w,
                       bool scaled_param);
// The ground-truth map psi - x on the analytic task (zero on both sides of
// the inequality).
MapFn map_from_flow(const GaussianTask& task);
// Ground-truth map plus a constant offset (strictly interior case).
MapFn map_from_flow_perturbed(const GaussianTask& task, double eps);

struct BoundCheckResult {
    double t;
    double lhs, lhs_se;
    double rhs, rhs_se;
    double margin;     // rhs - lhs
    double margin_se;  // paired standard error of the margin
};

// Monte-Carlo check of the displacement-error bound:
//   lhs = E |f(x,t,0) - (psi(x,t,0) - x)|^2
//   rhs = integral_0^t E |d/ds f(x,t,s) - u(psi(x,t,s), s)|^2 ds
// with fixed-grid Gauss-Legendre quadrature (>= 64 nodes) and common random
// numbers across the two sides.
BoundCheckResult check_lemma1_bound(const MapFn& map, const GaussianTask& task, double t,
                                    int64_t mc_samples, int quad_nodes, Rng& rng);

// Gauss-Legendre nodes/weights on [lo, hi].
void gauss_legendre(int n, double lo, double hi, std::vector<double>& nodes,
                    std::vector<double>& weights);

}  // namespace tvm
