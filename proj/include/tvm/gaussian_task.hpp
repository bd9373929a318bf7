#pragma once

#include "tvm/rng.hpp"
#include "tvm/tensor.hpp"

namespace tvm {

// Isotropic Gaussian data N(mu0 * 1, sigma0^2 I) under the standard-normal
// prior: the one setting where the marginal velocity and the flow map have
// closed forms, used as analytic ground truth everywhere.
struct GaussianTask {
    double mu0 = 0.0;
    double sigma0 = 1.0;
    int64_t dim = 2;

    void validate() const;

    // Path statistics of the marginal x_r ~ N(mean_at(r), std_at(r)^2 I).
    double mean_at(double r) const { return (1.0 - r) * mu0; }
    double std_at(double r) const {
        const double a = 1.0 - r;
        return std::sqrt(a * a * sigma0 * sigma0 + r * r);
    }

    // Conditional-expectation velocity u(x, t) = E[x1 - x0 | x_t], affine in x.
    // Endpoint times are clamped to [1e-6, 1 - 1e-6] for degenerate configs.
    Tensor velocity(const Tensor& x, double t) const;
    // Affine coefficients of u(x,t) = slope * (x - mean_at(t)) - mu0.
    double velocity_slope(double t) const;

    // Exact flow map: quantile transport between the Gaussian marginals.
    Tensor flowmap(const Tensor& x, double t, double s) const;

    void sample_data(int64_t n, Rng& rng, Tensor& x) const;
    void sample_marginal(int64_t n, double t, Rng& rng, Tensor& x) const;
};

}  // namespace tvm
