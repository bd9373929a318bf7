#include "tvm/gaussian_task.hpp"

#include <algorithm>
#include <cmath>

namespace tvm {

void GaussianTask::validate() const {
    if (sigma0 <= 0) throw TvmError("gaussian task requires sigma0 > 0");
    if (dim < 1) throw TvmError("gaussian task requires dim >= 1");
}

double GaussianTask::velocity_slope(double t) const {
    t = std::clamp(t, 1e-6, 1.0 - 1e-6);
    const double a = 1.0 - t, b = t;
    const double var = a * a * sigma0 * sigma0 + b * b;
    return (b - a * sigma0 * sigma0) / var;
}

Tensor GaussianTask::velocity(const Tensor& x, double t) const {
    validate();
    t = std::clamp(t, 1e-6, 1.0 - 1e-6);
    const double slope = velocity_slope(t);
    const double m = mean_at(t);
    Tensor u(x.shape());
    for (int64_t i = 0; i < x.size(); ++i) u.at(i) = slope * (x.at(i) - m) - mu0;
    return u;
}

Tensor GaussianTask::flowmap(const Tensor& x, double t, double s) const {
    validate();
    const double ratio = std_at(s) / std_at(t);
    const double mt = mean_at(t), ms = mean_at(s);
    Tensor y(x.shape());
    for (int64_t i = 0; i < x.size(); ++i) y.at(i) = ms + ratio * (x.at(i) - mt);
    return y;
}

void GaussianTask::sample_data(int64_t n, Rng& rng, Tensor& x) const {
    validate();
    x = Tensor({n, dim});
    for (int64_t i = 0; i < x.size(); ++i) x.at(i) = mu0 + sigma0 * rng.gaussian();
}

void GaussianTask::sample_marginal(int64_t n, double t, Rng& rng, Tensor& x) const {
    validate();
    const double m = mean_at(t), sd = std_at(t);
    x = Tensor({n, dim});
    for (int64_t i = 0; i < x.size(); ++i) x.at(i) = m + sd * rng.gaussian();
}

}  // namespace tvm
