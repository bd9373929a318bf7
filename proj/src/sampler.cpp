#include "tvm/sampler.hpp"

namespace tvm {

Tensor sample_n_steps_fn(
    const std::function<Tensor(const Tensor& x, double t, double s)>& rate,
    const Tensor& x1, int n) {
    if (n < 1) throw TvmError("sampler needs n >= 1 steps");
    Tensor x = x1;
    for (int i = 0; i < n; ++i) {
        const double t = 1.0 - static_cast<double>(i) / n;
        const double s = 1.0 - static_cast<double>(i + 1) / n;
        Tensor f = rate(x, t, s);
        if (!(f.shape() == x.shape())) throw TvmError("sampler rate shape mismatch");
        for (int64_t j = 0; j < x.size(); ++j) x.at(j) += (s - t) * f.at(j);
    }
    return x;
}

Tensor sample_n_steps(const ParamStore& params, const ModelConfig& cfg, const Tensor& x1,
                      int n, double w, const std::vector<int64_t>& labels,
                      bool scaled_param) {
    if (w < 1.0) throw TvmError("guidance weight must be >= 1");
    const int64_t B = x1.dim(0);
    const double wmul = scaled_param ? w : 1.0;
    auto rate = [&](const Tensor& x, double t, double s) {
        Tensor tt = Tensor::full({B}, t);
        Tensor dd = Tensor::full({B}, t - s);
        Tensor bb = Tensor::full({B}, 1.0 / w);
        Tensor F = network_eval(params, cfg, x, tt, dd, bb, labels);
        if (wmul != 1.0)
            for (int64_t i = 0; i < F.size(); ++i) F.at(i) *= wmul;
        return F;
    };
    return sample_n_steps_fn(rate, x1, n);
}

}  // namespace tvm
