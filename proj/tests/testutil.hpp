#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "tvm/graph.hpp"
#include "tvm/ops.hpp"
#include "tvm/rng.hpp"
#include "tvm/tensor.hpp"

namespace tvm::test {

inline Tensor randn(Shape s, Rng& rng, double scale = 1.0) {
    Tensor t(std::move(s));
    for (int64_t i = 0; i < t.size(); ++i) t.at(i) = scale * rng.gaussian();
    return t;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0;
    for (int64_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.at(i) - b.at(i)));
    return m;
}

inline double max_rel_diff(const Tensor& a, const Tensor& b, double floor = 1e-8) {
    double m = 0;
    for (int64_t i = 0; i < a.size(); ++i) {
        double den = std::max({std::abs(a.at(i)), std::abs(b.at(i)), floor});
        m = std::max(m, std::abs(a.at(i) - b.at(i)) / den);
    }
    return m;
}

// Central finite difference of a scalar function over a flat input vector.
inline std::vector<double> finite_diff(
    const std::function<double(const std::vector<double>&)>& f, std::vector<double> x,
    double h = 1e-5) {
    std::vector<double> g(x.size());
    for (size_t i = 0; i < x.size(); ++i) {
        const double x0 = x[i];
        const double step = h * std::max(1.0, std::abs(x0));
        x[i] = x0 + step;
        double fp = f(x);
        x[i] = x0 - step;
        double fm = f(x);
        x[i] = x0;
        g[i] = (fp - fm) / (2 * step);
    }
    return g;
}

// Checks reverse-mode gradients of `build` (graph from a leaf tensor to a
// scalar) against central differences; returns max relative error.
inline double check_grad_vs_fd(const std::function<Var(const Var&)>& build, const Tensor& x0,
                               double h = 1e-5) {
    Var leaf = make_leaf(x0);
    Var loss = build(leaf);
    backward_through(loss);
    Tensor autog = leaf.grad();

    auto scalar_f = [&](const std::vector<double>& flat) {
        Tensor xt(x0.shape(), flat);
        Var l2 = build(make_leaf(xt));
        return l2.value().item();
    };
    std::vector<double> flat(x0.data(), x0.data() + x0.size());
    std::vector<double> fd = finite_diff(scalar_f, flat, h);
    Tensor fd_t(x0.shape(), fd);
    return max_rel_diff(autog, fd_t, 1e-6);
}

// Checks the jvp tangent of `build` against central differences along a
// random direction; returns max relative error.
inline double check_jvp_vs_fd(const std::function<Var(const std::vector<Var>&)>& build,
                              const std::vector<Tensor>& xs, const std::vector<Tensor>& dirs,
                              double h = 1e-6) {
    auto [primal, tangent] = jvp(build, xs, dirs);
    // f(x + h*dir) via re-evaluation
    auto eval_at = [&](double eps) {
        std::vector<Var> vars;
        for (size_t i = 0; i < xs.size(); ++i) {
            Tensor shifted = xs[i];
            for (int64_t j = 0; j < shifted.size(); ++j)
                shifted.at(j) += eps * dirs[i].at(j);
            vars.push_back(make_constant(shifted));
        }
        return build(vars).value();
    };
    Tensor fp = eval_at(h), fm = eval_at(-h);
    Tensor fd(fp.shape());
    for (int64_t i = 0; i < fd.size(); ++i) fd.at(i) = (fp.at(i) - fm.at(i)) / (2 * h);
    return max_rel_diff(tangent.value(), fd, 1e-6);
}

}  // namespace tvm::test
