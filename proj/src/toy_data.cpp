#include "tvm/toy_data.hpp"

#include <cmath>

namespace tvm {

ToyKind toy_kind_from_string(const std::string& s) {
    if (s == "two_moons") return ToyKind::kTwoMoons;
    if (s == "8gaussians") return ToyKind::kEightGaussians;
    if (s == "checkerboard") return ToyKind::kCheckerboard;
    throw TvmError("unknown toy dataset '" + s + "'");
}

std::string to_string(ToyKind k) {
    switch (k) {
        case ToyKind::kTwoMoons: return "two_moons";
        case ToyKind::kEightGaussians: return "8gaussians";
        case ToyKind::kCheckerboard: return "checkerboard";
    }
    throw TvmError("bad toy kind");
}

int64_t toy_label_count(ToyKind k) {
    switch (k) {
        case ToyKind::kTwoMoons: return 2;
        case ToyKind::kEightGaussians: return 8;
        case ToyKind::kCheckerboard: return 0;
    }
    return 0;
}

void sample_toy(ToyKind kind, int64_t n, Rng& rng, Tensor& x,
                std::vector<int64_t>* labels) {
    x = Tensor({n, 2});
    if (labels) labels->assign(static_cast<size_t>(n), 0);
    switch (kind) {
        case ToyKind::kTwoMoons: {
            for (int64_t i = 0; i < n; ++i) {
                const bool lower = rng.bernoulli(0.5);
                const double a = rng.uniform01() * M_PI;
                double px = std::cos(a), py = std::sin(a);
                if (lower) {
                    px = 1.0 - px;
                    py = 0.5 - py;
                }
                x.at(i * 2) = px + 0.07 * rng.gaussian();
                x.at(i * 2 + 1) = py + 0.07 * rng.gaussian();
                if (labels) (*labels)[static_cast<size_t>(i)] = lower ? 1 : 0;
            }
            break;
        }
        case ToyKind::kEightGaussians: {
            const double r = 2.0, sd = 0.15;
            for (int64_t i = 0; i < n; ++i) {
                const int64_t mode = rng.uniform_int(8);
                const double ang = 2.0 * M_PI * static_cast<double>(mode) / 8.0;
                x.at(i * 2) = r * std::cos(ang) + sd * rng.gaussian();
                x.at(i * 2 + 1) = r * std::sin(ang) + sd * rng.gaussian();
                if (labels) (*labels)[static_cast<size_t>(i)] = mode;
            }
            break;
        }
        case ToyKind::kCheckerboard: {
            for (int64_t i = 0; i < n; ++i) {
                const double x1 = rng.uniform(-2.0, 2.0);
                const double shift = rng.bernoulli(0.5) ? 0.0 : -2.0;
                double x2 = rng.uniform01() + shift;
                x2 += std::fmod(std::floor(x1) + 4.0, 2.0);
                x.at(i * 2) = x1;
                x.at(i * 2 + 1) = x2;
            }
            break;
        }
    }
}

}  // namespace tvm
