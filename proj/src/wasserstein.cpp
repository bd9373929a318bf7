#include "tvm/wasserstein.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace tvm {

double solve_assignment(const std::vector<double>& cost, int n, std::vector<int>& rowsol) {
    if (n <= 0) throw TvmError("assignment needs n >= 1");
    if (static_cast<int64_t>(cost.size()) != static_cast<int64_t>(n) * n)
        throw TvmError("cost matrix size mismatch");
    const double INF = std::numeric_limits<double>::infinity();
    // Potentials u, v over rows/cols (1-indexed with a virtual column 0).
    std::vector<double> u(static_cast<size_t>(n) + 1, 0), v(static_cast<size_t>(n) + 1, 0);
    std::vector<int> p(static_cast<size_t>(n) + 1, 0), way(static_cast<size_t>(n) + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(static_cast<size_t>(n) + 1, INF);
        std::vector<char> used(static_cast<size_t>(n) + 1, 0);
        do {
            used[static_cast<size_t>(j0)] = 1;
            const int i0 = p[static_cast<size_t>(j0)];
            int j1 = -1;
            double delta = INF;
            for (int j = 1; j <= n; ++j) {
                if (used[static_cast<size_t>(j)]) continue;
                const double cur = cost[static_cast<size_t>(i0 - 1) * n + (j - 1)] -
                                   u[static_cast<size_t>(i0)] - v[static_cast<size_t>(j)];
                if (cur < minv[static_cast<size_t>(j)]) {
                    minv[static_cast<size_t>(j)] = cur;
                    way[static_cast<size_t>(j)] = j0;
                }
                if (minv[static_cast<size_t>(j)] < delta) {
                    delta = minv[static_cast<size_t>(j)];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[static_cast<size_t>(j)]) {
                    u[static_cast<size_t>(p[static_cast<size_t>(j)])] += delta;
                    v[static_cast<size_t>(j)] -= delta;
                } else {
                    minv[static_cast<size_t>(j)] -= delta;
                }
            }
            j0 = j1;
        } while (p[static_cast<size_t>(j0)] != 0);
        do {
            const int j1 = way[static_cast<size_t>(j0)];
            p[static_cast<size_t>(j0)] = p[static_cast<size_t>(j1)];
            j0 = j1;
        } while (j0);
    }
    rowsol.assign(static_cast<size_t>(n), -1);
    double total = 0;
    for (int j = 1; j <= n; ++j) {
        rowsol[static_cast<size_t>(j - 1)] = p[static_cast<size_t>(j)] - 1;
        total += cost[static_cast<size_t>(p[static_cast<size_t>(j)] - 1) * n + (j - 1)];
    }
    return total;
}

double w2_exact(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(1))
        throw TvmError("w2_exact expects [n,d] sets of equal dimension");
    if (a.dim(0) != b.dim(0))
        throw TvmError("w2_exact requires equal-size sets (use the sliced mode otherwise)");
    const int64_t n = a.dim(0), d = a.dim(1);
    if (n == 0) throw TvmError("w2_exact on empty sets");
    if (n > 2048) throw TvmError("w2_exact capped at 2048 points");
    std::vector<double> cost(static_cast<size_t>(n) * static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < n; ++j) {
            double acc = 0;
            for (int64_t r = 0; r < d; ++r) {
                const double diff = a.at(i * d + r) - b.at(j * d + r);
                acc += diff * diff;
            }
            cost[static_cast<size_t>(i) * n + j] = acc;
        }
    std::vector<int> rowsol;
    const double total = solve_assignment(cost, static_cast<int>(n), rowsol);
    return std::sqrt(total / static_cast<double>(n));
}

double w2_sliced(const Tensor& a, const Tensor& b, int n_proj, Rng& rng) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(1))
        throw TvmError("w2_sliced expects [n,d] sets of equal dimension");
    const int64_t na = a.dim(0), nb = b.dim(0), d = a.dim(1);
    if (na == 0 || nb == 0) throw TvmError("w2_sliced on empty sets");
    double acc = 0;
    std::vector<double> pa(static_cast<size_t>(na)), pb(static_cast<size_t>(nb));
    for (int p = 0; p < n_proj; ++p) {
        std::vector<double> dir(static_cast<size_t>(d));
        double norm = 0;
        for (auto& c : dir) {
            c = rng.gaussian();
            norm += c * c;
        }
        norm = std::sqrt(norm);
        for (auto& c : dir) c /= norm;
        for (int64_t i = 0; i < na; ++i) {
            double s = 0;
            for (int64_t r = 0; r < d; ++r) s += a.at(i * d + r) * dir[static_cast<size_t>(r)];
            pa[static_cast<size_t>(i)] = s;
        }
        for (int64_t i = 0; i < nb; ++i) {
            double s = 0;
            for (int64_t r = 0; r < d; ++r) s += b.at(i * d + r) * dir[static_cast<size_t>(r)];
            pb[static_cast<size_t>(i)] = s;
        }
        std::sort(pa.begin(), pa.end());
        std::sort(pb.begin(), pb.end());
        // Quantile coupling on the common grid of the larger set.
        const int64_t m = std::max(na, nb);
        double w = 0;
        for (int64_t i = 0; i < m; ++i) {
            const double qa = pa[static_cast<size_t>(i * na / m)];
            const double qb = pb[static_cast<size_t>(i * nb / m)];
            w += (qa - qb) * (qa - qb);
        }
        acc += w / static_cast<double>(m);
    }
    return std::sqrt(acc / static_cast<double>(n_proj));
}

}  // namespace tvm
