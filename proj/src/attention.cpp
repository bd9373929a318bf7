#include "tvm/attention.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <limits>
#include <memory>
#include <mutex>
#include <thread>

#include "tvm/ops.hpp"
#include "tvm/parallel.hpp"
#include "tvm/rng.hpp"

namespace tvm {

int num_workers() {
    static int n = [] {
        if (const char* env = std::getenv("TVM_NUM_WORKERS")) {
            int v = std::atoi(env);
            if (v >= 1) return v;
        }
        unsigned hc = std::thread::hardware_concurrency();
        return hc ? static_cast<int>(hc) : 1;
    }();
    return n;
}

void parallel_for(int64_t n, const std::function<void(int64_t)>& fn) {
    const int w = num_workers();
    if (n <= 1 || w <= 1) {
        for (int64_t i = 0; i < n; ++i) fn(i);
        return;
    }
    const int threads = static_cast<int>(std::min<int64_t>(w, n));
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(threads));
    std::mutex err_mu;
    std::exception_ptr err;
    for (int t = 0; t < threads; ++t) {
        int64_t lo = n * t / threads;
        int64_t hi = n * (t + 1) / threads;
        pool.emplace_back([lo, hi, &fn, &err_mu, &err] {
            try {
                for (int64_t i = lo; i < hi; ++i) fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lk(err_mu);
                if (!err) err = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    if (err) std::rethrow_exception(err);
}

}  // namespace tvm

namespace tvm::attn {

namespace {

template <typename T>
void check_finite(const T* p, int64_t n, const char* name) {
    if (!p) return;
    for (int64_t i = 0; i < n; ++i)
        if (!std::isfinite(static_cast<double>(p[i])))
            throw TvmError(std::string("non-finite value in attention input ") + name);
}

template <typename T>
void check_dims(int64_t M, int64_t N, int64_t d, const KernelConfig& cfg) {
    if (M < 1 || N < 1) throw TvmError("attention requires non-empty sequences");
    if (d < 1) throw TvmError("attention head dim must be >= 1");
    if (cfg.tile_m < 1 || cfg.tile_n < 1) throw TvmError("tile sizes must be >= 1");
    (void)sizeof(T);
}

// Dot of rows a[i,:] (stride d) with b[j,:].
template <typename T>
inline T row_dot(const T* a, const T* b, int64_t d) {
    T acc = 0;
    for (int64_t r = 0; r < d; ++r) acc += a[r] * b[r];
    return acc;
}

// Fills s[ti*tn_cap + tj] = q_i . k_j for the tile; sd gets the symmetric
// tangent logits when tangents are present.
template <typename T>
void tile_logits(const T* q, const T* k, const T* qd, const T* kd, int64_t i0, int64_t tm,
                 int64_t j0, int64_t tn, int64_t tn_cap, int64_t d, T* s, T* sd) {
    for (int64_t ti = 0; ti < tm; ++ti) {
        const T* qi = q + (i0 + ti) * d;
        const T* qdi = qd ? qd + (i0 + ti) * d : nullptr;
        for (int64_t tj = 0; tj < tn; ++tj) {
            const T* kj = k + (j0 + tj) * d;
            s[ti * tn_cap + tj] = row_dot(qi, kj, d);
            if (sd) {
                T acc = 0;
                const T* kdj = kd ? kd + (j0 + tj) * d : nullptr;
                if (qdi) acc += row_dot(qdi, kj, d);
                if (kdj) acc += row_dot(qi, kdj, d);
                sd[ti * tn_cap + tj] = acc;
            }
        }
    }
}

}  // namespace

template <typename T>
void fused_forward(const T* q, const T* k, const T* v, const T* qd, const T* kd,
                   const T* vd, int64_t M, int64_t N, int64_t d, T* o, T* od,
                   Stats<T>& stats, const KernelConfig& cfg) {
    check_dims<T>(M, N, d, cfg);
    check_finite(q, M * d, "Q");
    check_finite(k, N * d, "K");
    check_finite(v, N * d, "V");
    check_finite(qd, qd ? M * d : 0, "Qdot");
    check_finite(kd, kd ? N * d : 0, "Kdot");
    check_finite(vd, vd ? N * d : 0, "Vdot");

    const T alpha = static_cast<T>(1.0 / std::sqrt(static_cast<double>(d)));
    const bool tang = qd || kd || vd;
    stats.lse.assign(static_cast<size_t>(M), 0);
    stats.rowsum.assign(static_cast<size_t>(M), 0);
    stats.mu.assign(static_cast<size_t>(M), 0);

    const int64_t tm_cap = std::min(cfg.tile_m, M);
    const int64_t tn_cap = std::min(cfg.tile_n, N);
    const int64_t n_row_tiles = (M + tm_cap - 1) / tm_cap;

    parallel_for(n_row_tiles, [&](int64_t rt) {
        const int64_t i0 = rt * tm_cap;
        const int64_t tm = std::min(tm_cap, M - i0);
        TrackedBuf<T> s(tm_cap * tn_cap, cfg.tracker);
        TrackedBuf<T> sd(tang ? tm_cap * tn_cap : 0, cfg.tracker);
        TrackedBuf<T> acc_o(tm_cap * d, cfg.tracker);
        TrackedBuf<T> acc_od(tang ? tm_cap * d : 0, cfg.tracker);
        TrackedBuf<T> mrow(tm_cap, cfg.tracker), lrow(tm_cap, cfg.tracker),
            murow(tm_cap, cfg.tracker);
        acc_o.fill(0);
        if (tang) acc_od.fill(0);
        mrow.fill(-std::numeric_limits<T>::infinity());
        lrow.fill(0);
        murow.fill(0);

        for (int64_t j0 = 0; j0 < N; j0 += tn_cap) {
            const int64_t tn = std::min(tn_cap, N - j0);
            tile_logits(q, k, qd, kd, i0, tm, j0, tn, tn_cap, d, s.data(),
                        tang ? sd.data() : nullptr);
            for (int64_t ti = 0; ti < tm; ++ti) {
                // Online softmax: refresh the running max, rescale, accumulate.
                T m_new = mrow[ti];
                for (int64_t tj = 0; tj < tn; ++tj)
                    m_new = std::max(m_new, alpha * s[ti * tn_cap + tj]);
                if (m_new > mrow[ti]) {
                    const T c = std::exp(mrow[ti] - m_new);
                    // exp(-inf - finite) is 0, which zeroes empty accumulators.
                    const T cs = std::isfinite(mrow[ti]) ? c : 0;
                    lrow[ti] *= cs;
                    murow[ti] *= cs;
                    T* po = acc_o.data() + ti * d;
                    for (int64_t r = 0; r < d; ++r) po[r] *= cs;
                    if (tang) {
                        T* pod = acc_od.data() + ti * d;
                        for (int64_t r = 0; r < d; ++r) pod[r] *= cs;
                    }
                    mrow[ti] = m_new;
                }
                T* po = acc_o.data() + ti * d;
                T* pod = tang ? acc_od.data() + ti * d : nullptr;
                for (int64_t tj = 0; tj < tn; ++tj) {
                    const T p = std::exp(alpha * s[ti * tn_cap + tj] - mrow[ti]);
                    lrow[ti] += p;
                    const T* vj = v + (j0 + tj) * d;
                    if (tang) {
                        const T asd = alpha * sd[ti * tn_cap + tj];
                        murow[ti] += p * asd;
                        const T* vdj = vd ? vd + (j0 + tj) * d : nullptr;
                        for (int64_t r = 0; r < d; ++r) {
                            po[r] += p * vj[r];
                            pod[r] += p * (asd * vj[r] + (vdj ? vdj[r] : 0));
                        }
                    } else {
                        for (int64_t r = 0; r < d; ++r) po[r] += p * vj[r];
                    }
                }
            }
        }
        for (int64_t ti = 0; ti < tm; ++ti) {
            const int64_t i = i0 + ti;
            const T l = lrow[ti];
            if (!(l > 0)) throw TvmError("softmax normalizer vanished");
            const T inv_l = 1 / l;
            const T mbar = murow[ti] * inv_l;
            const T* po = acc_o.data() + ti * d;
            for (int64_t r = 0; r < d; ++r) o[i * d + r] = po[r] * inv_l;
            if (od) {
                if (tang) {
                    const T* pod = acc_od.data() + ti * d;
                    for (int64_t r = 0; r < d; ++r)
                        od[i * d + r] = pod[r] * inv_l - mbar * o[i * d + r];
                } else {
                    for (int64_t r = 0; r < d; ++r) od[i * d + r] = 0;
                }
            }
            stats.lse[static_cast<size_t>(i)] = mrow[ti] + std::log(l);
            stats.rowsum[static_cast<size_t>(i)] = l;
            stats.mu[static_cast<size_t>(i)] = murow[ti];
        }
    });
}

// ---------------- backward steps ----------------

namespace {

// Per-tile context shared by the backward steps: normalized probabilities
// P = exp(alpha*S - lse) recomputed from q, k and the cached lse, plus the
// tangent logits when needed.
template <typename T>
void tile_probs(const T* q, const T* k, const T* qd, const T* kd, const Stats<T>& stats,
                T alpha, int64_t i0, int64_t tm, int64_t j0, int64_t tn, int64_t tn_cap,
                int64_t d, T* p, T* asd, bool want_tangent) {
    tile_logits(q, k, qd, kd, i0, tm, j0, tn, tn_cap, d, p, want_tangent ? asd : nullptr);
    for (int64_t ti = 0; ti < tm; ++ti) {
        const T lse = stats.lse[static_cast<size_t>(i0 + ti)];
        for (int64_t tj = 0; tj < tn; ++tj) {
            T& cell = p[ti * tn_cap + tj];
            cell = std::exp(alpha * cell - lse);
            if (want_tangent) asd[ti * tn_cap + tj] *= alpha;
        }
    }
}

}  // namespace

template <typename T>
void backward_step1(const T* q, const T* k, const T* v, const T* qd, const T* kd,
                    const T* vd, int64_t M, int64_t N, int64_t d, const Stats<T>& stats,
                    const T* d_o, const T* d_od, T* sigma1, T* sigma2, T* dprim,
                    const KernelConfig& cfg) {
    check_dims<T>(M, N, d, cfg);
    const T alpha = static_cast<T>(1.0 / std::sqrt(static_cast<double>(d)));
    const int64_t tm_cap = std::min(cfg.tile_m, M);
    const int64_t tn_cap = std::min(cfg.tile_n, N);
    const int64_t n_row_tiles = (M + tm_cap - 1) / tm_cap;
    parallel_for(n_row_tiles, [&](int64_t rt) {
        const int64_t i0 = rt * tm_cap;
        const int64_t tm = std::min(tm_cap, M - i0);
        TrackedBuf<T> p(tm_cap * tn_cap, cfg.tracker), asd(tm_cap * tn_cap, cfg.tracker);
        for (int64_t ti = 0; ti < tm; ++ti) {
            sigma1[i0 + ti] = 0;
            sigma2[i0 + ti] = 0;
            dprim[i0 + ti] = 0;
        }
        for (int64_t j0 = 0; j0 < N; j0 += tn_cap) {
            const int64_t tn = std::min(tn_cap, N - j0);
            tile_probs(q, k, qd, kd, stats, alpha, i0, tm, j0, tn, tn_cap, d, p.data(),
                       asd.data(), true);
            for (int64_t ti = 0; ti < tm; ++ti) {
                const int64_t i = i0 + ti;
                const T mbar = stats.mu[static_cast<size_t>(i)] /
                               stats.rowsum[static_cast<size_t>(i)];
                const T* doi = d_o ? d_o + i * d : nullptr;
                const T* dodi = d_od ? d_od + i * d : nullptr;
                for (int64_t tj = 0; tj < tn; ++tj) {
                    const int64_t j = j0 + tj;
                    const T pij = p[ti * tn_cap + tj];
                    const T nij = asd[ti * tn_cap + tj] - mbar;
                    const T* vj = v + j * d;
                    if (dodi) {
                        const T dodv = row_dot(dodi, vj, d);
                        const T dodvd = vd ? row_dot(dodi, vd + j * d, d) : 0;
                        sigma1[i] += pij * dodv;
                        sigma2[i] += pij * (dodvd + dodv * nij);
                    }
                    if (doi) dprim[i] += pij * row_dot(doi, vj, d);
                }
            }
        }
    });
}

template <typename T>
void backward_step2(const T* q, const T* k, const T* v, const T* qd, const T* kd,
                    const T* vd, int64_t M, int64_t N, int64_t d, const Stats<T>& stats,
                    const T* d_od, const T* sigma1, T* dk1, T* dkd,
                    const KernelConfig& cfg) {
    (void)vd;
    (void)kd;
    check_dims<T>(M, N, d, cfg);
    const T alpha = static_cast<T>(1.0 / std::sqrt(static_cast<double>(d)));
    const int64_t tm_cap = std::min(cfg.tile_m, M);
    const int64_t tn_cap = std::min(cfg.tile_n, N);
    const int64_t n_col_tiles = (N + tn_cap - 1) / tn_cap;
    parallel_for(n_col_tiles, [&](int64_t ct) {
        const int64_t j0 = ct * tn_cap;
        const int64_t tn = std::min(tn_cap, N - j0);
        TrackedBuf<T> p(tm_cap * tn_cap, cfg.tracker);
        for (int64_t tj = 0; tj < tn; ++tj)
            for (int64_t r = 0; r < d; ++r) {
                if (dk1) dk1[(j0 + tj) * d + r] = 0;
                dkd[(j0 + tj) * d + r] = 0;
            }
        for (int64_t i0 = 0; i0 < M; i0 += tm_cap) {
            const int64_t tm = std::min(tm_cap, M - i0);
            tile_probs<T>(q, k, nullptr, nullptr, stats, alpha, i0, tm, j0, tn, tn_cap, d,
                          p.data(), nullptr, false);
            for (int64_t ti = 0; ti < tm; ++ti) {
                const int64_t i = i0 + ti;
                const T* dodi = d_od ? d_od + i * d : nullptr;
                if (!dodi) continue;
                for (int64_t tj = 0; tj < tn; ++tj) {
                    const int64_t j = j0 + tj;
                    const T dodv = row_dot(dodi, v + j * d, d);
                    const T b = alpha * (dodv - sigma1[i]) * p[ti * tn_cap + tj];
                    const T* qi = q + i * d;
                    const T* qdi = qd ? qd + i * d : nullptr;
                    for (int64_t r = 0; r < d; ++r) {
                        dkd[j * d + r] += b * qi[r];
                        if (dk1 && qdi) dk1[j * d + r] += b * qdi[r];
                    }
                }
            }
        }
    });
}

template <typename T>
void backward_step3(const T* q, const T* k, const T* v, const T* qd, const T* kd,
                    const T* vd, int64_t M, int64_t N, int64_t d, const Stats<T>& stats,
                    const T* d_od, const T* sigma1, T* dq1, T* dqd,
                    const KernelConfig& cfg) {
    (void)vd;
    (void)qd;
    check_dims<T>(M, N, d, cfg);
    const T alpha = static_cast<T>(1.0 / std::sqrt(static_cast<double>(d)));
    const int64_t tm_cap = std::min(cfg.tile_m, M);
    const int64_t tn_cap = std::min(cfg.tile_n, N);
    const int64_t n_row_tiles = (M + tm_cap - 1) / tm_cap;
    parallel_for(n_row_tiles, [&](int64_t rt) {
        const int64_t i0 = rt * tm_cap;
        const int64_t tm = std::min(tm_cap, M - i0);
        TrackedBuf<T> p(tm_cap * tn_cap, cfg.tracker);
        for (int64_t ti = 0; ti < tm; ++ti)
            for (int64_t r = 0; r < d; ++r) {
                if (dq1) dq1[(i0 + ti) * d + r] = 0;
                dqd[(i0 + ti) * d + r] = 0;
            }
        for (int64_t j0 = 0; j0 < N; j0 += tn_cap) {
            const int64_t tn = std::min(tn_cap, N - j0);
            tile_probs<T>(q, k, nullptr, nullptr, stats, alpha, i0, tm, j0, tn, tn_cap, d,
                          p.data(), nullptr, false);
            for (int64_t ti = 0; ti < tm; ++ti) {
                const int64_t i = i0 + ti;
                const T* dodi = d_od ? d_od + i * d : nullptr;
                if (!dodi) continue;
                for (int64_t tj = 0; tj < tn; ++tj) {
                    const int64_t j = j0 + tj;
                    const T dodv = row_dot(dodi, v + j * d, d);
                    const T b = alpha * (dodv - sigma1[i]) * p[ti * tn_cap + tj];
                    const T* kj = k + j * d;
                    const T* kdj = kd ? kd + j * d : nullptr;
                    for (int64_t r = 0; r < d; ++r) {
                        dqd[i * d + r] += b * kj[r];
                        if (dq1 && kdj) dq1[i * d + r] += b * kdj[r];
                    }
                }
            }
        }
    });
}

namespace {

// Shared weight for steps 4 and 5: the softmax-backward factor collecting the
// tangent path (through P and through mu) and the primal path.
template <typename T>
inline T step45_weight(T pij, T asd_ij, T mbar, T sigma1_i, T sigma2_i, T dprim_i,
                       T dodv, T dodvd, T dov) {
    const T nij = asd_ij - mbar;
    T w = 0;
    // tangent path
    w += -sigma1_i * asd_ij + sigma1_i * mbar;
    w += dodvd + dodv * nij - sigma2_i;
    // primal path
    w += dov - dprim_i;
    return pij * w;
}

}  // namespace

template <typename T>
void backward_step4(const T* q, const T* k, const T* v, const T* qd, const T* kd,
                    const T* vd, int64_t M, int64_t N, int64_t d, const Stats<T>& stats,
                    const T* d_o, const T* d_od, const T* sigma1, const T* sigma2,
                    const T* dprim, T* dk2, const KernelConfig& cfg) {
    check_dims<T>(M, N, d, cfg);
    const T alpha = static_cast<T>(1.0 / std::sqrt(static_cast<double>(d)));
    const int64_t tm_cap = std::min(cfg.tile_m, M);
    const int64_t tn_cap = std::min(cfg.tile_n, N);
    const int64_t n_col_tiles = (N + tn_cap - 1) / tn_cap;
    parallel_for(n_col_tiles, [&](int64_t ct) {
        const int64_t j0 = ct * tn_cap;
        const int64_t tn = std::min(tn_cap, N - j0);
        TrackedBuf<T> p(tm_cap * tn_cap, cfg.tracker), asd(tm_cap * tn_cap, cfg.tracker);
        const bool tang = (qd || kd) && d_od;
        for (int64_t i0 = 0; i0 < M; i0 += tm_cap) {
            const int64_t tm = std::min(tm_cap, M - i0);
            tile_probs(q, k, qd, kd, stats, alpha, i0, tm, j0, tn, tn_cap, d, p.data(),
                       asd.data(), tang);
            if (!tang) std::memset(asd.data(), 0, sizeof(T) * static_cast<size_t>(tm_cap * tn_cap));
            for (int64_t ti = 0; ti < tm; ++ti) {
                const int64_t i = i0 + ti;
                const T mbar = stats.mu[static_cast<size_t>(i)] /
                               stats.rowsum[static_cast<size_t>(i)];
                const T* doi = d_o ? d_o + i * d : nullptr;
                const T* dodi = d_od ? d_od + i * d : nullptr;
                const T* qi = q + i * d;
                for (int64_t tj = 0; tj < tn; ++tj) {
                    const int64_t j = j0 + tj;
                    const T dodv = dodi ? row_dot(dodi, v + j * d, d) : 0;
                    const T dodvd = (dodi && vd) ? row_dot(dodi, vd + j * d, d) : 0;
                    const T dov = doi ? row_dot(doi, v + j * d, d) : 0;
                    const T w = alpha * step45_weight(p[ti * tn_cap + tj],
                                                      asd[ti * tn_cap + tj], mbar,
                                                      dodi ? sigma1[i] : 0,
                                                      dodi ? sigma2[i] : 0,
                                                      doi ? dprim[i] : 0, dodv, dodvd, dov);
                    for (int64_t r = 0; r < d; ++r) dk2[j * d + r] += w * qi[r];
                }
            }
        }
    });
}

template <typename T>
void backward_step5(const T* q, const T* k, const T* v, const T* qd, const T* kd,
                    const T* vd, int64_t M, int64_t N, int64_t d, const Stats<T>& stats,
                    const T* d_o, const T* d_od, const T* sigma1, const T* sigma2,
                    const T* dprim, T* dq2, const KernelConfig& cfg) {
    check_dims<T>(M, N, d, cfg);
    const T alpha = static_cast<T>(1.0 / std::sqrt(static_cast<double>(d)));
    const int64_t tm_cap = std::min(cfg.tile_m, M);
    const int64_t tn_cap = std::min(cfg.tile_n, N);
    const int64_t n_row_tiles = (M + tm_cap - 1) / tm_cap;
    parallel_for(n_row_tiles, [&](int64_t rt) {
        const int64_t i0 = rt * tm_cap;
        const int64_t tm = std::min(tm_cap, M - i0);
        TrackedBuf<T> p(tm_cap * tn_cap, cfg.tracker), asd(tm_cap * tn_cap, cfg.tracker);
        const bool tang = (qd || kd) && d_od;
        for (int64_t j0 = 0; j0 < N; j0 += tn_cap) {
            const int64_t tn = std::min(tn_cap, N - j0);
            tile_probs(q, k, qd, kd, stats, alpha, i0, tm, j0, tn, tn_cap, d, p.data(),
                       asd.data(), tang);
            if (!tang) std::memset(asd.data(), 0, sizeof(T) * static_cast<size_t>(tm_cap * tn_cap));
            for (int64_t ti = 0; ti < tm; ++ti) {
                const int64_t i = i0 + ti;
                const T mbar = stats.mu[static_cast<size_t>(i)] /
                               stats.rowsum[static_cast<size_t>(i)];
                const T* doi = d_o ? d_o + i * d : nullptr;
                const T* dodi = d_od ? d_od + i * d : nullptr;
                for (int64_t tj = 0; tj < tn; ++tj) {
                    const int64_t j = j0 + tj;
                    const T dodv = dodi ? row_dot(dodi, v + j * d, d) : 0;
                    const T dodvd = (dodi && vd) ? row_dot(dodi, vd + j * d, d) : 0;
                    const T dov = doi ? row_dot(doi, v + j * d, d) : 0;
                    const T w = alpha * step45_weight(p[ti * tn_cap + tj],
                                                      asd[ti * tn_cap + tj], mbar,
                                                      dodi ? sigma1[i] : 0,
                                                      dodi ? sigma2[i] : 0,
                                                      doi ? dprim[i] : 0, dodv, dodvd, dov);
                    const T* kj = k + j * d;
                    for (int64_t r = 0; r < d; ++r) dq2[i * d + r] += w * kj[r];
                }
            }
        }
    });
}

template <typename T>
void backward_step6(const T* q, const T* k, const T* v, const T* qd, const T* kd,
                    const T* vd, int64_t M, int64_t N, int64_t d, const Stats<T>& stats,
                    const T* d_o, const T* d_od, T* dv_out, T* dvd_out,
                    const KernelConfig& cfg) {
    (void)v;
    (void)vd;
    check_dims<T>(M, N, d, cfg);
    const T alpha = static_cast<T>(1.0 / std::sqrt(static_cast<double>(d)));
    const int64_t tm_cap = std::min(cfg.tile_m, M);
    const int64_t tn_cap = std::min(cfg.tile_n, N);
    const int64_t n_col_tiles = (N + tn_cap - 1) / tn_cap;
    const bool tang = (qd || kd) && d_od;
    parallel_for(n_col_tiles, [&](int64_t ct) {
        const int64_t j0 = ct * tn_cap;
        const int64_t tn = std::min(tn_cap, N - j0);
        TrackedBuf<T> p(tm_cap * tn_cap, cfg.tracker), asd(tm_cap * tn_cap, cfg.tracker);
        for (int64_t tj = 0; tj < tn; ++tj)
            for (int64_t r = 0; r < d; ++r) {
                dv_out[(j0 + tj) * d + r] = 0;
                if (dvd_out) dvd_out[(j0 + tj) * d + r] = 0;
            }
        for (int64_t i0 = 0; i0 < M; i0 += tm_cap) {
            const int64_t tm = std::min(tm_cap, M - i0);
            tile_probs(q, k, qd, kd, stats, alpha, i0, tm, j0, tn, tn_cap, d, p.data(),
                       asd.data(), tang);
            for (int64_t ti = 0; ti < tm; ++ti) {
                const int64_t i = i0 + ti;
                const T mbar = stats.mu[static_cast<size_t>(i)] /
                               stats.rowsum[static_cast<size_t>(i)];
                const T* doi = d_o ? d_o + i * d : nullptr;
                const T* dodi = d_od ? d_od + i * d : nullptr;
                for (int64_t tj = 0; tj < tn; ++tj) {
                    const int64_t j = j0 + tj;
                    const T pij = p[ti * tn_cap + tj];
                    const T nij = tang ? asd[ti * tn_cap + tj] - mbar : -mbar;
                    for (int64_t r = 0; r < d; ++r) {
                        T acc = 0;
                        if (doi) acc += pij * doi[r];
                        if (dodi) acc += pij * nij * dodi[r];
                        dv_out[j * d + r] += acc;
                        if (dvd_out && dodi) dvd_out[j * d + r] += pij * dodi[r];
                    }
                }
            }
        }
    });
}

template <typename T>
void backward(const T* q, const T* k, const T* v, const T* qd, const T* kd, const T* vd,
              int64_t M, int64_t N, int64_t d, const Stats<T>& stats, const T* d_o,
              const T* d_od, T* dq, T* dk, T* dv, T* dqd, T* dkd, T* dvd,
              const KernelConfig& cfg) {
    if (static_cast<int64_t>(stats.lse.size()) != M ||
        static_cast<int64_t>(stats.rowsum.size()) != M ||
        static_cast<int64_t>(stats.mu.size()) != M)
        throw TvmError("attention stats do not match input rows");

    TrackedBuf<T> sigma1(M, cfg.tracker), sigma2(M, cfg.tracker), dprim(M, cfg.tracker);
    backward_step1(q, k, v, qd, kd, vd, M, N, d, stats, d_o, d_od, sigma1.data(),
                   sigma2.data(), dprim.data(), cfg);
    backward_step2(q, k, v, qd, kd, vd, M, N, d, stats, d_od, sigma1.data(), dk, dkd, cfg);
    backward_step3(q, k, v, qd, kd, vd, M, N, d, stats, d_od, sigma1.data(), dq, dqd, cfg);
    backward_step4(q, k, v, qd, kd, vd, M, N, d, stats, d_o, d_od, sigma1.data(),
                   sigma2.data(), dprim.data(), dk, cfg);
    backward_step5(q, k, v, qd, kd, vd, M, N, d, stats, d_o, d_od, sigma1.data(),
                   sigma2.data(), dprim.data(), dq, cfg);
    backward_step6(q, k, v, qd, kd, vd, M, N, d, stats, d_o, d_od, dv, dvd, cfg);
}

// Explicit instantiations.
template void fused_forward<double>(const double*, const double*, const double*,
                                    const double*, const double*, const double*, int64_t,
                                    int64_t, int64_t, double*, double*, Stats<double>&,
                                    const KernelConfig&);
template void fused_forward<float>(const float*, const float*, const float*, const float*,
                                   const float*, const float*, int64_t, int64_t, int64_t,
                                   float*, float*, Stats<float>&, const KernelConfig&);
template void backward<double>(const double*, const double*, const double*, const double*,
                               const double*, const double*, int64_t, int64_t, int64_t,
                               const Stats<double>&, const double*, const double*, double*,
                               double*, double*, double*, double*, double*,
                               const KernelConfig&);
template void backward<float>(const float*, const float*, const float*, const float*,
                              const float*, const float*, int64_t, int64_t, int64_t,
                              const Stats<float>&, const float*, const float*, float*,
                              float*, float*, float*, float*, float*, const KernelConfig&);
template void backward_step1<double>(const double*, const double*, const double*,
                                     const double*, const double*, const double*, int64_t,
                                     int64_t, int64_t, const Stats<double>&, const double*,
                                     const double*, double*, double*, double*,
                                     const KernelConfig&);
template void backward_step2<double>(const double*, const double*, const double*,
                                     const double*, const double*, const double*, int64_t,
                                     int64_t, int64_t, const Stats<double>&, const double*,
                                     const double*, double*, double*, const KernelConfig&);
template void backward_step3<double>(const double*, const double*, const double*,
                                     const double*, const double*, const double*, int64_t,
                                     int64_t, int64_t, const Stats<double>&, const double*,
                                     const double*, double*, double*, const KernelConfig&);
template void backward_step4<double>(const double*, const double*, const double*,
                                     const double*, const double*, const double*, int64_t,
                                     int64_t, int64_t, const Stats<double>&, const double*,
                                     const double*, const double*, const double*,
                                     const double*, double*, const KernelConfig&);
template void backward_step5<double>(const double*, const double*, const double*,
                                     const double*, const double*, const double*, int64_t,
                                     int64_t, int64_t, const Stats<double>&, const double*,
                                     const double*, const double*, const double*,
                                     const double*, double*, const KernelConfig&);
template void backward_step6<double>(const double*, const double*, const double*,
                                     const double*, const double*, const double*, int64_t,
                                     int64_t, int64_t, const Stats<double>&, const double*,
                                     const double*, double*, double*, const KernelConfig&);

}  // namespace tvm::attn
