#include <chrono>
#include <cmath>
#include <cstring>
#include <memory>

#include "tvm/attention.hpp"
#include "tvm/ops.hpp"
#include "tvm/parallel.hpp"
#include "tvm/rng.hpp"

namespace tvm::attn {

namespace {

void check_attn_shapes(const Tensor& q, const Tensor& k, const Tensor& v) {
    if (q.ndim() != 2 || k.ndim() != 2 || v.ndim() != 2)
        throw TvmError("attention reference expects 2-D Q, K, V");
    if (q.dim(1) != k.dim(1) || k.dim(0) != v.dim(0) || k.dim(1) != v.dim(1))
        throw TvmError("attention shape mismatch");
}

}  // namespace

DenseResult naive_forward(const Tensor& q, const Tensor& k, const Tensor& v,
                          const Tensor& qd, const Tensor& kd, const Tensor& vd,
                          AllocTracker* tracker) {
    check_attn_shapes(q, k, v);
    const int64_t M = q.dim(0), N = k.dim(0), d = q.dim(1);
    const double alpha = 1.0 / std::sqrt(static_cast<double>(d));

    TrackedBuf<double> S(M * N, tracker), Sd(M * N, tracker), P(M * N, tracker);
    for (int64_t i = 0; i < M; ++i)
        for (int64_t j = 0; j < N; ++j) {
            double s = 0, sd = 0;
            for (int64_t r = 0; r < d; ++r) {
                s += q.at(i * d + r) * k.at(j * d + r);
                sd += qd.at(i * d + r) * k.at(j * d + r) + q.at(i * d + r) * kd.at(j * d + r);
            }
            S[i * N + j] = alpha * s;
            Sd[i * N + j] = alpha * sd;
        }
    Tensor o({M, d}), od({M, d});
    for (int64_t i = 0; i < M; ++i) {
        double m = -1e300;
        for (int64_t j = 0; j < N; ++j) m = std::max(m, S[i * N + j]);
        double l = 0;
        for (int64_t j = 0; j < N; ++j) {
            P[i * N + j] = std::exp(S[i * N + j] - m);
            l += P[i * N + j];
        }
        double mbar = 0;
        for (int64_t j = 0; j < N; ++j) {
            P[i * N + j] /= l;
            mbar += P[i * N + j] * Sd[i * N + j];
        }
        for (int64_t r = 0; r < d; ++r) {
            double acc = 0, accd = 0;
            for (int64_t j = 0; j < N; ++j) {
                const double p = P[i * N + j];
                acc += p * v.at(j * d + r);
                accd += p * ((Sd[i * N + j] - mbar) * v.at(j * d + r) + vd.at(j * d + r));
            }
            o.at(i * d + r) = acc;
            od.at(i * d + r) = accd;
        }
    }
    return {std::move(o), std::move(od)};
}

DenseGrads naive_backward(const Tensor& q, const Tensor& k, const Tensor& v,
                          const Tensor& qd, const Tensor& kd, const Tensor& vd,
                          const Tensor& d_o, const Tensor& d_od, AllocTracker* tracker) {
    check_attn_shapes(q, k, v);
    const int64_t M = q.dim(0), N = k.dim(0), d = q.dim(1);
    const double alpha = 1.0 / std::sqrt(static_cast<double>(d));

    // Materialized intermediates, the memory-hungry route the fused kernel
    // exists to avoid.
    TrackedBuf<double> S(M * N, tracker), Sd(M * N, tracker), P(M * N, tracker);
    TrackedBuf<double> dOV(M * N, tracker), dOdV(M * N, tracker), dOdVd(M * N, tracker);
    TrackedBuf<double> mbar(M, tracker), sig1(M, tracker), sig2(M, tracker), dpr(M, tracker);

    for (int64_t i = 0; i < M; ++i)
        for (int64_t j = 0; j < N; ++j) {
            double s = 0, sd = 0, dov = 0, dodv = 0, dodvd = 0;
            for (int64_t r = 0; r < d; ++r) {
                s += q.at(i * d + r) * k.at(j * d + r);
                sd += qd.at(i * d + r) * k.at(j * d + r) + q.at(i * d + r) * kd.at(j * d + r);
                dov += d_o.at(i * d + r) * v.at(j * d + r);
                dodv += d_od.at(i * d + r) * v.at(j * d + r);
                dodvd += d_od.at(i * d + r) * vd.at(j * d + r);
            }
            S[i * N + j] = alpha * s;
            Sd[i * N + j] = alpha * sd;
            dOV[i * N + j] = dov;
            dOdV[i * N + j] = dodv;
            dOdVd[i * N + j] = dodvd;
        }
    for (int64_t i = 0; i < M; ++i) {
        double m = -1e300;
        for (int64_t j = 0; j < N; ++j) m = std::max(m, S[i * N + j]);
        double l = 0;
        for (int64_t j = 0; j < N; ++j) {
            P[i * N + j] = std::exp(S[i * N + j] - m);
            l += P[i * N + j];
        }
        double mb = 0, s1 = 0, s2 = 0, dp = 0;
        for (int64_t j = 0; j < N; ++j) {
            P[i * N + j] /= l;
            mb += P[i * N + j] * Sd[i * N + j];
        }
        for (int64_t j = 0; j < N; ++j) {
            const double p = P[i * N + j];
            s1 += p * dOdV[i * N + j];
            s2 += p * (dOdVd[i * N + j] + dOdV[i * N + j] * (Sd[i * N + j] - mb));
            dp += p * dOV[i * N + j];
        }
        mbar[i] = mb;
        sig1[i] = s1;
        sig2[i] = s2;
        dpr[i] = dp;
    }

    DenseGrads g{Tensor({M, d}), Tensor({N, d}), Tensor({N, d}),
                 Tensor({M, d}), Tensor({N, d}), Tensor({N, d})};
    for (int64_t i = 0; i < M; ++i)
        for (int64_t j = 0; j < N; ++j) {
            const double p = P[i * N + j];
            const double nij = Sd[i * N + j] - mbar[i];
            const double b = alpha * (dOdV[i * N + j] - sig1[i]) * p;
            const double w =
                alpha * p *
                (-sig1[i] * Sd[i * N + j] + sig1[i] * mbar[i] + dOdVd[i * N + j] +
                 dOdV[i * N + j] * nij - sig2[i] + dOV[i * N + j] - dpr[i]);
            for (int64_t r = 0; r < d; ++r) {
                g.dqd.at(i * d + r) += b * k.at(j * d + r);
                g.dkd.at(j * d + r) += b * q.at(i * d + r);
                g.dq.at(i * d + r) += b * kd.at(j * d + r) + w * k.at(j * d + r);
                g.dk.at(j * d + r) += b * qd.at(i * d + r) + w * q.at(i * d + r);
                g.dvd.at(j * d + r) += p * d_od.at(i * d + r);
                g.dv.at(j * d + r) += p * (d_o.at(i * d + r) + nij * d_od.at(i * d + r));
            }
        }
    return g;
}

OracleResult autodiff_oracle(const Tensor& q, const Tensor& k, const Tensor& v,
                             const Tensor& qd, const Tensor& kd, const Tensor& vd,
                             const Tensor& d_o, const Tensor& d_od) {
    check_attn_shapes(q, k, v);
    const int64_t M = q.dim(0), d = q.dim(1);
    const double alpha = 1.0 / std::sqrt(static_cast<double>(d));

    Var Q = make_leaf(q), K = make_leaf(k), V = make_leaf(v);
    Var Qd = make_leaf(qd), Kd = make_leaf(kd), Vd = make_leaf(vd);
    set_tangent(Q, Qd);
    set_tangent(K, Kd);
    set_tangent(V, Vd);

    Var S = matmul(Q, K, false, true) * alpha;
    // Row max enters as a constant; softmax is shift-invariant so this leaves
    // values and derivatives untouched.
    Tensor rowmax({M, 1});
    for (int64_t i = 0; i < M; ++i) {
        double m = -1e300;
        for (int64_t j = 0; j < S.value().dim(1); ++j)
            m = std::max(m, S.value().at(i * S.value().dim(1) + j));
        rowmax.at(i) = m;
    }
    Var Z = exp_op(sub(S, make_constant(rowmax)));
    Var L = sum_last(Z);
    Var P = mul(Z, reciprocal_op(L));
    Var O = matmul(P, V);
    if (!O.has_tangent()) throw TvmError("oracle lost its tangent");
    Var Od = O.tangent();

    Var loss = add(sum_all(mul(make_constant(d_o), O)),
                   sum_all(mul(make_constant(d_od), Od)));
    clear_tangent_links({O, Od, loss});
    backward_through(loss);

    OracleResult res{O.value(), Od.value(),
                     {Q.grad(), K.grad(), V.grad(), Qd.grad(), Kd.grad(), Vd.grad()}};
    return res;
}

// ---------------- graph integration ----------------

Var attention_op(const Var& q, const Var& k, const Var& v, const KernelConfig& cfg) {
    const Tensor& qv = q.value();
    if (qv.ndim() != 4) throw TvmError("attention_op expects [B,H,T,dh]");
    const int64_t B = qv.dim(0), H = qv.dim(1), T = qv.dim(2), dh = qv.dim(3);
    if (!(k.value().shape() == qv.shape()) || !(v.value().shape() == qv.shape()))
        throw TvmError("attention_op expects matching Q, K, V shapes");
    const int64_t slices = B * H;
    const int64_t sz = T * dh;

    const bool tang = q.has_tangent() || k.has_tangent() || v.has_tangent();
    auto stats = std::make_shared<std::vector<Stats<double>>>(
        static_cast<size_t>(slices));

    auto run_forward = [&](const double* qp, const double* kp, const double* vp,
                           const double* qdp, const double* kdp, const double* vdp,
                           double* op, double* odp) {
        parallel_for(slices, [&](int64_t s) {
            fused_forward<double>(qp + s * sz, kp + s * sz, vp + s * sz,
                                  qdp ? qdp + s * sz : nullptr,
                                  kdp ? kdp + s * sz : nullptr,
                                  vdp ? vdp + s * sz : nullptr, T, T, dh, op + s * sz,
                                  odp ? odp + s * sz : nullptr,
                                  (*stats)[static_cast<size_t>(s)], cfg);
        });
    };

    auto run_backward = [slices, sz, T, dh, stats, cfg](
                            const Node& nd, const double* dop, const double* dodp,
                            bool with_tangents) {
        const double* qp = nd.parents[0]->value.data();
        const double* kp = nd.parents[1]->value.data();
        const double* vp = nd.parents[2]->value.data();
        const double* qdp = with_tangents ? nd.parents[3]->value.data() : nullptr;
        const double* kdp = with_tangents ? nd.parents[4]->value.data() : nullptr;
        const double* vdp = with_tangents ? nd.parents[5]->value.data() : nullptr;
        const Shape& shp = nd.parents[0]->value.shape();
        std::vector<Tensor> grads;
        for (size_t i = 0; i < 6; ++i) grads.emplace_back(shp);
        parallel_for(slices, [&](int64_t s) {
            backward<double>(qp + s * sz, kp + s * sz, vp + s * sz,
                             qdp ? qdp + s * sz : nullptr, kdp ? kdp + s * sz : nullptr,
                             vdp ? vdp + s * sz : nullptr, T, T, dh,
                             (*stats)[static_cast<size_t>(s)], dop ? dop + s * sz : nullptr,
                             dodp ? dodp + s * sz : nullptr, grads[0].data() + s * sz,
                             grads[1].data() + s * sz, grads[2].data() + s * sz,
                             grads[3].data() + s * sz, grads[4].data() + s * sz,
                             grads[5].data() + s * sz, cfg);
        });
        if (!with_tangents) grads.resize(3);
        return grads;
    };

    if (!tang) {
        Tensor o(qv.shape());
        run_forward(qv.data(), k.value().data(), v.value().data(), nullptr, nullptr,
                    nullptr, o.data(), nullptr);
        auto node = graph_detail::new_node(std::move(o),
                                           {q.ptr(), k.ptr(), v.ptr()}, "attn");
        node->vjp = [run_backward](const Node& nd, const Tensor& g) {
            return run_backward(nd, g.data(), nullptr, false);
        };
        return Var(node);
    }

    auto tangent_of = [](const Var& x) {
        return x.has_tangent() ? x.tangent() : make_constant(Tensor::zeros(x.shape()));
    };
    Var qt = tangent_of(q), kt = tangent_of(k), vt = tangent_of(v);

    Tensor stacked_t({2, B, H, T, dh});
    double* o_ptr = stacked_t.data();
    double* od_ptr = stacked_t.data() + slices * sz;
    run_forward(qv.data(), k.value().data(), v.value().data(), qt.value().data(),
                kt.value().data(), vt.value().data(), o_ptr, od_ptr);

    auto node = graph_detail::new_node(
        std::move(stacked_t),
        {q.ptr(), k.ptr(), v.ptr(), qt.ptr(), kt.ptr(), vt.ptr()}, "attn_jvp");
    const int64_t half = slices * sz;
    node->vjp = [run_backward, half](const Node& nd, const Tensor& g) {
        return run_backward(nd, g.data(), g.data() + half, true);
    };
    Var stacked(node);

    Var o_var = reshape(slice_axis(stacked, 0, 0, 1), {B, H, T, dh});
    Var od_var = reshape(slice_axis(stacked, 0, 1, 1), {B, H, T, dh});
    od_var.node().no_higher_tangent = true;
    od_var.node().op_name = "attn_tangent";
    set_tangent(o_var, od_var);
    return o_var;
}

// ---------------- bench ----------------

namespace {
Tensor random_tensor(Shape s, Rng& rng) {
    Tensor t(std::move(s));
    for (int64_t i = 0; i < t.size(); ++i) t.at(i) = rng.gaussian();
    return t;
}
double now_ms() {
    return std::chrono::duration<double, std::milli>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}
}  // namespace

std::vector<BenchRow> bench(const std::vector<BenchShape>& shapes,
                            int64_t naive_mem_cap_bytes, uint64_t seed) {
    std::vector<BenchRow> rows;
    for (const auto& sh : shapes) {
        const int64_t S = sh.seqlen, d = sh.head_dim, H = sh.heads;
        if (S < 1 || d < 1 || H < 1) throw TvmError("invalid bench shape");
        Rng rng(seed, static_cast<uint64_t>(S * 131 + d));
        Tensor q = random_tensor({S, d}, rng), k = random_tensor({S, d}, rng),
               v = random_tensor({S, d}, rng), qd = random_tensor({S, d}, rng),
               kd = random_tensor({S, d}, rng), vd = random_tensor({S, d}, rng);
        Tensor d_o = random_tensor({S, d}, rng), d_od = random_tensor({S, d}, rng);

        BenchRow row{sh, true, 0, 0, 0, 0, 0};

        // Dense needs ~9 S*S doubles materialized at once.
        const int64_t naive_estimate = 9 * S * S * 8 + 16 * S * d * 8;
        row.naive_ok = naive_estimate <= naive_mem_cap_bytes;

        // Correctness cross-check before timing (single slice is enough;
        // heads reuse the same math).
        KernelConfig cfg;
        AllocTracker fused_tr;
        cfg.tracker = &fused_tr;
        Stats<double> st;
        Tensor o({S, d}), od({S, d});
        fused_tr.on_alloc(2 * S * d * 8);  // outputs held by the fused path
        fused_forward<double>(q.data(), k.data(), v.data(), qd.data(), kd.data(),
                              vd.data(), S, S, d, o.data(), od.data(), st, cfg);
        fused_tr.on_alloc(3 * S * 8);  // cached stats
        Tensor dq({S, d}), dk({S, d}), dv({S, d}), dqd({S, d}), dkd({S, d}), dvd({S, d});
        fused_tr.on_alloc(6 * S * d * 8);
        backward<double>(q.data(), k.data(), v.data(), qd.data(), kd.data(), vd.data(), S,
                         S, d, st, d_o.data(), d_od.data(), dq.data(), dk.data(), dv.data(),
                         dqd.data(), dkd.data(), dvd.data(), cfg);
        row.fused_peak_bytes = fused_tr.peak();

        if (row.naive_ok) {
            AllocTracker naive_tr;
            naive_tr.on_alloc(2 * S * d * 8);
            DenseResult ref = naive_forward(q, k, v, qd, kd, vd, &naive_tr);
            naive_tr.on_alloc(6 * S * d * 8);
            DenseGrads refg = naive_backward(q, k, v, qd, kd, vd, d_o, d_od, &naive_tr);
            row.naive_peak_bytes = naive_tr.peak();
            double err = 0;
            for (int64_t i = 0; i < S * d; ++i) {
                err = std::max(err, std::abs(ref.o.at(i) - o.at(i)));
                err = std::max(err, std::abs(ref.od.at(i) - od.at(i)));
                err = std::max(err, std::abs(refg.dq.at(i) - dq.at(i)));
                err = std::max(err, std::abs(refg.dk.at(i) - dk.at(i)));
                err = std::max(err, std::abs(refg.dv.at(i) - dv.at(i)));
                err = std::max(err, std::abs(refg.dqd.at(i) - dqd.at(i)));
                err = std::max(err, std::abs(refg.dkd.at(i) - dkd.at(i)));
                err = std::max(err, std::abs(refg.dvd.at(i) - dvd.at(i)));
            }
            row.max_abs_err = err;
        }

        // Latency over H heads (same buffers per head; wall time scales).
        const int reps = S <= 1024 ? 3 : 1;
        double best_fused = 1e300;
        for (int rep = 0; rep < reps; ++rep) {
            double t0 = now_ms();
            for (int64_t h = 0; h < H; ++h) {
                Stats<double> sh_st;
                fused_forward<double>(q.data(), k.data(), v.data(), qd.data(), kd.data(),
                                      vd.data(), S, S, d, o.data(), od.data(), sh_st, {});
                backward<double>(q.data(), k.data(), v.data(), qd.data(), kd.data(),
                                 vd.data(), S, S, d, sh_st, d_o.data(), d_od.data(),
                                 dq.data(), dk.data(), dv.data(), dqd.data(), dkd.data(),
                                 dvd.data(), {});
            }
            best_fused = std::min(best_fused, now_ms() - t0);
        }
        row.fused_ms = best_fused;
        if (row.naive_ok) {
            double best_naive = 1e300;
            for (int rep = 0; rep < reps; ++rep) {
                double t0 = now_ms();
                for (int64_t h = 0; h < H; ++h) {
                    naive_forward(q, k, v, qd, kd, vd, nullptr);
                    naive_backward(q, k, v, qd, kd, vd, d_o, d_od, nullptr);
                }
                best_naive = std::min(best_naive, now_ms() - t0);
            }
            row.naive_ms = best_naive;
        }
        rows.push_back(row);
    }
    return rows;
}

void write_bench_csv(std::ostream& os, const std::vector<BenchRow>& rows) {
    os << "H,S,d,latency_ms_fused,latency_ms_naive,peak_bytes_fused,peak_bytes_naive\n";
    for (const auto& r : rows) {
        os << r.shape.heads << "," << r.shape.seqlen << "," << r.shape.head_dim << ","
           << r.fused_ms << ",";
        if (r.naive_ok)
            os << r.naive_ms;
        else
            os << "OOM";
        os << "," << r.fused_peak_bytes << ",";
        if (r.naive_ok)
            os << r.naive_peak_bytes;
        else
            os << "OOM";
        os << "\n";
    }
}

}  // namespace tvm::attn
