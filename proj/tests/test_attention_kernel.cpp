#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "testutil.hpp"
#include "tvm/attention.hpp"
#include "tvm/ops.hpp"

using namespace tvm;
using namespace tvm::attn;
using namespace tvm::test;

namespace {

struct Inputs {
    Tensor q, k, v, qd, kd, vd;
};

Inputs random_inputs(int64_t M, int64_t N, int64_t d, uint64_t seed,
                     double tangent_scale = 1.0) {
    Rng rng(seed);
    Inputs in{randn({M, d}, rng),               randn({N, d}, rng),
              randn({N, d}, rng),               randn({M, d}, rng, tangent_scale),
              randn({N, d}, rng, tangent_scale), randn({N, d}, rng, tangent_scale)};
    return in;
}

struct FusedOut {
    Tensor o, od;
    Stats<double> stats;
};

FusedOut run_fused(const Inputs& in, const KernelConfig& cfg = {}) {
    const int64_t M = in.q.dim(0), N = in.k.dim(0), d = in.q.dim(1);
    FusedOut out{Tensor({M, d}), Tensor({M, d}), {}};
    fused_forward<double>(in.q.data(), in.k.data(), in.v.data(), in.qd.data(),
                          in.kd.data(), in.vd.data(), M, N, d, out.o.data(),
                          out.od.data(), out.stats, cfg);
    return out;
}

DenseGrads run_backward(const Inputs& in, const Stats<double>& st, const Tensor& d_o,
                        const Tensor& d_od, const KernelConfig& cfg = {}) {
    const int64_t M = in.q.dim(0), N = in.k.dim(0), d = in.q.dim(1);
    DenseGrads g{Tensor({M, d}), Tensor({N, d}), Tensor({N, d}),
                 Tensor({M, d}), Tensor({N, d}), Tensor({N, d})};
    backward<double>(in.q.data(), in.k.data(), in.v.data(), in.qd.data(), in.kd.data(),
                     in.vd.data(), M, N, d, st, d_o.data(), d_od.data(), g.dq.data(),
                     g.dk.data(), g.dv.data(), g.dqd.data(), g.dkd.data(), g.dvd.data(),
                     cfg);
    return g;
}

}  // namespace

TEST_CASE("single element: O is the V row and Odot is the Vdot row") {
    Inputs in = random_inputs(1, 1, 4, 42);
    FusedOut f = run_fused(in);
    CHECK(max_abs_diff(f.o, in.v) <= 1e-15);
    CHECK(max_abs_diff(f.od, in.vd) <= 1e-15);
}

TEST_CASE("zero tangents give exactly zero Odot") {
    Inputs in = random_inputs(5, 7, 8, 43);
    in.qd = Tensor::zeros({5, 8});
    in.kd = Tensor::zeros({7, 8});
    in.vd = Tensor::zeros({7, 8});
    FusedOut f = run_fused(in);
    for (int64_t i = 0; i < f.od.size(); ++i) CHECK(f.od.at(i) == 0.0);
}

TEST_CASE("uniform logits average V; sharp logits select the diagonal") {
    Inputs in = random_inputs(3, 5, 4, 44);
    in.q = Tensor::zeros({3, 4});
    FusedOut f = run_fused(in);
    for (int64_t r = 0; r < 4; ++r) {
        double mean = 0;
        for (int64_t j = 0; j < 5; ++j) mean += in.v.at(j * 4 + r);
        mean /= 5;
        CHECK(f.o.at(r) == doctest::Approx(mean).epsilon(1e-12));
    }

    const int64_t n = 4, d = 4;
    Rng rng(45);
    Tensor q({n, d});
    for (int64_t i = 0; i < n; ++i)
        for (int64_t r = 0; r < d; ++r) q.at(i * d + r) = (i == r ? 30.0 : 0.0);
    Inputs sharp{q, q, randn({n, d}, rng), Tensor::zeros({n, d}), Tensor::zeros({n, d}),
                 Tensor::zeros({n, d})};
    FusedOut fs = run_fused(sharp);
    for (int64_t i = 0; i < n; ++i)
        for (int64_t r = 0; r < d; ++r)
            CHECK(fs.o.at(i * d + r) ==
                  doctest::Approx(sharp.v.at(i * d + r)).epsilon(1e-3));
}

TEST_CASE("fused forward matches the dense reference on 50 random instances") {
    Rng shapes(46);
    double worst = 0;
    for (int trial = 0; trial < 50; ++trial) {
        int64_t M = 1 + shapes.uniform_int(24);
        int64_t N = 1 + shapes.uniform_int(24);
        int64_t d = 1 + shapes.uniform_int(12);
        Inputs in = random_inputs(M, N, d, 1000 + static_cast<uint64_t>(trial));
        FusedOut f = run_fused(in);
        DenseResult ref = naive_forward(in.q, in.k, in.v, in.qd, in.kd, in.vd);
        worst = std::max(worst, max_abs_diff(f.o, ref.o));
        worst = std::max(worst, max_abs_diff(f.od, ref.od));
    }
    CHECK(worst <= 1e-12);
}

TEST_CASE("fused forward is invariant to tile sizes") {
    Inputs in = random_inputs(37, 23, 8, 47);
    FusedOut base = run_fused(in, {37, 23, nullptr});
    for (auto [tm, tn] : {std::pair<int64_t, int64_t>{1, 1}, {4, 8}, {32, 32}, {64, 5}}) {
        FusedOut f = run_fused(in, {tm, tn, nullptr});
        CHECK(max_abs_diff(base.o, f.o) <= 1e-13);
        CHECK(max_abs_diff(base.od, f.od) <= 1e-13);
    }
}

TEST_CASE("tangent path is linear in the tangents") {
    Inputs in = random_inputs(9, 11, 8, 48);
    FusedOut f1 = run_fused(in);
    const double c = -2.75;
    Inputs scaled = in;
    for (Tensor* t : {&scaled.qd, &scaled.kd, &scaled.vd})
        for (int64_t i = 0; i < t->size(); ++i) t->at(i) *= c;
    FusedOut f2 = run_fused(scaled);
    double worst = 0;
    for (int64_t i = 0; i < f1.od.size(); ++i)
        worst = std::max(worst, std::abs(f2.od.at(i) - c * f1.od.at(i)));
    CHECK(worst <= 1e-12);
    CHECK(max_abs_diff(f1.o, f2.o) == 0.0);
}

TEST_CASE("stats cache exactly three values per Q row, with positive normalizers") {
    Inputs in = random_inputs(13, 6, 4, 49);
    FusedOut f = run_fused(in);
    CHECK(f.stats.lse.size() == 13);
    CHECK(f.stats.rowsum.size() == 13);
    CHECK(f.stats.mu.size() == 13);
    for (double l : f.stats.rowsum) CHECK(l > 0.0);
}

TEST_CASE("kernel rejects bad inputs") {
    Inputs in = random_inputs(2, 2, 4, 50);
    Stats<double> st;
    Tensor o({2, 4}), od({2, 4});
    CHECK_THROWS_AS(fused_forward<double>(in.q.data(), in.k.data(), in.v.data(), nullptr,
                                          nullptr, nullptr, 0, 2, 4, o.data(), od.data(),
                                          st, {}),
                    TvmError);
    Tensor bad = in.q;
    bad.at(0) = std::nan("");
    CHECK_THROWS_AS(fused_forward<double>(bad.data(), in.k.data(), in.v.data(), nullptr,
                                          nullptr, nullptr, 2, 2, 4, o.data(), od.data(),
                                          st, {}),
                    TvmError);
    FusedOut f = run_fused(in);
    Stats<double> wrong = f.stats;
    wrong.mu.pop_back();
    Tensor g0 = Tensor::zeros({2, 4});
    DenseGrads g{Tensor({2, 4}), Tensor({2, 4}), Tensor({2, 4}),
                 Tensor({2, 4}), Tensor({2, 4}), Tensor({2, 4})};
    CHECK_THROWS_AS(
        backward<double>(in.q.data(), in.k.data(), in.v.data(), in.qd.data(), in.kd.data(),
                         in.vd.data(), 2, 2, 4, wrong, g0.data(), g0.data(), g.dq.data(),
                         g.dk.data(), g.dv.data(), g.dqd.data(), g.dkd.data(), g.dvd.data(),
                         {}),
        TvmError);
}

TEST_CASE("backward matches the autodiff oracle on random instances") {
    Rng shapes(51);
    double worst = 0;
    for (int trial = 0; trial < 30; ++trial) {
        int64_t M = 1 + shapes.uniform_int(12);
        int64_t N = 1 + shapes.uniform_int(16);
        if (trial % 3 == 0) N = M;
        int64_t d = 1 + shapes.uniform_int(8);
        Inputs in = random_inputs(M, N, d, 2000 + static_cast<uint64_t>(trial));
        if (trial % 5 == 0) {
            in.qd = Tensor::zeros({M, d});
            in.kd = Tensor::zeros({N, d});
            in.vd = Tensor::zeros({N, d});
        }
        Rng gr(3000 + static_cast<uint64_t>(trial));
        Tensor d_o = randn({M, d}, gr), d_od = randn({M, d}, gr);

        FusedOut f = run_fused(in);
        DenseGrads kg = run_backward(in, f.stats, d_o, d_od);
        OracleResult oracle =
            autodiff_oracle(in.q, in.k, in.v, in.qd, in.kd, in.vd, d_o, d_od);

        worst = std::max(worst, max_abs_diff(f.o, oracle.o));
        worst = std::max(worst, max_abs_diff(f.od, oracle.od));
        worst = std::max(worst, max_abs_diff(kg.dq, oracle.grads.dq));
        worst = std::max(worst, max_abs_diff(kg.dk, oracle.grads.dk));
        worst = std::max(worst, max_abs_diff(kg.dv, oracle.grads.dv));
        worst = std::max(worst, max_abs_diff(kg.dqd, oracle.grads.dqd));
        worst = std::max(worst, max_abs_diff(kg.dkd, oracle.grads.dkd));
        worst = std::max(worst, max_abs_diff(kg.dvd, oracle.grads.dvd));

        DenseGrads dg = naive_backward(in.q, in.k, in.v, in.qd, in.kd, in.vd, d_o, d_od);
        worst = std::max(worst, max_abs_diff(dg.dq, oracle.grads.dq));
        worst = std::max(worst, max_abs_diff(dg.dkd, oracle.grads.dkd));
    }
    CHECK(worst <= 1e-10);
}

TEST_CASE("zero dOdot and zero tangents reduce to standard attention backward") {
    Inputs in = random_inputs(6, 9, 4, 52);
    in.qd = Tensor::zeros({6, 4});
    in.kd = Tensor::zeros({9, 4});
    in.vd = Tensor::zeros({9, 4});
    Rng gr(53);
    Tensor d_o = randn({6, 4}, gr);
    Tensor d_od = Tensor::zeros({6, 4});

    FusedOut f = run_fused(in);
    DenseGrads kg = run_backward(in, f.stats, d_o, d_od);
    for (int64_t i = 0; i < kg.dqd.size(); ++i) CHECK(kg.dqd.at(i) == 0.0);
    for (int64_t i = 0; i < kg.dkd.size(); ++i) CHECK(kg.dkd.at(i) == 0.0);
    for (int64_t i = 0; i < kg.dvd.size(); ++i) CHECK(kg.dvd.at(i) == 0.0);

    Var Q = make_leaf(in.q), K = make_leaf(in.k), V = make_leaf(in.v);
    const double alpha = 0.5;  // 1/sqrt(4)
    Var S = matmul(Q, K, false, true) * alpha;
    Var Z = exp_op(S);
    Var P = mul(Z, reciprocal_op(sum_last(Z)));
    Var O = matmul(P, V);
    backward_through(sum_all(mul(make_constant(d_o), O)));
    CHECK(max_abs_diff(kg.dq, Q.grad()) <= 1e-10);
    CHECK(max_abs_diff(kg.dk, K.grad()) <= 1e-10);
    CHECK(max_abs_diff(kg.dv, V.grad()) <= 1e-10);
}

TEST_CASE("M=N=1 backward: dVdot equals dOdot and dV collapses per the row formula") {
    Inputs in = random_inputs(1, 1, 4, 54);
    Rng gr(55);
    Tensor d_o = randn({1, 4}, gr), d_od = randn({1, 4}, gr);
    FusedOut f = run_fused(in);
    DenseGrads kg = run_backward(in, f.stats, d_o, d_od);
    CHECK(max_abs_diff(kg.dvd, d_od) <= 1e-15);
    // With one key, P = 1 and N11 = a*Sd11 - mu/l = 0, so dV = dO exactly.
    CHECK(max_abs_diff(kg.dv, d_o) <= 1e-15);
}

TEST_CASE("six-step decomposition matches the assembled backward") {
    Inputs in = random_inputs(7, 5, 8, 56);
    Rng gr(57);
    Tensor d_o = randn({7, 8}, gr), d_od = randn({7, 8}, gr);
    FusedOut f = run_fused(in);
    OracleResult oracle = autodiff_oracle(in.q, in.k, in.v, in.qd, in.kd, in.vd, d_o, d_od);

    const int64_t M = 7, N = 5, d = 8;
    std::vector<double> s1(M), s2(M), dp(M);
    backward_step1<double>(in.q.data(), in.k.data(), in.v.data(), in.qd.data(),
                           in.kd.data(), in.vd.data(), M, N, d, f.stats, d_o.data(),
                           d_od.data(), s1.data(), s2.data(), dp.data(), {});
    Tensor dk1({N, d}), dkd({N, d}), dq1({M, d}), dqd({M, d});
    backward_step2<double>(in.q.data(), in.k.data(), in.v.data(), in.qd.data(),
                           in.kd.data(), in.vd.data(), M, N, d, f.stats, d_od.data(),
                           s1.data(), dk1.data(), dkd.data(), {});
    backward_step3<double>(in.q.data(), in.k.data(), in.v.data(), in.qd.data(),
                           in.kd.data(), in.vd.data(), M, N, d, f.stats, d_od.data(),
                           s1.data(), dq1.data(), dqd.data(), {});
    CHECK(max_abs_diff(dkd, oracle.grads.dkd) <= 1e-10);
    CHECK(max_abs_diff(dqd, oracle.grads.dqd) <= 1e-10);

    Tensor dk2({N, d}), dq2({M, d});
    backward_step4<double>(in.q.data(), in.k.data(), in.v.data(), in.qd.data(),
                           in.kd.data(), in.vd.data(), M, N, d, f.stats, d_o.data(),
                           d_od.data(), s1.data(), s2.data(), dp.data(), dk2.data(), {});
    backward_step5<double>(in.q.data(), in.k.data(), in.v.data(), in.qd.data(),
                           in.kd.data(), in.vd.data(), M, N, d, f.stats, d_o.data(),
                           d_od.data(), s1.data(), s2.data(), dp.data(), dq2.data(), {});
    Tensor dk_sum({N, d}), dq_sum({M, d});
    for (int64_t i = 0; i < N * d; ++i) dk_sum.at(i) = dk1.at(i) + dk2.at(i);
    for (int64_t i = 0; i < M * d; ++i) dq_sum.at(i) = dq1.at(i) + dq2.at(i);
    CHECK(max_abs_diff(dk_sum, oracle.grads.dk) <= 1e-10);
    CHECK(max_abs_diff(dq_sum, oracle.grads.dq) <= 1e-10);

    Tensor dv({N, d}), dvd({N, d});
    backward_step6<double>(in.q.data(), in.k.data(), in.v.data(), in.qd.data(),
                           in.kd.data(), in.vd.data(), M, N, d, f.stats, d_o.data(),
                           d_od.data(), dv.data(), dvd.data(), {});
    CHECK(max_abs_diff(dv, oracle.grads.dv) <= 1e-10);
    CHECK(max_abs_diff(dvd, oracle.grads.dvd) <= 1e-10);
}

TEST_CASE("fused path never allocates proportional to M*N") {
    const int64_t M = 64, d = 8;
    auto peak_for = [&](int64_t N) {
        Inputs in = random_inputs(M, N, d, 58);
        AllocTracker tr;
        KernelConfig cfg{16, 16, &tr};
        FusedOut f{Tensor({M, d}), Tensor({M, d}), {}};
        fused_forward<double>(in.q.data(), in.k.data(), in.v.data(), in.qd.data(),
                              in.kd.data(), in.vd.data(), M, N, d, f.o.data(), f.od.data(),
                              f.stats, cfg);
        Rng gr(59);
        Tensor d_o = randn({M, d}, gr), d_od = randn({M, d}, gr);
        DenseGrads g{Tensor({M, d}), Tensor({N, d}), Tensor({N, d}),
                     Tensor({M, d}), Tensor({N, d}), Tensor({N, d})};
        backward<double>(in.q.data(), in.k.data(), in.v.data(), in.qd.data(), in.kd.data(),
                         in.vd.data(), M, N, d, f.stats, d_o.data(), d_od.data(),
                         g.dq.data(), g.dk.data(), g.dv.data(), g.dqd.data(), g.dkd.data(),
                         g.dvd.data(), cfg);
        return tr.peak();
    };
    int64_t p1 = peak_for(256), p2 = peak_for(512), p3 = peak_for(1024);
    CHECK(p1 == p2);
    CHECK(p2 == p3);
    CHECK(p1 < 256 * 1024 * static_cast<int64_t>(sizeof(double)));
}

TEST_CASE("single-precision kernel stays within 1e-4 relative of the double oracle") {
    Inputs in = random_inputs(12, 10, 8, 60);
    DenseResult ref = naive_forward(in.q, in.k, in.v, in.qd, in.kd, in.vd);

    const int64_t M = 12, N = 10, d = 8;
    std::vector<float> qf(M * d), kf(N * d), vf(N * d), qdf(M * d), kdf(N * d), vdf(N * d);
    for (int64_t i = 0; i < M * d; ++i) {
        qf[i] = static_cast<float>(in.q.at(i));
        qdf[i] = static_cast<float>(in.qd.at(i));
    }
    for (int64_t i = 0; i < N * d; ++i) {
        kf[i] = static_cast<float>(in.k.at(i));
        vf[i] = static_cast<float>(in.v.at(i));
        kdf[i] = static_cast<float>(in.kd.at(i));
        vdf[i] = static_cast<float>(in.vd.at(i));
    }
    std::vector<float> of(M * d), odf(M * d);
    Stats<float> st;
    fused_forward<float>(qf.data(), kf.data(), vf.data(), qdf.data(), kdf.data(),
                         vdf.data(), M, N, d, of.data(), odf.data(), st, {});
    double worst = 0;
    for (int64_t i = 0; i < M * d; ++i) {
        double den = std::max(std::abs(ref.o.at(i)), 1.0);
        worst = std::max(worst, std::abs(of[i] - ref.o.at(i)) / den);
        den = std::max(std::abs(ref.od.at(i)), 1.0);
        worst = std::max(worst, std::abs(odf[i] - ref.od.at(i)) / den);
    }
    CHECK(worst <= 1e-4);
}

TEST_CASE("attention graph op: forward, jvp tangent, and reverse all route the kernel") {
    Rng rng(61);
    const int64_t B = 2, H = 2, T = 5, dh = 4;
    Tensor q = randn({B, H, T, dh}, rng), k = randn({B, H, T, dh}, rng),
           v = randn({B, H, T, dh}, rng);
    Tensor qd = randn({B, H, T, dh}, rng), kd = randn({B, H, T, dh}, rng),
           vd = randn({B, H, T, dh}, rng);

    Var Q = make_leaf(q), K = make_leaf(k), V = make_leaf(v);
    Var Qd = make_leaf(qd), Kd = make_leaf(kd), Vd = make_leaf(vd);
    set_tangent(Q, Qd);
    set_tangent(K, Kd);
    set_tangent(V, Vd);
    Var O = attention_op(Q, K, V);
    REQUIRE(O.has_tangent());
    Var Od = O.tangent();
    clear_tangent_links({O, Od});

    auto slice_of = [&](const Tensor& t, int64_t s) {
        Tensor out({T, dh});
        for (int64_t i = 0; i < T * dh; ++i) out.at(i) = t.at(s * T * dh + i);
        return out;
    };

    double worst = 0;
    for (int64_t s = 0; s < B * H; ++s) {
        DenseResult ref =
            naive_forward(slice_of(q, s), slice_of(k, s), slice_of(v, s), slice_of(qd, s),
                          slice_of(kd, s), slice_of(vd, s));
        for (int64_t i = 0; i < T * dh; ++i) {
            worst = std::max(worst, std::abs(ref.o.at(i) - O.value().at(s * T * dh + i)));
            worst = std::max(worst, std::abs(ref.od.at(i) - Od.value().at(s * T * dh + i)));
        }
    }
    CHECK(worst <= 1e-12);

    Rng gr(62);
    Tensor go = randn({B, H, T, dh}, gr), god = randn({B, H, T, dh}, gr);
    Var loss = add(sum_all(mul(make_constant(go), O)), sum_all(mul(make_constant(god), Od)));
    backward_through(loss);
    double gworst = 0;
    for (int64_t s = 0; s < B * H; ++s) {
        OracleResult ref = autodiff_oracle(slice_of(q, s), slice_of(k, s), slice_of(v, s),
                                           slice_of(qd, s), slice_of(kd, s),
                                           slice_of(vd, s), slice_of(go, s),
                                           slice_of(god, s));
        for (int64_t i = 0; i < T * dh; ++i) {
            gworst = std::max(gworst,
                              std::abs(ref.grads.dq.at(i) - Q.grad().at(s * T * dh + i)));
            gworst = std::max(gworst,
                              std::abs(ref.grads.dkd.at(i) - Kd.grad().at(s * T * dh + i)));
            gworst = std::max(gworst,
                              std::abs(ref.grads.dvd.at(i) - Vd.grad().at(s * T * dh + i)));
        }
    }
    CHECK(gworst <= 1e-10);
}

TEST_CASE("consuming the fused tangent inside another jvp region is rejected") {
    Rng rng(63);
    Tensor q = randn({1, 1, 2, 4}, rng);
    Var Q = make_leaf(q), K = make_leaf(q), V = make_leaf(q);
    set_tangent(Q, make_constant(Tensor::zeros(q.shape())));
    Var O = attention_op(Q, K, V);
    Var Od = O.tangent();
    Var carrier = make_constant(Tensor::zeros(q.shape()));
    set_tangent(carrier, make_constant(Tensor::zeros(q.shape())));
    CHECK_THROWS_AS(mul(Od, carrier), UnregisteredJvpError);
    clear_tangent_links({O, Od, carrier});
}

TEST_CASE("bench: naive peak memory grows quadratically, fused near-linearly") {
    std::vector<BenchShape> shapes{{1, 256, 16}, {1, 512, 16}, {1, 1024, 16}};
    auto rows = bench(shapes, 1LL << 30, 7);
    REQUIRE(rows.size() == 3);
    for (const auto& r : rows) {
        CHECK(r.naive_ok);
        CHECK(r.max_abs_err <= 1e-12);
    }
    double naive_ratio = static_cast<double>(rows[2].naive_peak_bytes) /
                         static_cast<double>(rows[1].naive_peak_bytes);
    double fused_ratio = static_cast<double>(rows[2].fused_peak_bytes) /
                         static_cast<double>(rows[1].fused_peak_bytes);
    CHECK(naive_ratio >= 3.5);
    CHECK(fused_ratio <= 2.2);

    auto capped = bench({{1, 2048, 16}}, 1 << 20, 7);
    CHECK(!capped[0].naive_ok);
}
