#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "testutil.hpp"
#include "tvm/graph.hpp"
#include "tvm/ops.hpp"
#include "tvm/param_store.hpp"
#include "tvm/rng.hpp"

using namespace tvm;
using namespace tvm::test;

TEST_CASE("tensor basics and broadcasting") {
    Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor b({3}, {10, 20, 30});
    Tensor c = broadcast_binary(a, b, [](double x, double y) { return x + y; });
    CHECK(c.shape() == Shape{2, 3});
    CHECK(c.at(0) == 11);
    CHECK(c.at(5) == 36);

    Tensor g({2, 3}, {1, 1, 1, 1, 1, 1});
    Tensor r = reduce_to_shape(g, {3});
    CHECK(r.at(0) == 2);
    CHECK(r.at(2) == 2);
    Tensor r2 = reduce_to_shape(g, {});
    CHECK(r2.item() == 6);

    CHECK_THROWS_AS(broadcast_shape({2, 3}, {4}), TvmError);
    CHECK_THROWS_AS(Tensor({2, 2}, {1.0}), TvmError);
}

TEST_CASE("norm_ppf inverts norm_cdf") {
    for (double p : {1e-9, 1e-4, 0.02, 0.3, 0.5, 0.77, 0.999, 1 - 1e-9}) {
        double x = norm_ppf(p);
        CHECK(std::abs(norm_cdf(x) - p) < 1e-13);
    }
    CHECK(norm_ppf(0.5) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("jvp squares: f(x)=x^2 at 3 gives primal 9 tangent 6") {
    auto f = [](const std::vector<Var>& in) { return mul(in[0], in[0]); };
    auto [p, t] = jvp(f, {Tensor::scalar(3.0)}, {Tensor::scalar(1.0)});
    CHECK(p.value().item() == doctest::Approx(9.0));
    CHECK(t.value().item() == doctest::Approx(6.0));
}

TEST_CASE("reverse through jvp tangent: f(x)=x^3 gives d/dx(3x^2) = 6x") {
    Var x = make_leaf(Tensor::scalar(2.0));
    set_tangent(x, make_constant(Tensor::scalar(1.0)));
    Var y = mul(mul(x, x), x);
    REQUIRE(y.has_tangent());
    Var t = y.tangent();  // 3x^2
    clear_tangent_links({y, t});
    CHECK(t.value().item() == doctest::Approx(12.0));
    backward_through(sum_all(t));
    CHECK(x.grad().item() == doctest::Approx(12.0));

    // Cross-check with central differences of g(x) = 3x^2 at x = 2.
    auto g = [](double xv) { return 3.0 * xv * xv; };
    double fd = (g(2.0 + 1e-6) - g(2.0 - 1e-6)) / 2e-6;
    CHECK(x.grad().item() == doctest::Approx(fd).epsilon(1e-6));
}

TEST_CASE("jvp of a two-layer MLP matches central finite differences") {
    Rng rng(7);
    Tensor w1 = randn({8, 4}, rng, 0.5), b1 = randn({8}, rng, 0.1);
    Tensor w2 = randn({3, 8}, rng, 0.5);
    auto f = [&](const std::vector<Var>& in) {
        Var h = silu(add(matmul(in[0], make_constant(w1), false, true), make_constant(b1)));
        return matmul(h, make_constant(w2), false, true);
    };
    Tensor x = randn({2, 4}, rng);
    Tensor dir = randn({2, 4}, rng);
    CHECK(check_jvp_vs_fd(f, {x}, {dir}) <= 1e-6);
}

TEST_CASE("jvp rejects mismatched tangents and counts") {
    auto f = [](const std::vector<Var>& in) { return in[0]; };
    CHECK_THROWS_AS(jvp(f, {Tensor::scalar(1.0)}, {}), TvmError);
    CHECK_THROWS_AS(jvp(f, {Tensor::scalar(1.0)}, {Tensor({2}, {1, 1})}), TvmError);
}

TEST_CASE("backward: sum of squares gives 2w") {
    Var w = make_leaf(Tensor({2}, {1, 2}));
    Var loss = sum_all(mul(w, w));
    backward_through(loss);
    CHECK(w.grad().at(0) == doctest::Approx(2.0));
    CHECK(w.grad().at(1) == doctest::Approx(4.0));
}

TEST_CASE("backward rejects non-scalar loss") {
    Var w = make_leaf(Tensor({2}, {1, 2}));
    CHECK_THROWS_AS(backward_through(mul(w, w)), TvmError);
}

TEST_CASE("stop_grad blocks reverse and tangent") {
    SUBCASE("backward(stop_grad(x)*x) = x, not 2x") {
        Var x = make_leaf(Tensor::scalar(3.0));
        Var loss = mul(stop_grad(x), x);
        backward_through(loss);
        CHECK(x.grad().item() == doctest::Approx(3.0));
    }
    SUBCASE("tangent of stop_grad is dropped") {
        Var x = make_leaf(Tensor::scalar(2.0));
        set_tangent(x, make_constant(Tensor::scalar(1.0)));
        Var y = stop_grad(x);
        CHECK(!y.has_tangent());
        Var z = mul(y, x);  // tangent = y * dx = 2
        REQUIRE(z.has_tangent());
        CHECK(z.tangent().value().item() == doctest::Approx(2.0));
        clear_tangent_links({z});
    }
    SUBCASE("constant through stop_grad keeps value, no grad path") {
        Var c = make_constant(Tensor::scalar(5.0));
        Var y = stop_grad(c);
        CHECK(y.value().item() == 5.0);
        CHECK(!y.node().requires_grad);
    }
}

TEST_CASE("per-op reverse gradients match finite differences") {
    Rng xr(13);
    Tensor x_pos = randn({5}, xr);
    for (int64_t i = 0; i < x_pos.size(); ++i) x_pos.at(i) = std::abs(x_pos.at(i)) + 0.5;
    Tensor x_any = randn({5}, xr);
    Tensor x_mat = randn({3, 4}, xr);
    Tensor w_mat = randn({5, 4}, xr);
    Tensor x_3d = randn({2, 3, 4}, xr);
    Tensor mod = randn({2, 1, 4}, xr);

    auto run = [&](const char* name, const std::function<Var(const Var&)>& f,
                   const Tensor& x0) {
        INFO(name);
        CHECK(check_grad_vs_fd(f, x0) <= 1e-6);
    };

    run("exp", [](const Var& x) { return sum_all(exp_op(x)); }, x_any);
    run("log", [](const Var& x) { return sum_all(log_op(x)); }, x_pos);
    run("sin", [](const Var& x) { return sum_all(sin_op(x)); }, x_any);
    run("cos", [](const Var& x) { return sum_all(cos_op(x)); }, x_any);
    run("sqrt", [](const Var& x) { return sum_all(sqrt_op(x)); }, x_pos);
    run("rsqrt", [](const Var& x) { return sum_all(rsqrt_op(x)); }, x_pos);
    run("reciprocal", [](const Var& x) { return sum_all(reciprocal_op(x)); }, x_pos);
    run("sigmoid", [](const Var& x) { return sum_all(sigmoid_op(x)); }, x_any);
    run("silu", [](const Var& x) { return sum_all(silu(x)); }, x_any);
    run("rmsnorm", [](const Var& x) { return sum_all(rmsnorm_minus(x, 1e-6)); }, x_any);
    run("mean_last",
        [](const Var& x) { return sum_all(mul(mean_last(mul(x, x)), mean_last(x))); }, x_any);
    Tensor c35 = randn({3, 5}, xr), c37 = randn({3, 7}, xr), c64 = randn({6, 4}, xr);
    run("matmul",
        [&](const Var& x) {
            return sum_all(
                mul(matmul(x, make_constant(w_mat), false, true), make_constant(c35)));
        },
        x_mat);
    run("matmul_ta",
        [&](const Var& x) { return sum_all(matmul(x, make_constant(c37), true, false)); },
        x_mat);
    run("matmul_tb",
        [&](const Var& x) { return sum_all(matmul(make_constant(c64), x, false, true)); },
        x_mat);
    run("broadcast_mul",
        [&](const Var& x) { return sum_all(mul(x, make_constant(mod))); }, x_3d);
    run("slice_concat",
        [](const Var& x) {
            Var a = slice_axis(x, -1, 0, 2);
            Var b = slice_axis(x, -1, 2, 2);
            return sum_all(mul(concat({b, a}, -1), concat({a, b}, -1)));
        },
        x_3d);
    run("heads",
        [](const Var& x) {
            Var s = split_heads(x, 2);
            return sum_all(mul(merge_heads(s), merge_heads(s)));
        },
        x_3d);
    run("gather",
        [](const Var& x) {
            Var g = gather_rows(reshape(x, {5, 1}), {0, 2, 2, 4});
            return sum_all(mul(g, g));
        },
        x_any);
}

TEST_CASE("per-op jvp tangents match finite differences") {
    Rng xr(17);
    Tensor x_pos = randn({6}, xr);
    for (int64_t i = 0; i < x_pos.size(); ++i) x_pos.at(i) = std::abs(x_pos.at(i)) + 0.5;
    Tensor dir_pos = randn({6}, xr, 0.3);
    Tensor x_mat = randn({3, 4}, xr);
    Tensor dir_mat = randn({3, 4}, xr);
    Tensor w_mat = randn({5, 4}, xr);

    auto run = [&](const char* name, const std::function<Var(const std::vector<Var>&)>& f,
                   const Tensor& x0, const Tensor& dir) {
        INFO(name);
        CHECK(check_jvp_vs_fd(f, {x0}, {dir}) <= 1e-6);
    };

    run("exp", [](const std::vector<Var>& in) { return exp_op(in[0]); }, x_pos, dir_pos);
    run("log", [](const std::vector<Var>& in) { return log_op(in[0]); }, x_pos, dir_pos);
    run("sin", [](const std::vector<Var>& in) { return sin_op(in[0]); }, x_pos, dir_pos);
    run("cos", [](const std::vector<Var>& in) { return cos_op(in[0]); }, x_pos, dir_pos);
    run("sqrt", [](const std::vector<Var>& in) { return sqrt_op(in[0]); }, x_pos, dir_pos);
    run("rsqrt", [](const std::vector<Var>& in) { return rsqrt_op(in[0]); }, x_pos, dir_pos);
    run("sigmoid", [](const std::vector<Var>& in) { return sigmoid_op(in[0]); }, x_pos,
        dir_pos);
    run("silu", [](const std::vector<Var>& in) { return silu(in[0]); }, x_pos, dir_pos);
    run("rmsnorm", [](const std::vector<Var>& in) { return rmsnorm_minus(in[0], 1e-6); },
        x_pos, dir_pos);
    run("matmul",
        [&](const std::vector<Var>& in) {
            return matmul(in[0], make_constant(w_mat), false, true);
        },
        x_mat, dir_mat);
    run("reductions",
        [](const std::vector<Var>& in) {
            return add(mean_last(mul(in[0], in[0])), sum_last(in[0]));
        },
        x_mat, dir_mat);
}

TEST_CASE("forward-over-reverse consistency: grad of |tangent|^2 matches FD") {
    // g(theta) = ||d/ds f(theta, s)||^2 with f = MLP over (x*s); gradient of g
    // w.r.t. theta must match finite differences of g.
    Rng rng(23);
    Tensor w1 = randn({6, 3}, rng, 0.6);
    Tensor w2 = randn({3, 6}, rng, 0.6);
    Tensor x0 = randn({1, 3}, rng);
    const double s0 = 0.37;

    auto g_of = [&](const Tensor& w1t, const Tensor& w2t) {
        Var w1v = make_leaf(w1t), w2v = make_leaf(w2t);
        auto f = [&](const std::vector<Var>& in) {
            Var xs = mul(make_constant(x0), in[0]);
            Var h = silu(matmul(xs, w1v, false, true));
            return matmul(h, w2v, false, true);
        };
        auto [primal, tang] = jvp(f, {Tensor::scalar(s0)}, {Tensor::scalar(1.0)});
        (void)primal;
        Var g = sum_all(mul(tang, tang));
        return std::make_tuple(g, w1v, w2v);
    };

    auto [g, w1v, w2v] = g_of(w1, w2);
    backward_through(g);
    Tensor g1 = w1v.grad(), g2 = w2v.grad();

    auto eval_g = [&](const Tensor& a, const Tensor& b) {
        auto [gg, u1, u2] = g_of(a, b);
        (void)u1;
        (void)u2;
        return gg.value().item();
    };
    std::vector<double> flat1(w1.data(), w1.data() + w1.size());
    auto fd1 = finite_diff(
        [&](const std::vector<double>& f1) { return eval_g(Tensor(w1.shape(), f1), w2); },
        flat1, 1e-5);
    std::vector<double> flat2(w2.data(), w2.data() + w2.size());
    auto fd2 = finite_diff(
        [&](const std::vector<double>& f2) { return eval_g(w1, Tensor(w2.shape(), f2)); },
        flat2, 1e-5);
    CHECK(max_rel_diff(g1, Tensor(w1.shape(), fd1), 1e-4) <= 1e-4);
    CHECK(max_rel_diff(g2, Tensor(w2.shape(), fd2), 1e-4) <= 1e-4);
}

TEST_CASE("ParamStore: duplicate paths, grads aligned, zero for unreached") {
    ParamStore ps;
    ps.add("a", Tensor({2}, {1, 2}));
    ps.add("b", Tensor({2}, {3, 4}));
    CHECK_THROWS_AS(ps.add("a", Tensor({1}, {0})), TvmError);

    GraphParams gp(ps, true);
    Var loss = sum_all(mul(gp["a"], gp["a"]));
    GradMap gm = backward(loss, gp);
    REQUIRE(gm.size() == 2);
    CHECK(gm[0].first == "a");
    CHECK(gm[0].second.at(1) == doctest::Approx(4.0));
    CHECK(gm[1].first == "b");
    CHECK(gm[1].second.at(0) == 0.0);
}

TEST_CASE("ParamStore checkpoint round-trips bit-exactly") {
    ParamStore ps;
    Rng rng(3);
    ps.add("layer.w", randn({3, 4}, rng));
    ps.add("layer.b", randn({4}, rng));
    std::string path = "/tmp/tvm_test_params.bin";
    ps.save(path);
    ParamStore ps2 = ParamStore::load(path);
    CHECK(ps2.same_structure(ps));
    CHECK(max_abs_diff(ps2.at("layer.w"), ps.at("layer.w")) == 0.0);

    // Truncated file must fail without partial state.
    FILE* f = fopen(path.c_str(), "rb");
    std::vector<char> buf(40);
    size_t got = fread(buf.data(), 1, buf.size(), f);
    fclose(f);
    f = fopen("/tmp/tvm_test_params_trunc.bin", "wb");
    fwrite(buf.data(), 1, got, f);
    fclose(f);
    CHECK_THROWS_AS(ParamStore::load("/tmp/tvm_test_params_trunc.bin"), TvmError);
}

TEST_CASE("graph evaluation is deterministic given a seed") {
    auto run_once = [] {
        Rng rng(99);
        Tensor w = randn({4, 4}, rng);
        Tensor x = randn({8, 4}, rng);
        Var loss = sum_all(silu(matmul(make_leaf(x), make_leaf(w), false, true)));
        return loss.value().item();
    };
    double a = run_once(), b = run_once();
    CHECK(a == b);  // bit-identical
}
