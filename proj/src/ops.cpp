#include "tvm/ops.hpp"

#include <cmath>
#include <cstring>

namespace tvm {

namespace {

using graph_detail::new_node;

// While a primitive's tangent rule runs, nested ops must not spawn their own
// tangents (the rule already expresses the first-order derivative).
thread_local bool g_building_tangent = false;
struct TangentGuard {
    TangentGuard() : prev(g_building_tangent) { g_building_tangent = true; }
    ~TangentGuard() { g_building_tangent = prev; }
    bool prev;
};

// Checks whether an op invoked on these parents must build a tangent, and
// rejects parents whose tangent is undefined (no_higher_tangent).
bool wants_tangent(const std::vector<Var>& parents) {
    if (g_building_tangent) return false;
    bool any = false;
    for (const auto& p : parents)
        if (p.defined() && p.has_tangent()) any = true;
    if (any)
        for (const auto& p : parents)
            if (p.defined() && p.node().no_higher_tangent)
                throw UnregisteredJvpError(p.node().op_name);
    return any;
}

std::vector<NodePtr> ptrs(const std::vector<Var>& vs) {
    std::vector<NodePtr> out;
    out.reserve(vs.size());
    for (const auto& v : vs) out.push_back(v.ptr());
    return out;
}

template <typename F>
Tensor map_tensor(const Tensor& x, F&& f) {
    Tensor out(x.shape());
    const double* px = x.data();
    double* po = out.data();
    const int64_t n = x.size();
    for (int64_t i = 0; i < n; ++i) po[i] = f(px[i]);
    return out;
}

Tensor mul_tensors(const Tensor& a, const Tensor& b) {
    return broadcast_binary(a, b, [](double x, double y) { return x * y; });
}

}  // namespace

// ---------------- elementwise binary ----------------

Var add(const Var& a, const Var& b) {
    Tensor v = broadcast_binary(a.value(), b.value(), [](double x, double y) { return x + y; });
    auto n = new_node(std::move(v), ptrs({a, b}), "add");
    n->vjp = [](const Node& nd, const Tensor& g) {
        return std::vector<Tensor>{reduce_to_shape(g, nd.parents[0]->value.shape()),
                                   reduce_to_shape(g, nd.parents[1]->value.shape())};
    };
    Var out(n);
    if (wants_tangent({a, b})) {
        TangentGuard tg;
        if (a.has_tangent() && b.has_tangent())
            set_tangent(out, add(a.tangent(), b.tangent()));
        else {
            Var t = a.has_tangent() ? a.tangent() : b.tangent();
            // Broadcast the lone tangent up to the output shape if needed.
            set_tangent(out, t.shape() == out.shape()
                                 ? t
                                 : add(t, make_constant(Tensor::zeros(out.shape()))));
        }
    }
    return out;
}

Var sub(const Var& a, const Var& b) {
    Tensor v = broadcast_binary(a.value(), b.value(), [](double x, double y) { return x - y; });
    auto n = new_node(std::move(v), ptrs({a, b}), "sub");
    n->vjp = [](const Node& nd, const Tensor& g) {
        Tensor ng = map_tensor(g, [](double x) { return -x; });
        return std::vector<Tensor>{reduce_to_shape(g, nd.parents[0]->value.shape()),
                                   reduce_to_shape(ng, nd.parents[1]->value.shape())};
    };
    Var out(n);
    if (wants_tangent({a, b})) {
        TangentGuard tg;
        if (a.has_tangent() && b.has_tangent())
            set_tangent(out, sub(a.tangent(), b.tangent()));
        else if (a.has_tangent())
            set_tangent(out, a.shape() == out.shape()
                                 ? a.tangent()
                                 : add(a.tangent(), make_constant(Tensor::zeros(out.shape()))));
        else
            set_tangent(out, sub(make_constant(Tensor::zeros(out.shape())), b.tangent()));
    }
    return out;
}

Var mul(const Var& a, const Var& b) {
    Tensor v = mul_tensors(a.value(), b.value());
    auto n = new_node(std::move(v), ptrs({a, b}), "mul");
    n->vjp = [](const Node& nd, const Tensor& g) {
        const Tensor& av = nd.parents[0]->value;
        const Tensor& bv = nd.parents[1]->value;
        return std::vector<Tensor>{reduce_to_shape(mul_tensors(g, bv), av.shape()),
                                   reduce_to_shape(mul_tensors(g, av), bv.shape())};
    };
    Var out(n);
    if (wants_tangent({a, b})) {
        TangentGuard tg;
        Var t;
        if (a.has_tangent()) t = mul(a.tangent(), b);
        if (b.has_tangent()) {
            Var t2 = mul(a, b.tangent());
            t = t.defined() ? add(t, t2) : t2;
        }
        set_tangent(out, t.shape() == out.shape()
                             ? t
                             : add(t, make_constant(Tensor::zeros(out.shape()))));
    }
    return out;
}

Var neg(const Var& x) {
    auto n = new_node(map_tensor(x.value(), [](double v) { return -v; }), ptrs({x}), "neg");
    n->vjp = [](const Node&, const Tensor& g) {
        return std::vector<Tensor>{map_tensor(g, [](double v) { return -v; })};
    };
    Var out(n);
    if (wants_tangent({x})) {
        TangentGuard tg;
        set_tangent(out, neg(x.tangent()));
    }
    return out;
}

Var operator*(const Var& a, double s) {
    auto n = new_node(map_tensor(a.value(), [s](double v) { return v * s; }), ptrs({a}), "scale");
    n->vjp = [s](const Node&, const Tensor& g) {
        return std::vector<Tensor>{map_tensor(g, [s](double v) { return v * s; })};
    };
    Var out(n);
    if (wants_tangent({a})) {
        TangentGuard tg;
        set_tangent(out, a.tangent() * s);
    }
    return out;
}

Var operator+(const Var& a, double s) {
    auto n = new_node(map_tensor(a.value(), [s](double v) { return v + s; }), ptrs({a}), "offset");
    n->vjp = [](const Node&, const Tensor& g) { return std::vector<Tensor>{g}; };
    Var out(n);
    if (wants_tangent({a})) {
        TangentGuard tg;
        set_tangent(out, a.tangent());
    }
    return out;
}

// ---------------- matmul ----------------

Var matmul(const Var& a, const Var& b, bool trans_a, bool trans_b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.ndim() != 2 || bv.ndim() != 2)
        throw TvmError("matmul requires 2-D operands, got " + shape_str(av.shape()) + " x " +
                       shape_str(bv.shape()));
    const int64_t m = trans_a ? av.dim(1) : av.dim(0);
    const int64_t k = trans_a ? av.dim(0) : av.dim(1);
    const int64_t kb = trans_b ? bv.dim(1) : bv.dim(0);
    const int64_t nn = trans_b ? bv.dim(0) : bv.dim(1);
    if (k != kb)
        throw TvmError("matmul inner dims differ: " + shape_str(av.shape()) +
                       (trans_a ? "^T" : "") + " x " + shape_str(bv.shape()) +
                       (trans_b ? "^T" : ""));
    Tensor out({m, nn});
    gemm(trans_a, trans_b, m, nn, k, 1.0, av.data(), av.dim(1), bv.data(), bv.dim(1), 0.0,
         out.data(), nn);
    auto n = new_node(std::move(out), ptrs({a, b}), "matmul");
    n->vjp = [trans_a, trans_b, m, k, nn](const Node& nd, const Tensor& g) {
        const Tensor& A = nd.parents[0]->value;
        const Tensor& B = nd.parents[1]->value;
        Tensor dA(A.shape()), dB(B.shape());
        // dOpA = g . opB^T, dOpB = opA^T . g; un-transpose as needed.
        if (!trans_a) {
            gemm(false, !trans_b, m, k, nn, 1.0, g.data(), nn, B.data(), B.dim(1), 0.0,
                 dA.data(), k);
        } else {
            // dA = opB . g^T  (k x m)
            gemm(trans_b, true, k, m, nn, 1.0, B.data(), B.dim(1), g.data(), nn, 0.0,
                 dA.data(), m);
        }
        if (!trans_b) {
            gemm(!trans_a, false, k, nn, m, 1.0, A.data(), A.dim(1), g.data(), nn, 0.0,
                 dB.data(), nn);
        } else {
            // dB = g^T . opA  (nn x k)
            gemm(true, trans_a, nn, k, m, 1.0, g.data(), nn, A.data(), A.dim(1), 0.0,
                 dB.data(), k);
        }
        return std::vector<Tensor>{std::move(dA), std::move(dB)};
    };
    Var out_v(n);
    if (wants_tangent({a, b})) {
        TangentGuard tg;
        Var t;
        if (a.has_tangent()) t = matmul(a.tangent(), b, trans_a, trans_b);
        if (b.has_tangent()) {
            Var t2 = matmul(a, b.tangent(), trans_a, trans_b);
            t = t.defined() ? add(t, t2) : t2;
        }
        set_tangent(out_v, t);
    }
    return out_v;
}

// ---------------- unary transcendental ----------------

Var exp_op(const Var& x) {
    auto n = new_node(map_tensor(x.value(), [](double v) { return std::exp(v); }), ptrs({x}),
                      "exp");
    n->vjp = [](const Node& nd, const Tensor& g) {
        return std::vector<Tensor>{mul_tensors(g, nd.value)};
    };
    Var out(n);
    if (wants_tangent({x})) {
        TangentGuard tg;
        set_tangent(out, mul(out, x.tangent()));
    }
    return out;
}

Var log_op(const Var& x) {
    auto n = new_node(map_tensor(x.value(), [](double v) { return std::log(v); }), ptrs({x}),
                      "log");
    n->vjp = [](const Node& nd, const Tensor& g) {
        return std::vector<Tensor>{broadcast_binary(g, nd.parents[0]->value,
                                                    [](double gv, double xv) { return gv / xv; })};
    };
    Var out(n);
    if (wants_tangent({x})) {
        TangentGuard tg;
        set_tangent(out, mul(reciprocal_op(x), x.tangent()));
    }
    return out;
}

Var reciprocal_op(const Var& x) {
    auto n = new_node(map_tensor(x.value(), [](double v) { return 1.0 / v; }), ptrs({x}),
                      "reciprocal");
    n->vjp = [](const Node& nd, const Tensor& g) {
        return std::vector<Tensor>{broadcast_binary(
            g, nd.value, [](double gv, double yv) { return -gv * yv * yv; })};
    };
    Var out(n);
    if (wants_tangent({x})) {
        TangentGuard tg;
        set_tangent(out, neg(mul(mul(out, out), x.tangent())));
    }
    return out;
}

Var sin_op(const Var& x) {
    auto n = new_node(map_tensor(x.value(), [](double v) { return std::sin(v); }), ptrs({x}),
                      "sin");
    n->vjp = [](const Node& nd, const Tensor& g) {
        return std::vector<Tensor>{broadcast_binary(
            g, nd.parents[0]->value, [](double gv, double xv) { return gv * std::cos(xv); })};
    };
    Var out(n);
    if (wants_tangent({x})) {
        TangentGuard tg;
        set_tangent(out, mul(cos_op(Var(n->parents[0])), x.tangent()));
    }
    return out;
}

Var cos_op(const Var& x) {
    auto n = new_node(map_tensor(x.value(), [](double v) { return std::cos(v); }), ptrs({x}),
                      "cos");
    n->vjp = [](const Node& nd, const Tensor& g) {
        return std::vector<Tensor>{broadcast_binary(
            g, nd.parents[0]->value, [](double gv, double xv) { return -gv * std::sin(xv); })};
    };
    Var out(n);
    if (wants_tangent({x})) {
        TangentGuard tg;
        set_tangent(out, neg(mul(sin_op(Var(n->parents[0])), x.tangent())));
    }
    return out;
}

Var sqrt_op(const Var& x) {
    auto n = new_node(map_tensor(x.value(), [](double v) { return std::sqrt(v); }), ptrs({x}),
                      "sqrt");
    n->vjp = [](const Node& nd, const Tensor& g) {
        return std::vector<Tensor>{broadcast_binary(
            g, nd.value, [](double gv, double yv) { return 0.5 * gv / yv; })};
    };
    Var out(n);
    if (wants_tangent({x})) {
        TangentGuard tg;
        // d/dx sqrt = 0.5 / sqrt(x)
        Var half_inv = rsqrt_op(x) * 0.5;
        set_tangent(out, mul(half_inv, x.tangent()));
    }
    return out;
}

Var rsqrt_op(const Var& x) {
    auto n = new_node(map_tensor(x.value(), [](double v) { return 1.0 / std::sqrt(v); }),
                      ptrs({x}), "rsqrt");
    n->vjp = [](const Node& nd, const Tensor& g) {
        return std::vector<Tensor>{broadcast_binary(
            g, nd.value, [](double gv, double yv) { return -0.5 * gv * yv * yv * yv; })};
    };
    Var out(n);
    if (wants_tangent({x})) {
        TangentGuard tg;
        Var y3 = mul(mul(out, out), out);
        set_tangent(out, mul(y3 * -0.5, x.tangent()));
    }
    return out;
}

Var sigmoid_op(const Var& x) {
    auto sig = [](double v) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        double e = std::exp(v);
        return e / (1.0 + e);
    };
    auto n = new_node(map_tensor(x.value(), sig), ptrs({x}), "sigmoid");
    n->vjp = [](const Node& nd, const Tensor& g) {
        return std::vector<Tensor>{broadcast_binary(
            g, nd.value, [](double gv, double yv) { return gv * yv * (1.0 - yv); })};
    };
    Var out(n);
    if (wants_tangent({x})) {
        TangentGuard tg;
        Var one_minus = neg(out) + 1.0;
        set_tangent(out, mul(mul(out, one_minus), x.tangent()));
    }
    return out;
}

Var silu(const Var& x) { return mul(x, sigmoid_op(x)); }

// ---------------- reductions ----------------

Var sum_all(const Var& x) {
    double acc = 0.0;
    const double* p = x.value().data();
    for (int64_t i = 0; i < x.value().size(); ++i) acc += p[i];
    auto n = new_node(Tensor::scalar(acc), ptrs({x}), "sum_all");
    n->vjp = [](const Node& nd, const Tensor& g) {
        return std::vector<Tensor>{Tensor::full(nd.parents[0]->value.shape(), g.item())};
    };
    Var out(n);
    if (wants_tangent({x})) {
        TangentGuard tg;
        set_tangent(out, sum_all(x.tangent()));
    }
    return out;
}

Var mean_all(const Var& x) {
    const int64_t cnt = x.value().size();
    if (cnt == 0) throw TvmError("mean_all of empty tensor");
    return sum_all(x) * (1.0 / static_cast<double>(cnt));
}

Var sum_last(const Var& x) {
    const Tensor& xv = x.value();
    if (xv.ndim() < 1) throw TvmError("sum_last needs at least 1 dim");
    const int64_t d = xv.dim(-1);
    const int64_t rows = xv.size() / d;
    Shape os = xv.shape();
    os.back() = 1;
    Tensor out(os);
    const double* px = xv.data();
    double* po = out.data();
    for (int64_t r = 0; r < rows; ++r) {
        double acc = 0.0;
        for (int64_t j = 0; j < d; ++j) acc += px[r * d + j];
        po[r] = acc;
    }
    auto n = new_node(std::move(out), ptrs({x}), "sum_last");
    n->vjp = [d, rows](const Node& nd, const Tensor& g) {
        Tensor dx(nd.parents[0]->value.shape());
        double* pd = dx.data();
        const double* pg = g.data();
        for (int64_t r = 0; r < rows; ++r)
            for (int64_t j = 0; j < d; ++j) pd[r * d + j] = pg[r];
        return std::vector<Tensor>{std::move(dx)};
    };
    Var ov(n);
    if (wants_tangent({x})) {
        TangentGuard tg;
        set_tangent(ov, sum_last(x.tangent()));
    }
    return ov;
}

Var mean_last(const Var& x) {
    const int64_t d = x.value().dim(-1);
    return sum_last(x) * (1.0 / static_cast<double>(d));
}

// ---------------- structural ----------------

Var reshape(const Var& x, Shape s) {
    Tensor v = x.value().reshaped(s);
    auto n = new_node(std::move(v), ptrs({x}), "reshape");
    n->vjp = [](const Node& nd, const Tensor& g) {
        return std::vector<Tensor>{g.reshaped(nd.parents[0]->value.shape())};
    };
    Var out(n);
    if (wants_tangent({x})) {
        TangentGuard tg;
        set_tangent(out, reshape(x.tangent(), std::move(s)));
    }
    return out;
}

namespace {
// Decomposes shape around `axis` into (outer, extent, inner) strides.
struct AxisSplit {
    int64_t outer, extent, inner;
};
AxisSplit axis_split(const Shape& s, int axis) {
    const int nd = static_cast<int>(s.size());
    if (axis < 0) axis += nd;
    if (axis < 0 || axis >= nd) throw TvmError("axis out of range");
    AxisSplit sp{1, s[static_cast<size_t>(axis)], 1};
    for (int i = 0; i < axis; ++i) sp.outer *= s[static_cast<size_t>(i)];
    for (int i = axis + 1; i < nd; ++i) sp.inner *= s[static_cast<size_t>(i)];
    return sp;
}
}  // namespace

Var slice_axis(const Var& x, int axis, int64_t start, int64_t len) {
    const Tensor& xv = x.value();
    AxisSplit sp = axis_split(xv.shape(), axis);
    if (axis < 0) axis += xv.ndim();
    if (start < 0 || len < 0 || start + len > sp.extent)
        throw TvmError("slice [" + std::to_string(start) + "," + std::to_string(start + len) +
                       ") out of extent " + std::to_string(sp.extent));
    Shape os = xv.shape();
    os[static_cast<size_t>(axis)] = len;
    Tensor out(os);
    const double* px = xv.data();
    double* po = out.data();
    for (int64_t o = 0; o < sp.outer; ++o)
        std::memcpy(po + o * len * sp.inner, px + (o * sp.extent + start) * sp.inner,
                    static_cast<size_t>(len * sp.inner) * sizeof(double));
    auto n = new_node(std::move(out), ptrs({x}), "slice");
    n->vjp = [sp, start, len](const Node& nd, const Tensor& g) {
        Tensor dx = Tensor::zeros(nd.parents[0]->value.shape());
        double* pd = dx.data();
        const double* pg = g.data();
        for (int64_t o = 0; o < sp.outer; ++o)
            std::memcpy(pd + (o * sp.extent + start) * sp.inner, pg + o * len * sp.inner,
                        static_cast<size_t>(len * sp.inner) * sizeof(double));
        return std::vector<Tensor>{std::move(dx)};
    };
    Var ov(n);
    if (wants_tangent({x})) {
        TangentGuard tg;
        set_tangent(ov, slice_axis(x.tangent(), axis, start, len));
    }
    return ov;
}

Var concat(const std::vector<Var>& parts, int axis) {
    if (parts.empty()) throw TvmError("concat of zero parts");
    Shape base = parts[0].value().shape();
    AxisSplit sp0 = axis_split(base, axis);
    if (axis < 0) axis += static_cast<int>(base.size());
    int64_t total = 0;
    for (const auto& p : parts) {
        Shape s = p.value().shape();
        if (static_cast<int>(s.size()) != static_cast<int>(base.size()))
            throw TvmError("concat rank mismatch");
        for (int i = 0; i < static_cast<int>(s.size()); ++i)
            if (i != axis && s[static_cast<size_t>(i)] != base[static_cast<size_t>(i)])
                throw TvmError("concat shape mismatch off-axis");
        total += s[static_cast<size_t>(axis)];
    }
    Shape os = base;
    os[static_cast<size_t>(axis)] = total;
    Tensor out(os);
    double* po = out.data();
    std::vector<int64_t> extents;
    int64_t off = 0;
    for (const auto& p : parts) {
        const Tensor& pv = p.value();
        int64_t ext = pv.dim(axis);
        extents.push_back(ext);
        const double* pp = pv.data();
        for (int64_t o = 0; o < sp0.outer; ++o)
            std::memcpy(po + (o * total + off) * sp0.inner, pp + o * ext * sp0.inner,
                        static_cast<size_t>(ext * sp0.inner) * sizeof(double));
        off += ext;
    }
    auto n = new_node(std::move(out), ptrs(parts), "concat");
    n->vjp = [sp0, total, extents](const Node& nd, const Tensor& g) {
        std::vector<Tensor> grads;
        const double* pg = g.data();
        int64_t off2 = 0;
        for (size_t pi = 0; pi < nd.parents.size(); ++pi) {
            int64_t ext = extents[pi];
            Tensor dp(nd.parents[pi]->value.shape());
            double* pd = dp.data();
            for (int64_t o = 0; o < sp0.outer; ++o)
                std::memcpy(pd + o * ext * sp0.inner, pg + (o * total + off2) * sp0.inner,
                            static_cast<size_t>(ext * sp0.inner) * sizeof(double));
            off2 += ext;
            grads.push_back(std::move(dp));
        }
        return grads;
    };
    Var ov(n);
    if (wants_tangent(parts)) {
        TangentGuard tg;
        std::vector<Var> tparts;
        for (const auto& p : parts)
            tparts.push_back(p.has_tangent() ? p.tangent()
                                             : make_constant(Tensor::zeros(p.shape())));
        set_tangent(ov, concat(tparts, axis));
    }
    return ov;
}

Var gather_rows(const Var& table, const std::vector<int64_t>& idx) {
    const Tensor& tv = table.value();
    if (tv.ndim() != 2) throw TvmError("gather_rows expects a 2-D table");
    const int64_t V = tv.dim(0), h = tv.dim(1);
    for (int64_t i : idx)
        if (i < 0 || i >= V)
            throw TvmError("gather index " + std::to_string(i) + " out of range [0," +
                           std::to_string(V) + ")");
    Tensor out({static_cast<int64_t>(idx.size()), h});
    for (size_t r = 0; r < idx.size(); ++r)
        std::memcpy(out.data() + static_cast<int64_t>(r) * h, tv.data() + idx[r] * h,
                    static_cast<size_t>(h) * sizeof(double));
    auto n = new_node(std::move(out), ptrs({table}), "gather_rows");
    n->vjp = [idx, h](const Node& nd, const Tensor& g) {
        Tensor dt = Tensor::zeros(nd.parents[0]->value.shape());
        for (size_t r = 0; r < idx.size(); ++r) {
            double* pd = dt.data() + idx[r] * h;
            const double* pg = g.data() + static_cast<int64_t>(r) * h;
            for (int64_t j = 0; j < h; ++j) pd[j] += pg[j];
        }
        return std::vector<Tensor>{std::move(dt)};
    };
    Var ov(n);
    if (wants_tangent({table})) {
        TangentGuard tg;
        set_tangent(ov, gather_rows(table.tangent(), idx));
    }
    return ov;
}

namespace {
Tensor heads_permute(const Tensor& x, int H, bool split) {
    // split: [B,T,H*dh] -> [B,H,T,dh]; merge: inverse.
    if (split) {
        if (x.ndim() != 3) throw TvmError("split_heads expects [B,T,C]");
        const int64_t B = x.dim(0), T = x.dim(1), C = x.dim(2);
        if (C % H != 0) throw TvmError("channels not divisible by heads");
        const int64_t dh = C / H;
        Tensor out({B, H, T, dh});
        for (int64_t b = 0; b < B; ++b)
            for (int64_t t = 0; t < T; ++t)
                for (int64_t hh = 0; hh < H; ++hh)
                    std::memcpy(out.data() + ((b * H + hh) * T + t) * dh,
                                x.data() + (b * T + t) * C + hh * dh,
                                static_cast<size_t>(dh) * sizeof(double));
        return out;
    }
    if (x.ndim() != 4) throw TvmError("merge_heads expects [B,H,T,dh]");
    const int64_t B = x.dim(0), Hh = x.dim(1), T = x.dim(2), dh = x.dim(3);
    Tensor out({B, T, Hh * dh});
    for (int64_t b = 0; b < B; ++b)
        for (int64_t hh = 0; hh < Hh; ++hh)
            for (int64_t t = 0; t < T; ++t)
                std::memcpy(out.data() + (b * T + t) * Hh * dh + hh * dh,
                            x.data() + ((b * Hh + hh) * T + t) * dh,
                            static_cast<size_t>(dh) * sizeof(double));
    return out;
}
}  // namespace

Var split_heads(const Var& x, int num_heads) {
    auto n = new_node(heads_permute(x.value(), num_heads, true), ptrs({x}), "split_heads");
    n->vjp = [](const Node& nd, const Tensor& g) {
        return std::vector<Tensor>{heads_permute(g, 0, false)};
    };
    Var out(n);
    if (wants_tangent({x})) {
        TangentGuard tg;
        set_tangent(out, split_heads(x.tangent(), num_heads));
    }
    return out;
}

Var merge_heads(const Var& x) {
    const int H = static_cast<int>(x.value().dim(1));
    auto n = new_node(heads_permute(x.value(), 0, false), ptrs({x}), "merge_heads");
    n->vjp = [H](const Node& nd, const Tensor& g) {
        return std::vector<Tensor>{heads_permute(g, H, true)};
    };
    Var out(n);
    if (wants_tangent({x})) {
        TangentGuard tg;
        set_tangent(out, merge_heads(x.tangent()));
    }
    return out;
}

Var stop_grad(const Var& x) {
    // A fresh parentless node: reverse traversal never enters the wrapped
    // branch, and no tangent is attached.
    auto n = new_node(x.value(), {}, "stop_grad");
    return Var(n);
}

Var rmsnorm_minus(const Var& x, double eps) {
    if (eps <= 0) throw TvmError("rmsnorm eps must be > 0");
    Var ms = mean_last(mul(x, x));
    Var r = rsqrt_op(ms + eps);
    return mul(x, r);
}

}  // namespace tvm
