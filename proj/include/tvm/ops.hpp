#pragma once

#include <vector>

#include "tvm/graph.hpp"

namespace tvm {

// Elementwise with trailing-dimension broadcasting.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var neg(const Var& x);

// 2-D matrix product with transpose flags: op(a) [m,k] x op(b) [k,n].
Var matmul(const Var& a, const Var& b, bool trans_a = false, bool trans_b = false);

Var exp_op(const Var& x);
Var log_op(const Var& x);
Var sin_op(const Var& x);
Var cos_op(const Var& x);
Var sqrt_op(const Var& x);
Var rsqrt_op(const Var& x);
Var reciprocal_op(const Var& x);
Var sigmoid_op(const Var& x);
Var silu(const Var& x);  // x * sigmoid(x), composed

Var sum_all(const Var& x);   // -> scalar shape {}
Var mean_all(const Var& x);  // -> scalar shape {}
// Reductions over the last axis, keeping it as extent 1 for broadcasting.
Var sum_last(const Var& x);
Var mean_last(const Var& x);

Var reshape(const Var& x, Shape s);
Var slice_axis(const Var& x, int axis, int64_t start, int64_t len);
Var concat(const std::vector<Var>& parts, int axis);
// table [V,h], idx values in [0,V) -> [n,h]; backward scatter-adds.
Var gather_rows(const Var& table, const std::vector<int64_t>& idx);
// [B,T,H*dh] <-> [B,H,T,dh]
Var split_heads(const Var& x, int num_heads);
Var merge_heads(const Var& x);

// Identity value; blocks both the reverse gradient and the forward tangent.
Var stop_grad(const Var& x);

// Convenience sugar matching how losses read.
inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator-(const Var& a) { return neg(a); }
Var operator*(const Var& a, double s);
inline Var operator*(double s, const Var& a) { return a * s; }
Var operator+(const Var& a, double s);

// x / RMS(x) over the last axis with RMS(x) = sqrt(mean(x^2) + eps).
// Parameter-free; built from primitives so all derivative paths compose.
Var rmsnorm_minus(const Var& x, double eps);

}  // namespace tvm
