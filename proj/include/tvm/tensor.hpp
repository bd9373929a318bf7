#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace tvm {

// Structured error for contract violations (bad shapes, invalid config,
// non-finite values). Carries a plain message; callers match on type.
struct TvmError : std::runtime_error {
    explicit TvmError(const std::string& msg) : std::runtime_error(msg) {}
};

using Shape = std::vector<int64_t>;

int64_t numel(const Shape& s);
std::string shape_str(const Shape& s);

// Dense n-dimensional array of doubles, row-major. The substrate for all
// math in the project; single precision lives only inside the attention
// kernel templates.
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(Shape shape);
    Tensor(Shape shape, std::vector<double> data);
    static Tensor scalar(double v);
    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double v);

    const Shape& shape() const { return shape_; }
    int64_t size() const { return static_cast<int64_t>(data_.size()); }
    int64_t dim(int i) const;
    int ndim() const { return static_cast<int>(shape_.size()); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    double& at(int64_t i) { return data_[static_cast<size_t>(i)]; }
    double at(int64_t i) const { return data_[static_cast<size_t>(i)]; }
    double item() const;  // requires size()==1

    bool all_finite() const;
    Tensor reshaped(Shape s) const;

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  private:
    Shape shape_;
    std::vector<double> data_;
};

// ---- raw numeric kernels (no graph involvement) ----

// C[m,n] = A op B with optional transposes; alpha scales the product and
// beta scales the existing C (BLAS gemm semantics).
void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k,
          double alpha, const double* a, int64_t lda, const double* b,
          int64_t ldb, double beta, double* c, int64_t ldc);

// Standard trailing-dimension broadcasting. Returns the broadcast shape or
// throws TvmError on incompatibility.
Shape broadcast_shape(const Shape& a, const Shape& b);
bool shapes_broadcastable(const Shape& a, const Shape& b);

// Applies op(a_i, b_i) elementwise under broadcasting into a tensor of the
// broadcast shape.
template <typename F>
Tensor broadcast_binary(const Tensor& a, const Tensor& b, F&& op);

// Sums `g` down to `target` shape (the adjoint of broadcasting).
Tensor reduce_to_shape(const Tensor& g, const Shape& target);

// Implementation of broadcast_binary lives here so ops.cpp can instantiate
// with arbitrary lambdas.
namespace detail {
// Computes strides (in elements) of a shape padded to `nd` dims on the left;
// size-1 dims get stride 0 so the same index loop walks both operands.
std::vector<int64_t> broadcast_strides(const Shape& s, int nd);
}  // namespace detail

template <typename F>
Tensor broadcast_binary(const Tensor& a, const Tensor& b, F&& op) {
    if (a.shape() == b.shape()) {
        Tensor out(a.shape());
        const double* pa = a.data();
        const double* pb = b.data();
        double* po = out.data();
        const int64_t n = a.size();
        for (int64_t i = 0; i < n; ++i) po[i] = op(pa[i], pb[i]);
        return out;
    }
    Shape os = broadcast_shape(a.shape(), b.shape());
    const int nd = static_cast<int>(os.size());
    auto sa = detail::broadcast_strides(a.shape(), nd);
    auto sb = detail::broadcast_strides(b.shape(), nd);
    Tensor out(os);
    std::vector<int64_t> idx(nd, 0);
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    const int64_t n = out.size();
    int64_t offa = 0, offb = 0;
    for (int64_t i = 0; i < n; ++i) {
        po[i] = op(pa[offa], pb[offb]);
        for (int d = nd - 1; d >= 0; --d) {
            idx[d]++;
            offa += sa[d];
            offb += sb[d];
            if (idx[d] < os[d]) break;
            offa -= sa[d] * os[d];
            offb -= sb[d] * os[d];
            idx[d] = 0;
        }
    }
    return out;
}

}  // namespace tvm
