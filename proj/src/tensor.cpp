#include "tvm/tensor.hpp"

#include <cmath>
#include <sstream>

#ifdef TVM_USE_CBLAS
#include <cblas.h>
#endif

namespace tvm {

int64_t numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
    for (int64_t d : shape_)
        if (d < 0) throw TvmError("negative extent in shape " + shape_str(shape_));
    data_.assign(static_cast<size_t>(numel(shape_)), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (numel(shape_) != static_cast<int64_t>(data_.size()))
        throw TvmError("data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_str(shape_));
}

Tensor Tensor::scalar(double v) { return Tensor({}, {v}); }

Tensor Tensor::zeros(Shape shape) { return Tensor(std::move(shape)); }

Tensor Tensor::full(Shape shape, double v) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = v;
    return t;
}

int64_t Tensor::dim(int i) const {
    if (i < 0) i += ndim();
    if (i < 0 || i >= ndim()) throw TvmError("dim index out of range");
    return shape_[static_cast<size_t>(i)];
}

double Tensor::item() const {
    if (data_.size() != 1) throw TvmError("item() on tensor of size " + std::to_string(data_.size()));
    return data_[0];
}

bool Tensor::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

Tensor Tensor::reshaped(Shape s) const {
    if (numel(s) != size())
        throw TvmError("reshape " + shape_str(shape_) + " -> " + shape_str(s) + " changes size");
    return Tensor(std::move(s), data_);
}

void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k,
          double alpha, const double* a, int64_t lda, const double* b,
          int64_t ldb, double beta, double* c, int64_t ldc) {
#ifdef TVM_USE_CBLAS
    cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
                trans_b ? CblasTrans : CblasNoTrans, static_cast<int>(m),
                static_cast<int>(n), static_cast<int>(k), alpha, a,
                static_cast<int>(lda), b, static_cast<int>(ldb), beta, c,
                static_cast<int>(ldc));
#else
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int64_t p = 0; p < k; ++p) {
                double av = trans_a ? a[p * lda + i] : a[i * lda + p];
                double bv = trans_b ? b[j * ldb + p] : b[p * ldb + j];
                acc += av * bv;
            }
            c[i * ldc + j] = alpha * acc + beta * c[i * ldc + j];
        }
    }
#endif
}

bool shapes_broadcastable(const Shape& a, const Shape& b) {
    const int na = static_cast<int>(a.size()), nb = static_cast<int>(b.size());
    const int nd = std::max(na, nb);
    for (int i = 0; i < nd; ++i) {
        int64_t da = i < na ? a[static_cast<size_t>(na - 1 - i)] : 1;
        int64_t db = i < nb ? b[static_cast<size_t>(nb - 1 - i)] : 1;
        if (da != db && da != 1 && db != 1) return false;
    }
    return true;
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
    if (!shapes_broadcastable(a, b))
        throw TvmError("shapes " + shape_str(a) + " and " + shape_str(b) + " do not broadcast");
    const int na = static_cast<int>(a.size()), nb = static_cast<int>(b.size());
    const int nd = std::max(na, nb);
    Shape out(static_cast<size_t>(nd));
    for (int i = 0; i < nd; ++i) {
        int64_t da = i < na ? a[static_cast<size_t>(na - 1 - i)] : 1;
        int64_t db = i < nb ? b[static_cast<size_t>(nb - 1 - i)] : 1;
        out[static_cast<size_t>(nd - 1 - i)] = std::max(da, db);
    }
    return out;
}

namespace detail {
std::vector<int64_t> broadcast_strides(const Shape& s, int nd) {
    const int ns = static_cast<int>(s.size());
    std::vector<int64_t> strides(static_cast<size_t>(nd), 0);
    int64_t acc = 1;
    for (int i = 0; i < ns; ++i) {
        int si = ns - 1 - i;
        int oi = nd - 1 - i;
        strides[static_cast<size_t>(oi)] = (s[static_cast<size_t>(si)] == 1) ? 0 : acc;
        acc *= s[static_cast<size_t>(si)];
    }
    return strides;
}
}  // namespace detail

Tensor reduce_to_shape(const Tensor& g, const Shape& target) {
    if (g.shape() == target) return g;
    const int nd = g.ndim();
    auto st = detail::broadcast_strides(target, nd);
    Tensor out = Tensor::zeros(target);
    std::vector<int64_t> idx(static_cast<size_t>(nd), 0);
    const double* pg = g.data();
    double* po = out.data();
    const int64_t n = g.size();
    int64_t off = 0;
    const Shape& gs = g.shape();
    for (int64_t i = 0; i < n; ++i) {
        po[off] += pg[i];
        for (int d = nd - 1; d >= 0; --d) {
            idx[static_cast<size_t>(d)]++;
            off += st[static_cast<size_t>(d)];
            if (idx[static_cast<size_t>(d)] < gs[static_cast<size_t>(d)]) break;
            off -= st[static_cast<size_t>(d)] * gs[static_cast<size_t>(d)];
            idx[static_cast<size_t>(d)] = 0;
        }
    }
    return out;
}

}  // namespace tvm
