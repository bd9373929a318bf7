#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "tvm/graph.hpp"
#include "tvm/tensor.hpp"

namespace tvm::attn {

// Records kernel-side buffer allocations so tests can assert that the fused
// path never materializes anything proportional to M*N.
class AllocTracker {
  public:
    void on_alloc(int64_t bytes) {
        current_ += bytes;
        if (current_ > peak_) peak_ = current_;
    }
    void on_free(int64_t bytes) { current_ -= bytes; }
    void reset() { current_ = peak_ = 0; }
    int64_t peak() const { return peak_; }
    int64_t current() const { return current_; }

  private:
    int64_t current_ = 0;
    int64_t peak_ = 0;
};

// Scoped buffer that reports its size to an optional tracker.
template <typename T>
class TrackedBuf {
  public:
    TrackedBuf(int64_t n, AllocTracker* tr) : data_(static_cast<size_t>(n)), tr_(tr) {
        if (tr_) tr_->on_alloc(n * static_cast<int64_t>(sizeof(T)));
    }
    ~TrackedBuf() {
        if (tr_) tr_->on_free(static_cast<int64_t>(data_.size() * sizeof(T)));
    }
    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    T& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    const T& operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }
    int64_t size() const { return static_cast<int64_t>(data_.size()); }
    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  private:
    std::vector<T> data_;
    AllocTracker* tr_;
};

// Per-row softmax statistics cached by the fused forward: log-sum-exp,
// the (max-shifted) normalizer, and the tangent-weighted sum. Exactly three
// scalars per row of Q.
template <typename T>
struct Stats {
    std::vector<T> lse;     // l-hat: max + log(rowsum)
    std::vector<T> rowsum;  // l
    std::vector<T> mu;      // sum_j exp(aS - max) * (a * Sdot)
};

struct KernelConfig {
    int64_t tile_m = 32;
    int64_t tile_n = 32;
    AllocTracker* tracker = nullptr;
};

// Fused primal + JVP forward over one (batch, head) slice. Tangent inputs
// may be null (treated as zero, making od exactly zero). Never allocates an
// M*N buffer; working state is per-tile blocks plus the 3 per-row stats.
template <typename T>
void fused_forward(const T* q, const T* k, const T* v, const T* qd, const T* kd,
                   const T* vd, int64_t M, int64_t N, int64_t d, T* o, T* od,
                   Stats<T>& stats, const KernelConfig& cfg = {});

// Combined backward for the pairing dO.O + dOd.Od, producing all six input
// gradients. Organized as six steps (shared preprocessing, then the K/Q/V
// passes); each step is tiled and recomputes P from q, k and the cached lse.
template <typename T>
void backward(const T* q, const T* k, const T* v, const T* qd, const T* kd, const T* vd,
              int64_t M, int64_t N, int64_t d, const Stats<T>& stats, const T* d_o,
              const T* d_od, T* dq, T* dk, T* dv, T* dqd, T* dkd, T* dvd,
              const KernelConfig& cfg = {});

// Individual backward steps, exposed for unit tests. Step 1 also produces the
// primal softmax row sums needed to fold the standard attention backward into
// steps 4-6. Steps 2/3 overwrite their outputs; steps 4/5 accumulate into
// dk2/dq2 so the assembled backward needs no extra O(N*d) scratch.
template <typename T>
void backward_step1(const T* q, const T* k, const T* v, const T* qd, const T* kd,
                    const T* vd, int64_t M, int64_t N, int64_t d, const Stats<T>& stats,
                    const T* d_o, const T* d_od, T* sigma1, T* sigma2, T* dprim,
                    const KernelConfig& cfg = {});
template <typename T>
void backward_step2(const T* q, const T* k, const T* v, const T* qd, const T* kd,
                    const T* vd, int64_t M, int64_t N, int64_t d, const Stats<T>& stats,
                    const T* d_od, const T* sigma1, T* dk1, T* dkd,
                    const KernelConfig& cfg = {});
template <typename T>
void backward_step3(const T* q, const T* k, const T* v, const T* qd, const T* kd,
                    const T* vd, int64_t M, int64_t N, int64_t d, const Stats<T>& stats,
                    const T* d_od, const T* sigma1, T* dq1, T* dqd,
                    const KernelConfig& cfg = {});
template <typename T>
void backward_step4(const T* q, const T* k, const T* v, const T* qd, const T* kd,
                    const T* vd, int64_t M, int64_t N, int64_t d, const Stats<T>& stats,
                    const T* d_o, const T* d_od, const T* sigma1, const T* sigma2,
                    const T* dprim, T* dk2, const KernelConfig& cfg = {});
template <typename T>
void backward_step5(const T* q, const T* k, const T* v, const T* qd, const T* kd,
                    const T* vd, int64_t M, int64_t N, int64_t d, const Stats<T>& stats,
                    const T* d_o, const T* d_od, const T* sigma1, const T* sigma2,
                    const T* dprim, T* dq2, const KernelConfig& cfg = {});
template <typename T>
void backward_step6(const T* q, const T* k, const T* v, const T* qd, const T* kd,
                    const T* vd, int64_t M, int64_t N, int64_t d, const Stats<T>& stats,
                    const T* d_o, const T* d_od, T* dv_out, T* dvd_out,
                    const KernelConfig& cfg = {});

// ---- dense reference ("explicit math operations") ----

struct DenseResult {
    Tensor o, od;
};
struct DenseGrads {
    Tensor dq, dk, dv, dqd, dkd, dvd;
};

// Materializes S, Sdot and the softmax explicitly; mathematically exact
// reference in double precision.
DenseResult naive_forward(const Tensor& q, const Tensor& k, const Tensor& v,
                          const Tensor& qd, const Tensor& kd, const Tensor& vd,
                          AllocTracker* tracker = nullptr);
DenseGrads naive_backward(const Tensor& q, const Tensor& k, const Tensor& v,
                          const Tensor& qd, const Tensor& kd, const Tensor& vd,
                          const Tensor& d_o, const Tensor& d_od,
                          AllocTracker* tracker = nullptr);

// Independent gradient oracle: builds attention out of graph primitives,
// attaches leaf tangents, and reverse-differentiates the pairing
// dO.O + dOd.Od through the engine.
struct OracleResult {
    Tensor o, od;
    DenseGrads grads;
};
OracleResult autodiff_oracle(const Tensor& q, const Tensor& k, const Tensor& v,
                             const Tensor& qd, const Tensor& kd, const Tensor& vd,
                             const Tensor& d_o, const Tensor& d_od);

// ---- graph integration ----

// Multi-head fused attention as a graph op. Inputs are [B,H,T,dh]; when the
// q/k/v nodes carry tangents the output carries the fused JVP as its tangent.
// The reverse rule runs the six-step kernel per (batch, head) slice.
Var attention_op(const Var& q, const Var& k, const Var& v, const KernelConfig& cfg = {});

// ---- bench ----

struct BenchShape {
    int64_t heads, seqlen, head_dim;
};
struct BenchRow {
    BenchShape shape;
    bool naive_ok;            // false when the naive path hits the memory cap
    double fused_ms, naive_ms;
    int64_t fused_peak_bytes, naive_peak_bytes;
    double max_abs_err;       // fused vs naive, double precision
};

std::vector<BenchRow> bench(const std::vector<BenchShape>& shapes,
                            int64_t naive_mem_cap_bytes, uint64_t seed);
void write_bench_csv(std::ostream& os, const std::vector<BenchRow>& rows);

}  // namespace tvm::attn
