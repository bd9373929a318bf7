#pragma once

#include <optional>
#include <vector>

#include "tvm/network.hpp"
#include "tvm/param_store.hpp"

namespace tvm {

// One training batch, fully sampled (times, guidance, labels after dropout).
struct Batch {
    Tensor x0, x1;                // [B, D] data and prior draws
    std::vector<int64_t> labels;  // null_label() where dropped; empty if unconditional
    Tensor t, s;                  // [B], 0 <= s <= t <= 1
    Tensor s_fm;                  // [B] time for the velocity-matching term
    Tensor w;                     // [B] guidance weights, w >= 1
    int64_t size() const { return x0.dim(0); }
    void validate() const;
};

struct LossFlags {
    bool scaled_param = false;
    bool gap_star_fm = true;   // s_fm drawn independently for the velocity term
    bool w2_weight_fm = true;  // literal bracket: 1/w^2 multiplies both terms
};

// Displacement map evaluation at (x_t, t, s): f = (s-t)*[w]*F and its
// terminal derivative d/ds f = [w]*(F + (s-t)*dF/ds), kept reverse-capable.
struct MapDeriv {
    Var F;      // raw network output [B, D]
    Var dFds;   // partial of F along s [B, D]
    Var f_ts;   // displacement [B, D]
    Var dfds;   // terminal velocity of the map [B, D]
};

// Tensor-level view of the same evaluation for oracle/eval callers.
struct MapEval {
    Tensor f_ts, dfds, F_value;
};

// x_t = (1-t) x0 + t x1, v = x1 - x0, with t broadcast per row.
std::pair<Tensor, Tensor> interpolate(const Tensor& x0, const Tensor& x1, const Tensor& t);

MapDeriv eval_map_and_derivative(GraphParams& params, const ModelConfig& cfg,
                                 const Tensor& x_t, const Tensor& t, const Tensor& s,
                                 const Tensor& w, const std::vector<int64_t>& labels,
                                 bool scaled_param);

MapEval eval_map_tensors(const ParamStore& params, const ModelConfig& cfg,
                         const Tensor& x_t, const Tensor& t, const Tensor& s,
                         const Tensor& w, const std::vector<int64_t>& labels,
                         bool scaled_param);

// Velocity-matching regression target under guidance:
// w * v_s + (1 - w) * u_uncond(x_s, s).
Tensor cfg_fm_target(const Tensor& v_s, const Tensor& u_uncond_ema, const Tensor& w);

// Instantaneous velocity u(x, s, c, w) = [w] * F(x, s, s, c, w) from a frozen
// parameter set (no gradients).
Tensor u_eval(const ParamStore& params, const ModelConfig& cfg, const Tensor& x,
              const Tensor& s, const Tensor& w, const std::vector<int64_t>& labels,
              bool scaled_param);

struct LossTerms {
    double terminal_term = 0;  // batch mean, weighted per flags
    double fm_term = 0;        // batch mean, weighted per flags
    double total = 0;          // terminal_term + fm_term
    Tensor terminal_per_elem;  // [B] unweighted mean-square terminal residual
    Tensor fm_per_elem;        // [B] unweighted mean-square velocity residual
};

struct LossResult {
    Var loss;  // scalar graph node
    LossTerms terms;
};

// Full objective: weighted terminal-velocity matching with stop-grad/EMA
// proxies plus the guided velocity term. params_ema supplies the frozen
// proxy network.
LossResult tvm_loss(GraphParams& student, const ParamStore& params_ema,
                    const ModelConfig& cfg, const Batch& batch, const LossFlags& flags);

// Velocity-matching only (the t == s boundary objective).
LossResult fm_loss(GraphParams& student, const ParamStore& params_ema,
                   const ModelConfig& cfg, const Batch& batch, const LossFlags& flags);

// Dual-time baseline differentiating along the start time; the target is
// wholly stop-gradient. Returns the same LossTerms shape (fm_term carries the
// whole loss).
LossResult meanflow_loss(GraphParams& student, const ModelConfig& cfg, const Batch& batch,
                         const LossFlags& flags);

// Both algebraic forms of the baseline target residual, for the equivalence
// check: |F - F_tgt|^2 and |d/dt f + v|^2 per element.
std::pair<Tensor, Tensor> meanflow_both_forms(const ParamStore& params,
                                              const ModelConfig& cfg, const Batch& batch,
                                              const LossFlags& flags);

}  // namespace tvm
