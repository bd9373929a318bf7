#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tvm/attention.hpp"
#include "tvm/graph.hpp"
#include "tvm/ops.hpp"
#include "tvm/param_store.hpp"
#include "tvm/rng.hpp"

namespace tvm {

enum class TimeEmbedInit { kNormal002, kSpectral };

// Two-time conditioned backbone over flat vectors. The input is lifted to a
// short token sequence so the attention path is exercised end to end; image
// patching is out of scope at this scale.
struct ModelConfig {
    int64_t input_dim = 2;
    int64_t hidden_dim = 128;
    int64_t num_layers = 4;
    int64_t num_heads = 4;
    int64_t num_tokens = 4;
    int64_t mlp_ratio = 2;
    int64_t freq_dim = 32;  // sinusoidal feature count per time channel
    double eps_rmsnorm = 1e-6;
    bool use_scaled_param = false;
    int64_t label_count = 0;  // 0 = unconditional
    bool patchless = true;
    TimeEmbedInit time_embed_init = TimeEmbedInit::kNormal002;

    void validate() const;
    int64_t head_dim() const { return hidden_dim / num_heads; }
    // Row index of the learned null-label embedding.
    int64_t null_label() const { return label_count; }
};

// Per-batch conditioning: times in [0,1], delta = t - s, beta = 1/w in (0,1],
// labels with null_label() for dropped entries (empty when unconditional).
struct CondBatch {
    Tensor t;      // [B]
    Tensor delta;  // [B]
    Tensor beta;   // [B]
    std::vector<int64_t> labels;
};

// Weight with unit spectral norm (power iteration), zero bias elsewhere.
Tensor spectral_init(int64_t fan_out, int64_t fan_in, Rng& rng);
// Largest singular value by power iteration (verification helper).
double spectral_norm(const Tensor& w, int iters = 200);

ParamStore init_params(const ModelConfig& cfg, Rng& rng);

// RMS-normalize q and k per head and apply the learnable per-head scales.
std::pair<Var, Var> qk_norm(const Var& q, const Var& k, const Var& qscale,
                            const Var& kscale, double eps);

// Normalized modulation: rmsnorm(x) * rmsnorm(a) + rmsnorm(b), with a and b
// broadcast over the token axis.
Var adaln(const Var& x, const Var& a, const Var& b, double eps);

// Optional per-forward activation probe; records the RMS of the residual
// stream after every block.
struct ActivationProbe {
    double max_rms = 0.0;
};
void set_activation_probe(ActivationProbe* probe);

// Full backbone: x [B,D], t/delta/beta [B]; labels must be sized B when the
// model is conditional. Deterministic given params and inputs; carries
// tangents through when the inputs do.
Var network_forward(GraphParams& params, const ModelConfig& cfg, const Var& x,
                    const Var& t, const Var& delta, const Var& beta,
                    const std::vector<int64_t>& labels);

// Evaluation-only convenience on plain tensors.
Tensor network_eval(const ParamStore& params, const ModelConfig& cfg, const Tensor& x,
                    const Tensor& t, const Tensor& delta, const Tensor& beta,
                    const std::vector<int64_t>& labels);

// Empirical Lipschitz probe: max over sampled pairs of |F(x)-F(x')|/|x-x'|
// at fixed conditioning.
double lipschitz_estimate(const ParamStore& params, const ModelConfig& cfg, Rng& rng,
                          int n_pairs, double t_value);

}  // namespace tvm
