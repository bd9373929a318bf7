#include "tvm/network.hpp"

#include <cmath>

namespace tvm {

void ModelConfig::validate() const {
    if (input_dim < 1 || hidden_dim < 1 || num_layers < 1 || num_heads < 1 ||
        num_tokens < 1 || mlp_ratio < 1 || freq_dim < 2)
        throw TvmError("model dimensions must be positive");
    if (hidden_dim % num_heads != 0)
        throw TvmError("hidden_dim must be divisible by num_heads");
    if (freq_dim % 2 != 0) throw TvmError("freq_dim must be even");
    if (eps_rmsnorm <= 0) throw TvmError("eps_rmsnorm must be > 0");
    if (label_count < 0) throw TvmError("label_count must be >= 0");
}

Tensor spectral_init(int64_t fan_out, int64_t fan_in, Rng& rng) {
    Tensor w({fan_out, fan_in});
    const double sd = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (int64_t i = 0; i < w.size(); ++i) w.at(i) = rng.gaussian(0.0, sd);
    double sigma = spectral_norm(w);
    if (sigma <= 0) throw TvmError("degenerate random matrix in spectral init");
    for (int64_t i = 0; i < w.size(); ++i) w.at(i) /= sigma;
    return w;
}

double spectral_norm(const Tensor& w, int iters) {
    const int64_t m = w.dim(0), n = w.dim(1);
    std::vector<double> v(static_cast<size_t>(n)), u(static_cast<size_t>(m));
    // Fixed start vector keeps the probe deterministic.
    for (int64_t i = 0; i < n; ++i) v[static_cast<size_t>(i)] = 1.0 + 0.01 * (i % 7);
    double sigma = 0;
    for (int it = 0; it < iters; ++it) {
        for (int64_t i = 0; i < m; ++i) {
            double acc = 0;
            for (int64_t j = 0; j < n; ++j) acc += w.at(i * n + j) * v[static_cast<size_t>(j)];
            u[static_cast<size_t>(i)] = acc;
        }
        double un = 0;
        for (double x : u) un += x * x;
        un = std::sqrt(un);
        if (un == 0) return 0;
        for (double& x : u) x /= un;
        for (int64_t j = 0; j < n; ++j) {
            double acc = 0;
            for (int64_t i = 0; i < m; ++i) acc += w.at(i * n + j) * u[static_cast<size_t>(i)];
            v[static_cast<size_t>(j)] = acc;
        }
        double vn = 0;
        for (double x : v) vn += x * x;
        vn = std::sqrt(vn);
        if (vn == 0) return 0;
        for (double& x : v) x /= vn;
        sigma = vn;
    }
    return sigma;
}

namespace {

Tensor normal_init(int64_t fan_out, int64_t fan_in, Rng& rng, double sd) {
    Tensor w({fan_out, fan_in});
    for (int64_t i = 0; i < w.size(); ++i) w.at(i) = rng.gaussian(0.0, sd);
    return w;
}

void add_linear(ParamStore& ps, const std::string& prefix, int64_t out, int64_t in,
                Rng& rng, bool spectral) {
    ps.add(prefix + ".w", spectral ? spectral_init(out, in, rng)
                                   : normal_init(out, in, rng, 0.02));
    ps.add(prefix + ".b", Tensor::zeros({out}));
}

void add_time_embed(ParamStore& ps, const std::string& prefix, const ModelConfig& cfg,
                    Rng& rng) {
    const bool spectral = cfg.time_embed_init == TimeEmbedInit::kSpectral;
    add_linear(ps, prefix + ".fc1", cfg.hidden_dim, cfg.freq_dim, rng, spectral);
    add_linear(ps, prefix + ".fc2", cfg.hidden_dim, cfg.hidden_dim, rng, spectral);
}

}  // namespace

ParamStore init_params(const ModelConfig& cfg, Rng& rng) {
    cfg.validate();
    ParamStore ps;
    const int64_t h = cfg.hidden_dim, T = cfg.num_tokens;

    add_linear(ps, "input", T * h, cfg.input_dim, rng, /*spectral=*/true);
    add_time_embed(ps, "embed.t", cfg, rng);
    add_time_embed(ps, "embed.delta", cfg, rng);
    add_time_embed(ps, "embed.beta", cfg, rng);
    if (cfg.label_count > 0) {
        // One extra row learns the null-label embedding.
        ps.add("embed.label", normal_init(cfg.label_count + 1, h, rng, 0.02));
    }

    for (int64_t l = 0; l < cfg.num_layers; ++l) {
        const std::string p = "blocks." + std::to_string(l);
        // Modulation starts with zero weight; the bias opens the scale and
        // gate chunks at 1 so gradient reaches every branch from step one
        // (an all-zero start is a stationary point of the normalized form).
        ps.add(p + ".mod.w", Tensor::zeros({6 * h, h}));
        Tensor mod_b({6 * h});
        for (int64_t i = 0; i < h; ++i) {
            mod_b.at(0 * h + i) = 1.0;  // a1
            mod_b.at(2 * h + i) = 1.0;  // c1
            mod_b.at(3 * h + i) = 1.0;  // a2
            mod_b.at(5 * h + i) = 1.0;  // c2
        }
        ps.add(p + ".mod.b", std::move(mod_b));
        add_linear(ps, p + ".qkv", 3 * h, h, rng, true);
        ps.add(p + ".q_scale", Tensor::full({cfg.num_heads}, 1.0));
        ps.add(p + ".k_scale", Tensor::full({cfg.num_heads}, 1.0));
        add_linear(ps, p + ".attn_out", h, h, rng, true);
        add_linear(ps, p + ".mlp.fc1", cfg.mlp_ratio * h, h, rng, true);
        add_linear(ps, p + ".mlp.fc2", h, cfg.mlp_ratio * h, rng, true);
    }

    ps.add("final.mod.w", Tensor::zeros({2 * h, h}));
    Tensor fmod_b({2 * h});
    for (int64_t i = 0; i < h; ++i) fmod_b.at(i) = 1.0;  // a_f = 1, b_f = 0
    ps.add("final.mod.b", std::move(fmod_b));
    // Zero-init output projection: F == 0 at initialization.
    ps.add("final.w", Tensor::zeros({cfg.input_dim, T * h}));
    ps.add("final.b", Tensor::zeros({cfg.input_dim}));
    return ps;
}

namespace {

thread_local ActivationProbe* g_probe = nullptr;

void probe_rms(const Var& x) {
    if (!g_probe) return;
    const Tensor& t = x.value();
    double ms = 0;
    for (int64_t i = 0; i < t.size(); ++i) ms += t.at(i) * t.at(i);
    ms /= static_cast<double>(t.size());
    g_probe->max_rms = std::max(g_probe->max_rms, std::sqrt(ms));
}

Var linear(GraphParams& p, const std::string& prefix, const Var& x) {
    return add(matmul(x, p[prefix + ".w"], false, true), p[prefix + ".b"]);
}

// Sinusoidal features of a [B] scalar channel, standard frequency ladder.
Var sinusoidal(const Var& t, int64_t freq_dim) {
    const int64_t half = freq_dim / 2;
    Tensor freqs({1, half});
    for (int64_t i = 0; i < half; ++i)
        freqs.at(i) = 1000.0 * std::exp(-std::log(10000.0) * static_cast<double>(i) /
                                        static_cast<double>(half));
    const int64_t B = t.value().dim(0);
    Var angles = mul(reshape(t, {B, 1}), make_constant(freqs));
    return concat({cos_op(angles), sin_op(angles)}, -1);
}

Var time_embed(GraphParams& p, const std::string& prefix, const Var& t, int64_t freq_dim) {
    Var f = sinusoidal(t, freq_dim);
    return linear(p, prefix + ".fc2", silu(linear(p, prefix + ".fc1", f)));
}

struct ModChunks {
    Var a, b, c;
};

// Splits the modulation projection into six normalized chunks shaped to
// broadcast over tokens.
std::pair<ModChunks, ModChunks> block_modulation(GraphParams& p, const std::string& prefix,
                                                 const Var& cvec, const ModelConfig& cfg) {
    const int64_t h = cfg.hidden_dim;
    const int64_t B = cvec.value().dim(0);
    Var m = linear(p, prefix + ".mod", silu(cvec));
    auto chunk = [&](int64_t idx) {
        Var c = slice_axis(m, -1, idx * h, h);
        return reshape(rmsnorm_minus(c, cfg.eps_rmsnorm), {B, 1, h});
    };
    return {{chunk(0), chunk(1), chunk(2)}, {chunk(3), chunk(4), chunk(5)}};
}

}  // namespace

void set_activation_probe(ActivationProbe* probe) { g_probe = probe; }

std::pair<Var, Var> qk_norm(const Var& q, const Var& k, const Var& qscale,
                            const Var& kscale, double eps) {
    const int64_t H = q.value().dim(1);
    Shape bshape{1, H, 1, 1};
    Var qs = reshape(qscale, bshape), ks = reshape(kscale, bshape);
    return {mul(rmsnorm_minus(q, eps), qs), mul(rmsnorm_minus(k, eps), ks)};
}

Var adaln(const Var& x, const Var& a, const Var& b, double eps) {
    return add(mul(rmsnorm_minus(x, eps), rmsnorm_minus(a, eps)), rmsnorm_minus(b, eps));
}

Var network_forward(GraphParams& params, const ModelConfig& cfg, const Var& x,
                    const Var& t, const Var& delta, const Var& beta,
                    const std::vector<int64_t>& labels) {
    cfg.validate();
    const int64_t B = x.value().dim(0);
    const int64_t h = cfg.hidden_dim, T = cfg.num_tokens, H = cfg.num_heads;
    if (x.value().ndim() != 2 || x.value().dim(1) != cfg.input_dim)
        throw TvmError("network input must be [B, input_dim]");
    if (cfg.label_count > 0 && static_cast<int64_t>(labels.size()) != B)
        throw TvmError("labels must be sized to the batch");

    Var cvec = add(time_embed(params, "embed.t", t, cfg.freq_dim),
                   time_embed(params, "embed.delta", delta, cfg.freq_dim));
    cvec = add(cvec, time_embed(params, "embed.beta", beta, cfg.freq_dim));
    if (cfg.label_count > 0) {
        for (int64_t c : labels)
            if (c < 0 || c > cfg.label_count)
                throw TvmError("class id " + std::to_string(c) + " out of range");
        cvec = add(cvec, gather_rows(params["embed.label"], labels));
    }

    Var tokens = reshape(linear(params, "input", x), {B, T, h});
    for (int64_t l = 0; l < cfg.num_layers; ++l) {
        const std::string p = "blocks." + std::to_string(l);
        auto [m1, m2] = block_modulation(params, p, cvec, cfg);

        // attention branch
        Var xin = add(mul(rmsnorm_minus(tokens, cfg.eps_rmsnorm), m1.a), m1.b);
        Var qkv = linear(params, p + ".qkv", reshape(xin, {B * T, h}));
        Var q = split_heads(reshape(slice_axis(qkv, -1, 0, h), {B, T, h}), H);
        Var kk = split_heads(reshape(slice_axis(qkv, -1, h, h), {B, T, h}), H);
        Var vv = split_heads(reshape(slice_axis(qkv, -1, 2 * h, h), {B, T, h}), H);
        auto [qn, kn] = qk_norm(q, kk, params[p + ".q_scale"], params[p + ".k_scale"],
                                cfg.eps_rmsnorm);
        Var attn = merge_heads(attn::attention_op(qn, kn, vv));
        Var attn_out =
            reshape(linear(params, p + ".attn_out", reshape(attn, {B * T, h})), {B, T, h});
        tokens = add(tokens, mul(m1.c, attn_out));

        // mlp branch
        Var xin2 = add(mul(rmsnorm_minus(tokens, cfg.eps_rmsnorm), m2.a), m2.b);
        Var hmid = silu(linear(params, p + ".mlp.fc1", reshape(xin2, {B * T, h})));
        Var mlp_out = reshape(linear(params, p + ".mlp.fc2", hmid), {B, T, h});
        tokens = add(tokens, mul(m2.c, mlp_out));
        probe_rms(tokens);
    }

    Var fmod = linear(params, "final.mod", silu(cvec));
    Var fa = reshape(rmsnorm_minus(slice_axis(fmod, -1, 0, h), cfg.eps_rmsnorm), {B, 1, h});
    Var fb = reshape(rmsnorm_minus(slice_axis(fmod, -1, h, h), cfg.eps_rmsnorm), {B, 1, h});
    Var xf = add(mul(rmsnorm_minus(tokens, cfg.eps_rmsnorm), fa), fb);
    return linear(params, "final", reshape(xf, {B, T * h}));
}

Tensor network_eval(const ParamStore& params, const ModelConfig& cfg, const Tensor& x,
                    const Tensor& t, const Tensor& delta, const Tensor& beta,
                    const std::vector<int64_t>& labels) {
    GraphParams gp(params, /*trainable=*/false);
    Var out = network_forward(gp, cfg, make_constant(x), make_constant(t),
                              make_constant(delta), make_constant(beta), labels);
    return out.value();
}

double lipschitz_estimate(const ParamStore& params, const ModelConfig& cfg, Rng& rng,
                          int n_pairs, double t_value) {
    double worst = 0;
    for (int i = 0; i < n_pairs; ++i) {
        Tensor xa({1, cfg.input_dim}), xb({1, cfg.input_dim});
        for (int64_t j = 0; j < cfg.input_dim; ++j) {
            xa.at(j) = rng.gaussian();
            xb.at(j) = xa.at(j) + 0.1 * rng.gaussian();
        }
        Tensor tt = Tensor::full({1}, t_value);
        Tensor dd = Tensor::full({1}, t_value * 0.5);
        Tensor bb = Tensor::full({1}, 1.0);
        std::vector<int64_t> labels(cfg.label_count > 0 ? 1 : 0, cfg.null_label());
        Tensor fa = network_eval(params, cfg, xa, tt, dd, bb, labels);
        Tensor fb = network_eval(params, cfg, xb, tt, dd, bb, labels);
        double num = 0, den = 0;
        for (int64_t j = 0; j < cfg.input_dim; ++j) {
            num += (fa.at(j) - fb.at(j)) * (fa.at(j) - fb.at(j));
            den += (xa.at(j) - xb.at(j)) * (xa.at(j) - xb.at(j));
        }
        if (den > 0) worst = std::max(worst, std::sqrt(num / den));
    }
    return worst;
}

}  // namespace tvm
