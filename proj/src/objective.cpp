#include "tvm/objective.hpp"

#include <cmath>

namespace tvm {

namespace {

Tensor column(const Tensor& v) {  // [B] -> [B,1]
    return v.reshaped({v.size(), 1});
}

Tensor ones_like_rows(int64_t b) { return Tensor::full({b}, 1.0); }

// Elementwise helpers on plain tensors.
Tensor t_sub(const Tensor& a, const Tensor& b) {
    return broadcast_binary(a, b, [](double x, double y) { return x - y; });
}
Tensor t_add(const Tensor& a, const Tensor& b) {
    return broadcast_binary(a, b, [](double x, double y) { return x + y; });
}
Tensor t_mul(const Tensor& a, const Tensor& b) {
    return broadcast_binary(a, b, [](double x, double y) { return x * y; });
}

Tensor beta_of(const Tensor& w) {
    Tensor b(w.shape());
    for (int64_t i = 0; i < w.size(); ++i) {
        if (w.at(i) < 1.0) throw TvmError("guidance weight must be >= 1");
        b.at(i) = 1.0 / w.at(i);
    }
    return b;
}

// Per-row mean squared residual, [B,1] as a graph node.
Var row_mse(const Var& a, const Var& b) { return mean_last(mul(sub(a, b), sub(a, b))); }

void check_finite_term(const Tensor& t, const char* name) {
    if (!t.all_finite())
        throw TvmError(std::string("non-finite value in loss term '") + name + "'");
}

struct CommonPieces {
    Tensor ind;      // [B,1] indicator t != s
    Tensor weight;   // [B,1] 1/w^2
    Tensor wmul;     // [B,1] w under scaled parameterization, else ones
    Tensor beta;     // [B]
};

CommonPieces common_pieces(const Batch& batch, const LossFlags& flags) {
    const int64_t B = batch.size();
    CommonPieces c{Tensor({B, 1}), Tensor({B, 1}), Tensor({B, 1}), beta_of(batch.w)};
    for (int64_t i = 0; i < B; ++i) {
        c.ind.at(i) = batch.t.at(i) == batch.s.at(i) ? 0.0 : 1.0;
        c.weight.at(i) = 1.0 / (batch.w.at(i) * batch.w.at(i));
        c.wmul.at(i) = flags.scaled_param ? batch.w.at(i) : 1.0;
    }
    return c;
}

double batch_mean(const Tensor& per_elem) {
    double acc = 0;
    for (int64_t i = 0; i < per_elem.size(); ++i) acc += per_elem.at(i);
    return acc / static_cast<double>(per_elem.size());
}

}  // namespace

void Batch::validate() const {
    const int64_t B = size();
    if (x1.dim(0) != B || t.size() != B || s.size() != B || s_fm.size() != B ||
        w.size() != B)
        throw TvmError("batch field sizes disagree");
    for (int64_t i = 0; i < B; ++i) {
        if (!(0.0 <= s.at(i) && s.at(i) <= t.at(i) && t.at(i) <= 1.0))
            throw TvmError("batch violates 0 <= s <= t <= 1");
        if (w.at(i) < 1.0) throw TvmError("batch violates w >= 1");
    }
}

std::pair<Tensor, Tensor> interpolate(const Tensor& x0, const Tensor& x1, const Tensor& t) {
    if (!(x0.shape() == x1.shape())) throw TvmError("interpolate shape mismatch");
    Tensor tc = column(t);
    Tensor xt = t_add(t_mul(t_sub(Tensor::full(tc.shape(), 1.0), tc), x0), t_mul(tc, x1));
    Tensor v = t_sub(x1, x0);
    return {std::move(xt), std::move(v)};
}

MapDeriv eval_map_and_derivative(GraphParams& params, const ModelConfig& cfg,
                                 const Tensor& x_t, const Tensor& t, const Tensor& s,
                                 const Tensor& w, const std::vector<int64_t>& labels,
                                 bool scaled_param) {
    const int64_t B = x_t.dim(0);
    Tensor beta = beta_of(w);
    // The network takes (x, t, t - s); differentiating along s with tangents
    // (0, 0, 1) yields the partial of F in the terminal time.
    auto wrapper = [&](const std::vector<Var>& in) {
        Var delta = sub(in[1], in[2]);
        return network_forward(params, cfg, in[0], in[1], delta, make_constant(beta),
                               labels);
    };
    auto [F, dFds] = jvp(wrapper, {x_t, t, s},
                         {Tensor::zeros(x_t.shape()), Tensor::zeros(t.shape()),
                          Tensor::full(s.shape(), 1.0)});

    Tensor smt({B, 1});
    for (int64_t i = 0; i < B; ++i) smt.at(i) = s.at(i) - t.at(i);
    Tensor wmul({B, 1});
    for (int64_t i = 0; i < B; ++i) wmul.at(i) = scaled_param ? w.at(i) : 1.0;
    Var smt_c = make_constant(smt), wmul_c = make_constant(wmul);

    MapDeriv out;
    out.F = F;
    out.dFds = dFds;
    out.f_ts = mul(mul(smt_c, wmul_c), F);
    out.dfds = mul(wmul_c, add(F, mul(smt_c, dFds)));
    return out;
}

MapEval eval_map_tensors(const ParamStore& params, const ModelConfig& cfg,
                         const Tensor& x_t, const Tensor& t, const Tensor& s,
                         const Tensor& w, const std::vector<int64_t>& labels,
                         bool scaled_param) {
    GraphParams gp(params, /*trainable=*/false);
    MapDeriv d = eval_map_and_derivative(gp, cfg, x_t, t, s, w, labels, scaled_param);
    return {d.f_ts.value(), d.dfds.value(), d.F.value()};
}

Tensor cfg_fm_target(const Tensor& v_s, const Tensor& u_uncond_ema, const Tensor& w) {
    if (!(v_s.shape() == u_uncond_ema.shape())) throw TvmError("cfg target shape mismatch");
    Tensor wc = column(w);
    Tensor one_minus(wc.shape());
    for (int64_t i = 0; i < wc.size(); ++i) one_minus.at(i) = 1.0 - wc.at(i);
    return t_add(t_mul(wc, v_s), t_mul(one_minus, u_uncond_ema));
}

Tensor u_eval(const ParamStore& params, const ModelConfig& cfg, const Tensor& x,
              const Tensor& s, const Tensor& w, const std::vector<int64_t>& labels,
              bool scaled_param) {
    Tensor beta = beta_of(w);
    Tensor F = network_eval(params, cfg, x, s, Tensor::zeros(s.shape()), beta, labels);
    if (!scaled_param) return F;
    Tensor wc = column(w);
    return t_mul(wc, F);
}

namespace {

// Shared assembly for the full objective and its velocity-only reduction.
LossResult assemble_loss(GraphParams& student, const ParamStore& params_ema,
                         const ModelConfig& cfg, const Batch& batch,
                         const LossFlags& flags, bool with_terminal) {
    batch.validate();
    const int64_t B = batch.size();
    CommonPieces cp = common_pieces(batch, flags);

    Var terminal_sq;  // [B,1] raw mean-square residual
    if (with_terminal) {
        auto [x_t, v_t] = interpolate(batch.x0, batch.x1, batch.t);
        (void)v_t;
        MapDeriv md = eval_map_and_derivative(student, cfg, x_t, batch.t, batch.s,
                                              batch.w, batch.labels, flags.scaled_param);
        // Frozen proxy at the displaced point: u_ema(x_t + sg(f), s, c, w).
        // stop_grad blocks the student branch, and the proxy runs on frozen
        // EMA parameters, so the target contributes no gradient.
        Var x_in = add(make_constant(x_t), stop_grad(md.f_ts));
        GraphParams ema_gp(params_ema, /*trainable=*/false);
        Var F_tgt = network_forward(ema_gp, cfg, x_in, make_constant(batch.s),
                                    make_constant(Tensor::zeros(batch.s.shape())),
                                    make_constant(cp.beta), batch.labels);
        Var u_tgt = mul(make_constant(cp.wmul), F_tgt);
        terminal_sq = row_mse(md.dfds, u_tgt);
    } else {
        terminal_sq = make_constant(Tensor::zeros({B, 1}));
    }

    // Velocity term at s_fm (independently drawn under the gap* option).
    const Tensor& s_fm = flags.gap_star_fm ? batch.s_fm : batch.s;
    auto [x_fm, v_fm] = interpolate(batch.x0, batch.x1, s_fm);
    Var F_fm = network_forward(student, cfg, make_constant(x_fm), make_constant(s_fm),
                               make_constant(Tensor::zeros(s_fm.shape())),
                               make_constant(cp.beta), batch.labels);
    Var u_stud = mul(make_constant(cp.wmul), F_fm);

    bool any_guided = false;
    for (int64_t i = 0; i < B; ++i)
        if (batch.w.at(i) != 1.0) any_guided = true;
    Tensor target;
    if (any_guided) {
        std::vector<int64_t> null_labels(batch.labels.size(), cfg.null_label());
        Tensor u_unc = u_eval(params_ema, cfg, x_fm, s_fm, ones_like_rows(B), null_labels,
                              flags.scaled_param);
        target = cfg_fm_target(v_fm, u_unc, batch.w);
    } else {
        target = v_fm;
    }
    Var fm_sq = row_mse(u_stud, make_constant(target));

    Var ind_c = make_constant(cp.ind), weight_c = make_constant(cp.weight);
    Var term_weighted = mul(weight_c, mul(ind_c, terminal_sq));
    Var fm_weighted = flags.w2_weight_fm ? mul(weight_c, fm_sq) : fm_sq;
    Var loss = mean_all(add(term_weighted, fm_weighted));

    LossResult res;
    res.loss = loss;
    res.terms.terminal_per_elem = terminal_sq.value().reshaped({B});
    res.terms.fm_per_elem = fm_sq.value().reshaped({B});
    res.terms.terminal_term = batch_mean(term_weighted.value());
    res.terms.fm_term = batch_mean(fm_weighted.value());
    res.terms.total = res.terms.terminal_term + res.terms.fm_term;
    check_finite_term(term_weighted.value(), "terminal");
    check_finite_term(fm_weighted.value(), "fm");
    return res;
}

}  // namespace

LossResult tvm_loss(GraphParams& student, const ParamStore& params_ema,
                    const ModelConfig& cfg, const Batch& batch, const LossFlags& flags) {
    return assemble_loss(student, params_ema, cfg, batch, flags, /*with_terminal=*/true);
}

LossResult fm_loss(GraphParams& student, const ParamStore& params_ema,
                   const ModelConfig& cfg, const Batch& batch, const LossFlags& flags) {
    return assemble_loss(student, params_ema, cfg, batch, flags, /*with_terminal=*/false);
}

LossResult meanflow_loss(GraphParams& student, const ModelConfig& cfg, const Batch& batch,
                         const LossFlags& flags) {
    batch.validate();
    const int64_t B = batch.size();
    CommonPieces cp = common_pieces(batch, flags);
    auto [x_t, v_t] = interpolate(batch.x0, batch.x1, batch.t);

    // Differentiate along the start time with the trajectory moving at v_t:
    // tangents (v_t, 1) over (x, t), s held fixed.
    auto wrapper = [&](const std::vector<Var>& in) {
        Var delta = sub(in[1], make_constant(batch.s));
        return network_forward(student, cfg, in[0], in[1], delta, make_constant(cp.beta),
                               batch.labels);
    };
    auto [F, dFdt] = jvp(wrapper, {x_t, batch.t},
                         {v_t, Tensor::full(batch.t.shape(), 1.0)});

    Tensor smt({B, 1});
    for (int64_t i = 0; i < B; ++i) smt.at(i) = batch.s.at(i) - batch.t.at(i);
    // F_tgt = v + (s - t) * dF/dt along the path, all stop-grad.
    Var f_tgt = add(make_constant(v_t), mul(make_constant(smt), dFdt));
    Var resid = sub(F, stop_grad(f_tgt));
    Var per_elem = mean_last(mul(resid, resid));
    Var loss = mean_all(per_elem);

    LossResult res;
    res.loss = loss;
    res.terms.terminal_per_elem = Tensor::zeros({B});
    res.terms.fm_per_elem = per_elem.value().reshaped({B});
    res.terms.terminal_term = 0;
    res.terms.fm_term = batch_mean(per_elem.value());
    res.terms.total = res.terms.fm_term;
    check_finite_term(per_elem.value(), "meanflow");
    return res;
}

std::pair<Tensor, Tensor> meanflow_both_forms(const ParamStore& params,
                                              const ModelConfig& cfg, const Batch& batch,
                                              const LossFlags& flags) {
    const int64_t B = batch.size();
    CommonPieces cp = common_pieces(batch, flags);
    auto [x_t, v_t] = interpolate(batch.x0, batch.x1, batch.t);
    GraphParams gp(params, /*trainable=*/false);
    auto wrapper = [&](const std::vector<Var>& in) {
        Var delta = sub(in[1], make_constant(batch.s));
        return network_forward(gp, cfg, in[0], in[1], delta, make_constant(cp.beta),
                               batch.labels);
    };
    auto [F, dFdt] = jvp(wrapper, {x_t, batch.t},
                         {v_t, Tensor::full(batch.t.shape(), 1.0)});

    Tensor smt({B, 1});
    for (int64_t i = 0; i < B; ++i) smt.at(i) = batch.s.at(i) - batch.t.at(i);

    // Form A: |F - (v + (s-t) dF/dt)|^2.
    Tensor f_tgt = t_add(v_t, t_mul(smt, dFdt.value()));
    Tensor ra = t_sub(F.value(), f_tgt);
    // Form B: |d/dt f + v|^2 with d/dt f = -F + (s-t) dF/dt.
    Tensor dfdt = t_add(t_mul(Tensor::full({1}, -1.0), F.value()),
                        t_mul(smt, dFdt.value()));
    Tensor rb = t_add(dfdt, v_t);

    Tensor norm_a({B}), norm_b({B});
    const int64_t D = ra.dim(1);
    for (int64_t i = 0; i < B; ++i) {
        double sa = 0, sb = 0;
        for (int64_t j = 0; j < D; ++j) {
            sa += ra.at(i * D + j) * ra.at(i * D + j);
            sb += rb.at(i * D + j) * rb.at(i * D + j);
        }
        norm_a.at(i) = sa / static_cast<double>(D);
        norm_b.at(i) = sb / static_cast<double>(D);
    }
    return {std::move(norm_a), std::move(norm_b)};
}

}  // namespace tvm
