#include "tvm/schedules.hpp"

#include <algorithm>
#include <cmath>

#include "tvm/tensor.hpp"

namespace tvm {

TimeScheme time_scheme_from_string(const std::string& s) {
    if (s == "trunc") return TimeScheme::kTrunc;
    if (s == "clamp") return TimeScheme::kClamp;
    if (s == "gap") return TimeScheme::kGap;
    if (s == "gap_star") return TimeScheme::kGapStar;
    throw TvmError("unknown time scheme '" + s + "'");
}

std::string to_string(TimeScheme s) {
    switch (s) {
        case TimeScheme::kTrunc: return "trunc";
        case TimeScheme::kClamp: return "clamp";
        case TimeScheme::kGap: return "gap";
        case TimeScheme::kGapStar: return "gap_star";
    }
    throw TvmError("bad time scheme value");
}

void TimeSamplerConfig::validate() const {
    if (sigma_t <= 0 || sigma_g <= 0 || sigma_s <= 0)
        throw TvmError("time sampler sigmas must be > 0");
    if (pct_t_eq_s < 0 || pct_t_eq_s > 1)
        throw TvmError("pct_t_eq_s must lie in [0,1]");
}

void CfgSamplerConfig::validate() const {
    if (w < 1.0 || w_min < 1.0 || w_max < w_min)
        throw TvmError("guidance weights must satisfy 1 <= w_min <= w_max");
    if (dropout_p < 0 || dropout_p > 1) throw TvmError("dropout_p must lie in [0,1]");
}

double logit_normal(double mu, double sigma, Rng& rng) {
    return sigmoid(rng.gaussian(mu, sigma));
}

double truncated_logit_normal(double mu, double sigma, double upper, Rng& rng) {
    if (!(upper > 0.0 && upper < 1.0))
        throw TvmError("truncation bound must lie in (0,1)");
    const double z_up = (logit(upper) - mu) / sigma;
    const double mass = norm_cdf(z_up);
    double u = rng.uniform01() * mass;
    u = std::clamp(u, 1e-300, 1.0 - 1e-16);
    double x = sigmoid(mu + sigma * norm_ppf(u));
    return std::min(x, upper);
}

double truncated_logit_normal_cdf(double x, double mu, double sigma, double upper) {
    if (x <= 0) return 0;
    if (x >= upper) return 1;
    const double zx = (logit(x) - mu) / sigma;
    const double z_up = (logit(upper) - mu) / sigma;
    return norm_cdf(zx) / norm_cdf(z_up);
}

std::pair<double, double> sample_pair(const TimeSamplerConfig& cfg, Rng& rng) {
    cfg.validate();
    double t = 0, s = 0;
    switch (cfg.scheme) {
        case TimeScheme::kTrunc: {
            t = logit_normal(cfg.mu_t, cfg.sigma_t, rng);
            s = truncated_logit_normal(cfg.mu_s, cfg.sigma_s, t, rng);
            break;
        }
        case TimeScheme::kClamp: {
            t = logit_normal(cfg.mu_t, cfg.sigma_t, rng);
            s = logit_normal(cfg.mu_s, cfg.sigma_s, rng);
            if (s > t) s = t;
            break;
        }
        case TimeScheme::kGap:
        case TimeScheme::kGapStar: {
            double g = logit_normal(cfg.mu_g, cfg.sigma_g, rng);
            s = truncated_logit_normal(cfg.mu_s, cfg.sigma_s, 1.0 - g, rng);
            t = std::min(s + g, 1.0);
            break;
        }
    }
    if (cfg.pct_t_eq_s > 0 && rng.bernoulli(cfg.pct_t_eq_s)) s = t;
    s = std::clamp(s, 0.0, 1.0);
    t = std::clamp(t, s, 1.0);
    return {t, s};
}

double sample_s_fm(const TimeSamplerConfig& cfg, Rng& rng) {
    return logit_normal(cfg.mu_s, cfg.sigma_s, rng);
}

std::pair<int64_t, double> sample_cfg(const CfgSamplerConfig& cfg, Rng& rng, int64_t label,
                                      int64_t null_label) {
    cfg.validate();
    if (rng.bernoulli(cfg.dropout_p)) return {null_label, 1.0};
    double w = cfg.w;
    if (cfg.mode == CfgSamplerConfig::Mode::kRandom) {
        double beta = rng.uniform(1.0 / cfg.w_max, 1.0 / cfg.w_min);
        w = 1.0 / beta;
    }
    return {label, w};
}

}  // namespace tvm
