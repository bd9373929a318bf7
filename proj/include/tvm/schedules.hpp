#pragma once

#include <cstdint>
#include <string>
#include <utility>

#include "tvm/rng.hpp"

namespace tvm {

enum class TimeScheme { kTrunc, kClamp, kGap, kGapStar };

TimeScheme time_scheme_from_string(const std::string& s);
std::string to_string(TimeScheme s);

// Time-pair sampler settings. trunc/clamp draw t from (mu_t, sigma_t); the
// gap family draws the gap g = t - s from (mu_g, sigma_g). s always uses
// (mu_s, sigma_s), which gap* reuses for the independent velocity-term time.
struct TimeSamplerConfig {
    TimeScheme scheme = TimeScheme::kGapStar;
    double mu_t = 1.0, sigma_t = 1.0;
    double mu_g = -0.8, sigma_g = 1.0;
    double mu_s = -0.4, sigma_s = 1.0;
    double pct_t_eq_s = 0.0;  // probability of collapsing a pair onto t == s
    void validate() const;
};

struct CfgSamplerConfig {
    enum class Mode { kConstant, kRandom };
    Mode mode = Mode::kConstant;
    double w = 1.0;             // constant mode
    double w_min = 1.0, w_max = 1.0;  // random mode: beta ~ U(1/w_max, 1/w_min)
    double dropout_p = 0.1;
    void validate() const;
};

// sigmoid of a Normal(mu, sigma) draw; always in the open interval (0,1).
double logit_normal(double mu, double sigma, Rng& rng);

// Inverse-CDF draw from the logit-normal restricted to (0, upper], i.e. the
// per-bound renormalized truncated distribution.
double truncated_logit_normal(double mu, double sigma, double upper, Rng& rng);

// CDF of the truncated logit-normal above (test oracle).
double truncated_logit_normal_cdf(double x, double mu, double sigma, double upper);

// Draws one (t, s) pair with 0 <= s <= t <= 1 under the configured scheme,
// then applies the optional t == s collapse.
std::pair<double, double> sample_pair(const TimeSamplerConfig& cfg, Rng& rng);

// Independent velocity-term time for the gap* scheme (untruncated).
double sample_s_fm(const TimeSamplerConfig& cfg, Rng& rng);

// Label dropout plus guidance-weight draw: returns (label_out, w) where a
// dropped label becomes null_label with w = 1.
std::pair<int64_t, double> sample_cfg(const CfgSamplerConfig& cfg, Rng& rng, int64_t label,
                                      int64_t null_label);

}  // namespace tvm
