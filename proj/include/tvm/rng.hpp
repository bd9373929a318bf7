#pragma once

#include <cstdint>
#include <random>

namespace tvm {

// Standard-normal quantile function (inverse CDF). Acklam's rational
// approximation polished with one Halley step; relative error ~1e-15.
double norm_ppf(double p);
// Standard-normal CDF via erfc.
double norm_cdf(double x);

double sigmoid(double x);
double logit(double p);

// Seeded stream RNG. Distributions are pinned here (uniforms from the 53-bit
// mantissa trick, gaussians by inversion) so that every draw is bit-stable
// across platforms and thread counts. One stream per worker, derived from
// (base_seed, stream_id).
class Rng {
  public:
    explicit Rng(uint64_t seed, uint64_t stream = 0);

    uint64_t next_u64();
    // Uniform on the open interval (0,1).
    double uniform01();
    double uniform(double lo, double hi);
    double gaussian();                      // N(0,1)
    double gaussian(double mu, double sd);  // N(mu, sd^2)
    bool bernoulli(double p);
    int64_t uniform_int(int64_t n);  // [0, n)

  private:
    std::mt19937_64 engine_;
};

}  // namespace tvm
