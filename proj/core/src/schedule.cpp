#include "vclab/schedule.hpp"

namespace vclab {

NoiseSchedule NoiseSchedule::linear(int steps, double beta_start,
                                    double beta_end) {
  VCLAB_CHECK_ARG(steps >= 2, "schedule needs at least two steps");
  VCLAB_CHECK_ARG(beta_start > 0.0 && beta_end >= beta_start &&
                      beta_end < 1.0,
                  "betas must satisfy 0 < start <= end < 1");
  NoiseSchedule s;
  s.beta_.resize(size_t(steps));
  s.alpha_bar_.resize(size_t(steps));
  double running = 1.0;
  for (int t = 0; t < steps; ++t) {
    double frac = double(t) / double(steps - 1);
    double b = beta_start + (beta_end - beta_start) * frac;
    s.beta_[size_t(t)] = b;
    running *= 1.0 - b;
    s.alpha_bar_[size_t(t)] = running;
    VCLAB_CHECK(running > 0.0, ErrorCode::kNumeric,
                "cumulative signal fraction vanished at step " << t);
    if (t > 0) {
      VCLAB_CHECK(s.alpha_bar_[size_t(t)] < s.alpha_bar_[size_t(t - 1)],
                  ErrorCode::kNumeric,
                  "cumulative signal fraction must strictly decrease");
    }
  }
  return s;
}

}  // namespace vclab
