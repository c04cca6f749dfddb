#pragma once

#include <cmath>
#include <vector>

#include "vclab/common.hpp"
#include "vclab/tensor.hpp"

namespace vclab {

// Discrete noise schedule. Betas rise linearly; the cumulative products are
// kept in double regardless of the tensor type used downstream so repeated
// multiplication does not drift.
class NoiseSchedule {
 public:
  static NoiseSchedule linear(int steps = 1000, double beta_start = 1e-4,
                              double beta_end = 2e-2);

  int steps() const { return int(beta_.size()); }
  double beta(int t) const { return beta_.at(size_t(check_t(t))); }
  double alpha(int t) const { return 1.0 - beta(t); }
  double alpha_bar(int t) const {
    return alpha_bar_.at(size_t(check_t(t)));
  }

 private:
  int check_t(int t) const {
    VCLAB_CHECK_ARG(t >= 0 && t < steps(),
                    "timestep " << t << " outside [0, " << steps() << ")");
    return t;
  }

  std::vector<double> beta_;
  std::vector<double> alpha_bar_;
};

// x_t = sqrt(abar_t) * x + sqrt(1 - abar_t) * eps, elementwise and exact.
template <typename T>
Tensor<T> forward_noise(const Tensor<T>& x, int t, const Tensor<T>& eps,
                        const NoiseSchedule& schedule) {
  VCLAB_CHECK_ARG(x.shape == eps.shape,
                  "image and noise shapes differ: " << shape_to_string(x.shape)
                                                    << " vs "
                                                    << shape_to_string(
                                                           eps.shape));
  double abar = schedule.alpha_bar(t);
  T signal = T(std::sqrt(abar));
  T noise = T(std::sqrt(1.0 - abar));
  Tensor<T> out(x.shape);
  for (int64_t i = 0; i < x.numel(); ++i) {
    out[i] = signal * x[i] + noise * eps[i];
  }
  return out;
}

}  // namespace vclab
