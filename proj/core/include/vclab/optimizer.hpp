#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "vclab/common.hpp"
#include "vclab/nn_ops.hpp"
#include "vclab/tensor.hpp"

namespace vclab {

struct AdamConfig {
  double lr = 3e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adaptive-moment optimizer with bias correction and a fixed learning rate.
// Moments are stored in the parameter precision but every update is computed
// in double, so the trajectory is deterministic and a restored state resumes
// it bit for bit.
template <typename T>
class Adam {
 public:
  struct Slot {
    std::string name;
    Param<T>* param = nullptr;
    Tensor<T> m;
    Tensor<T> v;
  };

  Adam() = default;

  explicit Adam(const ParamList<T>& params, const AdamConfig& config = {})
      : config_(config) {
    VCLAB_CHECK_ARG(config.lr > 0.0, "learning rate must be positive");
    VCLAB_CHECK_ARG(config.beta1 >= 0.0 && config.beta1 < 1.0 &&
                        config.beta2 >= 0.0 && config.beta2 < 1.0,
                    "moment coefficients must lie in [0, 1)");
    VCLAB_CHECK_ARG(config.eps > 0.0, "epsilon must be positive");
    VCLAB_CHECK_ARG(!params.empty(), "optimizer needs at least one parameter");
    slots_.reserve(params.size());
    for (const NamedParam<T>& np : params) {
      Slot s;
      s.name = np.name;
      s.param = np.param;
      s.m = Tensor<T>(np.param->value.shape);
      s.v = Tensor<T>(np.param->value.shape);
      slots_.push_back(std::move(s));
    }
  }

  void step() {
    ++t_;
    double bc1 = 1.0 - std::pow(config_.beta1, double(t_));
    double bc2 = 1.0 - std::pow(config_.beta2, double(t_));
    for (Slot& s : slots_) {
      Tensor<T>& value = s.param->value;
      const Tensor<T>& grad = s.param->grad;
      for (int64_t i = 0; i < value.numel(); ++i) {
        double g = double(grad[i]);
        double m = config_.beta1 * double(s.m[i]) + (1.0 - config_.beta1) * g;
        double v =
            config_.beta2 * double(s.v[i]) + (1.0 - config_.beta2) * g * g;
        s.m[i] = T(m);
        s.v[i] = T(v);
        value[i] = T(double(value[i]) -
                     config_.lr * (m / bc1) /
                         (std::sqrt(v / bc2) + config_.eps));
      }
    }
  }

  void zero_grads() {
    for (Slot& s : slots_) s.param->grad.zero();
  }

  int64_t step_count() const { return t_; }

  void set_step_count(int64_t t) {
    VCLAB_CHECK_ARG(t >= 0, "step count cannot be negative");
    t_ = t;
  }

  std::vector<Slot>& slots() { return slots_; }
  const std::vector<Slot>& slots() const { return slots_; }
  const AdamConfig& config() const { return config_; }

 private:
  AdamConfig config_;
  std::vector<Slot> slots_;
  int64_t t_ = 0;
};

}  // namespace vclab
