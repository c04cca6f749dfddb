#pragma once

#include <cmath>
#include <vector>

#include "vclab/common.hpp"
#include "vclab/denoiser.hpp"
#include "vclab/rng.hpp"
#include "vclab/schedule.hpp"
#include "vclab/tensor.hpp"

namespace vclab {

struct DdimConfig {
  int steps = 10;
  int grad_steps = 1;
};

// Trajectory record for one sampling run. States are kept for every step;
// denoiser caches only for the final grad_steps, which is all backward may
// traverse.
template <typename T>
struct DdimCache {
  std::vector<int> taus;
  std::vector<double> scale_prev;   // a_k: carry factor for x
  std::vector<double> scale_eps;    // b_k: factor for predicted noise
  std::vector<Tensor<T>> states;    // states[k] = x entering update k
  std::vector<DenoiserCache<T>> den;  // den[k] valid iff k >= first_grad
  int first_grad = 0;
  int64_t n = 0;
};

template <typename T>
struct DdimGrads {
  std::vector<Tensor<T>> dz;
};

// Deterministic DDIM (eta = 0) over an evenly spaced descending sub-schedule
// of `steps` timesteps, starting from pure noise drawn from `rng`.
template <typename T>
Tensor<T> ddim_sample(const Denoiser<T>& denoiser,
                      const NoiseSchedule& schedule,
                      const std::vector<ConceptSet<T>>& z,
                      const DdimConfig& config, Rng& rng,
                      DdimCache<T>& cache) {
  VCLAB_CHECK_ARG(config.steps >= 1, "sampler needs at least one step");
  VCLAB_CHECK_ARG(config.grad_steps >= 0 &&
                      config.grad_steps <= config.steps,
                  "grad_steps must lie in [0, steps]");
  VCLAB_CHECK_ARG(!z.empty(), "sampler needs at least one concept set");
  int64_t n = int64_t(z.size());
  int s = denoiser.config().image_size;

  cache = DdimCache<T>();
  cache.n = n;
  cache.first_grad = config.steps - config.grad_steps;
  cache.taus.resize(size_t(config.steps));
  for (int k = 0; k < config.steps; ++k) {
    // Descending: tau_0 is the noisiest timestep.
    cache.taus[size_t(k)] =
        (config.steps - k) * schedule.steps() / config.steps - 1;
  }
  cache.scale_prev.resize(size_t(config.steps));
  cache.scale_eps.resize(size_t(config.steps));
  cache.states.reserve(size_t(config.steps));
  cache.den.resize(size_t(config.steps));

  Tensor<T> x({n, s, s, 3});
  x.fill_normal(rng);
  for (int k = 0; k < config.steps; ++k) {
    int tau = cache.taus[size_t(k)];
    double abar = schedule.alpha_bar(tau);
    double abar_prev = k + 1 < config.steps
                           ? schedule.alpha_bar(cache.taus[size_t(k + 1)])
                           : 1.0;
    double a = std::sqrt(abar_prev / abar);
    double b = std::sqrt(1.0 - abar_prev) - a * std::sqrt(1.0 - abar);
    cache.scale_prev[size_t(k)] = a;
    cache.scale_eps[size_t(k)] = b;
    cache.states.push_back(x);

    std::vector<int> t(size_t(n), tau);
    DenoiserCache<T> scratch;
    DenoiserCache<T>& dc =
        k >= cache.first_grad ? cache.den[size_t(k)] : scratch;
    Tensor<T> eps = denoiser.forward(x, t, z, dc);
    for (int64_t i = 0; i < x.numel(); ++i) {
      x[i] = T(a) * x[i] + T(b) * eps[i];
    }
  }
  return x;
}

// Backpropagates through the final grad_steps updates only; earlier states
// are treated as constants. Denoiser parameter gradients accumulate subject
// to its train_params flags; concept gradients are returned per image.
template <typename T>
DdimGrads<T> ddim_backward(Denoiser<T>& denoiser, const Tensor<T>& dout,
                           const DdimCache<T>& cache) {
  int steps = int(cache.taus.size());
  DdimGrads<T> grads;
  Tensor<T> dx = dout;
  bool dz_ready = false;
  for (int k = steps - 1; k >= cache.first_grad; --k) {
    T b = T(cache.scale_eps[size_t(k)]);
    Tensor<T> deps(dx.shape);
    for (int64_t i = 0; i < dx.numel(); ++i) deps[i] = b * dx[i];
    DenoiserGrads<T> g = denoiser.backward(deps, cache.den[size_t(k)]);
    if (!dz_ready) {
      grads.dz = std::move(g.dz);
      dz_ready = true;
    } else {
      for (size_t i = 0; i < grads.dz.size(); ++i) {
        axpy(T(1), g.dz[i], grads.dz[i]);
      }
    }
    T a = T(cache.scale_prev[size_t(k)]);
    for (int64_t i = 0; i < dx.numel(); ++i) {
      dx[i] = a * dx[i] + g.dx[i];
    }
  }
  if (!dz_ready) {
    // grad_steps = 0: no gradient flows at all; shape the output anyway.
    grads.dz.resize(size_t(cache.n));
  }
  return grads;
}

}  // namespace vclab
