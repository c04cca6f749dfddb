#include <cmath>
#include <string>
#include <vector>

#include "doctest.h"
#include "vclab/denoiser.hpp"
#include "vclab/rng.hpp"
#include "vclab/sampler.hpp"
#include "vclab/schedule.hpp"
#include "vclab/tensor.hpp"

using vclab::ConceptSet;
using vclab::DdimCache;
using vclab::DdimConfig;
using vclab::DdimGrads;
using vclab::Denoiser;
using vclab::DenoiserCache;
using vclab::DenoiserConfig;
using vclab::NoiseSchedule;
using vclab::ParamList;
using vclab::Rng;
using vclab::Tensor;

namespace {

DenoiserConfig tiny_config() {
  DenoiserConfig cfg;
  cfg.base_ch = 8;
  cfg.mid_ch = 8;
  cfg.temb_dim = 8;
  cfg.heads = 2;
  cfg.z_dim = 16;
  cfg.groups = 2;
  return cfg;
}

template <typename T>
ConceptSet<T> random_concepts(const std::vector<std::string>& names, int dim,
                              Rng& rng) {
  ConceptSet<T> cs;
  cs.axis_names = names;
  cs.z = Tensor<T>({int64_t(names.size()), dim});
  cs.z.fill_normal(rng);
  return cs;
}

template <typename T>
void wake_output_layer(Denoiser<T>& den, Rng& rng) {
  ParamList<T> params;
  den.collect("d", params);
  for (auto& p : params) {
    if (p.name.find("conv_out") != std::string::npos) {
      p.param->value.fill_normal(rng, T(0), T(0.05));
    }
  }
}

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

}  // namespace

TEST_CASE("one zero-denoiser step rescales the starting noise exactly") {
  Denoiser<float> den(tiny_config());
  Rng init_rng(401);
  den.init(init_rng);  // output layer stays zero

  NoiseSchedule sched = NoiseSchedule::linear();
  std::vector<ConceptSet<float>> z;
  z.push_back(random_concepts<float>({"shape"}, 16, init_rng));

  DdimConfig cfg;
  cfg.steps = 1;
  cfg.grad_steps = 0;
  Rng rng(402);
  DdimCache<float> cache;
  Tensor<float> out = vclab::ddim_sample(den, sched, z, cfg, rng, cache);

  REQUIRE(cache.taus.size() == 1);
  CHECK(cache.taus[0] == 999);
  float scale = float(std::sqrt(1.0 / sched.alpha_bar(999)));
  const Tensor<float>& x_t = cache.states[0];
  for (int64_t i = 0; i < out.numel(); ++i) {
    CHECK(out[i] == scale * x_t[i]);
  }
}

TEST_CASE("sampling is bit-stable for a fixed seed and concepts") {
  Denoiser<float> den(tiny_config());
  Rng init_rng(403);
  den.init(init_rng);
  wake_output_layer(den, init_rng);
  NoiseSchedule sched = NoiseSchedule::linear();
  std::vector<ConceptSet<float>> z;
  z.push_back(random_concepts<float>({"shape", "size"}, 16, init_rng));
  z.push_back(random_concepts<float>({"texture"}, 16, init_rng));

  DdimConfig cfg;
  cfg.steps = 10;
  cfg.grad_steps = 1;

  Rng r1(404), r2(404), r3(405);
  DdimCache<float> c1, c2, c3;
  Tensor<float> a = vclab::ddim_sample(den, sched, z, cfg, r1, c1);
  Tensor<float> b = vclab::ddim_sample(den, sched, z, cfg, r2, c2);
  Tensor<float> c = vclab::ddim_sample(den, sched, z, cfg, r3, c3);
  CHECK(vclab::max_abs_diff(a, b) == 0.0f);
  CHECK(vclab::max_abs_diff(a, c) > 0.0f);
  CHECK(a.dim(0) == 2);

  SUBCASE("the sub-schedule is evenly spaced and descending") {
    REQUIRE(c1.taus.size() == 10);
    CHECK(c1.taus.front() == 999);
    CHECK(c1.taus.back() == 99);
    for (size_t i = 1; i < c1.taus.size(); ++i) {
      CHECK(c1.taus[i - 1] - c1.taus[i] == 100);
    }
  }
}

TEST_CASE("invalid sampler arguments are rejected") {
  Denoiser<float> den(tiny_config());
  Rng rng(406);
  den.init(rng);
  NoiseSchedule sched = NoiseSchedule::linear();
  std::vector<ConceptSet<float>> z;
  z.push_back(random_concepts<float>({"shape"}, 16, rng));
  DdimCache<float> cache;

  DdimConfig bad;
  bad.steps = 0;
  CHECK_THROWS_AS(vclab::ddim_sample(den, sched, z, bad, rng, cache),
                  vclab::Error);
  bad.steps = 4;
  bad.grad_steps = 5;
  CHECK_THROWS_AS(vclab::ddim_sample(den, sched, z, bad, rng, cache),
                  vclab::Error);
  bad.grad_steps = -1;
  CHECK_THROWS_AS(vclab::ddim_sample(den, sched, z, bad, rng, cache),
                  vclab::Error);
  DdimConfig ok;
  std::vector<ConceptSet<float>> empty;
  CHECK_THROWS_AS(vclab::ddim_sample(den, sched, empty, ok, rng, cache),
                  vclab::Error);
}

TEST_CASE("full-depth gradients match finite differences on two steps") {
  Denoiser<double> den(tiny_config());
  Rng init_rng(407);
  den.init(init_rng);
  wake_output_layer(den, init_rng);
  NoiseSchedule sched = NoiseSchedule::linear();
  std::vector<ConceptSet<double>> z;
  z.push_back(random_concepts<double>({"shape", "size"}, 16, init_rng));

  DdimConfig cfg;
  cfg.steps = 2;
  cfg.grad_steps = 2;

  Tensor<double> w({1, 32, 32, 3});
  w.fill_normal(init_rng);

  auto loss = [&]() {
    Rng rng(408);
    DdimCache<double> cache;
    Tensor<double> out = vclab::ddim_sample(den, sched, z, cfg, rng, cache);
    return vclab::dot(out, w);
  };

  Rng rng(408);
  DdimCache<double> cache;
  vclab::ddim_sample(den, sched, z, cfg, rng, cache);
  den.zero_grads();
  DdimGrads<double> g = vclab::ddim_backward(den, w, cache);

  Rng dir_rng(409);
  const double h = 1e-5;
  for (int trial = 0; trial < 4; ++trial) {
    Tensor<double> v(z[0].z.shape);
    v.fill_normal(dir_rng);
    double analytic = vclab::dot(g.dz[0], v);
    Tensor<double> saved = z[0].z;
    vclab::axpy(h, v, z[0].z);
    double lp = loss();
    z[0].z = saved;
    vclab::axpy(-h, v, z[0].z);
    double lm = loss();
    z[0].z = saved;
    CHECK(rel_err((lp - lm) / (2.0 * h), analytic) < 1e-6);
  }

  ParamList<double> params;
  den.collect("d", params);
  for (size_t pi = 0; pi < params.size(); pi += 6) {
    vclab::Param<double>* p = params[pi].param;
    CAPTURE(params[pi].name);
    Tensor<double> v(p->value.shape);
    v.fill_normal(dir_rng);
    double analytic = vclab::dot(p->grad, v);
    Tensor<double> saved = p->value;
    vclab::axpy(h, v, p->value);
    double lp = loss();
    p->value = saved;
    vclab::axpy(-h, v, p->value);
    double lm = loss();
    p->value = saved;
    CHECK(rel_err((lp - lm) / (2.0 * h), analytic) < 1e-6);
  }
}

TEST_CASE("one-step truncation keeps exactly the last update's gradient") {
  Denoiser<double> den(tiny_config());
  Rng init_rng(410);
  den.init(init_rng);
  wake_output_layer(den, init_rng);
  NoiseSchedule sched = NoiseSchedule::linear();
  std::vector<ConceptSet<double>> z;
  z.push_back(random_concepts<double>({"shape", "size"}, 16, init_rng));

  Tensor<double> w({1, 32, 32, 3});
  w.fill_normal(init_rng);

  DdimConfig truncated;
  truncated.steps = 2;
  truncated.grad_steps = 1;
  Rng r1(411);
  DdimCache<double> cache1;
  vclab::ddim_sample(den, sched, z, truncated, r1, cache1);
  den.zero_grads();
  DdimGrads<double> g1 = vclab::ddim_backward(den, w, cache1);

  // Reference: backprop the final update by hand with its input frozen.
  const Tensor<double>& x_mid = cache1.states[1];
  std::vector<int> t_last = {cache1.taus[1]};
  DenoiserCache<double> manual;
  den.forward(x_mid, t_last, z, manual);
  Tensor<double> deps(w.shape);
  for (int64_t i = 0; i < w.numel(); ++i) {
    deps[i] = cache1.scale_eps[1] * w[i];
  }
  vclab::DenoiserGrads<double> ref = den.backward(deps, manual);
  CHECK(vclab::max_abs_diff(g1.dz[0], ref.dz[0]) == 0.0);

  // And it matches finite differences of the frozen-input last update.
  auto last_update = [&]() {
    DenoiserCache<double> c;
    Tensor<double> eps = den.forward(x_mid, t_last, z, c);
    double s = 0.0;
    for (int64_t i = 0; i < w.numel(); ++i) {
      s += (cache1.scale_prev[1] * x_mid[i] +
            cache1.scale_eps[1] * eps[i]) *
           w[i];
    }
    return s;
  };
  Rng dir_rng(412);
  const double h = 1e-5;
  for (int trial = 0; trial < 3; ++trial) {
    Tensor<double> v(z[0].z.shape);
    v.fill_normal(dir_rng);
    double analytic = vclab::dot(g1.dz[0], v);
    Tensor<double> saved = z[0].z;
    vclab::axpy(h, v, z[0].z);
    double lp = last_update();
    z[0].z = saved;
    vclab::axpy(-h, v, z[0].z);
    double lm = last_update();
    z[0].z = saved;
    CHECK(rel_err((lp - lm) / (2.0 * h), analytic) < 1e-6);
  }

  // Truncation must actually change the gradient relative to full depth.
  DdimConfig full;
  full.steps = 2;
  full.grad_steps = 2;
  Rng r2(411);
  DdimCache<double> cache2;
  vclab::ddim_sample(den, sched, z, full, r2, cache2);
  den.zero_grads();
  DdimGrads<double> g2 = vclab::ddim_backward(den, w, cache2);
  CHECK(vclab::max_abs_diff(g1.dz[0], g2.dz[0]) > 0.0);
}

TEST_CASE("a parameter-frozen denoiser accumulates nothing while sampling") {
  Denoiser<float> den(tiny_config());
  Rng rng(413);
  den.init(rng);
  wake_output_layer(den, rng);
  den.set_train_params(false);
  NoiseSchedule sched = NoiseSchedule::linear();
  std::vector<ConceptSet<float>> z;
  z.push_back(random_concepts<float>({"shape"}, 16, rng));

  DdimConfig cfg;
  cfg.steps = 3;
  cfg.grad_steps = 3;
  DdimCache<float> cache;
  vclab::ddim_sample(den, sched, z, cfg, rng, cache);
  den.zero_grads();
  Tensor<float> w({1, 32, 32, 3});
  w.fill(1.0f);
  DdimGrads<float> g = vclab::ddim_backward(den, w, cache);

  ParamList<float> params;
  den.collect("d", params);
  for (auto& p : params) {
    CAPTURE(p.name);
    for (int64_t i = 0; i < p.param->grad.numel(); ++i) {
      CHECK(p.param->grad[i] == 0.0f);
    }
  }
  double flow = 0.0;
  for (int64_t i = 0; i < g.dz[0].numel(); ++i) {
    flow += std::abs(double(g.dz[0][i]));
  }
  CHECK(flow > 0.0);
}
