#include <cmath>
#include <string>
#include <vector>

#include "doctest.h"
#include "vclab/denoiser.hpp"
#include "vclab/rng.hpp"
#include "vclab/tensor.hpp"

using vclab::ConceptSet;
using vclab::Denoiser;
using vclab::DenoiserCache;
using vclab::DenoiserConfig;
using vclab::DenoiserGrads;
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

// The output layer starts at zero; give it weight so conditioning and
// gradients have something to act through.
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

TEST_CASE("a freshly initialized denoiser predicts exactly zero noise") {
  Denoiser<float> den(tiny_config());
  Rng rng(301);
  den.init(rng);
  Tensor<float> x({2, 32, 32, 3});
  x.fill_normal(rng);
  std::vector<ConceptSet<float>> z;
  z.push_back(random_concepts<float>({"shape", "size"}, 16, rng));
  z.push_back(random_concepts<float>({"object_color"}, 16, rng));
  DenoiserCache<float> cache;
  Tensor<float> eps = den.forward(x, {10, 900}, z, cache);
  REQUIRE(eps.shape == x.shape);
  for (int64_t i = 0; i < eps.numel(); ++i) CHECK(eps[i] == 0.0f);
}

TEST_CASE("the denoiser is deterministic and conditioning matters") {
  Denoiser<float> den(tiny_config());
  Rng rng(302);
  den.init(rng);
  wake_output_layer(den, rng);
  Tensor<float> x({1, 32, 32, 3});
  x.fill_normal(rng);
  std::vector<ConceptSet<float>> z;
  z.push_back(random_concepts<float>({"shape", "size"}, 16, rng));

  DenoiserCache<float> c1, c2;
  Tensor<float> e1 = den.forward(x, {400}, z, c1);
  Tensor<float> e2 = den.forward(x, {400}, z, c2);
  CHECK(vclab::max_abs_diff(e1, e2) == 0.0f);

  std::vector<ConceptSet<float>> other = z;
  other[0].z.fill_normal(rng);
  DenoiserCache<float> c3;
  Tensor<float> e3 = den.forward(x, {400}, other, c3);
  CHECK(vclab::max_abs_diff(e1, e3) > 0.0f);

  DenoiserCache<float> c4;
  Tensor<float> e4 = den.forward(x, {401}, z, c4);
  CHECK(vclab::max_abs_diff(e1, e4) > 0.0f);
}

TEST_CASE("padded concept slots never touch the prediction") {
  Denoiser<float> den(tiny_config());
  Rng rng(303);
  den.init(rng);
  wake_output_layer(den, rng);
  Tensor<float> x({1, 32, 32, 3});
  x.fill_normal(rng);

  std::vector<ConceptSet<float>> bare;
  bare.push_back(random_concepts<float>({"shape", "size"}, 16, rng));

  ConceptSet<float> padded;
  padded.axis_names = {"junk", "shape", "size", "junk2"};
  padded.valid = {0, 1, 1, 0};
  padded.z = Tensor<float>({4, 16});
  padded.z.fill_normal(rng, 0.0f, 50.0f);
  for (int c = 0; c < 16; ++c) {
    padded.z.at(1, c) = bare[0].z.at(0, c);
    padded.z.at(2, c) = bare[0].z.at(1, c);
  }

  DenoiserCache<float> c1, c2;
  Tensor<float> e1 = den.forward(x, {250}, bare, c1);
  Tensor<float> e2 = den.forward(x, {250}, {padded}, c2);
  CHECK(vclab::max_abs_diff(e1, e2) == 0.0f);
}

TEST_CASE("permuting concept entries leaves the prediction bit-identical") {
  Denoiser<float> den(tiny_config());
  Rng rng(304);
  den.init(rng);
  wake_output_layer(den, rng);
  Tensor<float> x({1, 32, 32, 3});
  x.fill_normal(rng);

  ConceptSet<float> abc =
      random_concepts<float>({"alpha", "beta", "gamma"}, 16, rng);
  ConceptSet<float> cab;
  cab.axis_names = {"gamma", "alpha", "beta"};
  cab.z = Tensor<float>({3, 16});
  std::vector<int> src = {2, 0, 1};
  for (int i = 0; i < 3; ++i) {
    for (int c = 0; c < 16; ++c) {
      cab.z.at(i, c) = abc.z.at(src[size_t(i)], c);
    }
  }

  DenoiserCache<float> c1, c2;
  Tensor<float> e1 = den.forward(x, {600}, {abc}, c1);
  Tensor<float> e2 = den.forward(x, {600}, {cab}, c2);
  CHECK(vclab::max_abs_diff(e1, e2) == 0.0f);
}

TEST_CASE("denoiser gradients match directional finite differences") {
  Denoiser<double> den(tiny_config());
  Rng rng(305);
  den.init(rng);
  wake_output_layer(den, rng);
  Tensor<double> x({2, 32, 32, 3});
  x.fill_normal(rng);
  std::vector<int> t = {3, 800};
  std::vector<ConceptSet<double>> z;
  z.push_back(random_concepts<double>({"shape", "size"}, 16, rng));
  z.push_back(
      random_concepts<double>({"texture", "shape", "border"}, 16, rng));
  Tensor<double> w({2, 32, 32, 3});
  w.fill_normal(rng);

  auto loss = [&]() {
    DenoiserCache<double> cache;
    Tensor<double> eps = den.forward(x, t, z, cache);
    return vclab::dot(eps, w);
  };

  DenoiserCache<double> cache;
  den.forward(x, t, z, cache);
  den.zero_grads();
  DenoiserGrads<double> g = den.backward(w, cache);

  Rng dir_rng(306);
  const double h = 1e-5;

  for (int trial = 0; trial < 4; ++trial) {
    Tensor<double> v(x.shape);
    v.fill_normal(dir_rng);
    double analytic = vclab::dot(g.dx, v);
    Tensor<double> saved = x;
    vclab::axpy(h, v, x);
    double lp = loss();
    x = saved;
    vclab::axpy(-h, v, x);
    double lm = loss();
    x = saved;
    CHECK(rel_err((lp - lm) / (2.0 * h), analytic) < 1e-6);
  }

  for (size_t img = 0; img < z.size(); ++img) {
    Tensor<double> v(z[img].z.shape);
    v.fill_normal(dir_rng);
    double analytic = vclab::dot(g.dz[img], v);
    Tensor<double> saved = z[img].z;
    vclab::axpy(h, v, z[img].z);
    double lp = loss();
    z[img].z = saved;
    vclab::axpy(-h, v, z[img].z);
    double lm = loss();
    z[img].z = saved;
    CHECK(rel_err((lp - lm) / (2.0 * h), analytic) < 1e-6);
  }

  ParamList<double> params;
  den.collect("d", params);
  for (size_t pi = 0; pi < params.size(); pi += 5) {
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

TEST_CASE("shape and alignment violations are rejected") {
  Denoiser<float> den(tiny_config());
  Rng rng(307);
  den.init(rng);
  Tensor<float> wrong({1, 16, 16, 3});
  std::vector<ConceptSet<float>> z;
  z.push_back(random_concepts<float>({"shape"}, 16, rng));
  DenoiserCache<float> cache;
  CHECK_THROWS_AS(den.forward(wrong, {10}, z, cache), vclab::Error);

  Tensor<float> x({1, 32, 32, 3});
  CHECK_THROWS_AS(den.forward(x, {10, 20}, z, cache), vclab::Error);

  std::vector<ConceptSet<float>> bad_dim;
  bad_dim.push_back(random_concepts<float>({"shape"}, 8, rng));
  CHECK_THROWS_AS(den.forward(x, {10}, bad_dim, cache), vclab::Error);
}
