#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "vclab/axes.hpp"
#include "vclab/common.hpp"
#include "vclab/denoiser.hpp"
#include "vclab/encoder.hpp"
#include "vclab/nn_ops.hpp"
#include "vclab/rng.hpp"
#include "vclab/sampler.hpp"
#include "vclab/schedule.hpp"
#include "vclab/tensor.hpp"

namespace vclab {

// ---------------------------------------------------------------------------
// Cosine distance. Accumulation runs in double regardless of T so float
// callers see the same value a double caller would, rounded once at the end.

template <typename T>
T cosine_distance(const T* u, const T* v, int64_t n) {
  double uu = 0.0, vv = 0.0, uv = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    uu += double(u[i]) * double(u[i]);
    vv += double(v[i]) * double(v[i]);
    uv += double(u[i]) * double(v[i]);
  }
  double nu = std::sqrt(uu), nv = std::sqrt(vv);
  VCLAB_CHECK(nu > 0.0 && nv > 0.0, ErrorCode::kNumeric,
              "cosine distance is undefined for a zero-norm vector");
  return T(1.0 - uv / (nu * nv));
}

template <typename T>
T cosine_distance(const Tensor<T>& u, const Tensor<T>& v) {
  VCLAB_CHECK_ARG(u.numel() == v.numel() && u.numel() > 0,
                  "cosine distance needs two equal-length vectors");
  return cosine_distance(u.data.data(), v.data.data(), u.numel());
}

// Accumulates upstream * d(dist)/du into du and likewise for dv; either
// output pointer may be null when that side is constant.
template <typename T>
void cosine_distance_backward(const T* u, const T* v, int64_t n, T upstream,
                              T* du, T* dv) {
  double uu = 0.0, vv = 0.0, uv = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    uu += double(u[i]) * double(u[i]);
    vv += double(v[i]) * double(v[i]);
    uv += double(u[i]) * double(v[i]);
  }
  double nu = std::sqrt(uu), nv = std::sqrt(vv);
  VCLAB_CHECK(nu > 0.0 && nv > 0.0, ErrorCode::kNumeric,
              "cosine distance is undefined for a zero-norm vector");
  double inv = double(upstream) / (nu * nv);
  double cu = uv / uu;
  double cv = uv / vv;
  for (int64_t i = 0; i < n; ++i) {
    if (du) du[i] += T(inv * (cu * double(u[i]) - double(v[i])));
    if (dv) dv[i] += T(inv * (cv * double(v[i]) - double(u[i])));
  }
}

// ---------------------------------------------------------------------------
// Regression head: maps a concept vector toward its description embedding.
// One head is shared across every axis; there is no per-axis state anywhere.

template <typename T>
struct RegressionHeadCache {
  LinearCache<T> fc1;
  ActCache<T> act;
  LinearCache<T> fc2;
};

template <typename T>
class RegressionHead {
 public:
  RegressionHead() = default;
  explicit RegressionHead(int dim) : fc1_(dim, dim), fc2_(dim, dim) {}

  void init(Rng& rng) {
    fc1_.init(rng);
    fc2_.init(rng);
  }

  Tensor<T> forward(const Tensor<T>& rows,
                    RegressionHeadCache<T>& cache) const {
    Tensor<T> h = fc1_.forward(rows, cache.fc1);
    h = relu_forward(h, cache.act);
    return fc2_.forward(h, cache.fc2);
  }

  Tensor<T> backward(const Tensor<T>& dout,
                     const RegressionHeadCache<T>& cache) {
    Tensor<T> dh = fc2_.backward(dout, cache.fc2);
    dh = relu_backward(dh, cache.act);
    return fc1_.backward(dh, cache.fc1);
  }

  void collect(const std::string& prefix, ParamList<T>& out) {
    fc1_.collect(prefix + ".fc1", out);
    fc2_.collect(prefix + ".fc2", out);
  }

  void set_train_params(bool on) {
    fc1_.train_params = on;
    fc2_.train_params = on;
  }

  bool train_params() const { return fc1_.train_params; }

  void zero_grads() {
    ParamList<T> all;
    collect("g", all);
    for (auto& p : all) p.param->grad.zero();
  }

 private:
  Linear<T> fc1_;
  Linear<T> fc2_;
};

// ---------------------------------------------------------------------------
// Swap planning. A plan lists description exchanges between batch images
// that share an axis; applying it to concept sets builds the composites.

struct SwapRecord {
  std::string axis;
  int64_t a = 0;
  int64_t b = 0;
};

struct SwapConfig {
  int min_swaps = 1;
  int max_swaps = 2;
};

struct SwapPlan {
  std::vector<SwapRecord> records;
  // Per image: its own dictionary with swapped descriptions substituted in.
  std::vector<AxisDictionary> composed;
  std::vector<char> touched;

  bool image_touched(size_t i) const {
    return i < touched.size() && touched[i] != 0;
  }
};

// Draws a plan for one batch. Images are visited in index order; each picks
// a swap count uniformly from [min_swaps, max_swaps] truncated to its still
// unclaimed shareable axes, then a uniform partner per chosen axis. Every
// (image, axis) pair lands in at most one record, and an axis nobody else
// carries is never swapped.
SwapPlan build_swap_plan(const std::vector<AxisDictionary>& dicts,
                         const SwapConfig& config, Rng& rng);

// Exchanges concept rows between images per the plan. Inputs are untouched;
// rows outside the swapped pairs are copied through bit for bit, so applying
// the same plan twice restores the original sets exactly.
template <typename T>
std::vector<ConceptSet<T>> apply_swap(const std::vector<ConceptSet<T>>& sets,
                                      const SwapPlan& plan) {
  std::vector<ConceptSet<T>> out = sets;
  int64_t n = int64_t(sets.size());
  for (const SwapRecord& r : plan.records) {
    VCLAB_CHECK(r.a >= 0 && r.a < n && r.b >= 0 && r.b < n && r.a != r.b,
                ErrorCode::kInvalidArgument,
                "swap record references images outside the batch");
    int64_t sa = out[size_t(r.a)].find(r.axis);
    int64_t sb = out[size_t(r.b)].find(r.axis);
    VCLAB_CHECK(sa >= 0 && sb >= 0, ErrorCode::kInvalidArgument,
                "swap axis " << r.axis << " missing from a concept set");
    Tensor<T>& za = out[size_t(r.a)].z;
    Tensor<T>& zb = out[size_t(r.b)].z;
    int64_t dim = za.dim(1);
    VCLAB_CHECK(dim == zb.dim(1), ErrorCode::kInvalidArgument,
                "concept width mismatch inside a swap");
    std::swap_ranges(za.data.begin() + sa * dim,
                     za.data.begin() + (sa + 1) * dim,
                     zb.data.begin() + sb * dim);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Loss terms. Each returns its scalar value plus the gradient w.r.t. the
// concept sets it was fed, one [slots, dim] tensor per image aligned with
// that image's slot order. Module parameter gradients accumulate in place,
// gated by each module's train flags.

template <typename T>
struct LossResult {
  double value = 0.0;
  std::vector<Tensor<T>> dz;
};

struct LossWeights {
  double comp = 0.1;
  double reg = 0.1;
};

inline double total_loss(double diff, double comp, double reg,
                         const LossWeights& weights) {
  VCLAB_CHECK_ARG(weights.comp >= 0.0 && weights.reg >= 0.0,
                  "loss weights must be non-negative");
  return diff + weights.comp * comp + weights.reg * reg;
}

// Denoising term: per-image uniform timestep, fresh Gaussian noise, squared
// error between the noise and its prediction, mean over every element.
template <typename T>
LossResult<T> diffusion_loss(Denoiser<T>& decoder,
                             const NoiseSchedule& schedule,
                             const Tensor<T>& images,
                             const std::vector<ConceptSet<T>>& z, Rng& rng) {
  VCLAB_CHECK_ARG(images.rank() == 4 && images.dim(0) > 0,
                  "diffusion loss expects an nhwc image batch");
  int64_t n = images.dim(0);
  VCLAB_CHECK_ARG(int64_t(z.size()) == n, "one concept set per image expected");

  std::vector<int> t(static_cast<size_t>(n));
  for (auto& ti : t) ti = int(rng.randint(uint64_t(schedule.steps())));
  Tensor<T> eps(images.shape);
  eps.fill_normal(rng);

  Tensor<T> x_t(images.shape);
  int64_t per = images.numel() / n;
  for (int64_t i = 0; i < n; ++i) {
    double abar = schedule.alpha_bar(t[size_t(i)]);
    T sa = T(std::sqrt(abar));
    T sb = T(std::sqrt(1.0 - abar));
    for (int64_t j = i * per; j < (i + 1) * per; ++j) {
      x_t[j] = sa * images[j] + sb * eps[j];
    }
  }

  DenoiserCache<T> cache;
  Tensor<T> pred = decoder.forward(x_t, t, z, cache);

  double scale = 1.0 / double(images.numel());
  double loss = 0.0;
  Tensor<T> dpred(pred.shape);
  for (int64_t i = 0; i < pred.numel(); ++i) {
    double diff = double(pred[i]) - double(eps[i]);
    loss += diff * diff;
    dpred[i] = T(2.0 * scale * diff);
  }
  loss *= scale;

  DenoiserGrads<T> g = decoder.backward(dpred, cache);
  LossResult<T> out;
  out.value = loss;
  out.dz = std::move(g.dz);
  return out;
}

// One composite to anchor: which batch entry to decode, the queries and
// description-embedding targets for re-encoding it, and optionally a mask
// restricting scoring to a subset of slots (empty means every valid slot).
template <typename T>
struct AnchorRequest {
  int64_t image = 0;
  AxisQuery<T> query;
  Tensor<T> targets;
  std::vector<char> score;
};

struct AnchorConfig {
  DdimConfig ddim;
  bool use_head = true;
  // Every gradient this term emits (returned dz and decoder accumulation) is
  // pre-multiplied by this, so a weighted sum of losses can be assembled by
  // plain addition. The reported loss value stays unweighted.
  double grad_scale = 1.0;
};

// Anchoring term. Decodes each requested composite from pure noise, re-encodes
// it with the frozen encoder copy, and penalizes cosine distance between the
// regressed concepts and the composite description embeddings, averaged over
// scored axis pairs. Gradients flow into the returned dz (and the decoder,
// subject to its train flags) only through the decoded images; the frozen
// encoder never accumulates, and the head is masked off for the duration of
// this call so its parameters see exactly zero gradient from this term.
template <typename T>
LossResult<T> anchoring_loss(Denoiser<T>& decoder,
                             const NoiseSchedule& schedule,
                             Encoder<T>& frozen_encoder,
                             RegressionHead<T>& head,
                             const std::vector<ConceptSet<T>>& zc,
                             const std::vector<AnchorRequest<T>>& requests,
                             const AnchorConfig& config, Rng& rng) {
  VCLAB_CHECK_ARG(!requests.empty(),
                  "anchoring needs at least one composite to decode");
  int64_t n = int64_t(zc.size());
  size_t m = requests.size();

  std::vector<ConceptSet<T>> subset;
  subset.reserve(m);
  for (const auto& r : requests) {
    VCLAB_CHECK_ARG(r.image >= 0 && r.image < n,
                    "anchor request references an image outside the batch");
    subset.push_back(zc[size_t(r.image)]);
  }

  DdimCache<T> ddim_cache;
  Tensor<T> xc =
      ddim_sample(decoder, schedule, subset, config.ddim, rng, ddim_cache);

  std::vector<AxisQuery<T>> queries;
  queries.reserve(m);
  for (const auto& r : requests) queries.push_back(r.query);
  EncodeCache<T> enc_cache;
  std::vector<ConceptSet<T>> zhat =
      frozen_encoder.encode(xc, queries, enc_cache);

  // Gather the scored (image, axis) rows into one matrix for the head.
  std::vector<std::pair<size_t, int64_t>> rows;
  int64_t dim = 0;
  for (size_t i = 0; i < m; ++i) {
    const ConceptSet<T>& set = zhat[i];
    int64_t slots = set.z.dim(0);
    dim = set.z.dim(1);
    VCLAB_CHECK_ARG(requests[i].targets.rank() == 2 &&
                        requests[i].targets.dim(0) == slots &&
                        requests[i].targets.dim(1) == dim,
                    "anchor targets must align with the re-encoded slots");
    const auto& score = requests[i].score;
    VCLAB_CHECK_ARG(score.empty() || int64_t(score.size()) == slots,
                    "anchor score mask must cover every slot");
    for (int64_t s = 0; s < slots; ++s) {
      if (!set.slot_valid(size_t(s))) continue;
      if (!score.empty() && !score[size_t(s)]) continue;
      rows.push_back({i, s});
    }
  }
  int64_t total = int64_t(rows.size());
  VCLAB_CHECK_ARG(total > 0, "anchoring found no axis pairs to score");

  Tensor<T> packed({total, dim});
  for (int64_t r = 0; r < total; ++r) {
    auto [i, s] = rows[size_t(r)];
    const T* src = zhat[i].z.data.data() + s * dim;
    std::copy(src, src + dim, packed.data.data() + r * dim);
  }

  RegressionHeadCache<T> head_cache;
  Tensor<T> pred = config.use_head ? head.forward(packed, head_cache) : packed;

  double mean = 1.0 / double(total);
  double upstream = config.grad_scale * mean;
  double loss = 0.0;
  Tensor<T> dpred({total, dim});
  dpred.zero();
  for (int64_t r = 0; r < total; ++r) {
    auto [i, s] = rows[size_t(r)];
    const T* p = pred.data.data() + r * dim;
    const T* v = requests[i].targets.data.data() + s * dim;
    loss += double(cosine_distance(p, v, dim));
    cosine_distance_backward(p, v, dim, T(upstream),
                             dpred.data.data() + r * dim,
                             static_cast<T*>(nullptr));
  }
  loss *= mean;

  Tensor<T> dpacked;
  if (config.use_head) {
    bool was_training = head.train_params();
    head.set_train_params(false);
    dpacked = head.backward(dpred, head_cache);
    head.set_train_params(was_training);
  } else {
    dpacked = std::move(dpred);
  }

  std::vector<Tensor<T>> dz_hat(m);
  for (size_t i = 0; i < m; ++i) {
    dz_hat[i] = Tensor<T>({zhat[i].z.dim(0), dim});
    dz_hat[i].zero();
  }
  for (int64_t r = 0; r < total; ++r) {
    auto [i, s] = rows[size_t(r)];
    const T* src = dpacked.data.data() + r * dim;
    std::copy(src, src + dim, dz_hat[i].data.data() + s * dim);
  }

  Tensor<T> dxc = frozen_encoder.backward(dz_hat, enc_cache);
  DdimGrads<T> g = ddim_backward(decoder, dxc, ddim_cache);

  LossResult<T> out;
  out.value = loss;
  out.dz.resize(size_t(n));
  for (int64_t i = 0; i < n; ++i) {
    out.dz[size_t(i)] = Tensor<T>(zc[size_t(i)].z.shape);
    out.dz[size_t(i)].zero();
  }
  for (size_t i = 0; i < m; ++i) {
    if (g.dz[i].numel() == 0) continue;  // grad_steps = 0 yields no gradient
    axpy(T(1), g.dz[i], out.dz[size_t(requests[i].image)]);
  }
  return out;
}

// Regression term: cosine distance between each regressed concept and its own
// description embedding, averaged over valid slots. This is the only term
// that trains the head. grad_scale pre-multiplies every emitted gradient the
// same way it does for the anchoring term.
template <typename T>
LossResult<T> regression_loss(const std::vector<ConceptSet<T>>& z,
                              const std::vector<Tensor<T>>& targets,
                              RegressionHead<T>& head, bool use_head = true,
                              double grad_scale = 1.0) {
  VCLAB_CHECK_ARG(!z.empty() && z.size() == targets.size(),
                  "one target matrix per concept set expected");

  std::vector<std::pair<size_t, int64_t>> rows;
  int64_t dim = 0;
  for (size_t i = 0; i < z.size(); ++i) {
    int64_t slots = z[i].z.dim(0);
    dim = z[i].z.dim(1);
    VCLAB_CHECK_ARG(targets[i].rank() == 2 && targets[i].dim(0) == slots &&
                        targets[i].dim(1) == dim,
                    "regression targets must align with the concept slots");
    for (int64_t s = 0; s < slots; ++s) {
      if (z[i].slot_valid(size_t(s))) rows.push_back({i, s});
    }
  }
  int64_t total = int64_t(rows.size());
  VCLAB_CHECK_ARG(total > 0, "regression found no valid slots to score");

  Tensor<T> packed({total, dim});
  for (int64_t r = 0; r < total; ++r) {
    auto [i, s] = rows[size_t(r)];
    const T* src = z[i].z.data.data() + s * dim;
    std::copy(src, src + dim, packed.data.data() + r * dim);
  }

  RegressionHeadCache<T> cache;
  Tensor<T> pred = use_head ? head.forward(packed, cache) : packed;

  double mean = 1.0 / double(total);
  double upstream = grad_scale * mean;
  double loss = 0.0;
  Tensor<T> dpred({total, dim});
  dpred.zero();
  for (int64_t r = 0; r < total; ++r) {
    auto [i, s] = rows[size_t(r)];
    const T* p = pred.data.data() + r * dim;
    const T* v = targets[i].data.data() + s * dim;
    loss += double(cosine_distance(p, v, dim));
    cosine_distance_backward(p, v, dim, T(upstream),
                             dpred.data.data() + r * dim,
                             static_cast<T*>(nullptr));
  }
  loss *= mean;

  Tensor<T> dpacked = use_head ? head.backward(dpred, cache) : std::move(dpred);

  LossResult<T> out;
  out.value = loss;
  out.dz.resize(z.size());
  for (size_t i = 0; i < z.size(); ++i) {
    out.dz[i] = Tensor<T>(z[i].z.shape);
    out.dz[i].zero();
  }
  for (int64_t r = 0; r < total; ++r) {
    auto [i, s] = rows[size_t(r)];
    const T* src = dpacked.data.data() + r * dim;
    std::copy(src, src + dim, out.dz[i].data.data() + s * dim);
  }
  return out;
}

}  // namespace vclab
