#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "vclab/common.hpp"
#include "vclab/encoder.hpp"
#include "vclab/nn_ops.hpp"
#include "vclab/rng.hpp"
#include "vclab/tensor.hpp"

namespace vclab {

// Small u-shaped denoiser over 32x32 rgb images. Space-to-depth keeps every
// conv at 16x16 or 8x8, concept conditioning enters through cross-attention
// at the coarse level, and the final conv starts at zero so the network
// predicts zero noise before any training.
//
// Concept entries are re-sorted by axis name before packing, so entry order
// and padded slots cannot affect the output even at the bit level.

struct DenoiserConfig {
  int image_size = 32;
  int base_ch = 16;
  int mid_ch = 32;
  int temb_dim = 32;
  int heads = 4;
  int z_dim = 128;
  int groups = 4;
};

template <typename T>
struct DenoiserCache {
  Conv2dCache<T> conv_in, conv_down, conv_mid, conv_up, conv_out;
  GroupNormCache<T> gn1, gn2, gn_mid, gn_up;
  ActCache<T> act1, act2, act_mid, act_up;
  LinearCache<T> temb1, temb2;
  LayerNormCache<T> ln_q;
  MhaCache<T> attn;
  QueryPacking z_pack;
  Tensor<T> temb_rows;
  std::vector<int64_t> h1_shape, h2_shape;
  int64_t n = 0;
};

template <typename T>
struct DenoiserGrads {
  Tensor<T> dx;
  std::vector<Tensor<T>> dz;
};

template <typename T>
class Denoiser {
 public:
  Denoiser() = default;
  explicit Denoiser(const DenoiserConfig& config)
      : config_(config),
        conv_in_(12, config.base_ch, 3, 1, 1),
        temb_lin1_(config.temb_dim, config.base_ch),
        temb_lin2_(config.temb_dim, config.mid_ch),
        conv_down_(4 * config.base_ch, config.mid_ch, 3, 1, 1),
        gn1_(config.groups, config.base_ch),
        gn2_(config.groups, config.mid_ch),
        gn_mid_(config.groups, config.mid_ch),
        gn_up_(config.groups, config.base_ch),
        ln_q_(config.mid_ch),
        attn_(config.mid_ch, config.z_dim, config.mid_ch, config.heads),
        conv_mid_(config.mid_ch, config.mid_ch, 3, 1, 1),
        conv_up_(config.mid_ch / 4 + config.base_ch, config.base_ch, 3, 1,
                 1),
        conv_out_(config.base_ch, 12, 3, 1, 1) {
    VCLAB_CHECK_ARG(config.image_size % 4 == 0,
                    "image size must be divisible by 4");
    VCLAB_CHECK_ARG(config.mid_ch % 4 == 0,
                    "mid width must be divisible by 4");
    VCLAB_CHECK_ARG(config.mid_ch % config.heads == 0,
                    "mid width not divisible by head count");
    VCLAB_CHECK_ARG(config.temb_dim % 2 == 0,
                    "timestep embedding dimension must be even");
  }

  const DenoiserConfig& config() const { return config_; }

  void init(Rng& rng) {
    conv_in_.init(rng);
    temb_lin1_.init(rng);
    temb_lin2_.init(rng);
    conv_down_.init(rng);
    attn_.init(rng);
    conv_mid_.init(rng);
    conv_up_.init(rng);
    conv_out_.init_zero();
  }

  Tensor<T> forward(const Tensor<T>& x_t, const std::vector<int>& t,
                    const std::vector<ConceptSet<T>>& z,
                    DenoiserCache<T>& cache) const {
    int s = config_.image_size;
    VCLAB_CHECK_ARG(x_t.rank() == 4 && x_t.dim(1) == s && x_t.dim(2) == s &&
                        x_t.dim(3) == 3,
                    "denoiser expects [n, " << s << ", " << s << ", 3]");
    int64_t n = x_t.dim(0);
    VCLAB_CHECK_ARG(int64_t(t.size()) == n && int64_t(z.size()) == n,
                    "one timestep and one concept set per image expected");
    cache.n = n;

    cache.temb_rows = Tensor<T>({n, config_.temb_dim});
    for (int64_t i = 0; i < n; ++i) {
      Tensor<T> e = sinusoidal_embedding(T(t[size_t(i)]), config_.temb_dim);
      std::copy(e.ptr(), e.ptr() + e.numel(),
                cache.temb_rows.ptr() + i * config_.temb_dim);
    }

    Tensor<T> h1 = space_to_depth(x_t, 2);
    h1 = conv_in_.forward(h1, cache.conv_in);
    h1 = gn1_.forward(h1, cache.gn1);
    h1 = silu_forward(h1, cache.act1);
    Tensor<T> t1 = temb_lin1_.forward(cache.temb_rows, cache.temb1);
    add_channel_rows(h1, t1);
    cache.h1_shape = h1.shape;

    Tensor<T> h2 = space_to_depth(h1, 2);
    h2 = conv_down_.forward(h2, cache.conv_down);
    h2 = gn2_.forward(h2, cache.gn2);
    h2 = silu_forward(h2, cache.act2);
    Tensor<T> t2 = temb_lin2_.forward(cache.temb_rows, cache.temb2);
    add_channel_rows(h2, t2);
    cache.h2_shape = h2.shape;

    int64_t spatial = h2.dim(1) * h2.dim(2);
    Tensor<T> rows = reshape_copy(h2, {n * spatial, config_.mid_ch});
    Tensor<T> kv = pack_concepts(z, cache.z_pack, spatial);
    Tensor<T> q = ln_q_.forward(rows, cache.ln_q);
    Tensor<T> attended =
        attn_.forward(q, kv, cache.z_pack.cross_segs, cache.attn);
    axpy(T(1), attended, rows);
    h2 = reshape_copy(rows, cache.h2_shape);

    Tensor<T> m = conv_mid_.forward(h2, cache.conv_mid);
    m = gn_mid_.forward(m, cache.gn_mid);
    m = silu_forward(m, cache.act_mid);
    axpy(T(1), m, h2);

    Tensor<T> up = depth_to_space(h2, 2);
    Tensor<T> cat = concat_channels(up, h1);
    Tensor<T> h3 = conv_up_.forward(cat, cache.conv_up);
    h3 = gn_up_.forward(h3, cache.gn_up);
    h3 = silu_forward(h3, cache.act_up);
    Tensor<T> out = conv_out_.forward(h3, cache.conv_out);
    return depth_to_space(out, 2);
  }

  DenoiserGrads<T> backward(const Tensor<T>& deps,
                            const DenoiserCache<T>& cache) {
    int64_t n = cache.n;
    Tensor<T> dout = space_to_depth(deps, 2);
    Tensor<T> dh3 = conv_out_.backward(dout, cache.conv_out);
    dh3 = silu_backward(dh3, cache.act_up);
    dh3 = gn_up_.backward(dh3, cache.gn_up);
    Tensor<T> dcat = conv_up_.backward(dh3, cache.conv_up);
    Tensor<T> dup(std::vector<int64_t>{dcat.dim(0), dcat.dim(1), dcat.dim(2),
                                       config_.mid_ch / 4});
    Tensor<T> dh1(cache.h1_shape);
    split_channels(dcat, dup, dh1);
    Tensor<T> dh2 = space_to_depth(dup, 2);

    Tensor<T> dm = silu_backward(dh2, cache.act_mid);
    dm = gn_mid_.backward(dm, cache.gn_mid);
    dm = conv_mid_.backward(dm, cache.conv_mid);
    axpy(T(1), dm, dh2);

    int64_t spatial = cache.h2_shape[1] * cache.h2_shape[2];
    Tensor<T> drows = reshape_copy(dh2, {n * spatial, config_.mid_ch});
    MhaGrads<T> ga = attn_.backward(drows, cache.attn);
    Tensor<T> dq = ln_q_.backward(ga.dq_in, cache.ln_q);
    axpy(T(1), dq, drows);
    std::vector<Tensor<T>> dz = scatter_concept_grads(ga.dkv_in, cache);
    dh2 = reshape_copy(drows, cache.h2_shape);

    Tensor<T> dt2 = sum_channel_rows(dh2, n);
    temb_lin2_.backward(dt2, cache.temb2);
    Tensor<T> dd = silu_backward(dh2, cache.act2);
    dd = gn2_.backward(dd, cache.gn2);
    dd = conv_down_.backward(dd, cache.conv_down);
    Tensor<T> dskip = depth_to_space(dd, 2);
    axpy(T(1), dskip, dh1);

    Tensor<T> dt1 = sum_channel_rows(dh1, n);
    temb_lin1_.backward(dt1, cache.temb1);
    Tensor<T> di = silu_backward(dh1, cache.act1);
    di = gn1_.backward(di, cache.gn1);
    di = conv_in_.backward(di, cache.conv_in);

    DenoiserGrads<T> grads;
    grads.dx = depth_to_space(di, 2);
    grads.dz = std::move(dz);
    return grads;
  }

  void collect(const std::string& prefix, ParamList<T>& out) {
    conv_in_.collect(prefix + ".conv_in", out);
    gn1_.collect(prefix + ".gn1", out);
    temb_lin1_.collect(prefix + ".temb1", out);
    conv_down_.collect(prefix + ".conv_down", out);
    gn2_.collect(prefix + ".gn2", out);
    temb_lin2_.collect(prefix + ".temb2", out);
    ln_q_.collect(prefix + ".ln_q", out);
    attn_.collect(prefix + ".attn", out);
    conv_mid_.collect(prefix + ".conv_mid", out);
    gn_mid_.collect(prefix + ".gn_mid", out);
    conv_up_.collect(prefix + ".conv_up", out);
    gn_up_.collect(prefix + ".gn_up", out);
    conv_out_.collect(prefix + ".conv_out", out);
  }

  void set_train_params(bool on) {
    conv_in_.train_params = on;
    gn1_.train_params = on;
    temb_lin1_.train_params = on;
    conv_down_.train_params = on;
    gn2_.train_params = on;
    temb_lin2_.train_params = on;
    ln_q_.train_params = on;
    attn_.set_train_params(on);
    conv_mid_.train_params = on;
    gn_mid_.train_params = on;
    conv_up_.train_params = on;
    gn_up_.train_params = on;
    conv_out_.train_params = on;
  }

  void zero_grads() {
    ParamList<T> all;
    collect("d", all);
    for (auto& p : all) p.param->grad.zero();
  }

 private:
  // Adds row i of per-image channel offsets to every spatial position of
  // image i.
  static void add_channel_rows(Tensor<T>& h, const Tensor<T>& rows) {
    int64_t n = h.dim(0), hw = h.dim(1) * h.dim(2), c = h.dim(3);
    for (int64_t img = 0; img < n; ++img) {
      const T* src = rows.ptr() + img * c;
      for (int64_t p = 0; p < hw; ++p) {
        T* dst = h.ptr() + (img * hw + p) * c;
        for (int64_t ch = 0; ch < c; ++ch) dst[ch] += src[ch];
      }
    }
  }

  static Tensor<T> sum_channel_rows(const Tensor<T>& dh, int64_t n) {
    int64_t hw = dh.dim(1) * dh.dim(2), c = dh.dim(3);
    Tensor<T> rows({n, c});
    for (int64_t img = 0; img < n; ++img) {
      for (int64_t p = 0; p < hw; ++p) {
        const T* src = dh.ptr() + (img * hw + p) * c;
        for (int64_t ch = 0; ch < c; ++ch) rows.at(img, ch) += src[ch];
      }
    }
    return rows;
  }

  static Tensor<T> reshape_copy(const Tensor<T>& x,
                                const std::vector<int64_t>& shape) {
    Tensor<T> out(shape);
    VCLAB_CHECK_ARG(out.numel() == x.numel(), "reshape numel mismatch");
    std::copy(x.ptr(), x.ptr() + x.numel(), out.ptr());
    return out;
  }

  static Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
    VCLAB_CHECK_ARG(a.dim(0) == b.dim(0) && a.dim(1) == b.dim(1) &&
                        a.dim(2) == b.dim(2),
                    "concat spatial mismatch");
    int64_t rows = a.dim(0) * a.dim(1) * a.dim(2);
    Tensor<T> out({a.dim(0), a.dim(1), a.dim(2), a.dim(3) + b.dim(3)});
    for (int64_t r = 0; r < rows; ++r) {
      std::copy(a.ptr() + r * a.dim(3), a.ptr() + (r + 1) * a.dim(3),
                out.ptr() + r * out.dim(3));
      std::copy(b.ptr() + r * b.dim(3), b.ptr() + (r + 1) * b.dim(3),
                out.ptr() + r * out.dim(3) + a.dim(3));
    }
    return out;
  }

  static void split_channels(const Tensor<T>& d, Tensor<T>& da,
                             Tensor<T>& db) {
    int64_t rows = d.dim(0) * d.dim(1) * d.dim(2);
    for (int64_t r = 0; r < rows; ++r) {
      std::copy(d.ptr() + r * d.dim(3), d.ptr() + r * d.dim(3) + da.dim(3),
                da.ptr() + r * da.dim(3));
      std::copy(d.ptr() + r * d.dim(3) + da.dim(3),
                d.ptr() + (r + 1) * d.dim(3), db.ptr() + r * db.dim(3));
    }
  }

  Tensor<T> pack_concepts(const std::vector<ConceptSet<T>>& z,
                          QueryPacking& pk, int64_t spatial) const {
    pk = QueryPacking();
    int64_t offset = 0;
    for (size_t i = 0; i < z.size(); ++i) {
      const ConceptSet<T>& cs = z[i];
      VCLAB_CHECK_ARG(cs.z.rank() == 2 && cs.z.dim(1) == config_.z_dim &&
                          cs.z.dim(0) == int64_t(cs.axis_names.size()),
                      "concept set " << i << " must be [slots, "
                                     << config_.z_dim << "]");
      std::vector<int64_t> slots;
      for (size_t j = 0; j < cs.axis_names.size(); ++j) {
        if (cs.slot_valid(j)) slots.push_back(int64_t(j));
      }
      VCLAB_CHECK_ARG(!slots.empty(),
                      "concept set " << i << " has no valid entries");
      std::sort(slots.begin(), slots.end(), [&](int64_t a, int64_t b) {
        return cs.axis_names[size_t(a)] < cs.axis_names[size_t(b)];
      });
      for (int64_t slot : slots) {
        pk.image_of_row.push_back(int64_t(i));
        pk.slot_of_row.push_back(slot);
      }
      int64_t k = int64_t(slots.size());
      pk.cross_segs.push_back(
          {int64_t(i) * spatial, spatial, offset, k});
      pk.request_sizes.push_back(k);
      pk.request_slots.push_back(int64_t(cs.axis_names.size()));
      offset += k;
    }
    pk.rows = offset;
    Tensor<T> kv({offset, config_.z_dim});
    for (int64_t r = 0; r < offset; ++r) {
      const ConceptSet<T>& cs = z[size_t(pk.image_of_row[size_t(r)])];
      const T* src = cs.z.ptr() + pk.slot_of_row[size_t(r)] * config_.z_dim;
      std::copy(src, src + config_.z_dim, kv.ptr() + r * config_.z_dim);
    }
    return kv;
  }

  std::vector<Tensor<T>> scatter_concept_grads(
      const Tensor<T>& dkv, const DenoiserCache<T>& cache) const {
    const QueryPacking& pk = cache.z_pack;
    std::vector<Tensor<T>> dz(pk.request_slots.size());
    for (size_t i = 0; i < dz.size(); ++i) {
      dz[i] = Tensor<T>({pk.request_slots[i], config_.z_dim});
    }
    for (int64_t r = 0; r < pk.rows; ++r) {
      Tensor<T>& g = dz[size_t(pk.image_of_row[size_t(r)])];
      const T* src = dkv.ptr() + r * config_.z_dim;
      std::copy(src, src + config_.z_dim,
                g.ptr() + pk.slot_of_row[size_t(r)] * config_.z_dim);
    }
    return dz;
  }

  DenoiserConfig config_;
  Conv2d<T> conv_in_;
  Linear<T> temb_lin1_, temb_lin2_;
  Conv2d<T> conv_down_;
  GroupNorm<T> gn1_, gn2_, gn_mid_, gn_up_;
  LayerNorm<T> ln_q_;
  MultiheadAttention<T> attn_;
  Conv2d<T> conv_mid_, conv_up_, conv_out_;
};

}  // namespace vclab
