#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "vclab/blas_env.hpp"
#include "vclab/common.hpp"
#include "vclab/rng.hpp"
#include "vclab/tensor.hpp"

namespace vclab {

// Every layer keeps its forward-pass intermediates in a caller-owned cache
// object instead of inside the layer, so one set of parameters can run any
// number of live forward passes (the truncated-backprop sampler replays
// several) and backward can be driven in any order. backward() accumulates
// into Param::grad unless train_params is off, which is how frozen views
// take input gradients without touching parameter gradients.

template <typename T>
struct Param {
  Tensor<T> value;
  Tensor<T> grad;

  void init(const std::vector<int64_t>& shape) {
    value = Tensor<T>(shape);
    grad = Tensor<T>(shape);
  }
};

template <typename T>
struct NamedParam {
  std::string name;
  Param<T>* param;
};

template <typename T>
using ParamList = std::vector<NamedParam<T>>;

// ---------------------------------------------------------------------------
// Dense matmul helpers

template <typename T>
void matmul(const Tensor<T>& a, bool trans_a, const Tensor<T>& b, bool trans_b,
            Tensor<T>& c, T alpha = T(1), T beta = T(0)) {
  VCLAB_CHECK_ARG(a.rank() == 2 && b.rank() == 2 && c.rank() == 2,
                  "matmul expects matrices");
  int m = int(trans_a ? a.dim(1) : a.dim(0));
  int k = int(trans_a ? a.dim(0) : a.dim(1));
  int k2 = int(trans_b ? b.dim(1) : b.dim(0));
  int n = int(trans_b ? b.dim(0) : b.dim(1));
  VCLAB_CHECK_ARG(k == k2 && c.dim(0) == m && c.dim(1) == n,
                  "matmul shape mismatch: " << shape_to_string(a.shape)
                                            << (trans_a ? "^T" : "") << " x "
                                            << shape_to_string(b.shape)
                                            << (trans_b ? "^T" : "") << " -> "
                                            << shape_to_string(c.shape));
  gemm(trans_a, trans_b, m, n, k, alpha, a.ptr(), int(a.dim(1)), b.ptr(),
       int(b.dim(1)), beta, c.ptr(), int(c.dim(1)));
}

// ---------------------------------------------------------------------------
// Linear

template <typename T>
struct LinearCache {
  Tensor<T> x;
};

template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(int in_dim, int out_dim) : in_(in_dim), out_(out_dim) {
    w.init({out_dim, in_dim});
    b.init({out_dim});
  }

  void init(Rng& rng) {
    w.value.fill_normal(rng, T(0), T(1) / std::sqrt(T(in_)));
    b.value.zero();
  }

  Tensor<T> forward(const Tensor<T>& x, LinearCache<T>& cache) const {
    VCLAB_CHECK_ARG(x.rank() == 2 && x.dim(1) == in_,
                    "linear expects [n, " << in_ << "], got "
                                          << shape_to_string(x.shape));
    cache.x = x;
    Tensor<T> y({x.dim(0), out_});
    matmul(x, false, w.value, true, y);
    for (int64_t i = 0; i < y.dim(0); ++i) {
      for (int64_t j = 0; j < out_; ++j) y.at(i, j) += b.value[j];
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy, const LinearCache<T>& cache) {
    VCLAB_CHECK_ARG(dy.rank() == 2 && dy.dim(1) == out_,
                    "linear backward shape mismatch");
    if (train_params) {
      matmul(dy, true, cache.x, false, w.grad, T(1), T(1));
      for (int64_t i = 0; i < dy.dim(0); ++i) {
        for (int64_t j = 0; j < out_; ++j) b.grad[j] += dy.at(i, j);
      }
    }
    Tensor<T> dx({dy.dim(0), in_});
    matmul(dy, false, w.value, false, dx);
    return dx;
  }

  void collect(const std::string& prefix, ParamList<T>& out) {
    out.push_back({prefix + ".w", &w});
    out.push_back({prefix + ".b", &b});
  }

  int in_dim() const { return in_; }
  int out_dim() const { return out_; }

  Param<T> w;
  Param<T> b;
  bool train_params = true;

 private:
  int in_ = 0;
  int out_ = 0;
};

// ---------------------------------------------------------------------------
// Convolution, NHWC, square kernel

template <typename T>
struct Conv2dCache {
  // One im2col panel per batch element, reused for the weight gradient.
  std::vector<Tensor<T>> cols;
  std::vector<int64_t> in_shape;
};

template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(int in_ch, int out_ch, int kernel, int stride, int pad)
      : cin_(in_ch), cout_(out_ch), k_(kernel), stride_(stride), pad_(pad) {
    w.init({out_ch, kernel * kernel * in_ch});
    b.init({out_ch});
  }

  void init(Rng& rng) {
    w.value.fill_normal(rng, T(0), T(1) / std::sqrt(T(k_ * k_ * cin_)));
    b.value.zero();
  }

  void init_zero() {
    w.value.zero();
    b.value.zero();
  }

  int64_t out_hw(int64_t in_hw) const {
    return (in_hw + 2 * pad_ - k_) / stride_ + 1;
  }

  Tensor<T> forward(const Tensor<T>& x, Conv2dCache<T>& cache) const {
    VCLAB_CHECK_ARG(x.rank() == 4 && x.dim(3) == cin_,
                    "conv expects [n, h, w, " << cin_ << "], got "
                                              << shape_to_string(x.shape));
    int64_t n = x.dim(0), h = x.dim(1), wd = x.dim(2);
    int64_t ho = out_hw(h), wo = out_hw(wd);
    cache.in_shape = x.shape;
    cache.cols.assign(size_t(n), Tensor<T>());
    Tensor<T> y({n, ho, wo, cout_});
    for (int64_t img = 0; img < n; ++img) {
      Tensor<T>& cols = cache.cols[size_t(img)];
      cols = Tensor<T>({ho * wo, int64_t(k_) * k_ * cin_});
      im2col(x, img, cols);
      Tensor<T> out({ho * wo, cout_});
      matmul(cols, false, w.value, true, out);
      T* dst = y.ptr() + img * ho * wo * cout_;
      const T* src = out.ptr();
      for (int64_t r = 0; r < ho * wo; ++r) {
        for (int64_t c = 0; c < cout_; ++c) {
          dst[r * cout_ + c] = src[r * cout_ + c] + b.value[c];
        }
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy, const Conv2dCache<T>& cache) {
    int64_t n = cache.in_shape[0], h = cache.in_shape[1],
            wd = cache.in_shape[2];
    int64_t ho = out_hw(h), wo = out_hw(wd);
    VCLAB_CHECK_ARG(dy.rank() == 4 && dy.dim(0) == n && dy.dim(1) == ho &&
                        dy.dim(2) == wo && dy.dim(3) == cout_,
                    "conv backward shape mismatch");
    Tensor<T> dx(cache.in_shape);
    Tensor<T> dy_img({ho * wo, cout_});
    Tensor<T> dcols({ho * wo, int64_t(k_) * k_ * cin_});
    for (int64_t img = 0; img < n; ++img) {
      const T* src = dy.ptr() + img * ho * wo * cout_;
      std::copy(src, src + ho * wo * cout_, dy_img.ptr());
      if (train_params) {
        matmul(dy_img, true, cache.cols[size_t(img)], false, w.grad, T(1),
               T(1));
        for (int64_t r = 0; r < ho * wo; ++r) {
          for (int64_t c = 0; c < cout_; ++c) {
            b.grad[c] += dy_img.at(r, c);
          }
        }
      }
      matmul(dy_img, false, w.value, false, dcols);
      col2im(dcols, img, dx);
    }
    return dx;
  }

  void collect(const std::string& prefix, ParamList<T>& out) {
    out.push_back({prefix + ".w", &w});
    out.push_back({prefix + ".b", &b});
  }

  Param<T> w;
  Param<T> b;
  bool train_params = true;

 private:
  void im2col(const Tensor<T>& x, int64_t img, Tensor<T>& cols) const {
    int64_t h = x.dim(1), wd = x.dim(2);
    int64_t ho = out_hw(h), wo = out_hw(wd);
    for (int64_t oy = 0; oy < ho; ++oy) {
      for (int64_t ox = 0; ox < wo; ++ox) {
        T* row = cols.ptr() + (oy * wo + ox) * cols.dim(1);
        for (int ky = 0; ky < k_; ++ky) {
          int64_t iy = oy * stride_ - pad_ + ky;
          for (int kx = 0; kx < k_; ++kx) {
            int64_t ix = ox * stride_ - pad_ + kx;
            T* cell = row + (int64_t(ky) * k_ + kx) * cin_;
            if (iy < 0 || iy >= h || ix < 0 || ix >= wd) {
              for (int c = 0; c < cin_; ++c) cell[c] = T(0);
            } else {
              const T* src = x.ptr() + ((img * h + iy) * wd + ix) * cin_;
              for (int c = 0; c < cin_; ++c) cell[c] = src[c];
            }
          }
        }
      }
    }
  }

  void col2im(const Tensor<T>& dcols, int64_t img, Tensor<T>& dx) const {
    int64_t h = dx.dim(1), wd = dx.dim(2);
    int64_t ho = out_hw(h), wo = out_hw(wd);
    for (int64_t oy = 0; oy < ho; ++oy) {
      for (int64_t ox = 0; ox < wo; ++ox) {
        const T* row = dcols.ptr() + (oy * wo + ox) * dcols.dim(1);
        for (int ky = 0; ky < k_; ++ky) {
          int64_t iy = oy * stride_ - pad_ + ky;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < k_; ++kx) {
            int64_t ix = ox * stride_ - pad_ + kx;
            if (ix < 0 || ix >= wd) continue;
            const T* cell = row + (int64_t(ky) * k_ + kx) * cin_;
            T* dst = dx.ptr() + ((img * h + iy) * wd + ix) * cin_;
            for (int c = 0; c < cin_; ++c) dst[c] += cell[c];
          }
        }
      }
    }
  }

  int cin_ = 0;
  int cout_ = 0;
  int k_ = 0;
  int stride_ = 1;
  int pad_ = 0;
};

// ---------------------------------------------------------------------------
// Normalization

template <typename T>
struct GroupNormCache {
  Tensor<T> x;
  Tensor<T> mean;  // [n, groups]
  Tensor<T> rstd;  // [n, groups]
};

// Normalizes over (h, w, channels-within-group) per image and group.
template <typename T>
class GroupNorm {
 public:
  GroupNorm() = default;
  GroupNorm(int groups, int channels) : groups_(groups), channels_(channels) {
    VCLAB_CHECK_ARG(channels % groups == 0,
                    "channels " << channels << " not divisible by groups "
                                << groups);
    gamma.init({channels});
    beta.init({channels});
    gamma.value.fill(T(1));
  }

  Tensor<T> forward(const Tensor<T>& x, GroupNormCache<T>& cache) const {
    VCLAB_CHECK_ARG(x.rank() == 4 && x.dim(3) == channels_,
                    "groupnorm expects nhwc with " << channels_
                                                   << " channels");
    int64_t n = x.dim(0), h = x.dim(1), w = x.dim(2);
    int64_t cpg = channels_ / groups_;
    int64_t m = h * w * cpg;
    cache.x = x;
    cache.mean = Tensor<T>({n, groups_});
    cache.rstd = Tensor<T>({n, groups_});
    Tensor<T> y(x.shape);
    for (int64_t img = 0; img < n; ++img) {
      for (int g = 0; g < groups_; ++g) {
        T sum = T(0), sq = T(0);
        for (int64_t p = 0; p < h * w; ++p) {
          const T* px = x.ptr() + (img * h * w + p) * channels_ + g * cpg;
          for (int64_t c = 0; c < cpg; ++c) {
            sum += px[c];
            sq += px[c] * px[c];
          }
        }
        T mean = sum / T(m);
        T var = sq / T(m) - mean * mean;
        if (var < T(0)) var = T(0);
        T rstd = T(1) / std::sqrt(var + T(kEps));
        cache.mean.at(img, g) = mean;
        cache.rstd.at(img, g) = rstd;
        for (int64_t p = 0; p < h * w; ++p) {
          const T* px = x.ptr() + (img * h * w + p) * channels_ + g * cpg;
          T* py = y.ptr() + (img * h * w + p) * channels_ + g * cpg;
          for (int64_t c = 0; c < cpg; ++c) {
            int64_t ch = g * cpg + c;
            py[c] = gamma.value[ch] * (px[c] - mean) * rstd + beta.value[ch];
          }
        }
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy, const GroupNormCache<T>& cache) {
    const Tensor<T>& x = cache.x;
    int64_t n = x.dim(0), h = x.dim(1), w = x.dim(2);
    int64_t cpg = channels_ / groups_;
    int64_t m = h * w * cpg;
    Tensor<T> dx(x.shape);
    for (int64_t img = 0; img < n; ++img) {
      for (int g = 0; g < groups_; ++g) {
        T mean = cache.mean.at(img, g);
        T rstd = cache.rstd.at(img, g);
        T sum_dg = T(0), sum_dgx = T(0);
        for (int64_t p = 0; p < h * w; ++p) {
          const T* px = x.ptr() + (img * h * w + p) * channels_ + g * cpg;
          const T* pd = dy.ptr() + (img * h * w + p) * channels_ + g * cpg;
          for (int64_t c = 0; c < cpg; ++c) {
            int64_t ch = g * cpg + c;
            T xhat = (px[c] - mean) * rstd;
            T dg = pd[c] * gamma.value[ch];
            sum_dg += dg;
            sum_dgx += dg * xhat;
            if (train_params) {
              gamma.grad[ch] += pd[c] * xhat;
              beta.grad[ch] += pd[c];
            }
          }
        }
        for (int64_t p = 0; p < h * w; ++p) {
          const T* px = x.ptr() + (img * h * w + p) * channels_ + g * cpg;
          const T* pd = dy.ptr() + (img * h * w + p) * channels_ + g * cpg;
          T* pdx = dx.ptr() + (img * h * w + p) * channels_ + g * cpg;
          for (int64_t c = 0; c < cpg; ++c) {
            int64_t ch = g * cpg + c;
            T xhat = (px[c] - mean) * rstd;
            T dg = pd[c] * gamma.value[ch];
            pdx[c] = rstd * (dg - sum_dg / T(m) - xhat * sum_dgx / T(m));
          }
        }
      }
    }
    return dx;
  }

  void collect(const std::string& prefix, ParamList<T>& out) {
    out.push_back({prefix + ".gamma", &gamma});
    out.push_back({prefix + ".beta", &beta});
  }

  static constexpr double kEps = 1e-5;

  Param<T> gamma;
  Param<T> beta;
  bool train_params = true;

 private:
  int groups_ = 1;
  int channels_ = 0;
};

template <typename T>
struct LayerNormCache {
  Tensor<T> x;
  std::vector<T> mean;
  std::vector<T> rstd;
};

// Normalizes each row of an [n, d] matrix.
template <typename T>
class LayerNorm {
 public:
  LayerNorm() = default;
  explicit LayerNorm(int dim) : dim_(dim) {
    gamma.init({dim});
    beta.init({dim});
    gamma.value.fill(T(1));
  }

  Tensor<T> forward(const Tensor<T>& x, LayerNormCache<T>& cache) const {
    VCLAB_CHECK_ARG(x.rank() == 2 && x.dim(1) == dim_,
                    "layernorm expects [n, " << dim_ << "]");
    int64_t n = x.dim(0);
    cache.x = x;
    cache.mean.assign(size_t(n), T(0));
    cache.rstd.assign(size_t(n), T(0));
    Tensor<T> y(x.shape);
    for (int64_t i = 0; i < n; ++i) {
      const T* px = x.ptr() + i * dim_;
      T sum = T(0), sq = T(0);
      for (int64_t c = 0; c < dim_; ++c) {
        sum += px[c];
        sq += px[c] * px[c];
      }
      T mean = sum / T(dim_);
      T var = sq / T(dim_) - mean * mean;
      if (var < T(0)) var = T(0);
      T rstd = T(1) / std::sqrt(var + T(kEps));
      cache.mean[size_t(i)] = mean;
      cache.rstd[size_t(i)] = rstd;
      T* py = y.ptr() + i * dim_;
      for (int64_t c = 0; c < dim_; ++c) {
        py[c] = gamma.value[c] * (px[c] - mean) * rstd + beta.value[c];
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy, const LayerNormCache<T>& cache) {
    const Tensor<T>& x = cache.x;
    int64_t n = x.dim(0);
    Tensor<T> dx(x.shape);
    for (int64_t i = 0; i < n; ++i) {
      const T* px = x.ptr() + i * dim_;
      const T* pd = dy.ptr() + i * dim_;
      T* pdx = dx.ptr() + i * dim_;
      T mean = cache.mean[size_t(i)];
      T rstd = cache.rstd[size_t(i)];
      T sum_dg = T(0), sum_dgx = T(0);
      for (int64_t c = 0; c < dim_; ++c) {
        T xhat = (px[c] - mean) * rstd;
        T dg = pd[c] * gamma.value[c];
        sum_dg += dg;
        sum_dgx += dg * xhat;
        if (train_params) {
          gamma.grad[c] += pd[c] * xhat;
          beta.grad[c] += pd[c];
        }
      }
      for (int64_t c = 0; c < dim_; ++c) {
        T xhat = (px[c] - mean) * rstd;
        T dg = pd[c] * gamma.value[c];
        pdx[c] = rstd * (dg - sum_dg / T(dim_) - xhat * sum_dgx / T(dim_));
      }
    }
    return dx;
  }

  void collect(const std::string& prefix, ParamList<T>& out) {
    out.push_back({prefix + ".gamma", &gamma});
    out.push_back({prefix + ".beta", &beta});
  }

  static constexpr double kEps = 1e-5;

  Param<T> gamma;
  Param<T> beta;
  bool train_params = true;

 private:
  int dim_ = 0;
};

// ---------------------------------------------------------------------------
// Activations

template <typename T>
struct ActCache {
  Tensor<T> x;
};

template <typename T>
Tensor<T> silu_forward(const Tensor<T>& x, ActCache<T>& cache) {
  cache.x = x;
  Tensor<T> y(x.shape);
  for (int64_t i = 0; i < x.numel(); ++i) {
    T s = T(1) / (T(1) + std::exp(-x[i]));
    y[i] = x[i] * s;
  }
  return y;
}

template <typename T>
Tensor<T> silu_backward(const Tensor<T>& dy, const ActCache<T>& cache) {
  const Tensor<T>& x = cache.x;
  Tensor<T> dx(x.shape);
  for (int64_t i = 0; i < x.numel(); ++i) {
    T s = T(1) / (T(1) + std::exp(-x[i]));
    dx[i] = dy[i] * s * (T(1) + x[i] * (T(1) - s));
  }
  return dx;
}

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& x, ActCache<T>& cache) {
  cache.x = x;
  Tensor<T> y(x.shape);
  for (int64_t i = 0; i < x.numel(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
  return y;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& dy, const ActCache<T>& cache) {
  const Tensor<T>& x = cache.x;
  Tensor<T> dx(x.shape);
  for (int64_t i = 0; i < x.numel(); ++i) {
    dx[i] = x[i] > T(0) ? dy[i] : T(0);
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Softmax over rows

template <typename T>
void softmax_rows(Tensor<T>& x) {
  VCLAB_CHECK_ARG(x.rank() == 2, "softmax_rows expects a matrix");
  for (int64_t i = 0; i < x.dim(0); ++i) {
    T* row = x.ptr() + i * x.dim(1);
    T mx = row[0];
    for (int64_t j = 1; j < x.dim(1); ++j) mx = std::max(mx, row[j]);
    T sum = T(0);
    for (int64_t j = 0; j < x.dim(1); ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    for (int64_t j = 0; j < x.dim(1); ++j) row[j] /= sum;
  }
}

// dL/dlogits given probabilities p and dL/dp, row-wise.
template <typename T>
Tensor<T> softmax_rows_backward(const Tensor<T>& p, const Tensor<T>& dp) {
  Tensor<T> dx(p.shape);
  for (int64_t i = 0; i < p.dim(0); ++i) {
    const T* pr = p.ptr() + i * p.dim(1);
    const T* dr = dp.ptr() + i * p.dim(1);
    T* dxr = dx.ptr() + i * p.dim(1);
    T inner = T(0);
    for (int64_t j = 0; j < p.dim(1); ++j) inner += pr[j] * dr[j];
    for (int64_t j = 0; j < p.dim(1); ++j) {
      dxr[j] = pr[j] * (dr[j] - inner);
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Multi-head attention over packed ragged segments
//
// Query and key/value rows for a whole batch are packed into two matrices;
// each segment names a row range of queries attending to a row range of
// keys. Padding never enters: callers simply do not include invalid rows.

struct AttnSegment {
  int64_t q_begin = 0;
  int64_t q_count = 0;
  int64_t kv_begin = 0;
  int64_t kv_count = 0;
};

template <typename T>
struct MhaCache {
  LinearCache<T> q_proj, k_proj, v_proj, o_proj;
  Tensor<T> q, k, v;       // projected, [rows, embed]
  Tensor<T> concat;        // pre-output-projection, [q_rows, embed]
  std::vector<Tensor<T>> probs;  // per segment x head, [q_count, kv_count]
  std::vector<AttnSegment> segments;
};

template <typename T>
struct MhaGrads {
  Tensor<T> dq_in;
  Tensor<T> dkv_in;
};

template <typename T>
class MultiheadAttention {
 public:
  MultiheadAttention() = default;
  MultiheadAttention(int q_dim, int kv_dim, int embed_dim, int heads)
      : wq(q_dim, embed_dim),
        wk(kv_dim, embed_dim),
        wv(kv_dim, embed_dim),
        wo(embed_dim, embed_dim),
        heads_(heads),
        embed_(embed_dim) {
    VCLAB_CHECK_ARG(embed_dim % heads == 0,
                    "embed dim " << embed_dim << " not divisible by heads "
                                 << heads);
  }

  void init(Rng& rng) {
    wq.init(rng);
    wk.init(rng);
    wv.init(rng);
    wo.init(rng);
  }

  Tensor<T> forward(const Tensor<T>& q_in, const Tensor<T>& kv_in,
                    const std::vector<AttnSegment>& segments,
                    MhaCache<T>& cache) const {
    cache.segments = segments;
    cache.q = wq.forward(q_in, cache.q_proj);
    cache.k = wk.forward(kv_in, cache.k_proj);
    cache.v = wv.forward(kv_in, cache.v_proj);
    int64_t dh = embed_ / heads_;
    T scale = T(1) / std::sqrt(T(dh));
    cache.concat = Tensor<T>({q_in.dim(0), embed_});
    cache.probs.clear();
    cache.probs.reserve(segments.size() * size_t(heads_));
    for (const AttnSegment& seg : segments) {
      check_segment(seg, q_in.dim(0), kv_in.dim(0));
      for (int h = 0; h < heads_; ++h) {
        Tensor<T> scores({seg.q_count, seg.kv_count});
        gemm(false, true, int(seg.q_count), int(seg.kv_count), int(dh), scale,
             cache.q.ptr() + seg.q_begin * embed_ + h * dh, int(embed_),
             cache.k.ptr() + seg.kv_begin * embed_ + h * dh, int(embed_),
             T(0), scores.ptr(), int(seg.kv_count));
        softmax_rows(scores);
        gemm(false, false, int(seg.q_count), int(dh), int(seg.kv_count), T(1),
             scores.ptr(), int(seg.kv_count),
             cache.v.ptr() + seg.kv_begin * embed_ + h * dh, int(embed_),
             T(0), cache.concat.ptr() + seg.q_begin * embed_ + h * dh,
             int(embed_));
        cache.probs.push_back(std::move(scores));
      }
    }
    return wo.forward(cache.concat, cache.o_proj);
  }

  MhaGrads<T> backward(const Tensor<T>& dy, const MhaCache<T>& cache) {
    int64_t dh = embed_ / heads_;
    T scale = T(1) / std::sqrt(T(dh));
    Tensor<T> dconcat = wo.backward(dy, cache.o_proj);
    Tensor<T> dq(cache.q.shape);
    Tensor<T> dk(cache.k.shape);
    Tensor<T> dv(cache.v.shape);
    size_t slot = 0;
    for (const AttnSegment& seg : cache.segments) {
      for (int h = 0; h < heads_; ++h) {
        const Tensor<T>& probs = cache.probs[slot++];
        // dP = dOh Vh^T ; dV_h += P^T dOh
        Tensor<T> dp({seg.q_count, seg.kv_count});
        gemm(false, true, int(seg.q_count), int(seg.kv_count), int(dh), T(1),
             dconcat.ptr() + seg.q_begin * embed_ + h * dh, int(embed_),
             cache.v.ptr() + seg.kv_begin * embed_ + h * dh, int(embed_),
             T(0), dp.ptr(), int(seg.kv_count));
        gemm(true, false, int(seg.kv_count), int(dh), int(seg.q_count), T(1),
             probs.ptr(), int(seg.kv_count),
             dconcat.ptr() + seg.q_begin * embed_ + h * dh, int(embed_), T(1),
             dv.ptr() + seg.kv_begin * embed_ + h * dh, int(embed_));
        Tensor<T> dscores = softmax_rows_backward(probs, dp);
        gemm(false, false, int(seg.q_count), int(dh), int(seg.kv_count),
             scale, dscores.ptr(), int(seg.kv_count),
             cache.k.ptr() + seg.kv_begin * embed_ + h * dh, int(embed_),
             T(1), dq.ptr() + seg.q_begin * embed_ + h * dh, int(embed_));
        gemm(true, false, int(seg.kv_count), int(dh), int(seg.q_count), scale,
             dscores.ptr(), int(seg.kv_count),
             cache.q.ptr() + seg.q_begin * embed_ + h * dh, int(embed_), T(1),
             dk.ptr() + seg.kv_begin * embed_ + h * dh, int(embed_));
      }
    }
    MhaGrads<T> grads;
    grads.dq_in = wq.backward(dq, cache.q_proj);
    grads.dkv_in = wk.backward(dk, cache.k_proj);
    Tensor<T> dkv2 = wv.backward(dv, cache.v_proj);
    axpy(T(1), dkv2, grads.dkv_in);
    return grads;
  }

  void collect(const std::string& prefix, ParamList<T>& out) {
    wq.collect(prefix + ".wq", out);
    wk.collect(prefix + ".wk", out);
    wv.collect(prefix + ".wv", out);
    wo.collect(prefix + ".wo", out);
  }

  void set_train_params(bool on) {
    wq.train_params = on;
    wk.train_params = on;
    wv.train_params = on;
    wo.train_params = on;
  }

  Linear<T> wq, wk, wv, wo;

 private:
  static void check_segment(const AttnSegment& seg, int64_t q_rows,
                            int64_t kv_rows) {
    VCLAB_CHECK_ARG(seg.q_begin >= 0 && seg.q_count > 0 &&
                        seg.q_begin + seg.q_count <= q_rows &&
                        seg.kv_begin >= 0 && seg.kv_count > 0 &&
                        seg.kv_begin + seg.kv_count <= kv_rows,
                    "attention segment out of range");
  }

  int heads_ = 1;
  int64_t embed_ = 0;
};

// ---------------------------------------------------------------------------
// Shape shufflers

template <typename T>
Tensor<T> space_to_depth(const Tensor<T>& x, int block) {
  VCLAB_CHECK_ARG(x.rank() == 4 && x.dim(1) % block == 0 &&
                      x.dim(2) % block == 0,
                  "space_to_depth shape mismatch");
  int64_t n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  int64_t ho = h / block, wo = w / block;
  Tensor<T> y({n, ho, wo, c * block * block});
  for (int64_t img = 0; img < n; ++img) {
    for (int64_t oy = 0; oy < ho; ++oy) {
      for (int64_t ox = 0; ox < wo; ++ox) {
        T* dst = y.ptr() + ((img * ho + oy) * wo + ox) * y.dim(3);
        for (int by = 0; by < block; ++by) {
          for (int bx = 0; bx < block; ++bx) {
            const T* src = x.ptr() + ((img * h + oy * block + by) * w +
                                      ox * block + bx) *
                                         c;
            std::copy(src, src + c, dst + (int64_t(by) * block + bx) * c);
          }
        }
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> depth_to_space(const Tensor<T>& x, int block) {
  VCLAB_CHECK_ARG(x.rank() == 4 && x.dim(3) % (block * block) == 0,
                  "depth_to_space shape mismatch");
  int64_t n = x.dim(0), h = x.dim(1), w = x.dim(2);
  int64_t c = x.dim(3) / (block * block);
  Tensor<T> y({n, h * block, w * block, c});
  for (int64_t img = 0; img < n; ++img) {
    for (int64_t iy = 0; iy < h; ++iy) {
      for (int64_t ix = 0; ix < w; ++ix) {
        const T* src = x.ptr() + ((img * h + iy) * w + ix) * x.dim(3);
        for (int by = 0; by < block; ++by) {
          for (int bx = 0; bx < block; ++bx) {
            T* dst = y.ptr() + ((img * h * block + iy * block + by) *
                                    (w * block) +
                                ix * block + bx) *
                                   c;
            std::copy(src + (int64_t(by) * block + bx) * c,
                      src + (int64_t(by) * block + bx + 1) * c, dst);
          }
        }
      }
    }
  }
  return y;
}

// ---------------------------------------------------------------------------
// Global average pooling

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  VCLAB_CHECK_ARG(x.rank() == 4, "pool expects nhwc");
  int64_t n = x.dim(0), hw = x.dim(1) * x.dim(2), c = x.dim(3);
  Tensor<T> y({n, c});
  for (int64_t img = 0; img < n; ++img) {
    for (int64_t p = 0; p < hw; ++p) {
      const T* src = x.ptr() + (img * hw + p) * c;
      for (int64_t ch = 0; ch < c; ++ch) y.at(img, ch) += src[ch];
    }
  }
  for (int64_t i = 0; i < y.numel(); ++i) y[i] /= T(hw);
  return y;
}

template <typename T>
Tensor<T> global_avg_pool_backward(const Tensor<T>& dy,
                                   const std::vector<int64_t>& in_shape) {
  Tensor<T> dx(in_shape);
  int64_t hw = in_shape[1] * in_shape[2], c = in_shape[3];
  for (int64_t img = 0; img < in_shape[0]; ++img) {
    for (int64_t p = 0; p < hw; ++p) {
      T* dst = dx.ptr() + (img * hw + p) * c;
      for (int64_t ch = 0; ch < c; ++ch) {
        dst[ch] = dy.at(img, ch) / T(hw);
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Timestep features

// Standard sinusoidal features of a scalar position.
template <typename T>
Tensor<T> sinusoidal_embedding(T position, int dim) {
  VCLAB_CHECK_ARG(dim >= 2 && dim % 2 == 0,
                  "sinusoidal embedding needs an even dimension");
  Tensor<T> out({dim});
  int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    T freq = std::exp(T(i) * (-std::log(T(10000)) / T(half - 1)));
    out[i] = std::sin(position * freq);
    out[half + i] = std::cos(position * freq);
  }
  return out;
}

}  // namespace vclab
