#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "vclab/common.hpp"
#include "vclab/nn_ops.hpp"
#include "vclab/rng.hpp"
#include "vclab/tensor.hpp"

namespace vclab {

// The encoder maps a batch of images plus per-image axis queries to one
// concept vector per axis. Queries are packed into a single ragged matrix in
// canonical (name-sorted) order before any arithmetic touches them, then the
// results are scattered back to each caller's slot order. Invalid slots of a
// padded request never enter the packed matrix at all, which is what makes
// the permutation and padding guarantees exact rather than approximate.

enum class EncoderVariant { kFull, kSharedMlp };

struct EncoderConfig {
  int image_size = 32;
  int patch_size = 8;
  int dim = 128;
  int backbone_blocks = 2;
  int backbone_heads = 8;
  int backbone_ffn = 256;
  int layers = 4;
  int heads = 8;
  int ffn_hidden = 256;
  int max_axes = 8;
  bool train_backbone = false;
  EncoderVariant variant = EncoderVariant::kFull;

  int patches_per_side() const { return image_size / patch_size; }
  int num_patches() const {
    return patches_per_side() * patches_per_side();
  }
};

// One image's worth of axis queries. `valid` may be empty (all slots valid)
// or mark a padded layout; rows for invalid slots are ignored entirely.
template <typename T>
struct AxisQuery {
  std::vector<std::string> names;
  Tensor<T> queries;
  std::vector<char> valid;

  bool slot_valid(size_t i) const {
    return valid.empty() || valid[i] != 0;
  }
};

template <typename T>
struct ConceptSet {
  std::vector<std::string> axis_names;
  std::vector<char> valid;
  Tensor<T> z;  // one row per slot, zeros in invalid slots

  bool slot_valid(size_t i) const {
    return valid.empty() || valid[i] != 0;
  }

  int64_t find(const std::string& name) const {
    for (size_t i = 0; i < axis_names.size(); ++i) {
      if (slot_valid(i) && axis_names[i] == name) return int64_t(i);
    }
    return -1;
  }
};

template <typename T>
int64_t param_count(const ParamList<T>& params) {
  int64_t total = 0;
  for (const auto& p : params) total += p.param->value.numel();
  return total;
}

// ---------------------------------------------------------------------------
// Visual backbone: patch embedding plus a couple of transformer blocks,
// randomly initialized and frozen by default. Input gradients still flow
// through it so decoded images can be re-encoded differentiably.

template <typename T>
struct BackboneBlockCache {
  LayerNormCache<T> ln1;
  MhaCache<T> attn;
  LayerNormCache<T> ln2;
  LinearCache<T> fc1;
  ActCache<T> act;
  LinearCache<T> fc2;
};

template <typename T>
struct BackboneCache {
  LinearCache<T> patch;
  std::vector<BackboneBlockCache<T>> blocks;
  LayerNormCache<T> ln_f;
  int64_t n_images = 0;
};

template <typename T>
class VisualBackbone {
 public:
  VisualBackbone() = default;
  explicit VisualBackbone(const EncoderConfig& config)
      : config_(config),
        patch_embed_(config.patch_size * config.patch_size * 3, config.dim) {
    pos_.init({config.num_patches(), config.dim});
    blocks_.reserve(size_t(config.backbone_blocks));
    for (int i = 0; i < config.backbone_blocks; ++i) {
      Block b;
      b.ln1 = LayerNorm<T>(config.dim);
      b.attn = MultiheadAttention<T>(config.dim, config.dim, config.dim,
                                     config.backbone_heads);
      b.ln2 = LayerNorm<T>(config.dim);
      b.fc1 = Linear<T>(config.dim, config.backbone_ffn);
      b.fc2 = Linear<T>(config.backbone_ffn, config.dim);
      blocks_.push_back(std::move(b));
    }
    ln_f_ = LayerNorm<T>(config.dim);
  }

  void init(Rng& rng) {
    patch_embed_.init(rng);
    pos_.value.fill_normal(rng, T(0), T(0.02));
    for (Block& b : blocks_) {
      b.attn.init(rng);
      b.fc1.init(rng);
      b.fc2.init(rng);
    }
  }

  // images: [n, s, s, 3] -> tokens: [n * patches, dim]
  Tensor<T> forward(const Tensor<T>& images, BackboneCache<T>& cache) const {
    int s = config_.image_size;
    VCLAB_CHECK_ARG(images.rank() == 4 && images.dim(1) == s &&
                        images.dim(2) == s && images.dim(3) == 3,
                    "backbone expects [n, " << s << ", " << s << ", 3], got "
                                            << shape_to_string(images.shape));
    int64_t n = images.dim(0);
    int64_t p = config_.num_patches();
    cache.n_images = n;
    Tensor<T> rows = patchify(images);
    Tensor<T> x = patch_embed_.forward(rows, cache.patch);
    for (int64_t r = 0; r < x.dim(0); ++r) {
      int64_t pi = r % p;
      for (int64_t c = 0; c < config_.dim; ++c) {
        x.at(r, c) += pos_.value.at(pi, c);
      }
    }
    std::vector<AttnSegment> segs = image_segments(n);
    cache.blocks.assign(blocks_.size(), BackboneBlockCache<T>());
    for (size_t i = 0; i < blocks_.size(); ++i) {
      const Block& b = blocks_[i];
      BackboneBlockCache<T>& bc = cache.blocks[i];
      Tensor<T> a = b.ln1.forward(x, bc.ln1);
      Tensor<T> sa = b.attn.forward(a, a, segs, bc.attn);
      axpy(T(1), sa, x);
      Tensor<T> h = b.ln2.forward(x, bc.ln2);
      h = b.fc1.forward(h, bc.fc1);
      h = silu_forward(h, bc.act);
      h = b.fc2.forward(h, bc.fc2);
      axpy(T(1), h, x);
    }
    return ln_f_.forward(x, cache.ln_f);
  }

  Tensor<T> backward(const Tensor<T>& dtokens, const BackboneCache<T>& cache) {
    Tensor<T> dx = ln_f_.backward(dtokens, cache.ln_f);
    for (size_t i = blocks_.size(); i-- > 0;) {
      Block& b = blocks_[i];
      const BackboneBlockCache<T>& bc = cache.blocks[i];
      Tensor<T> dh = b.fc2.backward(dx, bc.fc2);
      dh = silu_backward(dh, bc.act);
      dh = b.fc1.backward(dh, bc.fc1);
      Tensor<T> dres = b.ln2.backward(dh, bc.ln2);
      axpy(T(1), dres, dx);
      MhaGrads<T> g = b.attn.backward(dx, bc.attn);
      axpy(T(1), g.dkv_in, g.dq_in);
      Tensor<T> dres2 = b.ln1.backward(g.dq_in, bc.ln1);
      axpy(T(1), dres2, dx);
    }
    if (train_params) {
      int64_t p = config_.num_patches();
      for (int64_t r = 0; r < dx.dim(0); ++r) {
        int64_t pi = r % p;
        for (int64_t c = 0; c < config_.dim; ++c) {
          pos_.grad.at(pi, c) += dx.at(r, c);
        }
      }
    }
    Tensor<T> drows = patch_embed_.backward(dx, cache.patch);
    return unpatchify(drows, cache.n_images);
  }

  void collect(const std::string& prefix, ParamList<T>& out) {
    patch_embed_.collect(prefix + ".patch_embed", out);
    out.push_back({prefix + ".pos", &pos_});
    for (size_t i = 0; i < blocks_.size(); ++i) {
      std::string bp = prefix + ".block" + std::to_string(i);
      blocks_[i].ln1.collect(bp + ".ln1", out);
      blocks_[i].attn.collect(bp + ".attn", out);
      blocks_[i].ln2.collect(bp + ".ln2", out);
      blocks_[i].fc1.collect(bp + ".fc1", out);
      blocks_[i].fc2.collect(bp + ".fc2", out);
    }
    ln_f_.collect(prefix + ".ln_f", out);
  }

  void set_train_params(bool on) {
    train_params = on;
    patch_embed_.train_params = on;
    for (Block& b : blocks_) {
      b.ln1.train_params = on;
      b.attn.set_train_params(on);
      b.ln2.train_params = on;
      b.fc1.train_params = on;
      b.fc2.train_params = on;
    }
    ln_f_.train_params = on;
  }

  bool train_params = true;

 private:
  struct Block {
    LayerNorm<T> ln1;
    MultiheadAttention<T> attn;
    LayerNorm<T> ln2;
    Linear<T> fc1;
    Linear<T> fc2;
  };

  std::vector<AttnSegment> image_segments(int64_t n) const {
    int64_t p = config_.num_patches();
    std::vector<AttnSegment> segs;
    segs.reserve(size_t(n));
    for (int64_t i = 0; i < n; ++i) segs.push_back({i * p, p, i * p, p});
    return segs;
  }

  Tensor<T> patchify(const Tensor<T>& images) const {
    int64_t n = images.dim(0);
    int s = config_.image_size, ps = config_.patch_size;
    int g = config_.patches_per_side();
    Tensor<T> rows({n * config_.num_patches(), int64_t(ps) * ps * 3});
    for (int64_t img = 0; img < n; ++img) {
      for (int gy = 0; gy < g; ++gy) {
        for (int gx = 0; gx < g; ++gx) {
          T* dst = rows.ptr() +
                   (img * config_.num_patches() + gy * g + gx) * rows.dim(1);
          for (int py = 0; py < ps; ++py) {
            const T* src = images.ptr() +
                           ((img * s + gy * ps + py) * s + gx * ps) * 3;
            std::copy(src, src + int64_t(ps) * 3,
                      dst + int64_t(py) * ps * 3);
          }
        }
      }
    }
    return rows;
  }

  Tensor<T> unpatchify(const Tensor<T>& drows, int64_t n) const {
    int s = config_.image_size, ps = config_.patch_size;
    int g = config_.patches_per_side();
    Tensor<T> dimages({n, s, s, 3});
    for (int64_t img = 0; img < n; ++img) {
      for (int gy = 0; gy < g; ++gy) {
        for (int gx = 0; gx < g; ++gx) {
          const T* src = drows.ptr() +
                         (img * config_.num_patches() + gy * g + gx) *
                             drows.dim(1);
          for (int py = 0; py < ps; ++py) {
            T* dst = dimages.ptr() +
                     ((img * s + gy * ps + py) * s + gx * ps) * 3;
            std::copy(src + int64_t(py) * ps * 3,
                      src + int64_t(py + 1) * ps * 3, dst);
          }
        }
      }
    }
    return dimages;
  }

  EncoderConfig config_;
  Linear<T> patch_embed_;
  Param<T> pos_;
  std::vector<Block> blocks_;
  LayerNorm<T> ln_f_;
};

// ---------------------------------------------------------------------------
// Packing of ragged per-image query sets

struct QueryPacking {
  std::vector<int64_t> image_of_row;
  std::vector<int64_t> slot_of_row;
  std::vector<AttnSegment> self_segs;
  std::vector<AttnSegment> cross_segs;
  std::vector<int64_t> request_sizes;  // valid slots per image
  std::vector<int64_t> request_slots;  // total slots per image
  int64_t rows = 0;
};

template <typename T>
struct ConceptBlockCache {
  LayerNormCache<T> ln_self;
  MhaCache<T> self_attn;
  LayerNormCache<T> ln_cross;
  MhaCache<T> cross_attn;
  LayerNormCache<T> ln_ffn;
  LinearCache<T> fc1;
  ActCache<T> act;
  LinearCache<T> fc2;
};

template <typename T>
struct SharedMlpCache {
  Tensor<T> pooled;  // [n, dim]
  LinearCache<T> fc1;
  ActCache<T> act1;
  LinearCache<T> fc2;
  ActCache<T> act2;
  LinearCache<T> fc3;
};

template <typename T>
struct EncodeCache {
  BackboneCache<T> vis;
  QueryPacking packing;
  std::vector<ConceptBlockCache<T>> blocks;
  SharedMlpCache<T> mlp;
  int64_t token_rows = 0;
};

// ---------------------------------------------------------------------------
// Encoder

template <typename T>
class Encoder {
 public:
  Encoder() = default;
  explicit Encoder(const EncoderConfig& config)
      : config_(config), backbone_(config) {
    VCLAB_CHECK_ARG(config.image_size % config.patch_size == 0,
                    "image size not divisible by patch size");
    VCLAB_CHECK_ARG(config.dim % config.heads == 0,
                    "width not divisible by head count");
    if (config.variant == EncoderVariant::kFull) {
      blocks_.reserve(size_t(config.layers));
      for (int i = 0; i < config.layers; ++i) {
        Block b;
        b.ln_self = LayerNorm<T>(config.dim);
        b.self_attn = MultiheadAttention<T>(config.dim, config.dim,
                                            config.dim, config.heads);
        b.ln_cross = LayerNorm<T>(config.dim);
        b.cross_attn = MultiheadAttention<T>(config.dim, config.dim,
                                             config.dim, config.heads);
        b.ln_ffn = LayerNorm<T>(config.dim);
        b.fc1 = Linear<T>(config.dim, config.ffn_hidden);
        b.fc2 = Linear<T>(config.ffn_hidden, config.dim);
        blocks_.push_back(std::move(b));
      }
    } else {
      mlp_fc1_ = Linear<T>(2 * config.dim, config.ffn_hidden);
      mlp_fc2_ = Linear<T>(config.ffn_hidden, config.ffn_hidden);
      mlp_fc3_ = Linear<T>(config.ffn_hidden, config.dim);
    }
  }

  const EncoderConfig& config() const { return config_; }

  void init(Rng& rng) {
    backbone_.init(rng);
    for (Block& b : blocks_) {
      b.self_attn.init(rng);
      b.cross_attn.init(rng);
      b.fc1.init(rng);
      b.fc2.init(rng);
    }
    if (config_.variant == EncoderVariant::kSharedMlp) {
      mlp_fc1_.init(rng);
      mlp_fc2_.init(rng);
      mlp_fc3_.init(rng);
    }
    backbone_.set_train_params(config_.train_backbone);
  }

  Tensor<T> encode_visual(const Tensor<T>& images,
                          BackboneCache<T>& cache) const {
    return backbone_.forward(images, cache);
  }

  std::vector<ConceptSet<T>> encode(const Tensor<T>& images,
                                    const std::vector<AxisQuery<T>>& requests,
                                    EncodeCache<T>& cache) const {
    VCLAB_CHECK_ARG(int64_t(requests.size()) == images.dim(0),
                    "one query set per image expected");
    Tensor<T> tokens = backbone_.forward(images, cache.vis);
    cache.token_rows = tokens.dim(0);
    return encode_from_tokens(tokens, requests, cache);
  }

  // dz: one [slots, dim] tensor per image, aligned with the request slot
  // order; rows for invalid slots are ignored. Returns dL/dimages.
  Tensor<T> backward(const std::vector<Tensor<T>>& dz,
                     const EncodeCache<T>& cache) {
    Tensor<T> dtokens = backward_to_tokens(dz, cache);
    return backbone_.backward(dtokens, cache.vis);
  }

  void collect(const std::string& prefix, ParamList<T>& out) {
    backbone_.collect(prefix + ".backbone", out);
    for (size_t i = 0; i < blocks_.size(); ++i) {
      std::string bp = prefix + ".block" + std::to_string(i);
      blocks_[i].ln_self.collect(bp + ".ln_self", out);
      blocks_[i].self_attn.collect(bp + ".self_attn", out);
      blocks_[i].ln_cross.collect(bp + ".ln_cross", out);
      blocks_[i].cross_attn.collect(bp + ".cross_attn", out);
      blocks_[i].ln_ffn.collect(bp + ".ln_ffn", out);
      blocks_[i].fc1.collect(bp + ".fc1", out);
      blocks_[i].fc2.collect(bp + ".fc2", out);
    }
    if (config_.variant == EncoderVariant::kSharedMlp) {
      mlp_fc1_.collect(prefix + ".mlp_fc1", out);
      mlp_fc2_.collect(prefix + ".mlp_fc2", out);
      mlp_fc3_.collect(prefix + ".mlp_fc3", out);
    }
  }

  // Parameters the optimizer should step: excludes the backbone when it is
  // configured frozen. collect() still returns everything for checkpoints.
  void collect_trainable(const std::string& prefix, ParamList<T>& out) {
    ParamList<T> all;
    collect(prefix, all);
    ParamList<T> backbone_only;
    backbone_.collect(prefix + ".backbone", backbone_only);
    for (auto& p : all) {
      bool in_backbone = false;
      for (auto& bp : backbone_only) {
        if (bp.param == p.param) {
          in_backbone = true;
          break;
        }
      }
      if (!in_backbone || config_.train_backbone) out.push_back(p);
    }
  }

  void set_train_params(bool on) {
    backbone_.set_train_params(on && config_.train_backbone);
    for (Block& b : blocks_) {
      b.ln_self.train_params = on;
      b.self_attn.set_train_params(on);
      b.ln_cross.train_params = on;
      b.cross_attn.set_train_params(on);
      b.ln_ffn.train_params = on;
      b.fc1.train_params = on;
      b.fc2.train_params = on;
    }
    mlp_fc1_.train_params = on;
    mlp_fc2_.train_params = on;
    mlp_fc3_.train_params = on;
  }

  void copy_params_from(Encoder<T>& other) {
    ParamList<T> mine, theirs;
    collect("e", mine);
    other.collect("e", theirs);
    VCLAB_CHECK(mine.size() == theirs.size(), ErrorCode::kInvalidState,
                "parameter structure mismatch between encoder copies");
    for (size_t i = 0; i < mine.size(); ++i) {
      VCLAB_CHECK(mine[i].name == theirs[i].name &&
                      mine[i].param->value.numel() ==
                          theirs[i].param->value.numel(),
                  ErrorCode::kInvalidState,
                  "parameter mismatch at " << mine[i].name);
      mine[i].param->value.data = theirs[i].param->value.data;
    }
  }

  void zero_grads() {
    ParamList<T> all;
    collect("e", all);
    for (auto& p : all) p.param->grad.zero();
  }

 private:
  struct Block {
    LayerNorm<T> ln_self;
    MultiheadAttention<T> self_attn;
    LayerNorm<T> ln_cross;
    MultiheadAttention<T> cross_attn;
    LayerNorm<T> ln_ffn;
    Linear<T> fc1;
    Linear<T> fc2;
  };

  QueryPacking build_packing(const std::vector<AxisQuery<T>>& requests,
                             int64_t n_tokens_rows) const {
    QueryPacking pk;
    int64_t p = config_.num_patches();
    int64_t offset = 0;
    for (size_t i = 0; i < requests.size(); ++i) {
      const AxisQuery<T>& rq = requests[i];
      VCLAB_CHECK_ARG(rq.queries.rank() == 2 &&
                          rq.queries.dim(0) == int64_t(rq.names.size()) &&
                          rq.queries.dim(1) == config_.dim,
                      "query matrix must be [slots, " << config_.dim << "]");
      VCLAB_CHECK_ARG(rq.valid.empty() ||
                          rq.valid.size() == rq.names.size(),
                      "validity mask length mismatch");
      std::vector<int64_t> slots;
      for (size_t j = 0; j < rq.names.size(); ++j) {
        if (rq.slot_valid(j)) slots.push_back(int64_t(j));
      }
      VCLAB_CHECK_ARG(!slots.empty(), "image " << i << " has no valid axes");
      VCLAB_CHECK_ARG(int64_t(slots.size()) <= config_.max_axes,
                      "image " << i << " exceeds the axis budget of "
                               << config_.max_axes);
      std::sort(slots.begin(), slots.end(), [&](int64_t a, int64_t b) {
        return rq.names[size_t(a)] < rq.names[size_t(b)];
      });
      for (int64_t s : slots) {
        pk.image_of_row.push_back(int64_t(i));
        pk.slot_of_row.push_back(s);
      }
      int64_t k = int64_t(slots.size());
      pk.self_segs.push_back({offset, k, offset, k});
      pk.cross_segs.push_back({offset, k, int64_t(i) * p, p});
      pk.request_sizes.push_back(k);
      pk.request_slots.push_back(int64_t(rq.names.size()));
      offset += k;
    }
    pk.rows = offset;
    VCLAB_CHECK_ARG(pk.cross_segs.empty() ||
                        int64_t(requests.size()) * p == n_tokens_rows,
                    "token rows inconsistent with request count");
    return pk;
  }

  Tensor<T> pack_queries(const std::vector<AxisQuery<T>>& requests,
                         const QueryPacking& pk) const {
    Tensor<T> x({pk.rows, config_.dim});
    for (int64_t r = 0; r < pk.rows; ++r) {
      const AxisQuery<T>& rq = requests[size_t(pk.image_of_row[size_t(r)])];
      const T* src = rq.queries.ptr() +
                     pk.slot_of_row[size_t(r)] * config_.dim;
      std::copy(src, src + config_.dim, x.ptr() + r * config_.dim);
    }
    return x;
  }

  std::vector<ConceptSet<T>> scatter_output(
      const Tensor<T>& x, const std::vector<AxisQuery<T>>& requests,
      const QueryPacking& pk) const {
    std::vector<ConceptSet<T>> out(requests.size());
    for (size_t i = 0; i < requests.size(); ++i) {
      out[i].axis_names = requests[i].names;
      out[i].valid = requests[i].valid;
      out[i].z = Tensor<T>({int64_t(requests[i].names.size()), config_.dim});
    }
    for (int64_t r = 0; r < pk.rows; ++r) {
      ConceptSet<T>& cs = out[size_t(pk.image_of_row[size_t(r)])];
      const T* src = x.ptr() + r * config_.dim;
      std::copy(src, src + config_.dim,
                cs.z.ptr() + pk.slot_of_row[size_t(r)] * config_.dim);
    }
    return out;
  }

  std::vector<ConceptSet<T>> encode_from_tokens(
      const Tensor<T>& tokens, const std::vector<AxisQuery<T>>& requests,
      EncodeCache<T>& cache) const {
    cache.packing = build_packing(requests, tokens.dim(0));
    const QueryPacking& pk = cache.packing;
    Tensor<T> x = pack_queries(requests, pk);
    if (config_.variant == EncoderVariant::kFull) {
      cache.blocks.assign(blocks_.size(), ConceptBlockCache<T>());
      for (size_t i = 0; i < blocks_.size(); ++i) {
        const Block& b = blocks_[i];
        ConceptBlockCache<T>& bc = cache.blocks[i];
        Tensor<T> a = b.ln_self.forward(x, bc.ln_self);
        Tensor<T> sa = b.self_attn.forward(a, a, pk.self_segs, bc.self_attn);
        axpy(T(1), sa, x);
        Tensor<T> q = b.ln_cross.forward(x, bc.ln_cross);
        Tensor<T> ca =
            b.cross_attn.forward(q, tokens, pk.cross_segs, bc.cross_attn);
        axpy(T(1), ca, x);
        Tensor<T> h = b.ln_ffn.forward(x, bc.ln_ffn);
        h = b.fc1.forward(h, bc.fc1);
        h = silu_forward(h, bc.act);
        h = b.fc2.forward(h, bc.fc2);
        axpy(T(1), h, x);
      }
    } else {
      x = shared_mlp_forward(tokens, x, pk, cache.mlp);
    }
    return scatter_output(x, requests, pk);
  }

  Tensor<T> shared_mlp_forward(const Tensor<T>& tokens, const Tensor<T>& q,
                               const QueryPacking& pk,
                               SharedMlpCache<T>& cache) const {
    int64_t p = config_.num_patches();
    int64_t n = tokens.dim(0) / p;
    cache.pooled = Tensor<T>({n, config_.dim});
    for (int64_t img = 0; img < n; ++img) {
      for (int64_t t = 0; t < p; ++t) {
        const T* src = tokens.ptr() + (img * p + t) * config_.dim;
        for (int64_t c = 0; c < config_.dim; ++c) {
          cache.pooled.at(img, c) += src[c];
        }
      }
    }
    for (int64_t i = 0; i < cache.pooled.numel(); ++i) {
      cache.pooled[i] /= T(p);
    }
    Tensor<T> cat({pk.rows, 2 * config_.dim});
    for (int64_t r = 0; r < pk.rows; ++r) {
      const T* pool = cache.pooled.ptr() +
                      pk.image_of_row[size_t(r)] * config_.dim;
      T* dst = cat.ptr() + r * cat.dim(1);
      std::copy(pool, pool + config_.dim, dst);
      std::copy(q.ptr() + r * config_.dim, q.ptr() + (r + 1) * config_.dim,
                dst + config_.dim);
    }
    Tensor<T> h = mlp_fc1_.forward(cat, cache.fc1);
    h = relu_forward(h, cache.act1);
    h = mlp_fc2_.forward(h, cache.fc2);
    h = relu_forward(h, cache.act2);
    return mlp_fc3_.forward(h, cache.fc3);
  }

  Tensor<T> backward_to_tokens(const std::vector<Tensor<T>>& dz,
                               const EncodeCache<T>& cache) {
    const QueryPacking& pk = cache.packing;
    VCLAB_CHECK_ARG(dz.size() == pk.request_sizes.size(),
                    "gradient list size mismatch");
    for (size_t i = 0; i < dz.size(); ++i) {
      VCLAB_CHECK_ARG(dz[i].rank() == 2 &&
                          dz[i].dim(0) == pk.request_slots[i] &&
                          dz[i].dim(1) == config_.dim,
                      "per-image gradient must be [slots, " << config_.dim
                                                            << "]");
    }
    Tensor<T> dx({pk.rows, config_.dim});
    for (int64_t r = 0; r < pk.rows; ++r) {
      const Tensor<T>& g = dz[size_t(pk.image_of_row[size_t(r)])];
      const T* src = g.ptr() + pk.slot_of_row[size_t(r)] * config_.dim;
      std::copy(src, src + config_.dim, dx.ptr() + r * config_.dim);
    }
    Tensor<T> dtokens({cache.token_rows, config_.dim});
    if (config_.variant == EncoderVariant::kFull) {
      for (size_t i = blocks_.size(); i-- > 0;) {
        Block& b = blocks_[i];
        const ConceptBlockCache<T>& bc = cache.blocks[i];
        Tensor<T> dh = b.fc2.backward(dx, bc.fc2);
        dh = silu_backward(dh, bc.act);
        dh = b.fc1.backward(dh, bc.fc1);
        Tensor<T> dres = b.ln_ffn.backward(dh, bc.ln_ffn);
        axpy(T(1), dres, dx);
        MhaGrads<T> gc = b.cross_attn.backward(dx, bc.cross_attn);
        axpy(T(1), gc.dkv_in, dtokens);
        Tensor<T> dres2 = b.ln_cross.backward(gc.dq_in, bc.ln_cross);
        axpy(T(1), dres2, dx);
        MhaGrads<T> gs = b.self_attn.backward(dx, bc.self_attn);
        axpy(T(1), gs.dkv_in, gs.dq_in);
        Tensor<T> dres3 = b.ln_self.backward(gs.dq_in, bc.ln_self);
        axpy(T(1), dres3, dx);
      }
    } else {
      Tensor<T> dh = mlp_fc3_.backward(dx, cache.mlp.fc3);
      dh = relu_backward(dh, cache.mlp.act2);
      dh = mlp_fc2_.backward(dh, cache.mlp.fc2);
      dh = relu_backward(dh, cache.mlp.act1);
      Tensor<T> dcat = mlp_fc1_.backward(dh, cache.mlp.fc1);
      int64_t p = config_.num_patches();
      for (int64_t r = 0; r < pk.rows; ++r) {
        int64_t img = pk.image_of_row[size_t(r)];
        const T* src = dcat.ptr() + r * dcat.dim(1);
        for (int64_t t = 0; t < p; ++t) {
          T* dst = dtokens.ptr() + (img * p + t) * config_.dim;
          for (int64_t c = 0; c < config_.dim; ++c) {
            dst[c] += src[c] / T(p);
          }
        }
      }
    }
    return dtokens;
  }

  EncoderConfig config_;
  VisualBackbone<T> backbone_;
  std::vector<Block> blocks_;
  Linear<T> mlp_fc1_, mlp_fc2_, mlp_fc3_;
};

// Returns a frozen deep copy whose parameters are value-identical to the
// source; no gradient ever accumulates in it. Refresh with copy_params_from
// to track the source after optimizer steps.
template <typename T>
Encoder<T> freeze_copy(Encoder<T>& source) {
  Encoder<T> frozen(source.config());
  frozen.copy_params_from(source);
  frozen.set_train_params(false);
  return frozen;
}

}  // namespace vclab
