#include "vclab/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <utility>

#include <nlohmann/json.hpp>

namespace vclab {

using nlohmann::json;

namespace {

// Substream tags for every random draw the trainer makes. Each consumer
// derives its own stream from (run seed, tag, index), so no generator state
// survives a step and resuming needs nothing beyond the step counter.
constexpr uint64_t kStreamInit = 1;
constexpr uint64_t kStreamDrop = 2;
constexpr uint64_t kStreamStep = 3;
constexpr uint64_t kStreamVal = 4;

// Pixels arrive in [0, 1]; the model works in [-1, 1] end to end, decoded
// composites included.
Tensor<float> gather_pixels(const std::vector<TrainItem>& items,
                            const std::vector<size_t>& picks, int image_size) {
  Tensor<float> out({int64_t(picks.size()), image_size, image_size, 3});
  int64_t per = int64_t(image_size) * image_size * 3;
  for (size_t b = 0; b < picks.size(); ++b) {
    const Tensor<float>& px = items[picks[b]].pixels;
    for (int64_t j = 0; j < per; ++j) {
      out[int64_t(b) * per + j] = 2.0f * px[j] - 1.0f;
    }
  }
  return out;
}

std::vector<AxisQuery<float>> gather_queries(
    const std::vector<TrainItem>& items, const std::vector<size_t>& picks) {
  std::vector<AxisQuery<float>> out;
  out.reserve(picks.size());
  for (size_t pick : picks) {
    AxisQuery<float> q;
    q.names = items[pick].emb.names;
    q.queries = items[pick].emb.queries;
    out.push_back(std::move(q));
  }
  return out;
}

// Wraps per-image row matrices in concept sets so swap plans can be applied
// to them; used to move both target rows and gradients between slot layouts.
std::vector<ConceptSet<float>> wrap_rows(
    const std::vector<ConceptSet<float>>& like,
    const std::vector<Tensor<float>>& rows) {
  std::vector<ConceptSet<float>> out(like.size());
  for (size_t i = 0; i < like.size(); ++i) {
    out[i].axis_names = like[i].axis_names;
    out[i].valid = like[i].valid;
    out[i].z = rows[i];
  }
  return out;
}

void append_metrics_line(std::ofstream& out, const json& j) {
  out << j.dump() << "\n";
  VCLAB_CHECK(out.good(), ErrorCode::kIo, "writing metrics log failed");
}

}  // namespace

std::vector<TrainItem> make_train_items(const std::vector<ImageSample>& samples,
                                        const TrainConfig& config) {
  TextCodec codec({config.embedder_seed, config.encoder.dim});
  std::vector<TrainItem> items;
  items.reserve(samples.size());
  for (const ImageSample& s : samples) {
    TrainItem item;
    item.id = s.id;
    item.pixels = s.pixels;
    item.dict = annotate_oracle(s);
    if (config.drop_fraction > 0.0) {
      Rng rng = Rng(config.seed).derive(kStreamDrop, hash_bytes(s.id));
      item.dict = drop_axes(item.dict, config.drop_fraction, rng);
    }
    item.emb = codec.embed_dictionary(item.dict);
    items.push_back(std::move(item));
  }
  return items;
}

Trainer::Trainer(const TrainConfig& config, std::vector<TrainItem> train_items,
                 std::vector<TrainItem> val_items)
    : config_(config),
      train_items_(std::move(train_items)),
      val_items_(std::move(val_items)) {
  validate_train_config(config_);
  VCLAB_CHECK_ARG(!train_items_.empty(),
                  "trainer needs at least one training item");
  auto check_items = [&](const std::vector<TrainItem>& items) {
    for (const TrainItem& it : items) {
      VCLAB_CHECK_ARG(it.pixels.rank() == 3 &&
                          it.pixels.dim(0) == config_.encoder.image_size &&
                          it.pixels.dim(1) == config_.encoder.image_size &&
                          it.pixels.dim(2) == 3,
                      "item " << it.id << " does not match the configured "
                              << "resolution");
      VCLAB_CHECK_ARG(it.emb.queries.rank() == 2 &&
                          it.emb.queries.dim(1) == config_.encoder.dim,
                      "item " << it.id
                              << " was embedded at a different width");
      VCLAB_CHECK_ARG(int(it.emb.names.size()) <= config_.encoder.max_axes,
                      "item " << it.id << " carries more axes than the "
                              << "encoder accepts");
    }
  };
  check_items(train_items_);
  check_items(val_items_);
  build_modules();
}

Trainer::Trainer(const Checkpoint& checkpoint,
                 std::vector<TrainItem> train_items,
                 std::vector<TrainItem> val_items)
    : Trainer(train_config_from_json(checkpoint.meta.config_json),
              std::move(train_items), std::move(val_items)) {
  restore(checkpoint);
}

void Trainer::build_modules() {
  encoder_ = Encoder<float>(config_.encoder);
  Rng enc_rng = Rng(config_.seed).derive(kStreamInit, 0);
  encoder_.init(enc_rng);

  decoder_ = Denoiser<float>(config_.denoiser);
  Rng dec_rng = Rng(config_.seed).derive(kStreamInit, 1);
  decoder_.init(dec_rng);

  head_ = RegressionHead<float>(config_.encoder.dim);
  Rng head_rng = Rng(config_.seed).derive(kStreamInit, 2);
  head_.init(head_rng);

  frozen_ = freeze_copy(encoder_);

  ParamList<float> params;
  encoder_.collect_trainable("enc", params);
  decoder_.collect("dec", params);
  if (config_.use_head) head_.collect("head", params);
  adam_ = Adam<float>(params, config_.adam);

  step_ = 0;
  composites_decoded_ = 0;
  decoder_frozen_ = false;
}

void Trainer::freeze_decoder_if_due() {
  if (decoder_frozen_ || config_.freeze_decoder_after <= 0 ||
      step_ < config_.freeze_decoder_after) {
    return;
  }
  decoder_.set_train_params(false);
  // Clearing the moments makes the optimizer update exactly zero from here
  // on; otherwise momentum would keep nudging the frozen weights.
  for (auto& slot : adam_.slots()) {
    if (slot.name.rfind("dec.", 0) == 0) {
      slot.m.zero();
      slot.v.zero();
      slot.param->grad.zero();
    }
  }
  decoder_frozen_ = true;
}

StepStats Trainer::step() {
  freeze_decoder_if_due();
  const int64_t s = step_;
  const Rng base(config_.seed);
  const size_t n = train_items_.size();
  const int B = config_.batch_size;

  Rng r_batch = base.derive(kStreamStep, uint64_t(s), 0);
  std::vector<size_t> picks(static_cast<size_t>(B));
  for (auto& p : picks) p = size_t(r_batch.randint(n));

  Tensor<float> images =
      gather_pixels(train_items_, picks, config_.encoder.image_size);
  std::vector<AxisQuery<float>> queries = gather_queries(train_items_, picks);

  EncodeCache<float> enc_cache;
  std::vector<ConceptSet<float>> z = encoder_.encode(images, queries, enc_cache);

  Rng r_diff = base.derive(kStreamStep, uint64_t(s), 1);
  LossResult<float> ld =
      diffusion_loss(decoder_, schedule_, images, z, r_diff);
  std::vector<Tensor<float>> dz = std::move(ld.dz);

  double comp_value = 0.0;
  int n_comp = 0;
  if (config_.weights.comp > 0.0) {
    std::vector<AxisDictionary> dicts;
    dicts.reserve(picks.size());
    for (size_t pick : picks) dicts.push_back(train_items_[pick].dict);

    Rng r_plan = base.derive(kStreamStep, uint64_t(s), 2);
    SwapPlan plan = build_swap_plan(dicts, config_.swap, r_plan);
    if (!plan.records.empty()) {
      std::vector<int64_t> touched;
      for (size_t i = 0; i < picks.size(); ++i) {
        if (plan.image_touched(i)) touched.push_back(int64_t(i));
      }
      Rng r_pick = base.derive(kStreamStep, uint64_t(s), 3);
      r_pick.shuffle(touched);
      if (int64_t(touched.size()) > config_.comp_batch) {
        touched.resize(size_t(config_.comp_batch));
      }
      std::sort(touched.begin(), touched.end());

      std::vector<ConceptSet<float>> zc = apply_swap(z, plan);

      std::vector<Tensor<float>> target_rows;
      target_rows.reserve(picks.size());
      for (size_t pick : picks) {
        target_rows.push_back(train_items_[pick].emb.targets);
      }
      std::vector<ConceptSet<float>> composite_targets =
          apply_swap(wrap_rows(z, target_rows), plan);

      std::vector<AnchorRequest<float>> requests;
      requests.reserve(touched.size());
      for (int64_t i : touched) {
        AnchorRequest<float> r;
        r.image = i;
        r.query = queries[size_t(i)];
        r.targets = composite_targets[size_t(i)].z;
        if (config_.score_swapped_only) {
          r.score.assign(z[size_t(i)].axis_names.size(), 0);
          for (const SwapRecord& rec : plan.records) {
            if (rec.a != i && rec.b != i) continue;
            int64_t slot = z[size_t(i)].find(rec.axis);
            if (slot >= 0) r.score[size_t(slot)] = 1;
          }
        }
        requests.push_back(std::move(r));
      }

      AnchorConfig ac;
      ac.ddim = config_.ddim;
      ac.use_head = config_.use_head;
      ac.grad_scale = config_.weights.comp;
      Rng r_anchor = base.derive(kStreamStep, uint64_t(s), 4);
      LossResult<float> lc = anchoring_loss(decoder_, schedule_, frozen_,
                                            head_, zc, requests, ac, r_anchor);
      comp_value = lc.value;
      n_comp = int(touched.size());

      // The gradients sit in composite slot positions; applying the same
      // plan again routes each row back to the image that owns it.
      std::vector<ConceptSet<float>> routed =
          apply_swap(wrap_rows(z, lc.dz), plan);
      for (size_t i = 0; i < dz.size(); ++i) {
        axpy(1.0f, routed[i].z, dz[i]);
      }
    }
  }

  double reg_value = 0.0;
  if (config_.weights.reg > 0.0) {
    std::vector<Tensor<float>> target_rows;
    target_rows.reserve(picks.size());
    for (size_t pick : picks) {
      target_rows.push_back(train_items_[pick].emb.targets);
    }
    LossResult<float> lr = regression_loss(z, target_rows, head_,
                                           config_.use_head,
                                           config_.weights.reg);
    reg_value = lr.value;
    for (size_t i = 0; i < dz.size(); ++i) {
      axpy(1.0f, lr.dz[i], dz[i]);
    }
  }

  encoder_.backward(dz, enc_cache);

  double total = total_loss(ld.value, comp_value, reg_value, config_.weights);
  if (!std::isfinite(ld.value) || !std::isfinite(comp_value) ||
      !std::isfinite(reg_value) || !std::isfinite(total)) {
    std::ostringstream oss;
    oss << "non-finite loss at step " << s << " (diff " << ld.value
        << ", comp " << comp_value << ", reg " << reg_value << "); batch:";
    for (size_t pick : picks) oss << " " << train_items_[pick].id;
    fail(ErrorCode::kNumeric, oss.str());
  }

  adam_.step();
  adam_.zero_grads();
  head_.zero_grads();

  ++step_;
  composites_decoded_ += n_comp;
  if (config_.weights.comp > 0.0 &&
      step_ % config_.refresh_frozen_every == 0) {
    frozen_.copy_params_from(encoder_);
  }

  StepStats st;
  st.step = s;
  st.diff = ld.value;
  st.comp = comp_value;
  st.reg = reg_value;
  st.total = total;
  st.composites = n_comp;
  st.batch_ids.reserve(picks.size());
  for (size_t pick : picks) st.batch_ids.push_back(train_items_[pick].id);
  return st;
}

double Trainer::validation_loss() {
  VCLAB_CHECK(!val_items_.empty(), ErrorCode::kInvalidState,
              "no validation items were provided");
  decoder_.set_train_params(false);
  double sum = 0.0;
  for (int b = 0; b < config_.val_batches; ++b) {
    Rng rng = Rng(config_.seed).derive(kStreamVal, uint64_t(b));
    std::vector<size_t> picks(static_cast<size_t>(config_.batch_size));
    for (auto& p : picks) p = size_t(rng.randint(val_items_.size()));
    Tensor<float> images =
        gather_pixels(val_items_, picks, config_.encoder.image_size);
    std::vector<AxisQuery<float>> queries =
        gather_queries(val_items_, picks);
    EncodeCache<float> enc_cache;
    std::vector<ConceptSet<float>> z =
        encoder_.encode(images, queries, enc_cache);
    sum += diffusion_loss(decoder_, schedule_, images, z, rng).value;
  }
  decoder_.set_train_params(!decoder_frozen_);
  return sum / double(config_.val_batches);
}

Checkpoint Trainer::snapshot() {
  Checkpoint ckpt;
  ckpt.meta.step = step_;
  ckpt.meta.embedder_seed = config_.embedder_seed;
  ckpt.meta.embedder_dim = config_.encoder.dim;
  ckpt.meta.config_json = train_config_to_json(config_);

  auto add_list = [&](const char* prefix, auto& module) {
    ParamList<float> list;
    module.collect(prefix, list);
    for (const auto& np : list) ckpt.add(np.name, np.param->value);
  };
  add_list("enc", encoder_);
  add_list("dec", decoder_);
  add_list("head", head_);
  add_list("frozen", frozen_);
  for (const auto& slot : adam_.slots()) {
    ckpt.add("opt." + slot.name + ".m", slot.m);
    ckpt.add("opt." + slot.name + ".v", slot.v);
  }
  return ckpt;
}

void Trainer::save(const std::string& path) {
  save_checkpoint(path, snapshot());
}

void Trainer::restore(const Checkpoint& checkpoint) {
  VCLAB_CHECK(checkpoint.meta.embedder_seed == config_.embedder_seed,
              ErrorCode::kCheckpoint,
              "embedder seed mismatch: checkpoint has "
                  << checkpoint.meta.embedder_seed << ", config expects "
                  << config_.embedder_seed);
  VCLAB_CHECK(checkpoint.meta.embedder_dim == config_.encoder.dim,
              ErrorCode::kCheckpoint,
              "embedder width mismatch: checkpoint has "
                  << checkpoint.meta.embedder_dim << ", config expects "
                  << config_.encoder.dim);
  VCLAB_CHECK(checkpoint.meta.step >= 0, ErrorCode::kCheckpoint,
              "checkpoint step count is negative");

  auto load_into = [&](const Tensor<float>* src, Tensor<float>& dst,
                       const std::string& name) {
    VCLAB_CHECK(src != nullptr, ErrorCode::kCheckpoint,
                "checkpoint is missing tensor " << name);
    VCLAB_CHECK(src->shape == dst.shape, ErrorCode::kCheckpoint,
                "shape mismatch restoring " << name);
    dst = *src;
  };
  auto restore_list = [&](const char* prefix, auto& module) {
    ParamList<float> list;
    module.collect(prefix, list);
    for (auto& np : list) {
      load_into(checkpoint.find(np.name), np.param->value, np.name);
      np.param->grad.zero();
    }
  };
  restore_list("enc", encoder_);
  restore_list("dec", decoder_);
  restore_list("head", head_);
  restore_list("frozen", frozen_);
  for (auto& slot : adam_.slots()) {
    load_into(checkpoint.find("opt." + slot.name + ".m"), slot.m,
              "opt." + slot.name + ".m");
    load_into(checkpoint.find("opt." + slot.name + ".v"), slot.v,
              "opt." + slot.name + ".v");
  }

  step_ = checkpoint.meta.step;
  adam_.set_step_count(step_);
  composites_decoded_ = 0;
  decoder_frozen_ = false;
  decoder_.set_train_params(true);
  freeze_decoder_if_due();
}

std::string Trainer::run(const std::string& run_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(run_dir);
  save_train_config((fs::path(run_dir) / "config.json").string(), config_);

  std::ofstream metrics(fs::path(run_dir) / "metrics.jsonl", std::ios::app);
  VCLAB_CHECK(metrics.good(), ErrorCode::kIo,
              "cannot open metrics log under " << run_dir);

  auto t0 = std::chrono::steady_clock::now();
  while (step_ < config_.steps) {
    StepStats st;
    try {
      st = step();
    } catch (const Error& e) {
      if (e.code() == ErrorCode::kNumeric) {
        json crash;
        crash["step"] = step_;
        crash["error"] = e.what();
        std::ofstream out(fs::path(run_dir) / "crash.json", std::ios::trunc);
        out << crash.dump(2) << "\n";
      }
      throw;
    }

    json line;
    line["step"] = st.step;
    line["diff"] = st.diff;
    line["comp"] = st.comp;
    line["reg"] = st.reg;
    line["total"] = st.total;
    line["composites"] = st.composites;
    append_metrics_line(metrics, line);

    if (config_.val_every > 0 &&
        (step_ % config_.val_every == 0 || step_ == config_.steps) &&
        !val_items_.empty()) {
      json v;
      v["step"] = step_;
      v["val_diff"] = validation_loss();
      append_metrics_line(metrics, v);
      metrics.flush();
    }
    if (config_.checkpoint_every > 0 &&
        step_ % config_.checkpoint_every == 0 && step_ < config_.steps) {
      save((fs::path(run_dir) /
            ("ckpt_" + std::to_string(step_) + ".ckpt")).string());
      metrics.flush();
    }
  }
  double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();

  std::string final_path = (fs::path(run_dir) / "final.ckpt").string();
  save(final_path);
  json done;
  done["event"] = "done";
  done["steps"] = step_;
  done["wall_seconds"] = wall;
  done["composites"] = composites_decoded_;
  append_metrics_line(metrics, done);
  metrics.flush();
  return final_path;
}

RunResult run_training(const TrainConfig& config,
                       const DatasetManifest& manifest,
                       const std::string& run_dir,
                       const std::string& resume_from) {
  validate_train_config(config);
  std::vector<ImageSample> samples = load_dataset(manifest);
  VCLAB_CHECK_ARG(samples.size() == manifest.entries.size(),
                  "dataset and manifest disagree on sample count");
  std::vector<ImageSample> train_samples, val_samples;
  for (size_t i = 0; i < samples.size(); ++i) {
    if (manifest.entries[i].split == "val") {
      val_samples.push_back(std::move(samples[i]));
    } else {
      train_samples.push_back(std::move(samples[i]));
    }
  }

  std::optional<Checkpoint> ckpt;
  if (!resume_from.empty()) {
    ckpt = load_checkpoint(resume_from);
    json stored = json::parse(ckpt->meta.config_json, nullptr, false);
    json wanted = json::parse(train_config_to_json(config));
    VCLAB_CHECK(!stored.is_discarded(), ErrorCode::kCheckpoint,
                "checkpoint carries an unreadable config");
    stored.erase("steps");
    wanted.erase("steps");
    VCLAB_CHECK(stored == wanted, ErrorCode::kCheckpoint,
                "resume config differs from the checkpoint beyond the step "
                "budget");
  }

  Trainer trainer(config, make_train_items(train_samples, config),
                  make_train_items(val_samples, config));
  if (ckpt) trainer.restore(*ckpt);

  auto t0 = std::chrono::steady_clock::now();
  RunResult result;
  result.final_checkpoint = trainer.run(run_dir);
  result.steps_done = trainer.step_count();
  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return result;
}

}  // namespace vclab
