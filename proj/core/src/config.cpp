#include "vclab/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace vclab {

using nlohmann::json;

namespace {

// Pulls known keys out of an object, rejecting anything unrecognized so a
// misspelled key cannot silently fall back to a default.
class StrictObject {
 public:
  StrictObject(const json& j, const std::string& where) : j_(j), where_(where) {
    VCLAB_CHECK(j.is_object(), ErrorCode::kConfig,
                where_ << " must be a JSON object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    taken_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      fail(ErrorCode::kConfig, where_ + "." + key + ": " + e.what());
    }
  }

  json child(const char* key) {
    taken_.insert(key);
    if (!j_.contains(key)) return json::object();
    return j_.at(key);
  }

  // Call once after every known key was pulled; flags leftovers.
  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      (void)value;
      VCLAB_CHECK(taken_.count(key) == 1, ErrorCode::kConfig,
                  "unknown key '" << key << "' in " << where_);
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> taken_;
};

json encoder_to_json(const EncoderConfig& c) {
  json j;
  j["image_size"] = c.image_size;
  j["patch_size"] = c.patch_size;
  j["dim"] = c.dim;
  j["backbone_blocks"] = c.backbone_blocks;
  j["backbone_heads"] = c.backbone_heads;
  j["backbone_ffn"] = c.backbone_ffn;
  j["layers"] = c.layers;
  j["heads"] = c.heads;
  j["ffn_hidden"] = c.ffn_hidden;
  j["max_axes"] = c.max_axes;
  j["train_backbone"] = c.train_backbone;
  j["variant"] =
      c.variant == EncoderVariant::kSharedMlp ? "shared_mlp" : "full";
  return j;
}

EncoderConfig encoder_from_json(const json& j, const std::string& where) {
  EncoderConfig c;
  StrictObject o(j, where);
  o.get("image_size", c.image_size);
  o.get("patch_size", c.patch_size);
  o.get("dim", c.dim);
  o.get("backbone_blocks", c.backbone_blocks);
  o.get("backbone_heads", c.backbone_heads);
  o.get("backbone_ffn", c.backbone_ffn);
  o.get("layers", c.layers);
  o.get("heads", c.heads);
  o.get("ffn_hidden", c.ffn_hidden);
  o.get("max_axes", c.max_axes);
  o.get("train_backbone", c.train_backbone);
  std::string variant = "full";
  o.get("variant", variant);
  if (variant == "full") {
    c.variant = EncoderVariant::kFull;
  } else if (variant == "shared_mlp") {
    c.variant = EncoderVariant::kSharedMlp;
  } else {
    fail(ErrorCode::kConfig, "unknown encoder variant: " + variant);
  }
  o.finish();
  return c;
}

json denoiser_to_json(const DenoiserConfig& c) {
  json j;
  j["image_size"] = c.image_size;
  j["base_ch"] = c.base_ch;
  j["mid_ch"] = c.mid_ch;
  j["temb_dim"] = c.temb_dim;
  j["heads"] = c.heads;
  j["z_dim"] = c.z_dim;
  j["groups"] = c.groups;
  return j;
}

DenoiserConfig denoiser_from_json(const json& j, const std::string& where) {
  DenoiserConfig c;
  StrictObject o(j, where);
  o.get("image_size", c.image_size);
  o.get("base_ch", c.base_ch);
  o.get("mid_ch", c.mid_ch);
  o.get("temb_dim", c.temb_dim);
  o.get("heads", c.heads);
  o.get("z_dim", c.z_dim);
  o.get("groups", c.groups);
  o.finish();
  return c;
}

}  // namespace

const char* ablation_name(Ablation a) {
  switch (a) {
    case Ablation::kFull:
      return "full";
    case Ablation::kNoComp:
      return "no_comp";
    case Ablation::kDirectReg:
      return "direct_reg";
    case Ablation::kSharedMlp:
      return "shared_mlp";
    case Ablation::kDrop20:
      return "drop20";
  }
  fail(ErrorCode::kInvalidArgument, "unhandled ablation value");
}

Ablation ablation_from_name(const std::string& name) {
  for (Ablation a : {Ablation::kFull, Ablation::kNoComp, Ablation::kDirectReg,
                     Ablation::kSharedMlp, Ablation::kDrop20}) {
    if (name == ablation_name(a)) return a;
  }
  fail(ErrorCode::kInvalidArgument, "unknown ablation: " + name);
}

TrainConfig apply_ablation(TrainConfig base, Ablation a) {
  switch (a) {
    case Ablation::kFull:
      break;
    case Ablation::kNoComp:
      base.weights.comp = 0.0;
      break;
    case Ablation::kDirectReg:
      base.use_head = false;
      break;
    case Ablation::kSharedMlp:
      base.encoder.variant = EncoderVariant::kSharedMlp;
      break;
    case Ablation::kDrop20:
      base.drop_fraction = 0.2;
      break;
  }
  return base;
}

void validate_train_config(const TrainConfig& c) {
  VCLAB_CHECK_ARG(c.steps >= 0, "steps cannot be negative");
  VCLAB_CHECK_ARG(c.batch_size >= 2,
                  "batch size below two leaves nothing to swap");
  VCLAB_CHECK_ARG(c.adam.lr > 0.0, "learning rate must be positive");
  VCLAB_CHECK_ARG(c.weights.comp >= 0.0 && c.weights.reg >= 0.0,
                  "loss weights must be non-negative");
  VCLAB_CHECK_ARG(c.swap.min_swaps >= 1 &&
                      c.swap.max_swaps >= c.swap.min_swaps,
                  "swap bounds must satisfy 1 <= min_swaps <= max_swaps");
  VCLAB_CHECK_ARG(c.ddim.steps >= 1, "sampler needs at least one step");
  VCLAB_CHECK_ARG(c.ddim.grad_steps >= 0 &&
                      c.ddim.grad_steps <= c.ddim.steps,
                  "grad_steps must lie in [0, steps]");
  VCLAB_CHECK_ARG(c.comp_batch >= 1, "comp_batch must be at least one");
  VCLAB_CHECK_ARG(c.drop_fraction >= 0.0 && c.drop_fraction < 1.0,
                  "drop_fraction must lie in [0, 1)");
  VCLAB_CHECK_ARG(c.refresh_frozen_every >= 1,
                  "refresh_frozen_every must be at least one");
  VCLAB_CHECK_ARG(c.freeze_decoder_after >= 0,
                  "freeze_decoder_after cannot be negative");
  VCLAB_CHECK_ARG(c.checkpoint_every >= 0 && c.val_every >= 0,
                  "periodic intervals cannot be negative");
  VCLAB_CHECK_ARG(c.val_batches >= 1, "val_batches must be at least one");
  VCLAB_CHECK_ARG(c.encoder.dim == c.denoiser.z_dim,
                  "encoder width and denoiser conditioning width must match");
  VCLAB_CHECK_ARG(c.encoder.image_size == c.denoiser.image_size,
                  "encoder and denoiser resolutions must match");
}

std::string train_config_to_json(const TrainConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["steps"] = c.steps;
  j["batch_size"] = c.batch_size;
  j["lr"] = c.adam.lr;
  j["beta1"] = c.adam.beta1;
  j["beta2"] = c.adam.beta2;
  j["adam_eps"] = c.adam.eps;
  j["lambda_comp"] = c.weights.comp;
  j["lambda_reg"] = c.weights.reg;
  j["min_swaps"] = c.swap.min_swaps;
  j["max_swaps"] = c.swap.max_swaps;
  j["ddim_steps"] = c.ddim.steps;
  j["grad_steps"] = c.ddim.grad_steps;
  j["comp_batch"] = c.comp_batch;
  j["score_swapped_only"] = c.score_swapped_only;
  j["use_head"] = c.use_head;
  j["drop_fraction"] = c.drop_fraction;
  j["refresh_frozen_every"] = c.refresh_frozen_every;
  j["freeze_decoder_after"] = c.freeze_decoder_after;
  j["checkpoint_every"] = c.checkpoint_every;
  j["val_every"] = c.val_every;
  j["val_batches"] = c.val_batches;
  j["encoder"] = encoder_to_json(c.encoder);
  j["denoiser"] = denoiser_to_json(c.denoiser);
  j["embedder_seed"] = c.embedder_seed;
  return j.dump(2);
}

TrainConfig train_config_from_json(const std::string& text) {
  json j = json::parse(text, nullptr, false);
  VCLAB_CHECK(!j.is_discarded(), ErrorCode::kConfig,
              "train config is not valid JSON");
  TrainConfig c;
  {
    StrictObject o(j, "train config");
    o.get("seed", c.seed);
    o.get("steps", c.steps);
    o.get("batch_size", c.batch_size);
    o.get("lr", c.adam.lr);
    o.get("beta1", c.adam.beta1);
    o.get("beta2", c.adam.beta2);
    o.get("adam_eps", c.adam.eps);
    o.get("lambda_comp", c.weights.comp);
    o.get("lambda_reg", c.weights.reg);
    o.get("min_swaps", c.swap.min_swaps);
    o.get("max_swaps", c.swap.max_swaps);
    o.get("ddim_steps", c.ddim.steps);
    o.get("grad_steps", c.ddim.grad_steps);
    o.get("comp_batch", c.comp_batch);
    o.get("score_swapped_only", c.score_swapped_only);
    o.get("use_head", c.use_head);
    o.get("drop_fraction", c.drop_fraction);
    o.get("refresh_frozen_every", c.refresh_frozen_every);
    o.get("freeze_decoder_after", c.freeze_decoder_after);
    o.get("checkpoint_every", c.checkpoint_every);
    o.get("val_every", c.val_every);
    o.get("val_batches", c.val_batches);
    c.encoder = encoder_from_json(o.child("encoder"), "encoder");
    c.denoiser = denoiser_from_json(o.child("denoiser"), "denoiser");
    o.get("embedder_seed", c.embedder_seed);
    o.finish();
  }
  validate_train_config(c);
  return c;
}

void save_train_config(const std::string& path, const TrainConfig& config) {
  std::ofstream out(path, std::ios::trunc);
  VCLAB_CHECK(out.good(), ErrorCode::kIo,
              "cannot open " << path << " for writing");
  out << train_config_to_json(config) << "\n";
  VCLAB_CHECK(out.good(), ErrorCode::kIo, "write to " << path << " failed");
}

TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  VCLAB_CHECK(in.good(), ErrorCode::kIo,
              "cannot open " << path << " for reading");
  std::ostringstream buf;
  buf << in.rdbuf();
  return train_config_from_json(buf.str());
}

}  // namespace vclab
