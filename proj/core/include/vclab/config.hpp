#pragma once

#include <cstdint>
#include <string>

#include "vclab/denoiser.hpp"
#include "vclab/encoder.hpp"
#include "vclab/objectives.hpp"
#include "vclab/optimizer.hpp"
#include "vclab/sampler.hpp"
#include "vclab/text_codec.hpp"

namespace vclab {

// Everything a training run needs to be reproduced: model shapes, loss
// weights, sampling setup, and the seeds. Serializable to JSON with strictly
// documented keys; unknown keys are rejected so typos fail loudly.
struct TrainConfig {
  uint64_t seed = 1;
  int64_t steps = 20000;
  int batch_size = 32;
  AdamConfig adam;
  LossWeights weights;
  SwapConfig swap;
  DdimConfig ddim;
  // Composites decoded per step for the anchoring term; the swap plan may
  // touch more images than this, the rest are skipped that step.
  int comp_batch = 8;
  bool score_swapped_only = false;
  bool use_head = true;
  double drop_fraction = 0.0;
  int64_t refresh_frozen_every = 1;
  int64_t freeze_decoder_after = 0;  // 0 = decoder trains throughout
  int64_t checkpoint_every = 5000;
  int64_t val_every = 500;
  int val_batches = 4;
  EncoderConfig encoder;
  DenoiserConfig denoiser;
  uint64_t embedder_seed = TextCodecConfig{}.seed;
};

enum class Ablation { kFull, kNoComp, kDirectReg, kSharedMlp, kDrop20 };

const char* ablation_name(Ablation a);
Ablation ablation_from_name(const std::string& name);

// Each ablation changes exactly one documented toggle relative to the base.
TrainConfig apply_ablation(TrainConfig base, Ablation a);

void validate_train_config(const TrainConfig& config);

std::string train_config_to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const std::string& text);

void save_train_config(const std::string& path, const TrainConfig& config);
TrainConfig load_train_config(const std::string& path);

}  // namespace vclab
