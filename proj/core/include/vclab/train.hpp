#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vclab/axes.hpp"
#include "vclab/checkpoint.hpp"
#include "vclab/config.hpp"
#include "vclab/dataset.hpp"
#include "vclab/denoiser.hpp"
#include "vclab/encoder.hpp"
#include "vclab/objectives.hpp"
#include "vclab/optimizer.hpp"
#include "vclab/rng.hpp"
#include "vclab/schedule.hpp"
#include "vclab/text_codec.hpp"

namespace vclab {

// One training example, fully prepared: pixels, the (possibly thinned)
// annotation, and its embedded queries and targets in canonical slot order.
struct TrainItem {
  std::string id;
  Tensor<float> pixels;
  AxisDictionary dict;
  TextCodec::DictionaryEmbedding emb;
};

// Annotates and embeds a set of samples. When the config asks for dropped
// axes the thinning is a fixed per-image draw derived from the run seed and
// the sample id, so the same (dataset, config) pair always yields the same
// dictionaries.
std::vector<TrainItem> make_train_items(const std::vector<ImageSample>& samples,
                                        const TrainConfig& config);

struct StepStats {
  int64_t step = 0;  // index of the step just taken, counting from zero
  double diff = 0.0;
  double comp = 0.0;
  double reg = 0.0;
  double total = 0.0;
  int composites = 0;  // composites decoded for the anchoring term
  std::vector<std::string> batch_ids;
};

// Owns the three modules, their optimizer, and the frozen encoder copy, and
// advances them one batch at a time. Every random draw inside a step comes
// from substreams derived from (seed, step index), so state never carries
// across steps and a restored checkpoint resumes the exact trajectory.
class Trainer {
 public:
  Trainer(const TrainConfig& config, std::vector<TrainItem> train_items,
          std::vector<TrainItem> val_items);
  Trainer(const Checkpoint& checkpoint, std::vector<TrainItem> train_items,
          std::vector<TrainItem> val_items);

  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;

  StepStats step();

  // Plain denoising loss over fixed validation batches, drawn with noise
  // that does not depend on the training step so successive readings are
  // comparable. Touches no parameter or optimizer state.
  double validation_loss();

  Checkpoint snapshot();
  void save(const std::string& path);
  void restore(const Checkpoint& checkpoint);

  // Runs from the current step to config().steps, appending one structured
  // line per step to <run_dir>/metrics.jsonl and saving periodic plus final
  // checkpoints. Returns the final checkpoint path.
  std::string run(const std::string& run_dir);

  int64_t step_count() const { return step_; }
  int64_t composites_decoded() const { return composites_decoded_; }
  const TrainConfig& config() const { return config_; }
  Encoder<float>& encoder() { return encoder_; }
  Denoiser<float>& decoder() { return decoder_; }
  RegressionHead<float>& head() { return head_; }
  const NoiseSchedule& schedule() const { return schedule_; }

 private:
  void build_modules();
  void freeze_decoder_if_due();

  TrainConfig config_;
  std::vector<TrainItem> train_items_;
  std::vector<TrainItem> val_items_;

  NoiseSchedule schedule_ = NoiseSchedule::linear();
  Encoder<float> encoder_;
  Encoder<float> frozen_;
  Denoiser<float> decoder_;
  RegressionHead<float> head_;
  Adam<float> adam_;

  int64_t step_ = 0;
  int64_t composites_decoded_ = 0;
  bool decoder_frozen_ = false;
};

struct RunResult {
  int64_t steps_done = 0;
  double wall_seconds = 0.0;
  std::string final_checkpoint;
};

// End-to-end driver: loads the split samples, prepares items, trains (fresh
// or resumed from a checkpoint whose config must match up to the step
// budget), and leaves metrics plus checkpoints under run_dir.
RunResult run_training(const TrainConfig& config,
                       const DatasetManifest& manifest,
                       const std::string& run_dir,
                       const std::string& resume_from = {});

}  // namespace vclab
