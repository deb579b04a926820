#pragma once

#include <string>
#include <vector>

#include "rtc/checkpoint.h"
#include "rtc/degradation.h"
#include "rtc/objectives.h"

namespace rtc {

struct TrainConfig {
  int stage = 1;
  int64_t steps = 1500;
  int64_t batch_size = 8;
  int64_t hr_patch = 64;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.99;
  uint64_t seed = 0;
  LossWeights loss;
  DegradationConfig degradation;
  NetConfig net;
  int64_t checkpoint_every = 500;
  int64_t revive_every = 100;
  int64_t log_every = 50;
  bool disc_in_stage1 = false;
  std::string ptpm_net;  // optional pretrained prior, empty for the stand-in

  void validate() const;
  static TrainConfig from_json(const json& j);
  json to_json() const;

  // Stable across step-count and cadence tweaks so a resume can extend a run.
  uint64_t hash() const;
};

// Parameter groups the given stage optimizes / pins, in a fixed order.
std::vector<std::string> trainable_groups(int stage);
std::vector<std::string> frozen_groups(int stage);

// Deep-to-shallow schedule. Stage 1 trains encoders, the global codebook
// and the temporary decoder from scratch; stage 2 pins those and trains the
// local codebook, both decoders and the prior heads.
Checkpoint train_stage1(ModelBundle& b, const std::vector<ImageBuffer>& data,
                        const TrainConfig& cfg, const std::string& out_dir);

Checkpoint train_stage2(ModelBundle& b, const Checkpoint& stage1,
                        const std::vector<ImageBuffer>& data,
                        const TrainConfig& cfg, const std::string& out_dir);

// Continue an interrupted run of either stage to cfg.steps.
Checkpoint resume_train(ModelBundle& b, const Checkpoint& from,
                        const std::vector<ImageBuffer>& data,
                        const TrainConfig& cfg, const std::string& out_dir);

// One deterministic training batch: HR crops and their degraded LR mates.
std::pair<torch::Tensor, torch::Tensor> make_batch(
    const std::vector<ImageBuffer>& data, const TrainConfig& cfg, int64_t step);

}  // namespace rtc
