#pragma once

#include <string>

#include "rtc/ptpm.h"

namespace rtc {

struct LossWeights {
  double beta = 0.25;
  double lambda_per = 1.0;
  double lambda_adv = 0.1;
  double lambda_contrastive = 0.5;  // rides along to prior pretraining
  bool use_perceptual = true;
  bool use_adversarial = true;
  bool use_ptpm = true;
  int64_t adv_warmup_steps = 500;

  bool adversarial_on(int64_t step) const {
    return use_adversarial && step >= adv_warmup_steps;
  }

  void validate() const;
  static LossWeights from_json(const json& j);
  json to_json() const;
};

// One scalar per term. rec_con already folds the lambda-weighted l1,
// perceptual and generator-adversarial components; total is
// code + rep_con + rec_con + ptpm.
struct LossReport {
  double l1 = 0, perceptual = 0, adversarial_g = 0, adversarial_d = 0;
  double code = 0, rep_con = 0, rec_con = 0, ptpm = 0, total = 0;

  json to_json() const;
};

// "step term value" lines appended to a plain-text metrics log.
void append_metrics(const std::string& path, int64_t step, const LossReport& r);

struct ReconParts {
  torch::Tensor l1, perceptual, adversarial_g, total;
};

// L1 + lambda_per * ||phi_per(gt) - phi_per(recon)||_1, plus the generator
// hinge -E[D(recon)] when with_adversarial. The discriminator and the
// perceptual net never receive gradients from this call.
ReconParts reconstruction_loss(const torch::Tensor& gt, const torch::Tensor& recon,
                               const LossWeights& w, UnetDiscriminator disc,
                               PriorNet phi_per, bool with_adversarial);

// mean(relu(1 - D(gt))) + mean(relu(1 + D(recon))); recon is detached.
torch::Tensor discriminator_loss(UnetDiscriminator disc, const torch::Tensor& gt,
                                 const torch::Tensor& recon);

// L_DTPM + rep consistency + rec consistency, unweighted.
torch::Tensor codebook_objective(const torch::Tensor& dtpm_term,
                                 const torch::Tensor& rep_term,
                                 const torch::Tensor& rec_term, int stage);

// frozen feature extractor standing in for a pretrained perceptual backbone
PriorNet make_frozen_perceptual(const NetConfig& cfg, uint64_t seed);

struct StepLosses {
  torch::Tensor generator;      // backward target for everything but disc
  torch::Tensor discriminator;  // defined only while the hinge is active
  LossReport report;
};

// Assembles the stage's full objective from a training forward pass.
// Throws TrainingHalt when any term goes non-finite.
StepLosses total_loss(ModelBundle& b, const TrainForward& tf,
                      const torch::Tensor& i_lr, const torch::Tensor& i_hr,
                      const LossWeights& w, PriorPack& priors, PriorNet phi_per,
                      int stage, int64_t step);

}  // namespace rtc
