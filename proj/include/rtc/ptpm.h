#pragma once

#include <map>
#include <string>
#include <vector>

#include "rtc/networks.h"

namespace rtc {

// One valid (patch, label) pair cut from a labeled image.
struct PatchRecord {
  ImageBuffer patch;
  int64_t label = 0;
  std::string source_id;
  double coverage = 0.0;  // dominant-label fraction, in (gamma, 1]
};

// Label reorganization: merges texture-alike classes, splits mixed ones.
struct LabelMap {
  std::map<int64_t, int64_t> original_to_reorganized;
  int64_t class_count = 0;

  void validate() const;  // surjective onto [0, class_count)
  static LabelMap identity(int64_t n);
  static LabelMap from_json(const json& j);
  json to_json() const;
};

// Non-overlapping grid tiling; a tile survives iff one label covers a
// strict gamma-majority of its mask pixels.
std::vector<PatchRecord> generate_patches(const ImageBuffer& img,
                                          const torch::Tensor& mask,
                                          double gamma, int64_t patch_size,
                                          const std::string& source_id);

struct PriorLossParts {
  torch::Tensor total, ce, nce;
};

// CE over logits plus lambda * InfoNCE with similarity -||q_i - q_j||_2 / tau.
// One positive is sampled per anchor; anchors without a same-label partner
// drop out of the contrastive term.
PriorLossParts prior_loss(const torch::Tensor& q, const torch::Tensor& labels,
                          const torch::Tensor& logits, double tau,
                          double lambda, uint64_t seed);

struct PretrainConfig {
  int64_t epochs = 5;
  int64_t batch_size = 32;
  double lr = 1e-3;
  double tau = 0.2;
  double lambda = 0.5;
  double val_fraction = 0.25;  // of source ids
  int64_t prior_width = 16;
  uint64_t seed = 0;

  void validate() const;
  static PretrainConfig from_json(const json& j);
  json to_json() const;
};

struct PretrainResult {
  PriorNet net{nullptr};
  NetConfig net_cfg;
  double val_accuracy = 0.0;
  std::vector<double> loss_curve;  // one entry per step
};

// Patch-classification pre-training; the train/val split is disjoint by
// source_id so validation never sees a training image.
PretrainResult pretrain_prior(const std::vector<PatchRecord>& data,
                              const PretrainConfig& cfg);

struct EmbeddingRow {
  std::string source_id;
  int64_t label = 0;
  std::vector<float> q;
  double x = 0.0, y = 0.0;  // 2D projection for cluster inspection
};

std::vector<EmbeddingRow> export_embeddings(PriorNet& net,
                                            const std::vector<PatchRecord>& data);
void write_embeddings_csv(const std::string& path,
                          const std::vector<EmbeddingRow>& rows);

std::vector<PatchRecord> remap_labels(std::vector<PatchRecord> data,
                                      const LabelMap& lm);

// Frozen prior pair: phi_img supplies the x8 global target, phi_p the x4
// local target. Fixed-seed stand-ins unless a pretrained net is dropped in.
struct PriorPack {
  PriorNet phi_img{nullptr};
  PriorNet phi_p{nullptr};
  NetConfig cfg;
};

PriorPack make_frozen_priors(const NetConfig& cfg, uint64_t seed);
void freeze_prior(PriorNet& net);

// || phi_img(I_HR) - head_g(F_g) ||_2 + || phi_p(I_HR) - head_l(F_l) ||_2,
// summed over the HR-path and LR-path quantized maps. Local terms drop out
// while the local scale is inactive. Gradients reach the encoders through
// the straight-through path and the codebooks through the quantized values;
// the priors stay out of the graph.
torch::Tensor ptpm_reg_loss(const torch::Tensor& i_hr_bchw,
                            const ScaleQuant& q_hr, const ScaleQuant& q_lr,
                            PriorPack& priors, torch::nn::Conv2d& head_g,
                            torch::nn::Conv2d& head_l);

void save_patch_dataset(const std::string& dir,
                        const std::vector<PatchRecord>& recs);
std::vector<PatchRecord> load_patch_dataset(const std::string& dir);

void save_label_map(const std::string& path, const LabelMap& lm);
LabelMap load_label_map(const std::string& path);

}  // namespace rtc
