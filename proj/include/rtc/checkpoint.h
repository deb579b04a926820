#pragma once

#include <map>
#include <string>
#include <vector>

#include "rtc/networks.h"

namespace rtc {

// Full training snapshot: every parameter group, optimizer archives, the
// torch RNG state and per-group content digests. Binary container layout:
// magic, manifest length, manifest JSON, payload bytes.
struct Checkpoint {
  int stage = 1;
  int64_t step = 0;
  uint64_t config_hash = 0;
  NetConfig net_cfg;
  bool local_codebook_trained = false;
  std::vector<std::string> frozen;  // group names pinned during this stage
  std::map<std::string, uint64_t> digests;
  std::map<std::string, std::vector<torch::Tensor>> groups;  // detached clones
  std::string gen_opt_blob, disc_opt_blob;  // torch serialize archives
  torch::Tensor rng_state;                  // torch global generator
};

uint64_t group_digest(const std::vector<torch::Tensor>& params);

// Snapshot the bundle (all ten groups, trained or not).
Checkpoint capture_checkpoint(const ModelBundle& b, int stage, int64_t step,
                              uint64_t config_hash,
                              const std::vector<std::string>& frozen);

// Copy a checkpoint's parameters back into a matching bundle.
void apply_checkpoint(ModelBundle& b, const Checkpoint& ckpt);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

std::string optimizer_to_blob(torch::optim::Optimizer& opt);
void optimizer_from_blob(torch::optim::Optimizer& opt, const std::string& blob);

// Pretrained prior container: net config plus parameters, single file.
void save_prior_net(const std::string& path, PriorNet& net, const NetConfig& cfg);
std::pair<PriorNet, NetConfig> load_prior_net(const std::string& path);

}  // namespace rtc
