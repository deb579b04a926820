#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "rtc/common.h"

namespace rtc {

enum class ScaleTag { Global, Local };

std::string to_string(ScaleTag t);

struct Codebook {
  torch::Tensor entries;  // NxC, float32; leaf with requires_grad when training
  ScaleTag scale_tag = ScaleTag::Global;

  int64_t size() const { return entries.size(0); }
  int64_t dim() const { return entries.size(1); }

  // i.i.d. normal entries with sigma = 1/sqrt(C), fixed seed.
  static Codebook init(int64_t n, int64_t c, ScaleTag tag, uint64_t seed);

  // finite entries, no byte-identical rows
  void validate() const;
};

// F, F-hat and the chosen indices. pre_quant keeps the caller's tensor (and
// its autograd graph) untouched; quantized is an exact gather of entries.
// Works for HxWxC maps and BxCxHxW batches alike.
struct QuantizedMap {
  torch::Tensor pre_quant;
  torch::Tensor quantized;
  torch::Tensor indices;  // int64, [H,W] or [B,H,W]
};

// Nearest neighbor by L2 with lowest-index tie-break, channel-last input.
QuantizedMap quantize(const Codebook& cb, const torch::Tensor& feat_hwc);

// Same search for network activations, channel dim 1.
QuantizedMap quantize_nchw(const Codebook& cb, const torch::Tensor& feat_bchw);

// ||F_hat - sg(F)||^2 + beta * ||sg(F_hat) - F||^2, mean per element.
// The first term reaches only the codebook, the second only the encoder.
torch::Tensor codebook_loss(const QuantizedMap& qm, double beta);

// F + sg(F_hat - F): forward takes the quantized values, backward passes
// gradients through to pre_quant unchanged.
torch::Tensor straight_through(const QuantizedMap& qm);

struct UseStats {
  torch::Tensor counts;  // length N, int64
  int64_t used = 0;
  std::string ratio_string;  // "396 / 512"
};

UseStats utilization(const std::vector<QuantizedMap>& maps, const Codebook& cb);

// Re-seed entries unused over the stats window to pool vectors plus noise of
// norm <= epsilon. Mutates cb.entries in place (optimizer state stays bound
// to the same tensor) and returns cb. Empty pool is a warning no-op.
Codebook& revive_dead_codes(Codebook& cb, const UseStats& stats,
                            const torch::Tensor& feat_pool, uint64_t rng_seed,
                            double epsilon = -1.0);  // default 0.01/sqrt(C)

void dump_codebook_csv(const Codebook& cb, const std::string& path);

}  // namespace rtc
