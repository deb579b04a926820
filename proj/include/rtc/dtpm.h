#pragma once

#include <vector>

#include "rtc/vq.h"

namespace rtc {

enum class ResolutionTag { HR, LR };

std::string to_string(ResolutionTag t);

// Hierarchical texture codebooks: global rides the x8 grid, local the x4 grid.
struct HierarchicalCodebooks {
  Codebook global;
  Codebook local;

  void validate() const;  // equal sizes, per-scale tags in place
};

// Paired feature maps, BxCx(H/8)x(W/8) and BxCx(H/4)x(W/4).
struct MultiScaleFeatures {
  torch::Tensor global;
  torch::Tensor local;
  ResolutionTag tag = ResolutionTag::HR;

  void validate() const;  // local grid exactly doubles the global grid
};

struct ActiveScales {
  bool global = true;
  bool local = true;
};

// Per-scale quantization results. An inactive scale passes its features
// through untouched (pre_quant == quantized, indices left undefined).
struct ScaleQuant {
  QuantizedMap global;
  QuantizedMap local;

  bool global_active() const { return global.indices.defined(); }
  bool local_active() const { return local.indices.defined(); }
};

ScaleQuant dtpm_quantize(const HierarchicalCodebooks& hc,
                         const MultiScaleFeatures& ms, ActiveScales active);

// Sum of codebook losses over both resolutions and every active scale.
torch::Tensor dtpm_loss(const ScaleQuant& hr_maps, const ScaleQuant& lr_maps,
                        double beta);

// ||F_HR - F_LR||^2 mean per element, summed over the two scales.
torch::Tensor rep_consistency_loss(const MultiScaleFeatures& hr_feats,
                                   const MultiScaleFeatures& lr_feats);

// The four cross-resolution decode jobs whose reconstruction losses make up
// the reconstruction consistency term.
enum class DecoderKind { HR, LR, Temp };

struct DecodeJob {
  DecoderKind decoder;
  ResolutionTag source;  // whose quantized features to decode
  ResolutionTag target;  // which ground-truth image the output chases
};

std::vector<DecodeJob> rec_consistency_targets(const ScaleQuant& hr_q,
                                               const ScaleQuant& lr_q);

}  // namespace rtc
