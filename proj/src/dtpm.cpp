#include "rtc/dtpm.h"

namespace rtc {

std::string to_string(ResolutionTag t) {
  return t == ResolutionTag::HR ? "hr" : "lr";
}

void HierarchicalCodebooks::validate() const {
  global.validate();
  local.validate();
  if (global.size() != local.size()) {
    throw ConfigError("hierarchical codebooks must share one size, got " +
                      std::to_string(global.size()) + " and " +
                      std::to_string(local.size()));
  }
  if (global.scale_tag != ScaleTag::Global || local.scale_tag != ScaleTag::Local) {
    throw ConfigError("hierarchical codebooks carry swapped scale tags");
  }
}

void MultiScaleFeatures::validate() const {
  if (!global.defined() || !local.defined() || global.dim() != 4 ||
      local.dim() != 4) {
    throw ShapeError("multi-scale features must be BxCxHxW pairs");
  }
  if (local.size(0) != global.size(0)) {
    throw ShapeError("multi-scale features disagree on batch");
  }
  if (local.size(2) != 2 * global.size(2) || local.size(3) != 2 * global.size(3)) {
    throw ShapeError("local grid must double the global grid, got " +
                     std::to_string(local.size(2)) + "x" +
                     std::to_string(local.size(3)) + " vs " +
                     std::to_string(global.size(2)) + "x" +
                     std::to_string(global.size(3)));
  }
}

ScaleQuant dtpm_quantize(const HierarchicalCodebooks& hc,
                         const MultiScaleFeatures& ms, ActiveScales active) {
  if (!active.global && !active.local) {
    throw ConfigError("dtpm_quantize needs at least one active scale");
  }
  ms.validate();
  ScaleQuant out;
  if (active.global) {
    out.global = quantize_nchw(hc.global, ms.global);
  } else {
    out.global = QuantizedMap{ms.global, ms.global, torch::Tensor()};
  }
  if (active.local) {
    out.local = quantize_nchw(hc.local, ms.local);
  } else {
    out.local = QuantizedMap{ms.local, ms.local, torch::Tensor()};
  }
  return out;
}

torch::Tensor dtpm_loss(const ScaleQuant& hr_maps, const ScaleQuant& lr_maps,
                        double beta) {
  if (hr_maps.global_active() != lr_maps.global_active() ||
      hr_maps.local_active() != lr_maps.local_active()) {
    throw ShapeError("hr and lr maps disagree on active scales");
  }
  auto loss = torch::zeros({}, torch::kFloat32);
  if (hr_maps.global_active()) {
    loss = loss + codebook_loss(hr_maps.global, beta) +
           codebook_loss(lr_maps.global, beta);
  }
  if (hr_maps.local_active()) {
    loss = loss + codebook_loss(hr_maps.local, beta) +
           codebook_loss(lr_maps.local, beta);
  }
  return loss;
}

torch::Tensor rep_consistency_loss(const MultiScaleFeatures& hr_feats,
                                   const MultiScaleFeatures& lr_feats) {
  hr_feats.validate();
  lr_feats.validate();
  if (hr_feats.global.sizes() != lr_feats.global.sizes() ||
      hr_feats.local.sizes() != lr_feats.local.sizes()) {
    throw ShapeError("consistency loss needs paired feature shapes");
  }
  return (hr_feats.global - lr_feats.global).pow(2).mean() +
         (hr_feats.local - lr_feats.local).pow(2).mean();
}

std::vector<DecodeJob> rec_consistency_targets(const ScaleQuant& hr_q,
                                               const ScaleQuant& lr_q) {
  if (hr_q.global_active() != lr_q.global_active() ||
      hr_q.local_active() != lr_q.local_active()) {
    throw ShapeError("hr and lr maps disagree on active scales");
  }
  return {
      {DecoderKind::LR, ResolutionTag::LR, ResolutionTag::LR},
      {DecoderKind::LR, ResolutionTag::HR, ResolutionTag::LR},
      {DecoderKind::HR, ResolutionTag::LR, ResolutionTag::HR},
      {DecoderKind::HR, ResolutionTag::HR, ResolutionTag::HR},
  };
}

}  // namespace rtc
