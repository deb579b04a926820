#pragma once

#include <cstdint>
#include <vector>

#include "rtc/image.h"

namespace rtc {

// Deterministic synthetic rasters used by the CLI demo paths and the tests.
// Four texture families, crisp enough that a small classifier separates them
// but with per-sample phase/color jitter so it has to generalize.
inline constexpr int kSynthClasses = 4;

// One texture patch of class cls in [0,4).
ImageBuffer texture_patch(int cls, int64_t h, int64_t w, uint64_t seed);

// Scene composed of a grid of texture regions plus a per-pixel label mask
// (int64 HxW, values in [0,4)). Region class assignment is seeded.
struct LabeledScene {
  ImageBuffer image;
  torch::Tensor mask;  // HxW int64
};
LabeledScene synth_scene(int64_t h, int64_t w, int64_t cell, uint64_t seed);

// Textured HR corpus for small-scale training runs.
std::vector<ImageBuffer> toy_corpus(int n, int64_t size, uint64_t seed);

}  // namespace rtc
