#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "rtc/common.h"

namespace rtc {

// An HxWx3 float raster in [0,1], sRGB. The unit of all image I/O.
struct ImageBuffer {
  torch::Tensor pixels;  // HxWx3, float32, CPU, contiguous

  int64_t height() const { return pixels.size(0); }
  int64_t width() const { return pixels.size(1); }

  // Validates shape, range and finiteness; throws DimensionError / ShapeError.
  static ImageBuffer from_tensor(torch::Tensor hwc);

  // Clamp into [0,1] and rebuild; used at degradation stage boundaries.
  static ImageBuffer clamped(torch::Tensor hwc);
};

// Throws unless img satisfies the ImageBuffer invariants
// (finite, within [0,1], H and W >= 8... the minimum is relaxed for patches).
void check_image(const ImageBuffer& img, int64_t min_side = 8);

ImageBuffer load_png(const std::string& path);
void save_png(const ImageBuffer& img, const std::string& path);

// Layout helpers between HWC image space and NCHW network space.
torch::Tensor to_nchw(const ImageBuffer& img);                      // 1x3xHxW
torch::Tensor batch_to_nchw(const std::vector<ImageBuffer>& imgs);  // Bx3xHxW
ImageBuffer from_chw(torch::Tensor chw);                            // 3xHxW -> clamped image

// Quantize to the 8-bit grid and back; the convention used for metric input.
torch::Tensor quantize8(const torch::Tensor& t);

}  // namespace rtc
