#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "rtc/image.h"

namespace rtc {

enum class ResizeKernel { Bicubic, Bilinear, Nearest };

ResizeKernel resize_kernel_from_string(const std::string& s);
std::string to_string(ResizeKernel k);

// Blind-degradation chain: blur -> downscale -> noise -> compression.
// With second_order the chain runs again (minus the downscale) at halved
// strength. Every sampled parameter comes from a stream derived from seed
// alone, so the pipeline is a pure function of (image, config).
struct DegradationConfig {
  std::array<double, 2> blur_sigma_range{0.2, 3.0};
  int downscale_factor = 4;
  ResizeKernel resize_kernel = ResizeKernel::Bicubic;
  std::array<double, 2> noise_sigma_range{1.0, 25.0};  // on the 0..255 scale
  std::array<int, 2> jpeg_quality_range{30, 95};
  bool second_order = false;
  uint64_t seed = 0;

  void validate() const;
  static DegradationConfig from_json(const json& j);
  json to_json() const;
};

struct PairHist {
  double mean = 0.0;
  double variance = 0.0;
  double bin_width = 0.02;  // bins tile [0,1]; MSE of unit-range images fits
  std::vector<int64_t> counts;

  int64_t mass() const;
  json to_json() const;
};

struct ConfusionStats {
  int64_t patch_size = 0;
  int64_t patch_count = 0;
  PairHist hr_pairs;  // HR<->HR pairwise patch MSE
  PairHist lr_pairs;  // LR<->LR pairwise patch MSE (after upsampling)
  std::map<int64_t, int64_t> own_hr_rank_histogram;
  double mismatch_rate = 0.0;

  json to_json() const;
};

// cv-backed resize used by the pipeline and by confusion upsampling.
ImageBuffer resize_image(const ImageBuffer& img, int64_t out_h, int64_t out_w,
                         ResizeKernel kernel);

ImageBuffer degrade(const ImageBuffer& hr, const DegradationConfig& cfg);

// Per-image stream: stream = f(cfg.seed, image_index). degrade() is the
// index-0 case. Parallel and serial corpus generation agree.
ImageBuffer degrade_indexed(const ImageBuffer& hr, const DegradationConfig& cfg,
                            uint64_t image_index);

// Tiles every image into patch x patch cells, degrades each image with its
// per-image stream, upsamples LR back to HR size with cfg.resize_kernel and
// ranks, for every LR patch, all HR patches by MSE. rank = 1 + number of
// strictly closer patches, so exact ties share a rank.
ConfusionStats confusion_analysis(const std::vector<ImageBuffer>& hr_set,
                                  const DegradationConfig& cfg, int64_t patch);

// Small bar plot of a histogram, for the optional report PNGs.
ImageBuffer render_histogram(const PairHist& hist, int64_t h = 256,
                             int64_t w = 512);

}  // namespace rtc
