#pragma once

#include <string>
#include <vector>

#include "rtc/networks.h"

namespace rtc {

struct EvalPair {
  ImageBuffer lr, hr;
};

struct MetricReport {
  std::vector<double> psnr_per_image, ssim_per_image;
  double mean_psnr = 0.0, mean_ssim = 0.0;
  UseStats global_use, local_use;
  int64_t image_count = 0;

  json to_json() const;
  std::string table() const;
};

// 10*log10(peak^2 / MSE), +inf when the images match exactly.
double psnr(const ImageBuffer& a, const ImageBuffer& b, double peak = 1.0);

// Mean local SSIM over a Gaussian window (sigma 1.5), valid positions only,
// averaged across channels. Computed in double precision, peak 1.0.
double ssim(const ImageBuffer& a, const ImageBuffer& b, int64_t window = 11,
            double k1 = 0.01, double k2 = 0.03);

// Metrics for precomputed outputs: images are quantized to 8 bits and back
// before scoring. Utilization fields stay empty.
MetricReport score_outputs(const std::vector<ImageBuffer>& sr,
                           const std::vector<EvalPair>& pairs);

// Super-resolve every LR image and score against its HR mate; fills the
// per-scale codebook use stats. Writes sr_NNNN.png files when dump_dir is
// non-empty.
MetricReport evaluate(ModelBundle& b, const std::vector<EvalPair>& pairs,
                      const std::string& dump_dir = "");

// Evaluate twice: normally, and with the local-scale indices replaced by
// seeded uniform random draws before decoding. Global-scale maps are shared
// between the two runs. Returns {normal, noisy}.
std::pair<MetricReport, MetricReport> local_noise_ablation(
    ModelBundle& b, const std::vector<EvalPair>& pairs, uint64_t seed);

}  // namespace rtc
