#include "rtc/degradation.h"

#include <algorithm>
#include <cmath>
#include <random>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace rtc {

namespace {

cv::Mat to_mat(const torch::Tensor& hwc) {
  auto t = hwc.contiguous();
  cv::Mat m(static_cast<int>(t.size(0)), static_cast<int>(t.size(1)), CV_32FC3);
  std::memcpy(m.ptr<float>(), t.data_ptr<float>(), t.numel() * sizeof(float));
  return m;
}

torch::Tensor from_mat(const cv::Mat& m) {
  torch::Tensor t = torch::from_blob(const_cast<float*>(m.ptr<float>()),
                                     {m.rows, m.cols, 3}, torch::kFloat32);
  return t.clone();
}

int cv_interp(ResizeKernel k) {
  switch (k) {
    case ResizeKernel::Bicubic: return cv::INTER_CUBIC;
    case ResizeKernel::Bilinear: return cv::INTER_LINEAR;
    default: return cv::INTER_NEAREST;
  }
}

torch::Tensor settle(torch::Tensor t) {
  if (!torch::isfinite(t).all().item<bool>()) {
    throw ShapeError("degradation stage produced non-finite values");
  }
  return t.clamp(0.0, 1.0);
}

torch::Tensor blur_stage(torch::Tensor img, double sigma) {
  if (sigma <= 0.0) return img;
  int k = 2 * static_cast<int>(std::ceil(3.0 * sigma)) + 1;
  cv::Mat src = to_mat(img), dst;
  cv::GaussianBlur(src, dst, cv::Size(k, k), sigma, sigma);
  return settle(from_mat(dst));
}

torch::Tensor noise_stage(torch::Tensor img, double sigma255, uint64_t seed) {
  if (sigma255 <= 0.0) return img;
  auto gen = torch::make_generator<torch::CPUGeneratorImpl>(seed);
  auto n = torch::randn(img.sizes(), gen) * (sigma255 / 255.0);
  return settle(img + n);
}

torch::Tensor jpeg_stage(torch::Tensor img, int quality) {
  if (quality >= 100) return img;  // keep the top of the range lossless
  torch::Tensor q8 = (img * 255.0).round().clamp(0, 255).to(torch::kUInt8).contiguous();
  cv::Mat rgb(static_cast<int>(q8.size(0)), static_cast<int>(q8.size(1)), CV_8UC3,
              q8.data_ptr<uint8_t>());
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  std::vector<uchar> buf;
  if (!cv::imencode(".jpg", bgr, buf, {cv::IMWRITE_JPEG_QUALITY, quality})) {
    throw IoError("jpeg encode failed");
  }
  cv::Mat back = cv::imdecode(buf, cv::IMREAD_COLOR);
  cv::Mat rgb2, f;
  cv::cvtColor(back, rgb2, cv::COLOR_BGR2RGB);
  rgb2.convertTo(f, CV_32FC3, 1.0 / 255.0);
  return settle(from_mat(f));
}

struct ChainDraw {
  double blur_sigma = 0.0;
  double noise_sigma = 0.0;
  int quality = 100;
  uint64_t noise_seed = 0;
};

double uni(std::mt19937_64& rng, double lo, double hi) {
  if (hi <= lo) return lo;
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

int uni_int(std::mt19937_64& rng, int lo, int hi) {
  if (hi <= lo) return lo;
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

}  // namespace

ResizeKernel resize_kernel_from_string(const std::string& s) {
  if (s == "bicubic") return ResizeKernel::Bicubic;
  if (s == "bilinear") return ResizeKernel::Bilinear;
  if (s == "nearest") return ResizeKernel::Nearest;
  throw ConfigError("unknown resize kernel: " + s);
}

std::string to_string(ResizeKernel k) {
  switch (k) {
    case ResizeKernel::Bicubic: return "bicubic";
    case ResizeKernel::Bilinear: return "bilinear";
    default: return "nearest";
  }
}

void DegradationConfig::validate() const {
  auto range_ok = [](double lo, double hi) { return lo <= hi && lo >= 0.0; };
  if (!range_ok(blur_sigma_range[0], blur_sigma_range[1])) {
    throw ConfigError("bad blur_sigma_range");
  }
  if (!range_ok(noise_sigma_range[0], noise_sigma_range[1])) {
    throw ConfigError("bad noise_sigma_range");
  }
  if (jpeg_quality_range[0] > jpeg_quality_range[1] ||
      jpeg_quality_range[0] < 1 || jpeg_quality_range[1] > 100) {
    throw ConfigError("jpeg_quality_range must satisfy 1 <= lo <= hi <= 100");
  }
  if (downscale_factor != 1 && downscale_factor != 2 && downscale_factor != 4) {
    throw ConfigError("downscale_factor must be 1, 2 or 4");
  }
}

DegradationConfig DegradationConfig::from_json(const json& j) {
  expect_keys(j, "degradation",
              {"blur_sigma_range", "downscale_factor", "resize_kernel",
               "noise_sigma_range", "jpeg_quality_range", "second_order",
               "seed"});
  DegradationConfig c;
  auto pair_of = [&](const char* key, auto& out) {
    if (!j.contains(key)) return;
    auto v = j.at(key);
    if (!v.is_array() || v.size() != 2) {
      throw ConfigError(std::string(key) + " must be [lo, hi]");
    }
    out[0] = v[0];
    out[1] = v[1];
  };
  pair_of("blur_sigma_range", c.blur_sigma_range);
  pair_of("noise_sigma_range", c.noise_sigma_range);
  pair_of("jpeg_quality_range", c.jpeg_quality_range);
  if (j.contains("downscale_factor")) c.downscale_factor = j.at("downscale_factor");
  if (j.contains("resize_kernel")) {
    c.resize_kernel = resize_kernel_from_string(j.at("resize_kernel"));
  }
  if (j.contains("second_order")) c.second_order = j.at("second_order");
  if (j.contains("seed")) c.seed = j.at("seed").get<uint64_t>();
  c.validate();
  return c;
}

json DegradationConfig::to_json() const {
  return json{{"blur_sigma_range", blur_sigma_range},
              {"downscale_factor", downscale_factor},
              {"resize_kernel", to_string(resize_kernel)},
              {"noise_sigma_range", noise_sigma_range},
              {"jpeg_quality_range", jpeg_quality_range},
              {"second_order", second_order},
              {"seed", seed}};
}

ImageBuffer resize_image(const ImageBuffer& img, int64_t out_h, int64_t out_w,
                         ResizeKernel kernel) {
  if (out_h < 1 || out_w < 1) throw DimensionError("resize target too small");
  cv::Mat src = to_mat(img.pixels), dst;
  cv::resize(src, dst, cv::Size(static_cast<int>(out_w), static_cast<int>(out_h)),
             0, 0, cv_interp(kernel));
  return ImageBuffer::clamped(from_mat(dst));
}

ImageBuffer degrade(const ImageBuffer& hr, const DegradationConfig& cfg) {
  return degrade_indexed(hr, cfg, 0);
}

ImageBuffer degrade_indexed(const ImageBuffer& hr, const DegradationConfig& cfg,
                            uint64_t image_index) {
  cfg.validate();
  check_image(hr, 1);
  if (hr.height() % cfg.downscale_factor || hr.width() % cfg.downscale_factor) {
    throw DimensionError("image dimensions not divisible by downscale factor");
  }

  // Every random draw happens here, before any pixel is touched.
  std::mt19937_64 rng(derive_seed(cfg.seed, "degrade", image_index));
  ChainDraw first, second;
  first.blur_sigma = uni(rng, cfg.blur_sigma_range[0], cfg.blur_sigma_range[1]);
  first.noise_sigma = uni(rng, cfg.noise_sigma_range[0], cfg.noise_sigma_range[1]);
  first.quality = uni_int(rng, cfg.jpeg_quality_range[0], cfg.jpeg_quality_range[1]);
  first.noise_seed = rng();
  if (cfg.second_order) {
    second.blur_sigma =
        uni(rng, cfg.blur_sigma_range[0] / 2, cfg.blur_sigma_range[1] / 2);
    second.noise_sigma =
        uni(rng, cfg.noise_sigma_range[0] / 2, cfg.noise_sigma_range[1] / 2);
    // Halved compression strength: quality moves halfway toward lossless.
    second.quality = uni_int(rng, 100 - (100 - cfg.jpeg_quality_range[0]) / 2,
                             100 - (100 - cfg.jpeg_quality_range[1]) / 2);
    second.noise_seed = rng();
  }

  torch::Tensor x = hr.pixels;
  x = blur_stage(x, first.blur_sigma);
  if (cfg.downscale_factor > 1) {
    auto small = resize_image(ImageBuffer{x.contiguous()},
                              hr.height() / cfg.downscale_factor,
                              hr.width() / cfg.downscale_factor,
                              cfg.resize_kernel);
    x = small.pixels;
  }
  x = noise_stage(x, first.noise_sigma, first.noise_seed);
  x = jpeg_stage(x, first.quality);
  if (cfg.second_order) {
    x = blur_stage(x, second.blur_sigma);
    x = noise_stage(x, second.noise_sigma, second.noise_seed);
    x = jpeg_stage(x, second.quality);
  }
  return ImageBuffer::from_tensor(x);
}

int64_t PairHist::mass() const {
  int64_t m = 0;
  for (auto c : counts) m += c;
  return m;
}

json PairHist::to_json() const {
  return json{{"mean", mean},
              {"variance", variance},
              {"bin_width", bin_width},
              {"counts", counts}};
}

json ConfusionStats::to_json() const {
  json ranks = json::object();
  for (const auto& [r, c] : own_hr_rank_histogram) ranks[std::to_string(r)] = c;
  return json{{"patch_size", patch_size},
              {"patch_count", patch_count},
              {"mse_matrix_summary",
               json{{"hr_pairs", hr_pairs.to_json()}, {"lr_pairs", lr_pairs.to_json()}}},
              {"own_hr_rank_histogram", ranks},
              {"mismatch_rate", mismatch_rate}};
}

namespace {

PairHist pair_hist(const torch::Tensor& flat) {
  // flat: P x D. Pairwise MSE over the upper triangle.
  const int64_t p = flat.size(0);
  PairHist h;
  h.counts.assign(50, 0);
  std::vector<double> vals;
  vals.reserve(p * (p - 1) / 2);
  for (int64_t i = 0; i < p; ++i) {
    auto d = (flat.slice(0, i + 1) - flat[i]).pow(2).mean(1);
    auto acc = d.accessor<float, 1>();
    for (int64_t k = 0; k < d.size(0); ++k) vals.push_back(acc[k]);
  }
  double sum = 0, sq = 0;
  for (double v : vals) {
    sum += v;
    sq += v * v;
    auto bin = std::min<int64_t>(49, static_cast<int64_t>(v / h.bin_width));
    ++h.counts[bin];
  }
  if (!vals.empty()) {
    h.mean = sum / vals.size();
    h.variance = sq / vals.size() - h.mean * h.mean;
  }
  return h;
}

}  // namespace

ConfusionStats confusion_analysis(const std::vector<ImageBuffer>& hr_set,
                                  const DegradationConfig& cfg, int64_t patch) {
  cfg.validate();
  if (patch < 1) throw AnalysisError("patch size must be positive");
  for (const auto& im : hr_set) {
    if (im.height() % patch || im.width() % patch) {
      throw AnalysisError("patch must divide every image dimension");
    }
  }

  std::vector<torch::Tensor> hr_patches, lr_patches;
  for (size_t i = 0; i < hr_set.size(); ++i) {
    const auto& hr = hr_set[i];
    auto lr = degrade_indexed(hr, cfg, i);
    auto lr_up = resize_image(lr, hr.height(), hr.width(), cfg.resize_kernel);
    for (int64_t y = 0; y + patch <= hr.height(); y += patch) {
      for (int64_t x = 0; x + patch <= hr.width(); x += patch) {
        hr_patches.push_back(
            hr.pixels.slice(0, y, y + patch).slice(1, x, x + patch).reshape({-1}));
        lr_patches.push_back(
            lr_up.pixels.slice(0, y, y + patch).slice(1, x, x + patch).reshape({-1}));
      }
    }
  }
  const int64_t n = static_cast<int64_t>(hr_patches.size());
  if (n < 2) throw AnalysisError("need at least 2 patches");

  auto hr_mat = torch::stack(hr_patches);
  auto lr_mat = torch::stack(lr_patches);

  ConfusionStats stats;
  stats.patch_size = patch;
  stats.patch_count = n;
  stats.hr_pairs = pair_hist(hr_mat);
  stats.lr_pairs = pair_hist(lr_mat);

  int64_t mismatched = 0;
  for (int64_t j = 0; j < n; ++j) {
    // Exact per-row distances; gemm shortcuts would blur the tie semantics.
    auto d = (hr_mat - lr_mat[j]).pow(2).mean(1);
    double own = d[j].item<double>();
    int64_t closer = (d < own).sum().item<int64_t>();
    int64_t rank = 1 + closer;
    ++stats.own_hr_rank_histogram[rank];
    if (rank > 1) ++mismatched;
  }
  stats.mismatch_rate = static_cast<double>(mismatched) / static_cast<double>(n);
  return stats;
}

ImageBuffer render_histogram(const PairHist& hist, int64_t h, int64_t w) {
  auto img = torch::ones({h, w, 3});
  int64_t nb = static_cast<int64_t>(hist.counts.size());
  int64_t peak = 1;
  for (auto c : hist.counts) peak = std::max(peak, c);
  int64_t bw = std::max<int64_t>(1, w / std::max<int64_t>(1, nb));
  for (int64_t b = 0; b < nb; ++b) {
    int64_t bar = hist.counts[b] * (h - 2) / peak;
    if (bar <= 0) continue;
    img.slice(0, h - 1 - bar, h - 1)
        .slice(1, b * bw, std::min(w, (b + 1) * bw - 1))
        .copy_(torch::tensor({0.25f, 0.35f, 0.65f}).view({1, 1, 3}).expand({bar, -1, 3}));
  }
  return ImageBuffer::from_tensor(img);
}

}  // namespace rtc
