#include "rtc/evalkit.h"

#include <cmath>
#include <filesystem>
#include <iomanip>
#include <sstream>

#include "rtc/dtpm.h"

namespace rtc {

namespace F = torch::nn::functional;
namespace fs = std::filesystem;

namespace {

json metric_json(double v) {
  if (std::isfinite(v)) return json(v);
  return json(v > 0 ? "inf" : "-inf");
}

torch::Tensor gaussian_kernel(int64_t window, double sigma) {
  auto ax = torch::arange(window, torch::kFloat64) - (window - 1) / 2.0;
  auto g1 = torch::exp(-ax.square() / (2.0 * sigma * sigma));
  auto g2 = torch::outer(g1, g1);
  return g2 / g2.sum();
}

// mirror of the forward_infer padding and crop, keeping the quantized maps
struct InferTrace {
  ImageBuffer sr;
  ScaleQuant q;
  int64_t h = 0, w = 0;  // unpadded LR size
};

InferTrace infer_traced(ModelBundle& b, const ImageBuffer& i_lr) {
  if (!b.local_codebook_trained) {
    throw ConfigError(
        "local codebook is untrained (stage-1 checkpoint); run stage 2 first");
  }
  torch::NoGradGuard no_grad;
  b.eval_mode();
  InferTrace t;
  auto x = to_nchw(i_lr);
  t.h = x.size(2);
  t.w = x.size(3);
  const int64_t ph = (2 - t.h % 2) % 2, pw = (2 - t.w % 2) % 2;
  if (ph || pw)
    x = F::pad(x, F::PadFuncOptions({0, pw, 0, ph}).mode(torch::kReflect));
  auto f = encode_batch(b, x, ResolutionTag::LR);
  t.q = dtpm_quantize(b.hc, f, {true, true});
  auto sr = decode_batch(b, t.q, DecoderKind::HR, false);
  t.sr = from_chw(sr.slice(2, 0, 4 * t.h).slice(3, 0, 4 * t.w).squeeze(0));
  return t;
}

ImageBuffer decode_trace(ModelBundle& b, const InferTrace& t,
                         const ScaleQuant& q) {
  torch::NoGradGuard no_grad;
  auto sr = decode_batch(b, q, DecoderKind::HR, false);
  return from_chw(sr.slice(2, 0, 4 * t.h).slice(3, 0, 4 * t.w).squeeze(0));
}

QuantizedMap randomize_indices(const QuantizedMap& src, const Codebook& cb,
                               uint64_t seed) {
  auto gen = torch::make_generator<torch::CPUGeneratorImpl>(seed);
  QuantizedMap out;
  out.pre_quant = src.pre_quant;
  out.indices = torch::randint(cb.size(), src.indices.sizes(), gen,
                               torch::TensorOptions(torch::kInt64));
  auto sizes = src.quantized.sizes();  // BxCxHxW
  out.quantized = cb.entries.index_select(0, out.indices.reshape({-1}))
                      .reshape({sizes[0], sizes[2], sizes[3], sizes[1]})
                      .permute({0, 3, 1, 2})
                      .contiguous();
  return out;
}

void fill_means(MetricReport& r) {
  r.image_count = (int64_t)r.psnr_per_image.size();
  double ps = 0, ss = 0;
  for (double v : r.psnr_per_image) ps += v;
  for (double v : r.ssim_per_image) ss += v;
  r.mean_psnr = ps / r.image_count;
  r.mean_ssim = ss / r.image_count;
}

void score_one(MetricReport& r, const ImageBuffer& sr, const ImageBuffer& hr) {
  auto sr8 = ImageBuffer::from_tensor(quantize8(sr.pixels));
  auto hr8 = ImageBuffer::from_tensor(quantize8(hr.pixels));
  r.psnr_per_image.push_back(psnr(sr8, hr8, 1.0));
  r.ssim_per_image.push_back(ssim(sr8, hr8));
}

}  // namespace

double psnr(const ImageBuffer& a, const ImageBuffer& b, double peak) {
  if (a.pixels.sizes() != b.pixels.sizes())
    throw ShapeError("psnr wants equal image shapes");
  if (peak <= 0) throw ConfigError("psnr peak must be positive");
  auto diff = a.pixels.to(torch::kFloat64) - b.pixels.to(torch::kFloat64);
  double mse = diff.square().mean().item<double>();
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

double ssim(const ImageBuffer& a, const ImageBuffer& b, int64_t window,
            double k1, double k2) {
  if (a.pixels.sizes() != b.pixels.sizes())
    throw ShapeError("ssim wants equal image shapes");
  if (window < 3 || window % 2 == 0)
    throw ConfigError("ssim window must be odd, at least 3");
  if (a.height() < window || a.width() < window)
    throw ShapeError("image smaller than the ssim window");

  auto x = a.pixels.to(torch::kFloat64).permute({2, 0, 1}).unsqueeze(0);
  auto y = b.pixels.to(torch::kFloat64).permute({2, 0, 1}).unsqueeze(0);
  auto k = gaussian_kernel(window, 1.5).reshape({1, 1, window, window});
  k = k.repeat({3, 1, 1, 1});
  auto opts = F::Conv2dFuncOptions().groups(3);

  auto mu_x = F::conv2d(x, k, opts);
  auto mu_y = F::conv2d(y, k, opts);
  auto var_x = F::conv2d(x * x, k, opts) - mu_x.square();
  auto var_y = F::conv2d(y * y, k, opts) - mu_y.square();
  auto cov = F::conv2d(x * y, k, opts) - mu_x * mu_y;

  const double c1 = k1 * k1, c2 = k2 * k2;
  auto num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2);
  auto den = (mu_x.square() + mu_y.square() + c1) * (var_x + var_y + c2);
  return (num / den).mean().item<double>();
}

MetricReport score_outputs(const std::vector<ImageBuffer>& sr,
                           const std::vector<EvalPair>& pairs) {
  if (pairs.empty()) throw ConfigError("evaluation set is empty");
  if (sr.size() != pairs.size())
    throw ShapeError("one SR image per evaluation pair");
  MetricReport r;
  for (size_t i = 0; i < pairs.size(); ++i)
    score_one(r, sr[i], pairs[i].hr);
  fill_means(r);
  return r;
}

MetricReport evaluate(ModelBundle& b, const std::vector<EvalPair>& pairs,
                      const std::string& dump_dir) {
  if (pairs.empty()) throw ConfigError("evaluation set is empty");
  if (!dump_dir.empty()) fs::create_directories(dump_dir);

  MetricReport r;
  std::vector<QuantizedMap> gmaps, lmaps;
  for (size_t i = 0; i < pairs.size(); ++i) {
    auto t = infer_traced(b, pairs[i].lr);
    score_one(r, t.sr, pairs[i].hr);
    gmaps.push_back(t.q.global);
    lmaps.push_back(t.q.local);
    if (!dump_dir.empty()) {
      std::ostringstream name;
      name << "sr_" << std::setw(4) << std::setfill('0') << i << ".png";
      save_png(t.sr, (fs::path(dump_dir) / name.str()).string());
    }
  }
  r.global_use = utilization(gmaps, b.hc.global);
  r.local_use = utilization(lmaps, b.hc.local);
  fill_means(r);
  return r;
}

std::pair<MetricReport, MetricReport> local_noise_ablation(
    ModelBundle& b, const std::vector<EvalPair>& pairs, uint64_t seed) {
  if (pairs.empty()) throw ConfigError("evaluation set is empty");

  MetricReport normal, noisy;
  std::vector<QuantizedMap> gmaps, lmaps, nmaps;
  for (size_t i = 0; i < pairs.size(); ++i) {
    auto t = infer_traced(b, pairs[i].lr);
    score_one(normal, t.sr, pairs[i].hr);

    ScaleQuant scrambled = t.q;
    scrambled.local = randomize_indices(
        t.q.local, b.hc.local, derive_seed(seed, "ablate", (uint64_t)i));
    score_one(noisy, decode_trace(b, t, scrambled), pairs[i].hr);

    gmaps.push_back(t.q.global);
    lmaps.push_back(t.q.local);
    nmaps.push_back(scrambled.local);
  }
  normal.global_use = utilization(gmaps, b.hc.global);
  normal.local_use = utilization(lmaps, b.hc.local);
  noisy.global_use = normal.global_use;
  noisy.local_use = utilization(nmaps, b.hc.local);
  fill_means(normal);
  fill_means(noisy);
  return {normal, noisy};
}

json MetricReport::to_json() const {
  json psnrs = json::array(), ssims = json::array();
  for (double v : psnr_per_image) psnrs.push_back(metric_json(v));
  for (double v : ssim_per_image) ssims.push_back(metric_json(v));
  return json{{"image_count", image_count},
              {"mean_psnr", metric_json(mean_psnr)},
              {"mean_ssim", metric_json(mean_ssim)},
              {"psnr", psnrs},
              {"ssim", ssims},
              {"global_use", global_use.ratio_string},
              {"local_use", local_use.ratio_string}};
}

std::string MetricReport::table() const {
  std::ostringstream out;
  out << std::fixed << std::setprecision(4);
  out << "image    psnr_db     ssim\n";
  for (int64_t i = 0; i < image_count; ++i)
    out << std::setw(5) << i << std::setw(11) << psnr_per_image[i]
        << std::setw(9) << ssim_per_image[i] << '\n';
  out << " mean" << std::setw(11) << mean_psnr << std::setw(9) << mean_ssim
      << '\n';
  if (!global_use.ratio_string.empty())
    out << "global codes " << global_use.ratio_string << '\n';
  if (!local_use.ratio_string.empty())
    out << "local codes  " << local_use.ratio_string << '\n';
  out << "images " << image_count << '\n';
  return out.str();
}

}  // namespace rtc
