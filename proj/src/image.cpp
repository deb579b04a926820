#include "rtc/image.h"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace rtc {

ImageBuffer ImageBuffer::from_tensor(torch::Tensor hwc) {
  if (hwc.dim() != 3 || hwc.size(2) != 3) {
    throw ShapeError("image tensor must be HxWx3, got " +
                     std::to_string(hwc.dim()) + "d");
  }
  ImageBuffer img{hwc.to(torch::kFloat32).contiguous()};
  check_image(img);
  return img;
}

ImageBuffer ImageBuffer::clamped(torch::Tensor hwc) {
  return from_tensor(hwc.clamp(0.0, 1.0));
}

void check_image(const ImageBuffer& img, int64_t min_side) {
  const auto& t = img.pixels;
  if (!t.defined() || t.dim() != 3 || t.size(2) != 3) {
    throw ShapeError("image must be HxWx3");
  }
  if (t.size(0) < min_side || t.size(1) < min_side) {
    throw DimensionError("image side below minimum " + std::to_string(min_side) +
                         ": " + std::to_string(t.size(0)) + "x" +
                         std::to_string(t.size(1)));
  }
  if (!torch::isfinite(t).all().item<bool>()) {
    throw ShapeError("image contains non-finite values");
  }
  double lo = t.min().item<double>();
  double hi = t.max().item<double>();
  if (lo < 0.0 || hi > 1.0) {
    throw ShapeError("image values outside [0,1]: min=" + std::to_string(lo) +
                     " max=" + std::to_string(hi));
  }
}

ImageBuffer load_png(const std::string& path) {
  cv::Mat bgr = cv::imread(path, cv::IMREAD_COLOR);
  if (bgr.empty()) {
    throw IoError("cannot read image: " + path);
  }
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  torch::Tensor bytes = torch::from_blob(rgb.ptr<uint8_t>(),
                                         {rgb.rows, rgb.cols, 3}, torch::kUInt8)
                            .clone();
  // divide on the tensor side so load(save(x)) lands on the same grid as
  // quantize8(x), bit for bit
  return ImageBuffer::from_tensor(bytes.to(torch::kFloat32) / 255.0);
}

void save_png(const ImageBuffer& img, const std::string& path) {
  check_image(img);
  torch::Tensor q = (img.pixels * 255.0).round().clamp(0, 255).to(torch::kUInt8).contiguous();
  cv::Mat rgb(static_cast<int>(q.size(0)), static_cast<int>(q.size(1)), CV_8UC3,
              q.data_ptr<uint8_t>());
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  if (!cv::imwrite(path, bgr)) {
    throw IoError("cannot write image: " + path);
  }
}

torch::Tensor to_nchw(const ImageBuffer& img) {
  return img.pixels.permute({2, 0, 1}).unsqueeze(0).contiguous();
}

torch::Tensor batch_to_nchw(const std::vector<ImageBuffer>& imgs) {
  if (imgs.empty()) throw ShapeError("empty image batch");
  std::vector<torch::Tensor> chw;
  chw.reserve(imgs.size());
  int64_t h = imgs[0].height(), w = imgs[0].width();
  for (const auto& im : imgs) {
    if (im.height() != h || im.width() != w) {
      throw ShapeError("batch images must share one size");
    }
    chw.push_back(im.pixels.permute({2, 0, 1}));
  }
  return torch::stack(chw).contiguous();
}

ImageBuffer from_chw(torch::Tensor chw) {
  if (chw.dim() == 4) {
    if (chw.size(0) != 1) throw ShapeError("expected a single image");
    chw = chw.squeeze(0);
  }
  if (chw.dim() != 3 || chw.size(0) != 3) throw ShapeError("expected 3xHxW");
  return ImageBuffer::clamped(chw.detach().permute({1, 2, 0}).contiguous());
}

torch::Tensor quantize8(const torch::Tensor& t) {
  return (t.clamp(0.0, 1.0) * 255.0).round() / 255.0;
}

}  // namespace rtc
