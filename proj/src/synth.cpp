#include "rtc/synth.h"

#include <random>

namespace rtc {

namespace {

torch::Tensor rand_color(std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  return torch::tensor({u(rng), u(rng), u(rng)});
}

// Two colors with a guaranteed contrast gap so stripes never wash out.
std::pair<torch::Tensor, torch::Tensor> color_pair(std::mt19937_64& rng) {
  auto a = rand_color(rng);
  auto b = rand_color(rng);
  if ((a - b).abs().max().item<float>() < 0.4f) {
    b = (a + 0.5).fmod(1.0);
  }
  return {a, b};
}

}  // namespace

ImageBuffer texture_patch(int cls, int64_t h, int64_t w, uint64_t seed) {
  if (cls < 0 || cls >= kSynthClasses) {
    throw ConfigError("texture class out of range: " + std::to_string(cls));
  }
  std::mt19937_64 rng(splitmix64(seed ^ (0x9e3779b9u + static_cast<uint64_t>(cls))));
  auto [ca, cb] = color_pair(rng);
  std::uniform_int_distribution<int64_t> phase_d(0, 7);
  int64_t px = phase_d(rng), py = phase_d(rng);
  const int64_t period = 8;

  auto ys = torch::arange(h, torch::kLong).unsqueeze(1).expand({h, w});
  auto xs = torch::arange(w, torch::kLong).unsqueeze(0).expand({h, w});
  const int64_t half = period / 2;
  auto bands = [half](const torch::Tensor& t) {
    return t.div(half, "floor") % 2 == 0;
  };
  torch::Tensor sel;  // HxW bool
  switch (cls) {
    case 0:
      sel = bands(ys + py) == bands(xs + px);
      break;
    case 1:
      sel = bands(ys + py);
      break;
    case 2:
      sel = bands(xs + px);
      break;
    default:
      sel = bands(ys + xs + px);
      break;
  }
  auto mask = sel.to(torch::kFloat32).unsqueeze(2);
  auto img = mask * ca.view({1, 1, 3}) + (1.0 - mask) * cb.view({1, 1, 3});

  std::uniform_int_distribution<uint32_t> s32;
  torch::Generator gen = torch::make_generator<torch::CPUGeneratorImpl>(s32(rng));
  img = img + 0.02 * torch::randn({h, w, 3}, gen);
  return ImageBuffer::clamped(img);
}

LabeledScene synth_scene(int64_t h, int64_t w, int64_t cell, uint64_t seed) {
  if (cell < 8 || h % cell || w % cell) {
    throw ConfigError("scene cell must be >=8 and divide both sides");
  }
  std::mt19937_64 rng(splitmix64(seed));
  std::uniform_int_distribution<int> cls_d(0, kSynthClasses - 1);
  std::uniform_int_distribution<uint64_t> seed_d;

  auto img = torch::zeros({h, w, 3});
  auto mask = torch::zeros({h, w}, torch::kLong);
  for (int64_t gy = 0; gy < h / cell; ++gy) {
    for (int64_t gx = 0; gx < w / cell; ++gx) {
      int cls = cls_d(rng);
      auto tile = texture_patch(cls, cell, cell, seed_d(rng));
      img.slice(0, gy * cell, (gy + 1) * cell)
          .slice(1, gx * cell, (gx + 1) * cell)
          .copy_(tile.pixels);
      mask.slice(0, gy * cell, (gy + 1) * cell)
          .slice(1, gx * cell, (gx + 1) * cell)
          .fill_(static_cast<int64_t>(cls));
    }
  }
  return {ImageBuffer::from_tensor(img), mask};
}

std::vector<ImageBuffer> toy_corpus(int n, int64_t size, uint64_t seed) {
  if (n <= 0 || size < 16 || size % 16) {
    throw ConfigError("toy corpus wants n>0 and size a multiple of 16");
  }
  std::vector<ImageBuffer> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    uint64_t s = derive_seed(seed, "toy_corpus", static_cast<uint64_t>(i));
    auto scene = synth_scene(size, size, 16, s);
    // Smooth shading on top so the corpus is not pure high frequency.
    std::mt19937_64 rng(splitmix64(s ^ 0x5eedULL));
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    float ax = u(rng) * 2 - 1, ay = u(rng) * 2 - 1;
    auto ys = torch::arange(size, torch::kFloat32).div(size).unsqueeze(1);
    auto xs = torch::arange(size, torch::kFloat32).div(size).unsqueeze(0);
    auto shade = (0.7 + 0.3 * (0.5 + 0.5 * (ax * xs + ay * ys))).unsqueeze(2);
    out.push_back(ImageBuffer::clamped(scene.image.pixels * shade));
  }
  return out;
}

}  // namespace rtc
