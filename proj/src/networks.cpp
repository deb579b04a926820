#include "rtc/networks.h"

namespace rtc {

namespace F = torch::nn::functional;

void NetConfig::validate() const {
  for (auto v : {base_width, c_g, c_l, disc_width, codebook_size, prior_width,
                 prior_classes}) {
    if (v < 1) throw ConfigError("network widths must be positive");
  }
  if (lr_extra_blocks < 1) {
    throw ConfigError("the LR encoder must carry extra blocks");
  }
}

NetConfig NetConfig::from_json(const json& j) {
  expect_keys(j, "network",
              {"base_width", "c_g", "c_l", "lr_extra_blocks", "disc_width",
               "codebook_size", "prior_width", "prior_classes"});
  NetConfig c;
  auto take = [&](const char* k, int64_t& out) {
    if (j.contains(k)) out = j.at(k).get<int64_t>();
  };
  take("base_width", c.base_width);
  take("c_g", c.c_g);
  take("c_l", c.c_l);
  take("lr_extra_blocks", c.lr_extra_blocks);
  take("disc_width", c.disc_width);
  take("codebook_size", c.codebook_size);
  take("prior_width", c.prior_width);
  take("prior_classes", c.prior_classes);
  c.validate();
  return c;
}

json NetConfig::to_json() const {
  return json{{"base_width", base_width},
              {"c_g", c_g},
              {"c_l", c_l},
              {"lr_extra_blocks", lr_extra_blocks},
              {"disc_width", disc_width},
              {"codebook_size", codebook_size},
              {"prior_width", prior_width},
              {"prior_classes", prior_classes}};
}

namespace {

torch::nn::Conv2d conv3(int64_t in, int64_t out) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).padding(1));
}

torch::nn::Conv2d conv_down(int64_t in, int64_t out) {
  return torch::nn::Conv2d(
      torch::nn::Conv2dOptions(in, out, 4).stride(2).padding(1));
}

torch::Tensor up2x(const torch::Tensor& x) {
  return F::interpolate(x, F::InterpolateFuncOptions()
                               .scale_factor(std::vector<double>{2.0, 2.0})
                               .mode(torch::kNearest));
}

torch::Tensor out_act(const torch::Tensor& x) {
  return (torch::tanh(x) + 1.0) / 2.0;
}

}  // namespace

ResBlockImpl::ResBlockImpl(int64_t ch) {
  conv1 = register_module("conv1", conv3(ch, ch));
  conv2 = register_module("conv2", conv3(ch, ch));
}

torch::Tensor ResBlockImpl::forward(const torch::Tensor& x) {
  return x + conv2(torch::relu(conv1(x)));
}

EncoderImpl::EncoderImpl(const NetConfig& cfg, bool lr_branch)
    : lr_branch(lr_branch) {
  const int64_t b = cfg.base_width;
  stem = register_module("stem", conv3(3, b));
  down1 = register_module("down1", conv_down(b, 2 * b));
  res1 = register_module("res1", ResBlock(2 * b));
  down2 = register_module("down2", conv_down(2 * b, 2 * b));
  const int64_t blocks = 1 + (lr_branch ? cfg.lr_extra_blocks : 0);
  for (int64_t i = 0; i < blocks; ++i) {
    trunk_local->push_back(ResBlock(2 * b));
  }
  register_module("trunk_local", trunk_local);
  head_local = register_module("head_local", conv3(2 * b, cfg.c_l));
  down3 = register_module("down3", conv_down(2 * b, 4 * b));
  res_g = register_module("res_g", ResBlock(4 * b));
  head_global = register_module("head_global", conv3(4 * b, cfg.c_g));
}

MultiScaleFeatures EncoderImpl::forward(const torch::Tensor& img_bchw) {
  auto x = img_bchw;
  if (lr_branch) {
    x = F::interpolate(x, F::InterpolateFuncOptions()
                              .scale_factor(std::vector<double>{4.0, 4.0})
                              .mode(torch::kBicubic)
                              .align_corners(false));
  }
  if (x.size(2) % 8 || x.size(3) % 8) {
    throw DimensionError("encoder input must be a multiple of 8, got " +
                         std::to_string(x.size(2)) + "x" +
                         std::to_string(x.size(3)));
  }
  x = torch::relu(stem(x));
  x = res1->forward(torch::relu(down1(x)));
  x = torch::relu(down2(x));
  for (auto& blk : *trunk_local) {
    x = blk->as<ResBlockImpl>()->forward(x);
  }
  MultiScaleFeatures ms;
  ms.local = head_local(x);
  auto g = res_g->forward(torch::relu(down3(x)));
  ms.global = head_global(g);
  ms.tag = lr_branch ? ResolutionTag::LR : ResolutionTag::HR;
  return ms;
}

DecoderImpl::DecoderImpl(const NetConfig& cfg, bool hr) : hr(hr) {
  const int64_t b = cfg.base_width;
  gproj = register_module("gproj", conv3(cfg.c_g, 2 * b));
  gup = register_module("gup", conv3(2 * b, 2 * b));
  lproj = register_module("lproj", conv3(cfg.c_l, 2 * b));
  fuse = register_module("fuse", conv3(4 * b, 2 * b));
  res = register_module("res", ResBlock(2 * b));
  if (hr) {
    up1 = register_module("up1", conv3(2 * b, b));
    res_up = register_module("res_up", ResBlock(b));
    up2 = register_module("up2", conv3(b, b));
    head = register_module("head", conv3(b, 3));
  } else {
    head = register_module("head", conv3(2 * b, 3));
  }
}

torch::Tensor DecoderImpl::forward(const torch::Tensor& g, const torch::Tensor& l) {
  auto gx = torch::relu(gup(up2x(torch::relu(gproj(g)))));
  auto lx = torch::relu(lproj(l));
  if (gx.size(2) != lx.size(2) || gx.size(3) != lx.size(3)) {
    throw ShapeError("decoder got unaligned scale grids");
  }
  auto x = res->forward(torch::relu(fuse(torch::cat({gx, lx}, 1))));
  if (hr) {
    x = res_up->forward(torch::relu(up1(up2x(x))));
    x = torch::relu(up2(up2x(x)));
  }
  return out_act(head(x));
}

TempDecoderImpl::TempDecoderImpl(const NetConfig& cfg) {
  const int64_t b = cfg.base_width;
  proj = register_module("proj", conv3(cfg.c_g, 2 * b));
  res = register_module("res", ResBlock(2 * b));
  up1 = register_module("up1", conv3(2 * b, b));
  up2 = register_module("up2", conv3(b, b));
  res_mid = register_module("res_mid", ResBlock(b));
  up3 = register_module("up3", conv3(b, b));
  head = register_module("head", conv3(b, 3));
}

torch::Tensor TempDecoderImpl::forward(const torch::Tensor& g) {
  auto x = res->forward(torch::relu(proj(g)));
  x = torch::relu(up1(up2x(x)));
  x = res_mid->forward(torch::relu(up2(up2x(x))));
  x = torch::relu(up3(up2x(x)));
  return out_act(head(x));
}

UnetDiscriminatorImpl::UnetDiscriminatorImpl(const NetConfig& cfg) {
  const int64_t w = cfg.disc_width;
  e0 = register_module("e0", conv3(3, w));
  e1 = register_module("e1", conv_down(w, 2 * w));
  e2 = register_module("e2", conv_down(2 * w, 4 * w));
  u1 = register_module("u1", conv3(6 * w, 2 * w));
  u0 = register_module("u0", conv3(3 * w, w));
  head = register_module("head", conv3(w, 1));
}

torch::Tensor UnetDiscriminatorImpl::forward(const torch::Tensor& img) {
  auto lrelu = [](const torch::Tensor& t) { return torch::leaky_relu(t, 0.2); };
  auto a0 = lrelu(e0(img));
  auto a1 = lrelu(e1(a0));
  auto a2 = lrelu(e2(a1));
  auto b1 = lrelu(u1(torch::cat({up2x(a2), a1}, 1)));
  auto b0 = lrelu(u0(torch::cat({up2x(b1), a0}, 1)));
  return head(b0);
}

PriorNetImpl::PriorNetImpl(const NetConfig& cfg) {
  const int64_t w = cfg.prior_width;
  c1 = register_module("c1", conv3(3, w));
  c2 = register_module("c2", conv3(w, 2 * w));
  c3 = register_module("c3", conv3(2 * w, 4 * w));
  cls = register_module("cls", torch::nn::Linear(4 * w, cfg.prior_classes));
}

PriorNetImpl::Out PriorNetImpl::forward(const torch::Tensor& img) {
  auto pool = [](const torch::Tensor& t) {
    return F::max_pool2d(t, F::MaxPool2dFuncOptions(2));
  };
  Out out;
  auto x = pool(torch::relu(c1(img)));
  x = pool(torch::relu(c2(x)));
  out.tap_local = x;
  x = pool(torch::relu(c3(x)));
  out.tap_global = x;
  out.q = torch::adaptive_avg_pool2d(x, {1, 1}).flatten(1);
  out.logits = cls(out.q);
  return out;
}

ModelBundle ModelBundle::create(const NetConfig& cfg, uint64_t seed) {
  cfg.validate();
  torch::manual_seed(derive_seed(seed, "nets"));
  ModelBundle b;
  b.cfg = cfg;
  b.e_hr = Encoder(cfg, false);
  b.e_lr = Encoder(cfg, true);
  b.d_hr = Decoder(cfg, true);
  b.d_lr = Decoder(cfg, false);
  b.d_temp = TempDecoder(cfg);
  b.disc = UnetDiscriminator(cfg);
  b.phi_g = torch::nn::Conv2d(
      torch::nn::Conv2dOptions(cfg.c_g, 4 * cfg.prior_width, 1));
  b.phi_l = torch::nn::Conv2d(
      torch::nn::Conv2dOptions(cfg.c_l, 2 * cfg.prior_width, 1));
  b.hc.global = Codebook::init(cfg.codebook_size, cfg.c_g, ScaleTag::Global,
                               derive_seed(seed, "cb_global"));
  b.hc.local = Codebook::init(cfg.codebook_size, cfg.c_l, ScaleTag::Local,
                              derive_seed(seed, "cb_local"));
  b.hc.global.entries.set_requires_grad(true);
  b.hc.local.entries.set_requires_grad(true);
  return b;
}

std::map<std::string, std::vector<torch::Tensor>> ModelBundle::param_groups() const {
  std::map<std::string, std::vector<torch::Tensor>> g;
  g["e_hr"] = e_hr->parameters();
  g["e_lr"] = e_lr->parameters();
  g["d_hr"] = d_hr->parameters();
  g["d_lr"] = d_lr->parameters();
  g["d_temp"] = d_temp->parameters();
  g["disc"] = disc->parameters();
  g["phi_g"] = phi_g->parameters();
  g["phi_l"] = phi_l->parameters();
  g["cb_global"] = {hc.global.entries};
  g["cb_local"] = {hc.local.entries};
  return g;
}

void ModelBundle::train_mode() {
  for (auto& m : std::vector<std::shared_ptr<torch::nn::Module>>{
           e_hr.ptr(), e_lr.ptr(), d_hr.ptr(), d_lr.ptr(), d_temp.ptr(),
           disc.ptr(), phi_g.ptr(), phi_l.ptr()}) {
    m->train();
  }
}

void ModelBundle::eval_mode() {
  for (auto& m : std::vector<std::shared_ptr<torch::nn::Module>>{
           e_hr.ptr(), e_lr.ptr(), d_hr.ptr(), d_lr.ptr(), d_temp.ptr(),
           disc.ptr(), phi_g.ptr(), phi_l.ptr()}) {
    m->eval();
  }
}

void ModelBundle::validate() const {
  size_t hr_params = 0, lr_params = 0;
  for (const auto& [name, params] : param_groups()) {
    for (const auto& p : params) {
      if (!torch::isfinite(p).all().item<bool>()) {
        throw ShapeError("non-finite parameter in group " + name);
      }
      if (name == "e_hr") hr_params += p.numel();
      if (name == "e_lr") lr_params += p.numel();
    }
  }
  if (lr_params <= hr_params) {
    throw ConfigError("the LR encoder must be strictly larger than the HR one");
  }
  hc.validate();
}

MultiScaleFeatures encode_batch(ModelBundle& b, const torch::Tensor& img_bchw,
                                ResolutionTag tag) {
  if (img_bchw.dim() != 4 || img_bchw.size(1) != 3) {
    throw ShapeError("encoder expects Bx3xHxW");
  }
  if (tag == ResolutionTag::LR && (img_bchw.size(2) % 2 || img_bchw.size(3) % 2)) {
    throw DimensionError("LR input sides must be even");
  }
  auto ms = (tag == ResolutionTag::HR) ? b.e_hr->forward(img_bchw)
                                       : b.e_lr->forward(img_bchw);
  ms.validate();
  return ms;
}

MultiScaleFeatures encode(ModelBundle& b, const ImageBuffer& img,
                          ResolutionTag tag) {
  return encode_batch(b, to_nchw(img), tag);
}

torch::Tensor decode_batch(ModelBundle& b, const ScaleQuant& maps,
                           DecoderKind which, bool use_st) {
  auto g = use_st ? straight_through(maps.global) : maps.global.quantized;
  if (which == DecoderKind::Temp) {
    if (maps.local_active()) {
      throw ConfigError("the temporary decoder is global-only");
    }
    return b.d_temp->forward(g);
  }
  auto l = use_st ? straight_through(maps.local) : maps.local.quantized;
  return which == DecoderKind::HR ? b.d_hr->forward(g, l) : b.d_lr->forward(g, l);
}

ImageBuffer decode(ModelBundle& b, const ScaleQuant& maps, DecoderKind which) {
  torch::NoGradGuard no_grad;
  return from_chw(decode_batch(b, maps, which, false));
}

TrainForward forward_train(ModelBundle& b, const torch::Tensor& i_lr,
                           const torch::Tensor& i_hr, int stage) {
  if (stage != 1 && stage != 2) throw ConfigError("stage must be 1 or 2");
  if (i_lr.dim() != 4 || i_hr.dim() != 4 || i_lr.size(0) != i_hr.size(0) ||
      i_hr.size(2) != 4 * i_lr.size(2) || i_hr.size(3) != 4 * i_lr.size(3)) {
    throw ShapeError("unpaired LR/HR batch shapes");
  }
  TrainForward tf;
  tf.f_hr = encode_batch(b, i_hr, ResolutionTag::HR);
  tf.f_lr = encode_batch(b, i_lr, ResolutionTag::LR);

  ActiveScales active{true, stage == 2};
  tf.q_hr = dtpm_quantize(b.hc, tf.f_hr, active);
  tf.q_lr = dtpm_quantize(b.hc, tf.f_lr, active);

  if (stage == 1) {
    tf.jobs = {{DecoderKind::Temp, ResolutionTag::HR, ResolutionTag::HR},
               {DecoderKind::Temp, ResolutionTag::LR, ResolutionTag::HR}};
  } else {
    tf.jobs = rec_consistency_targets(tf.q_hr, tf.q_lr);
  }
  for (const auto& job : tf.jobs) {
    const auto& maps = job.source == ResolutionTag::HR ? tf.q_hr : tf.q_lr;
    tf.recons.push_back(decode_batch(b, maps, job.decoder, true));
  }
  return tf;
}

ImageBuffer forward_infer(ModelBundle& b, const ImageBuffer& i_lr) {
  if (!b.local_codebook_trained) {
    throw ConfigError(
        "local codebook is untrained (stage-1 checkpoint); run stage 2 first");
  }
  torch::NoGradGuard no_grad;
  b.eval_mode();
  auto x = to_nchw(i_lr);
  const int64_t h = x.size(2), w = x.size(3);
  const int64_t ph = (2 - h % 2) % 2, pw = (2 - w % 2) % 2;
  if (ph || pw) {
    log_info("padding LR input by (" + std::to_string(ph) + "," +
             std::to_string(pw) + ") for the encoder grid");
    x = F::pad(x, F::PadFuncOptions({0, pw, 0, ph}).mode(torch::kReflect));
  }
  auto f = encode_batch(b, x, ResolutionTag::LR);
  auto q = dtpm_quantize(b.hc, f, {true, true});
  auto sr = decode_batch(b, q, DecoderKind::HR, false);
  sr = sr.slice(2, 0, 4 * h).slice(3, 0, 4 * w);
  return from_chw(sr);
}

}  // namespace rtc
