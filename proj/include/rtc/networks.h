#pragma once

#include <map>
#include <string>
#include <vector>

#include "rtc/dtpm.h"
#include "rtc/image.h"

namespace rtc {

struct NetConfig {
  int64_t base_width = 32;
  int64_t c_g = 128;          // global codebook feature dim (x8 grid)
  int64_t c_l = 64;           // local codebook feature dim (x4 grid)
  int64_t lr_extra_blocks = 4;  // extra residual blocks on the LR encoder
  int64_t disc_width = 32;
  int64_t codebook_size = 512;
  int64_t prior_width = 32;
  int64_t prior_classes = 4;

  void validate() const;
  static NetConfig from_json(const json& j);
  json to_json() const;
};

struct ResBlockImpl : torch::nn::Module {
  explicit ResBlockImpl(int64_t ch);
  torch::Tensor forward(const torch::Tensor& x);
  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr};
};
TORCH_MODULE(ResBlock);

// Multi-scale encoder. The LR flavor carries extra residual blocks on the
// x4 trunk and bicubically upsamples its input x4 so both branches share
// grid arithmetic.
struct EncoderImpl : torch::nn::Module {
  EncoderImpl(const NetConfig& cfg, bool lr_branch);
  MultiScaleFeatures forward(const torch::Tensor& img_bchw);

  bool lr_branch;
  torch::nn::Conv2d stem{nullptr}, down1{nullptr}, down2{nullptr}, down3{nullptr};
  torch::nn::Conv2d head_local{nullptr}, head_global{nullptr};
  ResBlock res1{nullptr}, res_g{nullptr};
  torch::nn::ModuleList trunk_local;
};
TORCH_MODULE(Encoder);

// Decoder over {global x8, local x4} maps. The HR flavor upsamples to the
// full resolution (4x the LR image), the LR flavor stops at the x4 grid.
struct DecoderImpl : torch::nn::Module {
  DecoderImpl(const NetConfig& cfg, bool hr);
  torch::Tensor forward(const torch::Tensor& g, const torch::Tensor& l);

  bool hr;
  torch::nn::Conv2d gproj{nullptr}, gup{nullptr}, lproj{nullptr}, fuse{nullptr};
  ResBlock res{nullptr}, res_up{nullptr};
  torch::nn::Conv2d up1{nullptr}, up2{nullptr}, head{nullptr};
};
TORCH_MODULE(Decoder);

// Stage-1 decoder reading the global scale only, output at HR size.
struct TempDecoderImpl : torch::nn::Module {
  explicit TempDecoderImpl(const NetConfig& cfg);
  torch::Tensor forward(const torch::Tensor& g);

  torch::nn::Conv2d proj{nullptr}, up1{nullptr}, up2{nullptr}, up3{nullptr},
      head{nullptr};
  ResBlock res{nullptr}, res_mid{nullptr};
};
TORCH_MODULE(TempDecoder);

// Three-level encoder-decoder patch discriminator with skip connections.
struct UnetDiscriminatorImpl : torch::nn::Module {
  explicit UnetDiscriminatorImpl(const NetConfig& cfg);
  torch::Tensor forward(const torch::Tensor& img);  // per-pixel score map

  torch::nn::Conv2d e0{nullptr}, e1{nullptr}, e2{nullptr}, u1{nullptr},
      u0{nullptr}, head{nullptr};
};
TORCH_MODULE(UnetDiscriminator);

// Small patch classifier for the texture prior. Taps: local after the 2nd
// pooling (x4 grid), global after the 3rd (x8 grid); q is the pooled
// embedding used by the contrastive term.
struct PriorNetImpl : torch::nn::Module {
  explicit PriorNetImpl(const NetConfig& cfg);

  struct Out {
    torch::Tensor logits;      // B x classes
    torch::Tensor q;           // B x 4w embedding
    torch::Tensor tap_local;   // B x 2w x H/4 x W/4
    torch::Tensor tap_global;  // B x 4w x H/8 x W/8
  };
  Out forward(const torch::Tensor& img);

  torch::nn::Conv2d c1{nullptr}, c2{nullptr}, c3{nullptr};
  torch::nn::Linear cls{nullptr};
};
TORCH_MODULE(PriorNet);

struct ModelBundle {
  NetConfig cfg;
  Encoder e_hr{nullptr}, e_lr{nullptr};
  Decoder d_hr{nullptr}, d_lr{nullptr};
  TempDecoder d_temp{nullptr};
  UnetDiscriminator disc{nullptr};
  torch::nn::Conv2d phi_g{nullptr}, phi_l{nullptr};  // prior projection heads
  HierarchicalCodebooks hc;
  bool local_codebook_trained = false;

  static ModelBundle create(const NetConfig& cfg, uint64_t seed);

  // named parameter groups, the unit of freezing/digesting/checkpointing
  std::map<std::string, std::vector<torch::Tensor>> param_groups() const;

  void train_mode();
  void eval_mode();
  void validate() const;  // finite params; LR encoder strictly larger
};

MultiScaleFeatures encode_batch(ModelBundle& b, const torch::Tensor& img_bchw,
                                ResolutionTag tag);
MultiScaleFeatures encode(ModelBundle& b, const ImageBuffer& img, ResolutionTag tag);

// use_st: feed straight-through maps so the encoders receive gradients
torch::Tensor decode_batch(ModelBundle& b, const ScaleQuant& maps,
                           DecoderKind which, bool use_st);
ImageBuffer decode(ModelBundle& b, const ScaleQuant& maps, DecoderKind which);

struct TrainForward {
  MultiScaleFeatures f_hr, f_lr;
  ScaleQuant q_hr, q_lr;
  std::vector<DecodeJob> jobs;
  std::vector<torch::Tensor> recons;  // aligned with jobs
};

TrainForward forward_train(ModelBundle& b, const torch::Tensor& i_lr,
                           const torch::Tensor& i_hr, int stage);

ImageBuffer forward_infer(ModelBundle& b, const ImageBuffer& i_lr);

}  // namespace rtc
