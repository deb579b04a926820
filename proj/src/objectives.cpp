#include "rtc/objectives.h"

#include <fstream>
#include <sstream>

namespace rtc {

void LossWeights::validate() const {
  if (beta < 0 || lambda_per < 0 || lambda_adv < 0 || lambda_contrastive < 0)
    throw ConfigError("loss weights must be non-negative");
  if (adv_warmup_steps < 0)
    throw ConfigError("adv_warmup_steps must be non-negative");
}

LossWeights LossWeights::from_json(const json& j) {
  expect_keys(j, "loss", {"beta", "lambda_per", "lambda_adv", "lambda_contrastive",
                          "use_perceptual", "use_adversarial", "use_ptpm",
                          "adv_warmup_steps"});
  LossWeights w;
  if (j.contains("beta")) w.beta = j.at("beta").get<double>();
  if (j.contains("lambda_per")) w.lambda_per = j.at("lambda_per").get<double>();
  if (j.contains("lambda_adv")) w.lambda_adv = j.at("lambda_adv").get<double>();
  if (j.contains("lambda_contrastive"))
    w.lambda_contrastive = j.at("lambda_contrastive").get<double>();
  if (j.contains("use_perceptual")) w.use_perceptual = j.at("use_perceptual").get<bool>();
  if (j.contains("use_adversarial"))
    w.use_adversarial = j.at("use_adversarial").get<bool>();
  if (j.contains("use_ptpm")) w.use_ptpm = j.at("use_ptpm").get<bool>();
  if (j.contains("adv_warmup_steps"))
    w.adv_warmup_steps = j.at("adv_warmup_steps").get<int64_t>();
  w.validate();
  return w;
}

json LossWeights::to_json() const {
  return json{{"beta", beta},
              {"lambda_per", lambda_per},
              {"lambda_adv", lambda_adv},
              {"lambda_contrastive", lambda_contrastive},
              {"use_perceptual", use_perceptual},
              {"use_adversarial", use_adversarial},
              {"use_ptpm", use_ptpm},
              {"adv_warmup_steps", adv_warmup_steps}};
}

json LossReport::to_json() const {
  return json{{"l1", l1},           {"perceptual", perceptual},
              {"adversarial_g", adversarial_g}, {"adversarial_d", adversarial_d},
              {"code", code},       {"rep_con", rep_con},
              {"rec_con", rec_con}, {"ptpm", ptpm},
              {"total", total}};
}

void append_metrics(const std::string& path, int64_t step, const LossReport& r) {
  std::ostringstream out;
  out.precision(9);
  auto j = r.to_json();
  for (const auto& [term, value] : j.items())
    out << step << ' ' << term << ' ' << value.get<double>() << '\n';
  std::ofstream f(path, std::ios::app);
  if (!f) throw IoError("cannot append metrics to " + path);
  f << out.str();
}

namespace {

// Temporarily strips requires_grad from a module so a forward through it
// contributes no parameter gradients.
class FreezeScope {
 public:
  explicit FreezeScope(const std::vector<torch::Tensor>& params) {
    for (const auto& p : params) {
      saved_.emplace_back(p, p.requires_grad());
      p.set_requires_grad(false);
    }
  }
  ~FreezeScope() {
    for (auto& [p, was] : saved_) p.set_requires_grad(was);
  }

 private:
  std::vector<std::pair<torch::Tensor, bool>> saved_;
};

torch::Tensor perceptual_features(PriorNet& phi, const torch::Tensor& x) {
  return phi->forward(x).tap_local;
}

}  // namespace

ReconParts reconstruction_loss(const torch::Tensor& gt, const torch::Tensor& recon,
                               const LossWeights& w, UnetDiscriminator disc,
                               PriorNet phi_per, bool with_adversarial) {
  if (gt.sizes() != recon.sizes())
    throw ShapeError("reconstruction_loss: gt and recon shapes differ");

  ReconParts parts;
  parts.l1 = (gt - recon).abs().mean();

  if (w.use_perceptual) {
    FreezeScope fs(phi_per->parameters());
    auto a = perceptual_features(phi_per, gt).detach();
    auto b = perceptual_features(phi_per, recon);
    parts.perceptual = (a - b).abs().mean();
  } else {
    parts.perceptual = torch::zeros({}, gt.options());
  }

  if (with_adversarial && w.use_adversarial) {
    FreezeScope fs(disc->parameters());
    parts.adversarial_g = -disc->forward(recon).mean();
  } else {
    parts.adversarial_g = torch::zeros({}, gt.options());
  }

  parts.total = parts.l1 + w.lambda_per * parts.perceptual +
                w.lambda_adv * parts.adversarial_g;
  return parts;
}

torch::Tensor discriminator_loss(UnetDiscriminator disc, const torch::Tensor& gt,
                                 const torch::Tensor& recon) {
  auto real = disc->forward(gt.detach());
  auto fake = disc->forward(recon.detach());
  return torch::relu(1 - real).mean() + torch::relu(1 + fake).mean();
}

torch::Tensor codebook_objective(const torch::Tensor& dtpm_term,
                                 const torch::Tensor& rep_term,
                                 const torch::Tensor& rec_term, int stage) {
  if (!dtpm_term.defined() || !rep_term.defined() || !rec_term.defined())
    throw ConfigError("codebook objective: missing sub-term in stage " +
                      std::to_string(stage));
  return dtpm_term + rep_term + rec_term;
}

PriorNet make_frozen_perceptual(const NetConfig& cfg, uint64_t seed) {
  torch::manual_seed(derive_seed(seed, "phi_per"));
  PriorNet net(cfg);
  freeze_prior(net);
  return net;
}

StepLosses total_loss(ModelBundle& b, const TrainForward& tf,
                      const torch::Tensor& i_lr, const torch::Tensor& i_hr,
                      const LossWeights& w, PriorPack& priors, PriorNet phi_per,
                      int stage, int64_t step) {
  w.validate();
  if (tf.jobs.size() != tf.recons.size())
    throw ShapeError("total_loss: jobs and recons disagree");

  const bool adv = w.adversarial_on(step);
  StepLosses out;
  auto zero = torch::zeros({}, i_hr.options());
  auto l1_sum = zero.clone(), per_sum = zero.clone(), adv_g_sum = zero.clone();
  auto rec_sum = zero.clone();
  torch::Tensor disc_sum;

  for (size_t i = 0; i < tf.jobs.size(); ++i) {
    const auto& job = tf.jobs[i];
    const auto& gt = job.target == ResolutionTag::HR ? i_hr : i_lr;
    // the hinge rides only HR-side outputs, there is no LR discriminator
    bool hinge = adv && job.target == ResolutionTag::HR;
    auto parts = reconstruction_loss(gt, tf.recons[i], w, b.disc, phi_per, hinge);
    l1_sum = l1_sum + parts.l1;
    per_sum = per_sum + parts.perceptual;
    adv_g_sum = adv_g_sum + parts.adversarial_g;
    rec_sum = rec_sum + parts.total;
    if (hinge) {
      auto d = discriminator_loss(b.disc, gt, tf.recons[i]);
      disc_sum = disc_sum.defined() ? disc_sum + d : d;
    }
  }

  auto dtpm_term = dtpm_loss(tf.q_hr, tf.q_lr, w.beta);
  auto rep_term = rep_consistency_loss(tf.f_hr, tf.f_lr);
  auto code_sum = codebook_objective(dtpm_term, rep_term, rec_sum, stage);

  auto ptpm_term = zero.clone();
  if (w.use_ptpm)
    ptpm_term = ptpm_reg_loss(i_hr, tf.q_hr, tf.q_lr, priors, b.phi_g, b.phi_l);

  out.generator = code_sum + ptpm_term;
  out.discriminator = disc_sum;

  out.report.l1 = l1_sum.item<double>();
  out.report.perceptual = per_sum.item<double>();
  out.report.adversarial_g = adv_g_sum.item<double>();
  out.report.adversarial_d = disc_sum.defined() ? disc_sum.item<double>() : 0.0;
  out.report.code = dtpm_term.item<double>();
  out.report.rep_con = rep_term.item<double>();
  out.report.rec_con = rec_sum.item<double>();
  out.report.ptpm = ptpm_term.item<double>();
  out.report.total = out.generator.item<double>();

  auto terms = out.report.to_json();
  for (const auto& [term, value] : terms.items()) {
    if (!std::isfinite(value.get<double>()))
      throw TrainingHalt("non-finite loss term " + term + " at step " +
                         std::to_string(step));
  }
  return out;
}

}  // namespace rtc
