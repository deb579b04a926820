#include "rtc/trainer.h"

#include <filesystem>
#include <random>

namespace rtc {

namespace fs = std::filesystem;

void TrainConfig::validate() const {
  if (stage != 1 && stage != 2) throw ConfigError("stage must be 1 or 2");
  if (steps <= 0) throw ConfigError("steps must be positive");
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (hr_patch % 8 != 0 || hr_patch < 16)
    throw ConfigError("hr_patch must be a multiple of 8, at least 16");
  if (lr <= 0 || beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
    throw ConfigError("bad optimizer settings");
  if (checkpoint_every < 1 || revive_every < 1 || log_every < 1)
    throw ConfigError("cadences must be positive");
  if (degradation.downscale_factor != 4)
    throw ConfigError("training requires the x4 degradation factor");
  loss.validate();
  degradation.validate();
  net.validate();
}

TrainConfig TrainConfig::from_json(const json& j) {
  expect_keys(j, "train",
              {"stage", "steps", "batch_size", "hr_patch", "lr", "beta1",
               "beta2", "seed", "loss", "degradation", "net", "checkpoint_every",
               "revive_every", "log_every", "disc_in_stage1", "ptpm_net"});
  TrainConfig c;
  if (j.contains("stage")) c.stage = j.at("stage").get<int>();
  if (j.contains("steps")) c.steps = j.at("steps").get<int64_t>();
  if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<int64_t>();
  if (j.contains("hr_patch")) c.hr_patch = j.at("hr_patch").get<int64_t>();
  if (j.contains("lr")) c.lr = j.at("lr").get<double>();
  if (j.contains("beta1")) c.beta1 = j.at("beta1").get<double>();
  if (j.contains("beta2")) c.beta2 = j.at("beta2").get<double>();
  if (j.contains("seed")) c.seed = j.at("seed").get<uint64_t>();
  if (j.contains("loss")) c.loss = LossWeights::from_json(j.at("loss"));
  if (j.contains("degradation"))
    c.degradation = DegradationConfig::from_json(j.at("degradation"));
  if (j.contains("net")) c.net = NetConfig::from_json(j.at("net"));
  if (j.contains("checkpoint_every"))
    c.checkpoint_every = j.at("checkpoint_every").get<int64_t>();
  if (j.contains("revive_every")) c.revive_every = j.at("revive_every").get<int64_t>();
  if (j.contains("log_every")) c.log_every = j.at("log_every").get<int64_t>();
  if (j.contains("disc_in_stage1"))
    c.disc_in_stage1 = j.at("disc_in_stage1").get<bool>();
  if (j.contains("ptpm_net")) c.ptpm_net = j.at("ptpm_net").get<std::string>();
  c.validate();
  return c;
}

json TrainConfig::to_json() const {
  return json{{"stage", stage},
              {"steps", steps},
              {"batch_size", batch_size},
              {"hr_patch", hr_patch},
              {"lr", lr},
              {"beta1", beta1},
              {"beta2", beta2},
              {"seed", seed},
              {"loss", loss.to_json()},
              {"degradation", degradation.to_json()},
              {"net", net.to_json()},
              {"checkpoint_every", checkpoint_every},
              {"revive_every", revive_every},
              {"log_every", log_every},
              {"disc_in_stage1", disc_in_stage1},
              {"ptpm_net", ptpm_net}};
}

uint64_t TrainConfig::hash() const {
  auto j = to_json();
  j.erase("steps");
  j.erase("checkpoint_every");
  j.erase("log_every");
  auto text = j.dump();
  return fnv1a64(text.data(), text.size());
}

std::vector<std::string> trainable_groups(int stage) {
  if (stage == 1) return {"e_hr", "e_lr", "cb_global", "d_temp", "phi_g"};
  return {"cb_local", "d_hr", "d_lr", "phi_g", "phi_l"};
}

std::vector<std::string> frozen_groups(int stage) {
  if (stage == 1) return {};
  return {"e_hr", "e_lr", "cb_global"};
}

std::pair<torch::Tensor, torch::Tensor> make_batch(
    const std::vector<ImageBuffer>& data, const TrainConfig& cfg, int64_t step) {
  if (data.empty()) throw ConfigError("training set is empty");
  std::mt19937_64 rng(derive_seed(cfg.seed, "batch", (uint64_t)step));
  std::vector<ImageBuffer> hr, lr;

  DegradationConfig dc = cfg.degradation;
  dc.seed = derive_seed(cfg.seed, "degrade", (uint64_t)step);

  for (int64_t i = 0; i < cfg.batch_size; ++i) {
    const auto& src = data[std::uniform_int_distribution<size_t>(0, data.size() - 1)(rng)];
    if (src.height() < cfg.hr_patch || src.width() < cfg.hr_patch)
      throw ShapeError("training image smaller than hr_patch");
    int64_t r = 0, c = 0;
    if (src.height() > cfg.hr_patch)
      r = std::uniform_int_distribution<int64_t>(0, src.height() - cfg.hr_patch)(rng);
    if (src.width() > cfg.hr_patch)
      c = std::uniform_int_distribution<int64_t>(0, src.width() - cfg.hr_patch)(rng);
    auto crop = ImageBuffer::from_tensor(
        src.pixels
            .index({torch::indexing::Slice(r, r + cfg.hr_patch),
                    torch::indexing::Slice(c, c + cfg.hr_patch)})
            .contiguous());
    lr.push_back(degrade_indexed(crop, dc, (uint64_t)i));
    hr.push_back(std::move(crop));
  }
  return {batch_to_nchw(lr), batch_to_nchw(hr)};
}

namespace {

std::vector<torch::Tensor> collect_params(
    const std::map<std::string, std::vector<torch::Tensor>>& groups,
    const std::vector<std::string>& names) {
  std::vector<torch::Tensor> out;
  for (const auto& name : names) {
    const auto& ps = groups.at(name);
    out.insert(out.end(), ps.begin(), ps.end());
  }
  return out;
}

void set_group_grads(const std::map<std::string, std::vector<torch::Tensor>>& groups,
                     const std::vector<std::string>& names, bool on) {
  for (const auto& name : names)
    for (const auto& p : groups.at(name)) p.set_requires_grad(on);
}

torch::optim::AdamOptions adam_options(const TrainConfig& cfg) {
  return torch::optim::AdamOptions(cfg.lr).betas({cfg.beta1, cfg.beta2});
}

// accumulated index counts for the stage's revivable codebook
struct ReviveWindow {
  torch::Tensor counts;
  void account(const QuantizedMap& qm, int64_t n) {
    if (!counts.defined()) counts = torch::zeros({n}, torch::kInt64);
    counts += torch::bincount(qm.indices.flatten(), {}, n);
  }
  void reset() { counts = torch::Tensor(); }
};

struct Loop {
  ModelBundle& b;
  const std::vector<ImageBuffer>& data;
  const TrainConfig& cfg;
  int stage;
  std::string out_dir;
  torch::optim::Adam& g_opt;
  torch::optim::Adam& d_opt;
  PriorPack priors;
  PriorNet phi_per{nullptr};
  ReviveWindow window;

  LossWeights stage_weights() const {
    LossWeights w = cfg.loss;
    if (stage == 1 && !cfg.disc_in_stage1) w.use_adversarial = false;
    return w;
  }

  Checkpoint snapshot(int64_t step) const {
    auto c = capture_checkpoint(b, stage, step, cfg.hash(), frozen_groups(stage));
    c.gen_opt_blob = optimizer_to_blob(g_opt);
    c.disc_opt_blob = optimizer_to_blob(d_opt);
    return c;
  }

  void maybe_revive(const TrainForward& tf, int64_t step) {
    auto& cb = stage == 1 ? b.hc.global : b.hc.local;
    const auto& q_hr = stage == 1 ? tf.q_hr.global : tf.q_hr.local;
    const auto& q_lr = stage == 1 ? tf.q_lr.global : tf.q_lr.local;
    window.account(q_hr, cb.size());
    window.account(q_lr, cb.size());
    if ((step + 1) % cfg.revive_every != 0) return;

    UseStats stats;
    stats.counts = window.counts;
    stats.used = (window.counts > 0).sum().item<int64_t>();
    stats.ratio_string = std::to_string(stats.used) + " / " + std::to_string(cb.size());
    auto pool = q_hr.pre_quant.detach().permute({0, 2, 3, 1}).reshape({-1, cb.dim()});
    revive_dead_codes(cb, stats, pool, derive_seed(cfg.seed, "revive", (uint64_t)step));
    window.reset();
  }

  Checkpoint run(int64_t start_step) {
    fs::create_directories(out_dir);
    auto metrics = (fs::path(out_dir) / "metrics.log").string();
    auto w = stage_weights();

    for (int64_t step = start_step; step < cfg.steps; ++step) {
      auto [i_lr, i_hr] = make_batch(data, cfg, step);
      auto tf = forward_train(b, i_lr, i_hr, stage);

      StepLosses out;
      try {
        out = total_loss(b, tf, i_lr, i_hr, w, priors, phi_per, stage, step);
      } catch (const TrainingHalt& halt) {
        auto last_good = (fs::path(out_dir) / "last_good.ckpt").string();
        save_checkpoint(last_good, snapshot(step));
        throw TrainingHalt(std::string(halt.what()) +
                           "; last-good checkpoint at " + last_good);
      }

      g_opt.zero_grad();
      out.generator.backward();
      g_opt.step();
      if (out.discriminator.defined()) {
        d_opt.zero_grad();
        out.discriminator.backward();
        d_opt.step();
      }

      maybe_revive(tf, step);

      if (step % cfg.log_every == 0 || step + 1 == cfg.steps)
        append_metrics(metrics, step, out.report);
      if ((step + 1) % cfg.checkpoint_every == 0 && step + 1 < cfg.steps) {
        auto path = fs::path(out_dir) /
                    ("stage" + std::to_string(stage) + "_step" +
                     std::to_string(step + 1) + ".ckpt");
        save_checkpoint(path.string(), snapshot(step + 1));
      }
    }

    if (stage == 2) b.local_codebook_trained = true;
    auto final = snapshot(cfg.steps);
    save_checkpoint((fs::path(out_dir) / "latest.ckpt").string(), final);
    return final;
  }
};

PriorPack priors_for(const TrainConfig& cfg) {
  auto pack = make_frozen_priors(cfg.net, derive_seed(cfg.seed, "priors"));
  if (!cfg.ptpm_net.empty()) {
    auto [net, net_cfg] = load_prior_net(cfg.ptpm_net);
    if (net_cfg.prior_width != cfg.net.prior_width)
      throw ConfigError("pretrained prior width disagrees with the net config");
    freeze_prior(net);
    pack.phi_p = net;
  }
  return pack;
}

}  // namespace

Checkpoint train_stage1(ModelBundle& b, const std::vector<ImageBuffer>& data,
                        const TrainConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  if (cfg.stage != 1) throw ConfigError("train_stage1 wants a stage-1 config");
  b.train_mode();

  auto groups = b.param_groups();
  set_group_grads(groups, trainable_groups(1), true);

  torch::optim::Adam g_opt(collect_params(groups, trainable_groups(1)),
                           adam_options(cfg));
  torch::optim::Adam d_opt(collect_params(groups, {"disc"}), adam_options(cfg));

  Loop loop{b,     data,  cfg,
            1,     out_dir, g_opt,
            d_opt, priors_for(cfg),
            make_frozen_perceptual(cfg.net, derive_seed(cfg.seed, "per"))};
  return loop.run(0);
}

Checkpoint train_stage2(ModelBundle& b, const Checkpoint& stage1,
                        const std::vector<ImageBuffer>& data,
                        const TrainConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  if (cfg.stage != 2) throw ConfigError("train_stage2 wants a stage-2 config");
  if (stage1.stage != 1)
    throw ConfigError("stage 2 must start from a stage-1 checkpoint");
  if (!stage1.groups.count("cb_global") || !stage1.digests.count("cb_global"))
    throw ConfigError("stage-1 checkpoint is missing the global codebook");

  apply_checkpoint(b, stage1);
  b.train_mode();

  auto groups = b.param_groups();
  set_group_grads(groups, trainable_groups(2), true);
  set_group_grads(groups, frozen_groups(2), false);

  torch::optim::Adam g_opt(collect_params(groups, trainable_groups(2)),
                           adam_options(cfg));
  torch::optim::Adam d_opt(collect_params(groups, {"disc"}), adam_options(cfg));

  Loop loop{b,     data,  cfg,
            2,     out_dir, g_opt,
            d_opt, priors_for(cfg),
            make_frozen_perceptual(cfg.net, derive_seed(cfg.seed, "per"))};
  auto final = loop.run(0);

  for (const auto& name : frozen_groups(2)) {
    if (final.digests.at(name) != stage1.digests.at(name))
      throw TrainingHalt("frozen group " + name + " drifted during stage 2");
  }
  return final;
}

Checkpoint resume_train(ModelBundle& b, const Checkpoint& from,
                        const std::vector<ImageBuffer>& data,
                        const TrainConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  if (from.stage != cfg.stage)
    throw ConfigError("checkpoint stage disagrees with the config");
  if (from.config_hash != cfg.hash())
    throw ConfigError("checkpoint was produced under a different config");
  if (from.step >= cfg.steps)
    throw ConfigError("checkpoint is already past cfg.steps");

  apply_checkpoint(b, from);
  b.train_mode();

  auto groups = b.param_groups();
  set_group_grads(groups, trainable_groups(cfg.stage), true);
  set_group_grads(groups, frozen_groups(cfg.stage), false);

  torch::optim::Adam g_opt(collect_params(groups, trainable_groups(cfg.stage)),
                           adam_options(cfg));
  torch::optim::Adam d_opt(collect_params(groups, {"disc"}), adam_options(cfg));
  if (!from.gen_opt_blob.empty()) optimizer_from_blob(g_opt, from.gen_opt_blob);
  if (!from.disc_opt_blob.empty()) optimizer_from_blob(d_opt, from.disc_opt_blob);
  if (from.rng_state.defined()) {
    auto gen = at::detail::getDefaultCPUGenerator();
    gen.set_state(from.rng_state);
  }

  Loop loop{b,     data,  cfg,
            cfg.stage, out_dir, g_opt,
            d_opt, priors_for(cfg),
            make_frozen_perceptual(cfg.net, derive_seed(cfg.seed, "per"))};
  return loop.run(from.step);
}

}  // namespace rtc
