#include "rtc/cli.h"

#include <filesystem>
#include <iostream>
#include <set>

#include "rtc/degradation.h"
#include "rtc/evalkit.h"
#include "rtc/ptpm.h"
#include "rtc/synth.h"
#include "rtc/trainer.h"

namespace rtc {

namespace fs = std::filesystem;
namespace F = torch::nn::functional;

namespace {

const std::map<std::string, std::set<std::string>>& command_flags() {
  static const std::map<std::string, std::set<std::string>> table = {
      {"make-patches", {"sharpness"}},
      {"pretrain-prior", {"data"}},
      {"export-embeddings", {"data", "net"}},
      {"remap-labels", {"data", "map"}},
      {"degrade", {"in"}},
      {"analyze-confusion", {"hr", "patch"}},
      {"train", {"stage", "resume", "data", "toy-count", "toy-size"}},
      {"infer", {"ckpt", "in"}},
      {"eval", {"ckpt", "lr", "hr", "dump"}},
      {"ablate-local", {"ckpt", "lr", "hr"}},
      {"codebook-stats", {"ckpt"}},
  };
  return table;
}

std::string usage() {
  std::string u = "usage: rtcnet <command> [--config c.json] [--seed N] "
                  "[--out dir] [--set key=value]...\ncommands:";
  for (const auto& [name, flags] : command_flags()) u += " " + name;
  return u;
}

int64_t to_int(const std::string& flag, const std::string& text) {
  try {
    size_t used = 0;
    int64_t v = std::stoll(text, &used);
    if (used == text.size()) return v;
  } catch (...) {
  }
  throw ConfigError("--" + flag + " wants an integer, got '" + text + "'");
}

double to_real(const std::string& flag, const std::string& text) {
  try {
    size_t used = 0;
    double v = std::stod(text, &used);
    if (used == text.size()) return v;
  } catch (...) {
  }
  throw ConfigError("--" + flag + " wants a number, got '" + text + "'");
}

std::string need(const CommandSpec& s, const std::string& flag) {
  auto it = s.extras.find(flag);
  if (it == s.extras.end())
    throw ConfigError(s.command + " requires --" + flag);
  return it->second;
}

std::string need_out(const CommandSpec& s) {
  if (s.out_dir.empty()) throw ConfigError(s.command + " requires --out");
  return s.out_dir;
}

json load_config_json(const CommandSpec& s) {
  json j = json::object();
  if (!s.config_path.empty()) {
    if (!fs::exists(s.config_path))
      throw ConfigError("config file not found: " + s.config_path);
    try {
      j = json::parse(read_file(s.config_path));
    } catch (const json::exception& e) {
      throw ConfigError("config is not valid JSON: " + std::string(e.what()));
    }
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
  }
  for (const auto& [k, v] : s.overrides) apply_override(j, k, v);
  if (s.seed_set) j["seed"] = s.seed;
  return j;
}

// one file per run, beside the outputs, enough to replay the command
void write_snapshot(const std::string& dir, const CommandSpec& s,
                    const json& resolved) {
  fs::create_directories(dir);
  json flags = json::object();
  for (const auto& [k, v] : s.extras) flags[k] = v;
  json snap{{"command", s.command},
            {"config", resolved},
            {"flags", flags},
            {"out", s.out_dir}};
  write_file_atomic((fs::path(dir) / "resolved_config.json").string(),
                    snap.dump(2) + "\n");
}

std::vector<ImageBuffer> load_image_dir(const std::string& dir) {
  if (!fs::is_directory(dir))
    throw ConfigError("not a directory: " + dir);
  std::vector<std::string> paths;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.path().extension() == ".png") paths.push_back(entry.path().string());
  std::sort(paths.begin(), paths.end());
  if (paths.empty()) throw ConfigError("no .png files in " + dir);
  std::vector<ImageBuffer> out;
  out.reserve(paths.size());
  for (const auto& p : paths) out.push_back(load_png(p));
  return out;
}

ModelBundle bundle_from(const Checkpoint& ck) {
  auto b = ModelBundle::create(ck.net_cfg, 0);
  apply_checkpoint(b, ck);
  return b;
}

std::string beside(const std::string& file) {
  auto parent = fs::path(file).parent_path();
  return parent.empty() ? std::string(".") : parent.string();
}

double laplacian_variance(const ImageBuffer& img) {
  auto gray = img.pixels.mean(2).unsqueeze(0).unsqueeze(0);
  auto k = torch::tensor({0.f, 1.f, 0.f, 1.f, -4.f, 1.f, 0.f, 1.f, 0.f})
               .reshape({1, 1, 3, 3});
  auto r = F::conv2d(gray, k);
  return r.var(false).item<double>();
}

void run_make_patches(const CommandSpec& s) {
  auto cfg = load_config_json(s);
  expect_keys(cfg, "make-patches",
              {"scenes", "scene_size", "cell", "gamma", "patch",
               "sharpness_threshold", "seed"});
  int64_t scenes = cfg.value("scenes", 6);
  int64_t scene_size = cfg.value("scene_size", 96);
  int64_t cell = cfg.value("cell", 16);
  double gamma = cfg.value("gamma", 0.85);
  int64_t patch = cfg.value("patch", 16);
  double sharpness = cfg.value("sharpness_threshold", 0.0);
  uint64_t seed = cfg.value("seed", 0);
  if (auto it = s.extras.find("sharpness"); it != s.extras.end())
    sharpness = to_real("sharpness", it->second);
  if (scenes < 1) throw ConfigError("make-patches wants scenes >= 1");

  std::vector<PatchRecord> kept;
  int64_t dropped = 0;
  for (int64_t i = 0; i < scenes; ++i) {
    auto scene = synth_scene(scene_size, scene_size, cell,
                             derive_seed(seed, "scene", (uint64_t)i));
    auto got = generate_patches(scene.image, scene.mask, gamma, patch,
                                "scene_" + std::to_string(i));
    for (auto& rec : got) {
      if (sharpness > 0.0 && laplacian_variance(rec.patch) < sharpness) {
        ++dropped;
        continue;
      }
      kept.push_back(std::move(rec));
    }
  }
  if (kept.empty()) throw ConfigError("every patch was filtered out");

  auto out = need_out(s);
  save_patch_dataset(out, kept);
  json resolved{{"scenes", scenes},       {"scene_size", scene_size},
                {"cell", cell},           {"gamma", gamma},
                {"patch", patch},         {"sharpness_threshold", sharpness},
                {"seed", seed}};
  write_snapshot(out, s, resolved);
  std::cout << kept.size() << " patches from " << scenes << " scenes ("
            << dropped << " dropped by the sharpness filter)\n";
}

void run_pretrain_prior(const CommandSpec& s) {
  auto data = load_patch_dataset(need(s, "data"));
  auto cfg = PretrainConfig::from_json(load_config_json(s));
  auto result = pretrain_prior(data, cfg);

  auto out = need_out(s);
  fs::create_directories(out);
  save_prior_net((fs::path(out) / "prior.rtcp").string(), result.net,
                 result.net_cfg);
  json report{{"val_accuracy", result.val_accuracy},
              {"steps", result.loss_curve.size()},
              {"final_loss", result.loss_curve.back()}};
  write_file_atomic((fs::path(out) / "pretrain_report.json").string(),
                    report.dump(2) + "\n");
  write_snapshot(out, s, cfg.to_json());
  std::cout << "validation accuracy " << result.val_accuracy << " after "
            << result.loss_curve.size() << " steps\n";
}

void run_export_embeddings(const CommandSpec& s) {
  auto data = load_patch_dataset(need(s, "data"));
  auto [net, net_cfg] = load_prior_net(need(s, "net"));
  auto rows = export_embeddings(net, data);

  auto out = need_out(s);
  fs::create_directories(out);
  write_embeddings_csv((fs::path(out) / "embeddings.csv").string(), rows);
  write_snapshot(out, s, json{{"net_cfg", net_cfg.to_json()}});
  std::cout << rows.size() << " embeddings written\n";
}

void run_remap_labels(const CommandSpec& s) {
  auto data = load_patch_dataset(need(s, "data"));
  auto lm = load_label_map(need(s, "map"));
  auto remapped = remap_labels(std::move(data), lm);

  auto out = need_out(s);
  save_patch_dataset(out, remapped);
  write_snapshot(out, s, lm.to_json());
  std::cout << remapped.size() << " patches remapped to " << lm.class_count
            << " classes\n";
}

void run_degrade(const CommandSpec& s) {
  auto cfg = DegradationConfig::from_json(load_config_json(s));
  auto hr = load_png(need(s, "in"));
  auto lr = degrade(hr, cfg);

  auto out = need_out(s);
  fs::create_directories(beside(out));
  save_png(lr, out);
  write_snapshot(beside(out), s, cfg.to_json());
  std::cout << "degraded " << hr.width() << "x" << hr.height() << " -> "
            << lr.width() << "x" << lr.height() << "\n";
}

void run_analyze_confusion(const CommandSpec& s) {
  auto cfg = DegradationConfig::from_json(load_config_json(s));
  auto images = load_image_dir(need(s, "hr"));
  int64_t patch = 32;
  if (auto it = s.extras.find("patch"); it != s.extras.end())
    patch = to_int("patch", it->second);
  auto stats = confusion_analysis(images, cfg, patch);

  auto out = need_out(s);
  fs::create_directories(out);
  write_file_atomic((fs::path(out) / "confusion.json").string(),
                    stats.to_json().dump(2) + "\n");
  write_snapshot(out, s, cfg.to_json());
  std::cout << "mismatch rate " << stats.mismatch_rate << " over "
            << stats.patch_count << " patches\n";
}

void run_train(const CommandSpec& s) {
  auto cfg_json = load_config_json(s);
  if (auto it = s.extras.find("stage"); it != s.extras.end())
    cfg_json["stage"] = to_int("stage", it->second);
  auto cfg = TrainConfig::from_json(cfg_json);

  std::vector<ImageBuffer> data;
  if (auto it = s.extras.find("data"); it != s.extras.end()) {
    data = load_image_dir(it->second);
  } else {
    int64_t count = 16, size = 64;
    if (auto c = s.extras.find("toy-count"); c != s.extras.end())
      count = to_int("toy-count", c->second);
    if (auto z = s.extras.find("toy-size"); z != s.extras.end())
      size = to_int("toy-size", z->second);
    data = toy_corpus((int)count, size, derive_seed(cfg.seed, "corpus"));
  }

  auto out = need_out(s);
  Checkpoint result;
  if (auto it = s.extras.find("resume"); it != s.extras.end()) {
    auto from = load_checkpoint(it->second);
    auto b = ModelBundle::create(cfg.net, derive_seed(cfg.seed, "init"));
    if (from.stage == cfg.stage) {
      result = resume_train(b, from, data, cfg, out);
    } else if (from.stage == 1 && cfg.stage == 2) {
      result = train_stage2(b, from, data, cfg, out);
    } else {
      throw ConfigError("cannot start stage " + std::to_string(cfg.stage) +
                        " from a stage-" + std::to_string(from.stage) +
                        " checkpoint");
    }
  } else {
    if (cfg.stage != 1)
      throw ConfigError("stage 2 needs --resume with the stage-1 checkpoint");
    auto b = ModelBundle::create(cfg.net, derive_seed(cfg.seed, "init"));
    result = train_stage1(b, data, cfg, out);
  }

  write_snapshot(out, s, cfg.to_json());
  std::cout << "stage " << result.stage << " finished at step " << result.step
            << "; checkpoint " << (fs::path(out) / "latest.ckpt").string()
            << "\n";
}

void run_infer(const CommandSpec& s) {
  auto b = bundle_from(load_checkpoint(need(s, "ckpt")));
  auto lr = load_png(need(s, "in"));
  auto sr = forward_infer(b, lr);

  auto out = need_out(s);
  fs::create_directories(beside(out));
  save_png(sr, out);
  write_snapshot(beside(out), s, json::object());
  std::cout << lr.width() << "x" << lr.height() << " -> " << sr.width() << "x"
            << sr.height() << "\n";
}

std::vector<EvalPair> load_pairs(const CommandSpec& s) {
  auto lr = load_image_dir(need(s, "lr"));
  auto hr = load_image_dir(need(s, "hr"));
  if (lr.size() != hr.size())
    throw ConfigError("LR and HR directories hold different image counts");
  std::vector<EvalPair> pairs;
  for (size_t i = 0; i < lr.size(); ++i)
    pairs.push_back({std::move(lr[i]), std::move(hr[i])});
  return pairs;
}

void run_eval(const CommandSpec& s) {
  auto b = bundle_from(load_checkpoint(need(s, "ckpt")));
  auto pairs = load_pairs(s);
  auto out = need_out(s);
  std::string dump;
  if (auto it = s.extras.find("dump"); it != s.extras.end()) dump = it->second;

  auto report = evaluate(b, pairs, dump);
  fs::create_directories(out);
  write_file_atomic((fs::path(out) / "report.json").string(),
                    report.to_json().dump(2) + "\n");
  write_snapshot(out, s, json::object());
  std::cout << report.table();
}

void run_ablate_local(const CommandSpec& s) {
  auto b = bundle_from(load_checkpoint(need(s, "ckpt")));
  auto pairs = load_pairs(s);
  auto out = need_out(s);

  auto [normal, noisy] = local_noise_ablation(b, pairs, s.seed);
  fs::create_directories(out);
  json both{{"normal", normal.to_json()}, {"noisy_local", noisy.to_json()}};
  write_file_atomic((fs::path(out) / "ablation.json").string(),
                    both.dump(2) + "\n");
  write_snapshot(out, s, json{{"seed", s.seed}});
  std::cout << "normal mean psnr " << normal.mean_psnr
            << ", noisy-local mean psnr " << noisy.mean_psnr << "\n";
}

json codebook_summary(const Codebook& cb) {
  auto norms = cb.entries.norm(2, 1);
  return json{{"size", cb.size()},
              {"dim", cb.dim()},
              {"norm_min", norms.min().item<double>()},
              {"norm_mean", norms.mean().item<double>()},
              {"norm_max", norms.max().item<double>()}};
}

void run_codebook_stats(const CommandSpec& s) {
  auto ck = load_checkpoint(need(s, "ckpt"));
  auto b = bundle_from(ck);
  auto out = need_out(s);
  fs::create_directories(out);

  json stats{{"stage", ck.stage},
             {"step", ck.step},
             {"local_codebook_trained", ck.local_codebook_trained},
             {"global", codebook_summary(b.hc.global)},
             {"local", codebook_summary(b.hc.local)}};
  write_file_atomic((fs::path(out) / "codebook_stats.json").string(),
                    stats.dump(2) + "\n");
  dump_codebook_csv(b.hc.global,
                    (fs::path(out) / "global_codebook.csv").string());
  dump_codebook_csv(b.hc.local,
                    (fs::path(out) / "local_codebook.csv").string());
  write_snapshot(out, s, json::object());
  std::cout << stats.dump(2) << "\n";
}

}  // namespace

CommandSpec parse_command(const std::vector<std::string>& args) {
  if (args.empty()) throw ConfigError(usage());
  CommandSpec s;
  s.command = args[0];
  auto it = command_flags().find(s.command);
  if (it == command_flags().end())
    throw ConfigError("unknown command '" + s.command + "'\n" + usage());
  const auto& allowed = it->second;

  for (size_t i = 1; i < args.size(); ++i) {
    const auto& flag = args[i];
    if (flag.rfind("--", 0) != 0)
      throw ConfigError("expected a --flag, got '" + flag + "'");
    if (i + 1 >= args.size())
      throw ConfigError(flag + " is missing its value");
    const auto& value = args[++i];
    auto name = flag.substr(2);

    if (name == "config") {
      s.config_path = value;
    } else if (name == "out") {
      s.out_dir = value;
    } else if (name == "seed") {
      s.seed = (uint64_t)to_int("seed", value);
      s.seed_set = true;
    } else if (name == "set") {
      auto eq = value.find('=');
      if (eq == std::string::npos || eq == 0)
        throw ConfigError("--set wants key=value, got '" + value + "'");
      s.overrides.emplace_back(value.substr(0, eq), value.substr(eq + 1));
    } else if (allowed.count(name)) {
      if (s.extras.count(name))
        throw ConfigError(flag + " given more than once");
      s.extras[name] = value;
    } else {
      throw ConfigError(s.command + " does not take " + flag);
    }
  }
  return s;
}

void apply_override(json& cfg, const std::string& key, const std::string& value) {
  if (key.empty()) throw ConfigError("override key is empty");
  json parsed;
  try {
    parsed = json::parse(value);
  } catch (const json::exception&) {
    parsed = value;
  }

  json* cur = &cfg;
  size_t start = 0;
  while (true) {
    auto dot = key.find('.', start);
    auto part = key.substr(start, dot - start);
    if (part.empty()) throw ConfigError("bad override key '" + key + "'");
    if (dot == std::string::npos) {
      (*cur)[part] = parsed;
      return;
    }
    if (!cur->contains(part)) (*cur)[part] = json::object();
    cur = &cur->at(part);
    if (!cur->is_object())
      throw ConfigError("override key '" + key + "' crosses a non-object");
    start = dot + 1;
  }
}

int dispatch(const std::vector<std::string>& args) {
  try {
    auto s = parse_command(args);
    if (s.command == "make-patches") run_make_patches(s);
    else if (s.command == "pretrain-prior") run_pretrain_prior(s);
    else if (s.command == "export-embeddings") run_export_embeddings(s);
    else if (s.command == "remap-labels") run_remap_labels(s);
    else if (s.command == "degrade") run_degrade(s);
    else if (s.command == "analyze-confusion") run_analyze_confusion(s);
    else if (s.command == "train") run_train(s);
    else if (s.command == "infer") run_infer(s);
    else if (s.command == "eval") run_eval(s);
    else if (s.command == "ablate-local") run_ablate_local(s);
    else if (s.command == "codebook-stats") run_codebook_stats(s);
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const json::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace rtc
