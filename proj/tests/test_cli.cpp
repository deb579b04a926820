#include "testing.h"

#include <unistd.h>

#include <filesystem>

#include "rtc/checkpoint.h"
#include "rtc/cli.h"
#include "rtc/degradation.h"
#include "rtc/evalkit.h"
#include "rtc/ptpm.h"
#include "rtc/synth.h"

using namespace rtc;
namespace fs = std::filesystem;

namespace {

fs::path cli_scratch(const std::string& tag) {
  auto dir = fs::temp_directory_path() /
             ("rtc_cli_" + tag + "_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string train_config_text() {
  json net{{"base_width", 8}, {"c_g", 12},          {"c_l", 6},
           {"lr_extra_blocks", 2}, {"disc_width", 8},
           {"codebook_size", 32},  {"prior_width", 8}};
  json cfg{{"stage", 1},   {"steps", 6},      {"batch_size", 2},
           {"hr_patch", 32}, {"lr", 1e-3},    {"seed", 9},
           {"net", net},   {"revive_every", 5}, {"log_every", 5}};
  return cfg.dump();
}

}  // namespace

TEST_CASE("command parsing") {
  CHECK_THROWS_AS(parse_command({}), ConfigError);
  CHECK_THROWS_AS(parse_command({"bogus"}), ConfigError);
  CHECK_THROWS_AS(parse_command({"degrade", "--frobnicate", "1"}),
                  ConfigError);
  CHECK_THROWS_AS(parse_command({"degrade", "--in"}), ConfigError);
  CHECK_THROWS_AS(parse_command({"degrade", "stray"}), ConfigError);
  CHECK_THROWS_AS(parse_command({"degrade", "--seed", "abc"}), ConfigError);
  CHECK_THROWS_AS(parse_command({"degrade", "--set", "novalue"}), ConfigError);
  CHECK_THROWS_AS(
      parse_command({"degrade", "--in", "a.png", "--in", "b.png"}),
      ConfigError);

  auto s = parse_command({"train", "--config", "c.json", "--seed", "11",
                          "--out", "runs", "--set", "net.c_g=24", "--set",
                          "lr=0.01", "--stage", "2"});
  CHECK(s.command == "train");
  CHECK(s.config_path == "c.json");
  CHECK(s.out_dir == "runs");
  CHECK(s.seed == 11);
  CHECK(s.seed_set);
  CHECK(s.overrides.size() == 2);
  CHECK(s.overrides[0].first == "net.c_g");
  CHECK(s.extras.at("stage") == "2");
}

TEST_CASE("dotted config overrides") {
  json cfg{{"lr", 1e-4}, {"net", {{"c_g", 12}}}};

  apply_override(cfg, "lr", "0.01");
  CHECK(cfg.at("lr") == 0.01);

  apply_override(cfg, "net.c_g", "24");
  CHECK(cfg.at("net").at("c_g") == 24);

  apply_override(cfg, "loss.use_adversarial", "false");
  CHECK(cfg.at("loss").at("use_adversarial") == false);

  apply_override(cfg, "ptpm_net", "models/prior.rtcp");
  CHECK(cfg.at("ptpm_net") == "models/prior.rtcp");

  CHECK_THROWS_AS(apply_override(cfg, "lr.nested", "1"), ConfigError);
  CHECK_THROWS_AS(apply_override(cfg, "", "1"), ConfigError);
  CHECK_THROWS_AS(apply_override(cfg, "a..b", "1"), ConfigError);
}

TEST_CASE("degrade command matches the api") {
  auto dir = cli_scratch("degrade");
  auto hr = toy_corpus(1, 32, 61)[0];
  auto hr_path = (dir / "hr.png").string();
  auto lr_path = (dir / "out" / "lr.png").string();
  save_png(hr, hr_path);

  int code = dispatch({"degrade", "--in", hr_path, "--out", lr_path, "--seed",
                       "77"});
  CHECK(code == 0);

  auto lr = load_png(lr_path);
  CHECK(lr.height() == 8);
  CHECK(lr.width() == 8);

  DegradationConfig dc;
  dc.seed = 77;
  auto api_lr = degrade(load_png(hr_path), dc);
  CHECK(torch::equal(lr.pixels, quantize8(api_lr.pixels)));

  auto snap = json::parse(read_file((dir / "out" / "resolved_config.json").string()));
  CHECK(snap.at("command") == "degrade");
  CHECK(snap.at("config").at("seed") == 77);
  CHECK(snap.at("flags").at("in") == hr_path);

  CHECK(dispatch({"degrade", "--in", (dir / "absent.png").string(), "--out",
                  lr_path}) == 1);
}

TEST_CASE("analyze-confusion command matches the api") {
  auto dir = cli_scratch("confusion");
  auto imgs = toy_corpus(2, 32, 5);
  fs::create_directories(dir / "hr");
  for (size_t i = 0; i < imgs.size(); ++i)
    save_png(imgs[i], (dir / "hr" / ("img" + std::to_string(i) + ".png")).string());

  int code = dispatch({"analyze-confusion", "--hr", (dir / "hr").string(),
                       "--patch", "16", "--seed", "9", "--out",
                       (dir / "out").string()});
  CHECK(code == 0);

  auto from_cli = json::parse(read_file((dir / "out" / "confusion.json").string()));

  DegradationConfig dc;
  dc.seed = 9;
  std::vector<ImageBuffer> loaded;
  loaded.push_back(load_png((dir / "hr" / "img0.png").string()));
  loaded.push_back(load_png((dir / "hr" / "img1.png").string()));
  auto direct = confusion_analysis(loaded, dc, 16);

  CHECK(from_cli == direct.to_json());
  CHECK(from_cli.at("mismatch_rate") == direct.mismatch_rate);
}

TEST_CASE("patch prior pipeline commands") {
  auto dir = cli_scratch("patches");
  auto patches = (dir / "patches").string();

  CHECK(dispatch({"make-patches", "--out", patches, "--seed", "4", "--set",
                  "scenes=3", "--set", "scene_size=64"}) == 0);
  REQUIRE(fs::exists(fs::path(patches) / "manifest.txt"));
  auto data = load_patch_dataset(patches);
  CHECK(data.size() > 0);

  SUBCASE("sharpness filter drops flat patches") {
    auto strict = (dir / "strict").string();
    CHECK(dispatch({"make-patches", "--out", strict, "--seed", "4", "--set",
                    "scenes=3", "--set", "scene_size=64", "--sharpness",
                    "1e9"}) == 2);
    auto mild = (dir / "mild").string();
    CHECK(dispatch({"make-patches", "--out", mild, "--seed", "4", "--set",
                    "scenes=3", "--set", "scene_size=64", "--sharpness",
                    "1e-6"}) == 0);
    CHECK(load_patch_dataset(mild).size() <= data.size());
  }

  SUBCASE("pretrain, export, remap") {
    auto prior = (dir / "prior").string();
    CHECK(dispatch({"pretrain-prior", "--data", patches, "--out", prior,
                    "--seed", "3", "--set", "epochs=1", "--set",
                    "batch_size=16", "--set", "prior_width=8"}) == 0);
    REQUIRE(fs::exists(fs::path(prior) / "prior.rtcp"));
    auto report = json::parse(
        read_file((fs::path(prior) / "pretrain_report.json").string()));
    CHECK(report.contains("val_accuracy"));
    CHECK(report.at("steps").get<int64_t>() > 0);

    auto emb = (dir / "emb").string();
    CHECK(dispatch({"export-embeddings", "--data", patches, "--net",
                    (fs::path(prior) / "prior.rtcp").string(), "--out",
                    emb}) == 0);
    auto csv = read_file((fs::path(emb) / "embeddings.csv").string());
    CHECK(csv.rfind("source_id,label,x,y,q", 0) == 0);
    CHECK((size_t)std::count(csv.begin(), csv.end(), '\n') == data.size() + 1);

    auto lm_path = (dir / "identity.json").string();
    save_label_map(lm_path, LabelMap::identity(kSynthClasses));
    auto remapped = (dir / "remapped").string();
    CHECK(dispatch({"remap-labels", "--data", patches, "--map", lm_path,
                    "--out", remapped}) == 0);
    auto back = load_patch_dataset(remapped);
    REQUIRE(back.size() == data.size());
    for (size_t i = 0; i < back.size(); ++i)
      CHECK(back[i].label == data[i].label);
  }
}

TEST_CASE("train, infer, eval, ablate, stats commands") {
  auto dir = cli_scratch("train");
  auto cfg_path = (dir / "tc.json").string();
  write_file_atomic(cfg_path, train_config_text());

  auto run1 = (dir / "run1").string();
  CHECK(dispatch({"train", "--config", cfg_path, "--out", run1, "--toy-count",
                  "4", "--toy-size", "48"}) == 0);
  REQUIRE(fs::exists(fs::path(run1) / "latest.ckpt"));
  CHECK(load_checkpoint((fs::path(run1) / "latest.ckpt").string()).stage == 1);

  auto run2 = (dir / "run2").string();
  CHECK(dispatch({"train", "--config", cfg_path, "--stage", "2", "--resume",
                  (fs::path(run1) / "latest.ckpt").string(), "--out", run2,
                  "--toy-count", "4", "--toy-size", "48"}) == 0);
  auto ck2_path = (fs::path(run2) / "latest.ckpt").string();
  auto ck2 = load_checkpoint(ck2_path);
  CHECK(ck2.stage == 2);
  CHECK(ck2.local_codebook_trained);

  auto imgs = toy_corpus(2, 48, 88);
  fs::create_directories(dir / "hr");
  fs::create_directories(dir / "lr");
  DegradationConfig dc;
  dc.seed = 6;
  std::vector<EvalPair> pairs;
  for (size_t i = 0; i < imgs.size(); ++i) {
    auto lr = degrade_indexed(imgs[i], dc, (uint64_t)i);
    auto name = "img" + std::to_string(i) + ".png";
    save_png(imgs[i], (dir / "hr" / name).string());
    save_png(lr, (dir / "lr" / name).string());
    pairs.push_back({load_png((dir / "lr" / name).string()),
                     load_png((dir / "hr" / name).string())});
  }

  SUBCASE("infer writes a 4x png") {
    auto sr_path = (dir / "sr.png").string();
    CHECK(dispatch({"infer", "--ckpt", ck2_path, "--in",
                    (dir / "lr" / "img0.png").string(), "--out", sr_path}) == 0);
    auto sr = load_png(sr_path);
    CHECK(sr.height() == 48);
    CHECK(sr.width() == 48);
  }

  SUBCASE("eval matches the api") {
    auto out = (dir / "eval").string();
    CHECK(dispatch({"eval", "--ckpt", ck2_path, "--lr", (dir / "lr").string(),
                    "--hr", (dir / "hr").string(), "--out", out}) == 0);
    auto report = json::parse(read_file((fs::path(out) / "report.json").string()));
    CHECK(report.at("image_count") == 2);

    auto b = ModelBundle::create(ck2.net_cfg, 0);
    apply_checkpoint(b, ck2);
    auto direct = evaluate(b, pairs);
    CHECK(report == direct.to_json());
  }

  SUBCASE("ablate-local is seed deterministic") {
    auto outA = (dir / "ablA").string();
    auto outB = (dir / "ablB").string();
    CHECK(dispatch({"ablate-local", "--ckpt", ck2_path, "--lr",
                    (dir / "lr").string(), "--hr", (dir / "hr").string(),
                    "--out", outA, "--seed", "3"}) == 0);
    CHECK(dispatch({"ablate-local", "--ckpt", ck2_path, "--lr",
                    (dir / "lr").string(), "--hr", (dir / "hr").string(),
                    "--out", outB, "--seed", "3"}) == 0);
    auto a = read_file((fs::path(outA) / "ablation.json").string());
    auto b = read_file((fs::path(outB) / "ablation.json").string());
    CHECK(a == b);
    auto parsed = json::parse(a);
    CHECK(parsed.contains("normal"));
    CHECK(parsed.at("noisy_local").at("image_count") == 2);
  }

  SUBCASE("codebook stats") {
    auto out = (dir / "cbs").string();
    CHECK(dispatch({"codebook-stats", "--ckpt", ck2_path, "--out", out}) == 0);
    auto stats = json::parse(
        read_file((fs::path(out) / "codebook_stats.json").string()));
    CHECK(stats.at("local_codebook_trained") == true);
    CHECK(stats.at("global").at("size") == 32);
    CHECK(fs::exists(fs::path(out) / "global_codebook.csv"));
    CHECK(fs::exists(fs::path(out) / "local_codebook.csv"));
  }

  SUBCASE("exit codes") {
    CHECK(dispatch({"train", "--config", cfg_path, "--out",
                    (dir / "bad").string(), "--set", "lr=-1"}) == 2);
    CHECK(dispatch({"train", "--config", cfg_path, "--stage", "2", "--out",
                    (dir / "bad").string()}) == 2);
    CHECK(dispatch({"train", "--config", cfg_path, "--stage", "1", "--resume",
                    ck2_path, "--out", (dir / "bad").string()}) == 2);
    CHECK(dispatch({"infer", "--ckpt", (dir / "absent.ckpt").string(), "--in",
                    (dir / "lr" / "img0.png").string(), "--out",
                    (dir / "x.png").string()}) == 1);
    CHECK(dispatch({"eval", "--ckpt", ck2_path, "--lr",
                    (dir / "empty").string(), "--hr", (dir / "hr").string(),
                    "--out", (dir / "bad").string()}) == 2);
  }
}
