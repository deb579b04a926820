#include "rtc/ptpm.h"

#include <algorithm>
#include <filesystem>
#include <random>
#include <set>
#include <sstream>

namespace rtc {

namespace fs = std::filesystem;
namespace F = torch::nn::functional;

void LabelMap::validate() const {
  if (class_count <= 0) throw ConfigError("label map: class_count must be positive");
  std::set<int64_t> hit;
  for (const auto& [src, dst] : original_to_reorganized) {
    if (dst < 0 || dst >= class_count)
      throw ConfigError("label map: " + std::to_string(src) + " -> " +
                        std::to_string(dst) + " falls outside [0, " +
                        std::to_string(class_count) + ")");
    hit.insert(dst);
  }
  if ((int64_t)hit.size() != class_count)
    throw ConfigError("label map: not surjective, " + std::to_string(hit.size()) +
                      " of " + std::to_string(class_count) + " outputs reached");
}

LabelMap LabelMap::identity(int64_t n) {
  LabelMap lm;
  lm.class_count = n;
  for (int64_t i = 0; i < n; ++i) lm.original_to_reorganized[i] = i;
  return lm;
}

LabelMap LabelMap::from_json(const json& j) {
  expect_keys(j, "label map", {"class_count", "map"});
  LabelMap lm;
  lm.class_count = j.at("class_count").get<int64_t>();
  for (const auto& [k, v] : j.at("map").items())
    lm.original_to_reorganized[std::stoll(k)] = v.get<int64_t>();
  lm.validate();
  return lm;
}

json LabelMap::to_json() const {
  json m = json::object();
  for (const auto& [src, dst] : original_to_reorganized)
    m[std::to_string(src)] = dst;
  return json{{"class_count", class_count}, {"map", m}};
}

std::vector<PatchRecord> generate_patches(const ImageBuffer& img,
                                          const torch::Tensor& mask,
                                          double gamma, int64_t patch_size,
                                          const std::string& source_id) {
  check_image(img);
  if (gamma <= 0.5)
    throw ConfigError("gamma must exceed 0.5 to keep the dominant label unique");
  if (gamma >= 1.0) throw ConfigError("gamma must be below 1");
  if (patch_size < 1) throw ConfigError("patch_size must be positive");
  if (mask.dim() != 2 || mask.size(0) != img.height() || mask.size(1) != img.width())
    throw ShapeError("mask does not align with the image");
  if (mask.scalar_type() != torch::kInt64)
    throw ShapeError("mask must be int64");

  auto m = mask.contiguous();
  auto acc = m.accessor<int64_t, 2>();
  const int64_t area = patch_size * patch_size;
  std::vector<PatchRecord> out;
  for (int64_t r = 0; r + patch_size <= img.height(); r += patch_size) {
    for (int64_t c = 0; c + patch_size <= img.width(); c += patch_size) {
      std::map<int64_t, int64_t> counts;
      for (int64_t i = 0; i < patch_size; ++i)
        for (int64_t j = 0; j < patch_size; ++j) ++counts[acc[r + i][c + j]];
      int64_t winners = 0;
      PatchRecord rec;
      for (const auto& [label, n] : counts) {
        if ((double)n / (double)area > gamma) {
          ++winners;
          rec.label = label;
          rec.coverage = (double)n / (double)area;
        }
      }
      if (winners == 0) continue;
      if (winners > 1)
        throw AnalysisError("two labels exceed gamma > 0.5, mask is inconsistent");
      rec.patch.pixels = img.pixels
                             .index({torch::indexing::Slice(r, r + patch_size),
                                     torch::indexing::Slice(c, c + patch_size)})
                             .contiguous();
      check_image(rec.patch, 1);
      rec.source_id = source_id;
      out.push_back(std::move(rec));
    }
  }
  return out;
}

PriorLossParts prior_loss(const torch::Tensor& q, const torch::Tensor& labels,
                          const torch::Tensor& logits, double tau,
                          double lambda, uint64_t seed) {
  if (q.dim() != 2 || logits.dim() != 2 || labels.dim() != 1)
    throw ShapeError("prior_loss wants q BxD, logits BxK, labels B");
  const int64_t b = q.size(0);
  if (labels.size(0) != b || logits.size(0) != b)
    throw ShapeError("prior_loss batch sizes disagree");
  if (tau <= 0) throw ConfigError("tau must be positive");

  PriorLossParts parts;
  parts.ce = F::cross_entropy(logits, labels);

  auto lab = labels.contiguous();
  auto la = lab.accessor<int64_t, 1>();
  auto sim = -torch::cdist(q, q) / tau;

  std::mt19937_64 rng(seed);
  std::vector<torch::Tensor> terms;
  for (int64_t i = 0; i < b; ++i) {
    std::vector<int64_t> pos, neg;
    for (int64_t j = 0; j < b; ++j) {
      if (j == i) continue;
      (la[j] == la[i] ? pos : neg).push_back(j);
    }
    if (pos.empty()) continue;
    int64_t p = pos[std::uniform_int_distribution<size_t>(0, pos.size() - 1)(rng)];
    std::vector<int64_t> pool{p};
    pool.insert(pool.end(), neg.begin(), neg.end());
    auto sel = sim.index({torch::tensor(i), torch::tensor(pool)});
    terms.push_back(-(sel[0] - sel.logsumexp(0)));
  }
  if (terms.empty()) {
    log_warn("prior_loss: no anchor has a positive, contrastive term is 0");
    parts.nce = torch::zeros({}, q.options());
  } else {
    parts.nce = torch::stack(terms).mean();
  }
  parts.total = parts.ce + lambda * parts.nce;
  return parts;
}

void PretrainConfig::validate() const {
  if (epochs < 1 || batch_size < 2 || prior_width < 1)
    throw ConfigError("pretrain: epochs >= 1, batch_size >= 2, prior_width >= 1");
  if (lr <= 0 || tau <= 0 || lambda < 0)
    throw ConfigError("pretrain: lr and tau positive, lambda non-negative");
  if (val_fraction <= 0 || val_fraction >= 1)
    throw ConfigError("pretrain: val_fraction in (0,1)");
}

PretrainConfig PretrainConfig::from_json(const json& j) {
  expect_keys(j, "pretrain", {"epochs", "batch_size", "lr", "tau", "lambda",
                              "val_fraction", "prior_width", "seed"});
  PretrainConfig c;
  if (j.contains("epochs")) c.epochs = j.at("epochs").get<int64_t>();
  if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<int64_t>();
  if (j.contains("lr")) c.lr = j.at("lr").get<double>();
  if (j.contains("tau")) c.tau = j.at("tau").get<double>();
  if (j.contains("lambda")) c.lambda = j.at("lambda").get<double>();
  if (j.contains("val_fraction")) c.val_fraction = j.at("val_fraction").get<double>();
  if (j.contains("prior_width")) c.prior_width = j.at("prior_width").get<int64_t>();
  if (j.contains("seed")) c.seed = j.at("seed").get<uint64_t>();
  c.validate();
  return c;
}

json PretrainConfig::to_json() const {
  return json{{"epochs", epochs},   {"batch_size", batch_size},
              {"lr", lr},           {"tau", tau},
              {"lambda", lambda},   {"val_fraction", val_fraction},
              {"prior_width", prior_width}, {"seed", seed}};
}

namespace {

int64_t class_count_of(const std::vector<PatchRecord>& data) {
  int64_t hi = -1;
  for (const auto& r : data) {
    if (r.label < 0) throw ConfigError("negative patch label");
    hi = std::max(hi, r.label);
  }
  return hi + 1;
}

torch::Tensor stack_patches(const std::vector<PatchRecord>& data,
                            const std::vector<int64_t>& idx) {
  std::vector<ImageBuffer> imgs;
  imgs.reserve(idx.size());
  for (auto i : idx) imgs.push_back(data[i].patch);
  return batch_to_nchw(imgs);
}

torch::Tensor stack_labels(const std::vector<PatchRecord>& data,
                           const std::vector<int64_t>& idx) {
  std::vector<int64_t> ls;
  ls.reserve(idx.size());
  for (auto i : idx) ls.push_back(data[i].label);
  return torch::tensor(ls, torch::kInt64);
}

}  // namespace

PretrainResult pretrain_prior(const std::vector<PatchRecord>& data,
                              const PretrainConfig& cfg) {
  cfg.validate();
  if (data.empty()) throw ConfigError("pretrain: empty dataset");

  std::vector<std::string> ids;
  for (const auto& r : data) ids.push_back(r.source_id);
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  std::mt19937_64 rng(derive_seed(cfg.seed, "split"));
  std::shuffle(ids.begin(), ids.end(), rng);
  size_t n_val = std::max<size_t>(1, (size_t)(cfg.val_fraction * ids.size()));
  if (n_val >= ids.size())
    throw ConfigError("pretrain: split leaves no training sources");
  std::set<std::string> val_ids(ids.begin(), ids.begin() + n_val);

  std::vector<int64_t> train_idx, val_idx;
  for (size_t i = 0; i < data.size(); ++i)
    (val_ids.count(data[i].source_id) ? val_idx : train_idx).push_back((int64_t)i);
  if (train_idx.empty() || val_idx.empty())
    throw ConfigError("pretrain: a split side is empty");

  NetConfig nc;
  nc.prior_width = cfg.prior_width;
  nc.prior_classes = class_count_of(data);
  torch::manual_seed(derive_seed(cfg.seed, "prior_init"));
  PriorNet net(nc);
  net->train();
  torch::optim::Adam opt(net->parameters(), torch::optim::AdamOptions(cfg.lr));

  PretrainResult res;
  int64_t step = 0;
  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto order = train_idx;
    std::mt19937_64 erng(derive_seed(cfg.seed, "order", (uint64_t)epoch));
    std::shuffle(order.begin(), order.end(), erng);
    for (size_t at = 0; at < order.size(); at += cfg.batch_size) {
      size_t end = std::min(order.size(), at + (size_t)cfg.batch_size);
      if (end - at < 2) break;  // a lone tail patch cannot form a batch
      std::vector<int64_t> batch(order.begin() + at, order.begin() + end);
      auto x = stack_patches(data, batch);
      auto y = stack_labels(data, batch);
      auto out = net->forward(x);
      auto loss = prior_loss(out.q, y, out.logits, cfg.tau, cfg.lambda,
                             derive_seed(cfg.seed, "pos", (uint64_t)step));
      opt.zero_grad();
      loss.total.backward();
      opt.step();
      res.loss_curve.push_back(loss.total.item<double>());
      ++step;
    }
  }

  net->eval();
  torch::NoGradGuard ng;
  int64_t hits = 0;
  for (size_t at = 0; at < val_idx.size(); at += cfg.batch_size) {
    size_t end = std::min(val_idx.size(), at + (size_t)cfg.batch_size);
    std::vector<int64_t> batch(val_idx.begin() + at, val_idx.begin() + end);
    auto out = net->forward(stack_patches(data, batch));
    auto pred = out.logits.argmax(1);
    hits += (pred == stack_labels(data, batch)).sum().item<int64_t>();
  }
  res.val_accuracy = (double)hits / (double)val_idx.size();
  res.net = net;
  res.net_cfg = nc;
  log_info("pretrain: val accuracy " + std::to_string(res.val_accuracy) + " over " +
           std::to_string(val_idx.size()) + " patches");
  return res;
}

std::vector<EmbeddingRow> export_embeddings(PriorNet& net,
                                            const std::vector<PatchRecord>& data) {
  net->eval();
  torch::NoGradGuard ng;
  std::vector<EmbeddingRow> rows(data.size());
  std::vector<torch::Tensor> qs;
  const size_t chunk = 64;
  for (size_t at = 0; at < data.size(); at += chunk) {
    size_t end = std::min(data.size(), at + chunk);
    std::vector<int64_t> idx;
    for (size_t i = at; i < end; ++i) idx.push_back((int64_t)i);
    qs.push_back(net->forward(stack_patches(data, idx)).q);
  }
  if (data.empty()) return rows;
  auto q = torch::cat(qs, 0);

  // PCA projection; sign-fixed so reruns agree
  auto centered = q - q.mean(0, true);
  auto [u, s, vh] = torch::linalg_svd(centered, false);
  auto planes = vh.index({torch::indexing::Slice(0, std::min<int64_t>(2, vh.size(0)))});
  for (int64_t k = 0; k < planes.size(0); ++k) {
    auto row = planes[k];
    auto peak = row.abs().argmax().item<int64_t>();
    if (row[peak].item<float>() < 0) planes[k] = -row;
  }
  auto xy = centered.matmul(planes.t());

  auto qa = q.contiguous();
  for (size_t i = 0; i < data.size(); ++i) {
    rows[i].source_id = data[i].source_id;
    rows[i].label = data[i].label;
    auto v = qa[(int64_t)i];
    rows[i].q.assign(v.data_ptr<float>(), v.data_ptr<float>() + v.numel());
    rows[i].x = xy[(int64_t)i][0].item<double>();
    rows[i].y = planes.size(0) > 1 ? xy[(int64_t)i][1].item<double>() : 0.0;
  }
  return rows;
}

void write_embeddings_csv(const std::string& path,
                          const std::vector<EmbeddingRow>& rows) {
  std::ostringstream out;
  out << "source_id,label,x,y,q\n";
  out.precision(9);
  for (const auto& r : rows) {
    out << r.source_id << ',' << r.label << ',' << r.x << ',' << r.y;
    for (float v : r.q) out << ',' << v;
    out << '\n';
  }
  write_file_atomic(path, out.str());
}

std::vector<PatchRecord> remap_labels(std::vector<PatchRecord> data,
                                      const LabelMap& lm) {
  lm.validate();
  std::set<int64_t> missing;
  for (const auto& r : data)
    if (!lm.original_to_reorganized.count(r.label)) missing.insert(r.label);
  if (!missing.empty()) {
    std::ostringstream msg;
    msg << "label map misses:";
    for (auto l : missing) msg << ' ' << l;
    throw ConfigError(msg.str());
  }
  for (auto& r : data) r.label = lm.original_to_reorganized.at(r.label);
  return data;
}

void freeze_prior(PriorNet& net) {
  net->eval();
  for (auto& p : net->parameters()) p.set_requires_grad(false);
}

PriorPack make_frozen_priors(const NetConfig& cfg, uint64_t seed) {
  PriorPack pack;
  pack.cfg = cfg;
  torch::manual_seed(derive_seed(seed, "phi_img"));
  pack.phi_img = PriorNet(cfg);
  torch::manual_seed(derive_seed(seed, "phi_p"));
  pack.phi_p = PriorNet(cfg);
  freeze_prior(pack.phi_img);
  freeze_prior(pack.phi_p);
  return pack;
}

namespace {

// forward = F_hat; backward feeds both the encoder (identity on F) and the
// codebook (through the gathered entries)
torch::Tensor reg_feed(const QuantizedMap& qm) {
  return qm.quantized + qm.pre_quant - qm.pre_quant.detach();
}

torch::Tensor flat_l2(const torch::Tensor& a, const torch::Tensor& b) {
  if (a.sizes() != b.sizes())
    throw ConfigError("prior head output does not match the prior activation");
  return (a - b).flatten(1).norm(2, 1).mean();
}

}  // namespace

torch::Tensor ptpm_reg_loss(const torch::Tensor& i_hr_bchw,
                            const ScaleQuant& q_hr, const ScaleQuant& q_lr,
                            PriorPack& priors, torch::nn::Conv2d& head_g,
                            torch::nn::Conv2d& head_l) {
  torch::Tensor tap_g, tap_l;
  {
    torch::NoGradGuard ng;
    auto img_out = priors.phi_img->forward(i_hr_bchw);
    tap_g = img_out.tap_global.detach();
    auto p_out = priors.phi_p->forward(i_hr_bchw);
    tap_l = p_out.tap_local.detach();
  }

  auto total = torch::zeros({}, i_hr_bchw.options());
  for (const auto* sq : {&q_hr, &q_lr}) {
    if (!sq->global_active())
      throw ConfigError("ptpm_reg_loss wants the global scale quantized");
    total = total + flat_l2(tap_g, head_g->forward(reg_feed(sq->global)));
    if (sq->local_active())
      total = total + flat_l2(tap_l, head_l->forward(reg_feed(sq->local)));
  }
  return total;
}

void save_patch_dataset(const std::string& dir,
                        const std::vector<PatchRecord>& recs) {
  fs::create_directories(dir);
  std::ostringstream manifest;
  for (size_t i = 0; i < recs.size(); ++i) {
    char name[32];
    snprintf(name, sizeof(name), "patch_%06zu.png", i);
    save_png(recs[i].patch, (fs::path(dir) / name).string());
    manifest << name << '\t' << recs[i].label << '\t';
    char cov[32];
    snprintf(cov, sizeof(cov), "%.10g", recs[i].coverage);
    manifest << cov << '\t' << recs[i].source_id << '\n';
  }
  write_file_atomic((fs::path(dir) / "manifest.txt").string(), manifest.str());
}

std::vector<PatchRecord> load_patch_dataset(const std::string& dir) {
  auto manifest = read_file((fs::path(dir) / "manifest.txt").string());
  std::istringstream in(manifest);
  std::vector<PatchRecord> recs;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string name, label, cov, src;
    if (!std::getline(ls, name, '\t') || !std::getline(ls, label, '\t') ||
        !std::getline(ls, cov, '\t') || !std::getline(ls, src))
      throw IoError("malformed manifest line: " + line);
    PatchRecord r;
    r.patch = load_png((fs::path(dir) / name).string());
    r.label = std::stoll(label);
    r.coverage = std::stod(cov);
    r.source_id = src;
    recs.push_back(std::move(r));
  }
  return recs;
}

void save_label_map(const std::string& path, const LabelMap& lm) {
  write_file_atomic(path, lm.to_json().dump(2) + "\n");
}

LabelMap load_label_map(const std::string& path) {
  return LabelMap::from_json(json::parse(read_file(path)));
}

}  // namespace rtc
