#include "rtc/checkpoint.h"

#include <cstring>
#include <sstream>

#include <torch/serialize.h>

namespace rtc {

namespace {

constexpr char kMagic[8] = {'R', 'T', 'C', 'C', 'K', 'P', 'T', '1'};
constexpr char kPriorMagic[8] = {'R', 'T', 'C', 'P', 'R', 'I', 'R', '1'};

const char* dtype_name(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32: return "f32";
    case torch::kInt64: return "i64";
    case torch::kUInt8: return "u8";
    default: throw IoError("unsupported checkpoint dtype");
  }
}

torch::ScalarType dtype_of(const std::string& name) {
  if (name == "f32") return torch::kFloat32;
  if (name == "i64") return torch::kInt64;
  if (name == "u8") return torch::kUInt8;
  throw IoError("unknown checkpoint dtype " + name);
}

std::string tensor_bytes(const torch::Tensor& t) {
  auto c = t.detach().contiguous().cpu();
  return std::string((const char*)c.data_ptr(), c.numel() * c.element_size());
}

// payload assembler with a manifest entry per tensor
struct Packer {
  std::string payload;
  json tensors = json::array();

  void add(const std::string& group, int64_t index, const torch::Tensor& t) {
    auto bytes = tensor_bytes(t);
    tensors.push_back(json{{"group", group},
                           {"index", index},
                           {"dtype", dtype_name(t.scalar_type())},
                           {"shape", t.sizes().vec()},
                           {"offset", payload.size()},
                           {"nbytes", bytes.size()}});
    payload += bytes;
  }

  size_t add_blob(const std::string& bytes) {
    size_t at = payload.size();
    payload += bytes;
    return at;
  }
};

json blob_entry(size_t offset, const std::string& bytes) {
  return json{{"offset", offset},
              {"nbytes", bytes.size()},
              {"digest", hex64(fnv1a64(bytes.data(), bytes.size()))}};
}

std::string slice_payload(const std::string& payload, const json& entry,
                          const std::string& what) {
  size_t off = entry.at("offset").get<size_t>();
  size_t n = entry.at("nbytes").get<size_t>();
  if (off + n > payload.size()) throw IoError("checkpoint payload truncated");
  auto bytes = payload.substr(off, n);
  if (entry.contains("digest") &&
      entry.at("digest").get<std::string>() !=
          hex64(fnv1a64(bytes.data(), bytes.size())))
    throw IoError("digest mismatch in " + what + ": file is corrupt");
  return bytes;
}

torch::Tensor tensor_from(const std::string& bytes, const json& entry) {
  auto shape = entry.at("shape").get<std::vector<int64_t>>();
  auto dtype = dtype_of(entry.at("dtype").get<std::string>());
  auto t = torch::empty(shape, dtype);
  if ((size_t)(t.numel() * t.element_size()) != bytes.size())
    throw IoError("tensor byte count disagrees with its shape");
  std::memcpy(t.data_ptr(), bytes.data(), bytes.size());
  return t;
}

std::string container_of(const std::string& path, const char magic[8],
                         json* manifest) {
  auto raw = read_file(path);
  if (raw.size() < 16 || std::memcmp(raw.data(), magic, 8) != 0)
    throw ConfigError("not a recognized container: " + path);
  uint64_t mlen;
  std::memcpy(&mlen, raw.data() + 8, 8);
  if (16 + mlen > raw.size()) throw IoError("container manifest truncated");
  *manifest = json::parse(raw.substr(16, mlen));
  return raw.substr(16 + mlen);
}

void write_container(const std::string& path, const char magic[8],
                     const json& manifest, const std::string& payload) {
  auto mtext = manifest.dump();
  std::string out(magic, 8);
  uint64_t mlen = mtext.size();
  out.append((const char*)&mlen, 8);
  out += mtext;
  out += payload;
  write_file_atomic(path, out);
}

}  // namespace

uint64_t group_digest(const std::vector<torch::Tensor>& params) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& p : params) {
    auto bytes = tensor_bytes(p);
    h = fnv1a64(bytes.data(), bytes.size(), h);
  }
  return h;
}

Checkpoint capture_checkpoint(const ModelBundle& b, int stage, int64_t step,
                              uint64_t config_hash,
                              const std::vector<std::string>& frozen) {
  Checkpoint c;
  c.stage = stage;
  c.step = step;
  c.config_hash = config_hash;
  c.net_cfg = b.cfg;
  c.local_codebook_trained = b.local_codebook_trained;
  c.frozen = frozen;
  for (const auto& [name, params] : b.param_groups()) {
    std::vector<torch::Tensor> clones;
    for (const auto& p : params) clones.push_back(p.detach().clone());
    c.digests[name] = group_digest(clones);
    c.groups[name] = std::move(clones);
  }
  c.rng_state = at::detail::getDefaultCPUGenerator().get_state().clone();
  return c;
}

void apply_checkpoint(ModelBundle& b, const Checkpoint& ckpt) {
  auto live = b.param_groups();
  torch::NoGradGuard ng;
  for (const auto& [name, saved] : ckpt.groups) {
    auto it = live.find(name);
    if (it == live.end()) throw ConfigError("checkpoint group " + name +
                                            " has no home in this bundle");
    if (it->second.size() != saved.size())
      throw ConfigError("checkpoint group " + name + " has wrong arity");
    for (size_t i = 0; i < saved.size(); ++i) {
      if (it->second[i].sizes() != saved[i].sizes())
        throw ConfigError("checkpoint tensor shape mismatch in " + name);
      it->second[i].copy_(saved[i]);
    }
  }
  b.local_codebook_trained = ckpt.local_codebook_trained;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  Packer pk;
  for (const auto& [name, params] : ckpt.groups) {
    for (size_t i = 0; i < params.size(); ++i)
      pk.add(name, (int64_t)i, params[i]);
  }

  json digests = json::object();
  for (const auto& [name, d] : ckpt.digests) digests[name] = hex64(d);

  json blobs = json::object();
  blobs["gen_opt"] = blob_entry(pk.add_blob(ckpt.gen_opt_blob), ckpt.gen_opt_blob);
  blobs["disc_opt"] =
      blob_entry(pk.add_blob(ckpt.disc_opt_blob), ckpt.disc_opt_blob);
  auto rng_bytes = ckpt.rng_state.defined() ? tensor_bytes(ckpt.rng_state)
                                            : std::string();
  blobs["rng"] = blob_entry(pk.add_blob(rng_bytes), rng_bytes);

  json manifest{{"version", 1},
                {"stage", ckpt.stage},
                {"step", ckpt.step},
                {"config_hash", hex64(ckpt.config_hash)},
                {"net_cfg", ckpt.net_cfg.to_json()},
                {"local_codebook_trained", ckpt.local_codebook_trained},
                {"frozen", ckpt.frozen},
                {"digests", digests},
                {"tensors", pk.tensors},
                {"blobs", blobs}};
  write_container(path, kMagic, manifest, pk.payload);
}

Checkpoint load_checkpoint(const std::string& path) {
  json manifest;
  auto payload = container_of(path, kMagic, &manifest);
  if (manifest.at("version").get<int>() != 1)
    throw ConfigError("checkpoint version " +
                      manifest.at("version").dump() +
                      " is not supported, expected 1");

  Checkpoint c;
  c.stage = manifest.at("stage").get<int>();
  c.step = manifest.at("step").get<int64_t>();
  c.config_hash = std::stoull(manifest.at("config_hash").get<std::string>(), nullptr, 16);
  c.net_cfg = NetConfig::from_json(manifest.at("net_cfg"));
  c.local_codebook_trained = manifest.at("local_codebook_trained").get<bool>();
  c.frozen = manifest.at("frozen").get<std::vector<std::string>>();

  for (const auto& entry : manifest.at("tensors")) {
    auto group = entry.at("group").get<std::string>();
    auto bytes = slice_payload(payload, entry, "tensor of " + group);
    auto& vec = c.groups[group];
    auto index = entry.at("index").get<size_t>();
    if (vec.size() != index) throw IoError("tensor entries out of order");
    vec.push_back(tensor_from(bytes, entry));
  }
  for (const auto& [name, d] : manifest.at("digests").items()) {
    uint64_t want = std::stoull(d.get<std::string>(), nullptr, 16);
    if (!c.groups.count(name)) throw IoError("digest for absent group " + name);
    if (group_digest(c.groups.at(name)) != want)
      throw IoError("digest mismatch in group " + name + ": file is corrupt");
    c.digests[name] = want;
  }

  const auto& blobs = manifest.at("blobs");
  c.gen_opt_blob = slice_payload(payload, blobs.at("gen_opt"), "gen_opt");
  c.disc_opt_blob = slice_payload(payload, blobs.at("disc_opt"), "disc_opt");
  auto rng = slice_payload(payload, blobs.at("rng"), "rng");
  if (!rng.empty()) {
    auto t = torch::empty({(int64_t)rng.size()}, torch::kUInt8);
    std::memcpy(t.data_ptr(), rng.data(), rng.size());
    c.rng_state = t;
  }
  return c;
}

std::string optimizer_to_blob(torch::optim::Optimizer& opt) {
  torch::serialize::OutputArchive ar;
  opt.save(ar);
  std::ostringstream oss;
  ar.save_to(oss);
  return oss.str();
}

void optimizer_from_blob(torch::optim::Optimizer& opt, const std::string& blob) {
  torch::serialize::InputArchive ar;
  ar.load_from(blob.data(), blob.size());
  opt.load(ar);
}

void save_prior_net(const std::string& path, PriorNet& net, const NetConfig& cfg) {
  Packer pk;
  auto params = net->parameters();
  for (size_t i = 0; i < params.size(); ++i) pk.add("prior", (int64_t)i, params[i]);
  json manifest{{"version", 1},
                {"net_cfg", cfg.to_json()},
                {"digest", hex64(group_digest(params))},
                {"tensors", pk.tensors}};
  write_container(path, kPriorMagic, manifest, pk.payload);
}

std::pair<PriorNet, NetConfig> load_prior_net(const std::string& path) {
  json manifest;
  auto payload = container_of(path, kPriorMagic, &manifest);
  if (manifest.at("version").get<int>() != 1)
    throw ConfigError("prior net version not supported");
  auto cfg = NetConfig::from_json(manifest.at("net_cfg"));
  PriorNet net(cfg);
  auto params = net->parameters();
  size_t i = 0;
  torch::NoGradGuard ng;
  for (const auto& entry : manifest.at("tensors")) {
    if (i >= params.size()) throw IoError("prior net has too many tensors");
    auto bytes = slice_payload(payload, entry, "prior tensor");
    params[i].copy_(tensor_from(bytes, entry));
    ++i;
  }
  if (i != params.size()) throw IoError("prior net is missing tensors");
  uint64_t want =
      std::stoull(manifest.at("digest").get<std::string>(), nullptr, 16);
  if (group_digest(params) != want)
    throw IoError("digest mismatch in prior net: file is corrupt");
  return {net, cfg};
}

}  // namespace rtc
