#include "rtc/vq.h"

#include <random>
#include <sstream>
#include <unordered_set>

namespace rtc {

std::string to_string(ScaleTag t) {
  return t == ScaleTag::Global ? "global" : "local";
}

Codebook Codebook::init(int64_t n, int64_t c, ScaleTag tag, uint64_t seed) {
  if (n < 1 || c < 1) throw ConfigError("codebook wants positive N and C");
  auto gen = torch::make_generator<torch::CPUGeneratorImpl>(seed);
  Codebook cb{torch::randn({n, c}, gen) / std::sqrt(static_cast<double>(c)), tag};
  cb.validate();
  return cb;
}

void Codebook::validate() const {
  if (!entries.defined() || entries.dim() != 2) {
    throw ShapeError("codebook entries must be NxC");
  }
  if (!torch::isfinite(entries).all().item<bool>()) {
    throw ShapeError("codebook has non-finite entries");
  }
  auto rows = entries.contiguous();
  std::unordered_set<uint64_t> seen;
  const auto* data = rows.data_ptr<float>();
  const size_t row_bytes = static_cast<size_t>(dim()) * sizeof(float);
  for (int64_t i = 0; i < size(); ++i) {
    if (!seen.insert(fnv1a64(data + i * dim(), row_bytes)).second) {
      // hash collision or a true duplicate; disambiguate before complaining
      for (int64_t j = 0; j < i; ++j) {
        if (torch::equal(rows[i], rows[j])) {
          throw ShapeError("codebook rows " + std::to_string(j) + " and " +
                           std::to_string(i) + " are identical");
        }
      }
    }
  }
}

namespace {

// indices for rows [M,C] against entries [N,C]; strict-less scan keeps the
// lowest index on ties.
torch::Tensor nearest_rows(const torch::Tensor& rows, const torch::Tensor& entries) {
  const int64_t m = rows.size(0), n = entries.size(0), c = rows.size(1);
  auto out = torch::empty({m}, torch::kLong);
  auto* out_p = out.data_ptr<int64_t>();
  // direct squared differences, chunked; no gemm expansion so ties are exact
  const int64_t chunk = std::max<int64_t>(1, (1 << 22) / std::max<int64_t>(1, n * c));
  for (int64_t row0 = 0; row0 < m; row0 += chunk) {
    const int64_t rows_here = std::min(chunk, m - row0);
    auto d = (rows.slice(0, row0, row0 + rows_here).unsqueeze(1) -
              entries.unsqueeze(0))
                 .pow(2)
                 .sum(-1);  // [rows_here, N]
    auto acc = d.accessor<float, 2>();
    for (int64_t i = 0; i < rows_here; ++i) {
      int64_t best = 0;
      float best_d = acc[i][0];
      for (int64_t k = 1; k < n; ++k) {
        if (acc[i][k] < best_d) {
          best_d = acc[i][k];
          best = k;
        }
      }
      out_p[row0 + i] = best;
    }
  }
  return out;
}

}  // namespace

QuantizedMap quantize(const Codebook& cb, const torch::Tensor& feat_hwc) {
  if (feat_hwc.dim() != 3) throw ShapeError("expected HxWxC features");
  if (feat_hwc.size(2) != cb.dim()) {
    throw ShapeError("feature dim " + std::to_string(feat_hwc.size(2)) +
                     " vs codebook dim " + std::to_string(cb.dim()));
  }
  const int64_t h = feat_hwc.size(0), w = feat_hwc.size(1);
  auto flat = feat_hwc.detach().reshape({h * w, cb.dim()}).contiguous();
  auto idx = nearest_rows(flat, cb.entries.detach().contiguous());
  QuantizedMap qm;
  qm.pre_quant = feat_hwc;
  qm.indices = idx.view({h, w});
  qm.quantized = cb.entries.index_select(0, idx).view({h, w, cb.dim()});
  return qm;
}

QuantizedMap quantize_nchw(const Codebook& cb, const torch::Tensor& feat_bchw) {
  if (feat_bchw.dim() != 4) throw ShapeError("expected BxCxHxW features");
  if (feat_bchw.size(1) != cb.dim()) {
    throw ShapeError("feature dim " + std::to_string(feat_bchw.size(1)) +
                     " vs codebook dim " + std::to_string(cb.dim()));
  }
  const int64_t b = feat_bchw.size(0), h = feat_bchw.size(2), w = feat_bchw.size(3);
  auto flat = feat_bchw.detach()
                  .permute({0, 2, 3, 1})
                  .reshape({b * h * w, cb.dim()})
                  .contiguous();
  auto idx = nearest_rows(flat, cb.entries.detach().contiguous());
  QuantizedMap qm;
  qm.pre_quant = feat_bchw;
  qm.indices = idx.view({b, h, w});
  qm.quantized = cb.entries.index_select(0, idx)
                     .view({b, h, w, cb.dim()})
                     .permute({0, 3, 1, 2})
                     .contiguous();
  return qm;
}

torch::Tensor codebook_loss(const QuantizedMap& qm, double beta) {
  auto to_book = (qm.quantized - qm.pre_quant.detach()).pow(2).mean();
  auto to_encoder = (qm.quantized.detach() - qm.pre_quant).pow(2).mean();
  return to_book + beta * to_encoder;
}

torch::Tensor straight_through(const QuantizedMap& qm) {
  return qm.pre_quant + (qm.quantized - qm.pre_quant).detach();
}

UseStats utilization(const std::vector<QuantizedMap>& maps, const Codebook& cb) {
  UseStats stats;
  stats.counts = torch::zeros({cb.size()}, torch::kLong);
  for (const auto& qm : maps) {
    stats.counts += torch::bincount(qm.indices.reshape({-1}), {}, cb.size());
  }
  stats.used = (stats.counts > 0).sum().item<int64_t>();
  stats.ratio_string =
      std::to_string(stats.used) + " / " + std::to_string(cb.size());
  return stats;
}

Codebook& revive_dead_codes(Codebook& cb, const UseStats& stats,
                            const torch::Tensor& feat_pool, uint64_t rng_seed,
                            double epsilon) {
  if (stats.counts.size(0) != cb.size()) {
    throw ShapeError("stats do not match codebook size");
  }
  if (!feat_pool.defined() || feat_pool.numel() == 0) {
    log_warn("revive_dead_codes: empty feature pool, nothing revived");
    return cb;
  }
  if (feat_pool.dim() != 2 || feat_pool.size(1) != cb.dim()) {
    throw ShapeError("feature pool must be PxC");
  }
  if (epsilon < 0) epsilon = 0.01 / std::sqrt(static_cast<double>(cb.dim()));

  std::mt19937_64 rng(rng_seed);
  std::uniform_int_distribution<int64_t> pick(0, feat_pool.size(0) - 1);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> mag(0.0, 1.0);

  torch::NoGradGuard no_grad;
  auto counts = stats.counts.accessor<int64_t, 1>();
  for (int64_t n = 0; n < cb.size(); ++n) {
    if (counts[n] != 0) continue;
    auto v = feat_pool[pick(rng)].detach().to(torch::kFloat32);
    auto dir = torch::empty({cb.dim()});
    auto* dp = dir.data_ptr<float>();
    for (int64_t c = 0; c < cb.dim(); ++c) dp[c] = static_cast<float>(gauss(rng));
    double norm = dir.norm().item<double>();
    if (norm > 0) dir = dir / norm;
    cb.entries[n] = v + dir * (epsilon * mag(rng));
  }
  return cb;
}

void dump_codebook_csv(const Codebook& cb, const std::string& path) {
  std::ostringstream os;
  auto rows = cb.entries.detach().contiguous();
  auto acc = rows.accessor<float, 2>();
  for (int64_t i = 0; i < cb.size(); ++i) {
    for (int64_t j = 0; j < cb.dim(); ++j) {
      if (j) os << ",";
      os << acc[i][j];
    }
    os << "\n";
  }
  write_file_atomic(path, os.str());
}

}  // namespace rtc
