#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <torch/torch.h>

#include "rtc/checkpoint.h"
#include "rtc/common.h"
#include "rtc/degradation.h"
#include "rtc/evalkit.h"
#include "rtc/image.h"
#include "rtc/networks.h"
#include "rtc/ptpm.h"
#include "rtc/trainer.h"
#include "rtc/vq.h"

namespace py = pybind11;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

torch::Tensor tensor3(const py::array& a) {
  auto buf = FloatArray::ensure(a);
  if (!buf || buf.ndim() != 3)
    throw rtc::ShapeError("expected an HxWxC float array");
  auto t = torch::from_blob(const_cast<float*>(buf.data()),
                            {buf.shape(0), buf.shape(1), buf.shape(2)},
                            torch::kFloat32);
  return t.clone();
}

torch::Tensor tensor2(const py::array& a) {
  auto buf = FloatArray::ensure(a);
  if (!buf || buf.ndim() != 2)
    throw rtc::ShapeError("expected an NxC float array");
  auto t = torch::from_blob(const_cast<float*>(buf.data()),
                            {buf.shape(0), buf.shape(1)}, torch::kFloat32);
  return t.clone();
}

rtc::ImageBuffer image_in(const py::array& a) {
  auto t = tensor3(a);
  if (t.size(2) != 3) throw rtc::ShapeError("expected an HxWx3 float array");
  return rtc::ImageBuffer::from_tensor(t);
}

py::array float_out(const torch::Tensor& t) {
  auto c = t.detach().to(torch::kFloat32).contiguous();
  std::vector<py::ssize_t> shape(c.sizes().begin(), c.sizes().end());
  return py::array_t<float>(shape, c.data_ptr<float>());
}

py::array long_out(const torch::Tensor& t) {
  auto c = t.detach().to(torch::kInt64).contiguous();
  std::vector<py::ssize_t> shape(c.sizes().begin(), c.sizes().end());
  return py::array_t<int64_t>(shape, c.data_ptr<int64_t>());
}

py::array py_degrade(const py::array& hr, const std::string& config_json) {
  auto cfg = rtc::DegradationConfig::from_json(rtc::json::parse(config_json));
  auto img = image_in(hr);
  torch::Tensor lr;
  {
    py::gil_scoped_release nogil;
    lr = rtc::degrade(img, cfg).pixels;
  }
  return float_out(lr);
}

double py_psnr(const py::array& a, const py::array& b, double peak) {
  return rtc::psnr(image_in(a), image_in(b), peak);
}

double py_ssim(const py::array& a, const py::array& b, int64_t window) {
  return rtc::ssim(image_in(a), image_in(b), window);
}

py::tuple py_quantize(const py::array& entries, const py::array& feats) {
  rtc::Codebook cb;
  cb.entries = tensor2(entries);
  auto qm = rtc::quantize(cb, tensor3(feats));
  return py::make_tuple(long_out(qm.indices), float_out(qm.quantized));
}

py::list py_generate_patches(const py::array& img, const py::array& mask,
                             double gamma, int64_t patch_size,
                             const std::string& source_id) {
  auto buf = py::array_t<int64_t, py::array::c_style | py::array::forcecast>::
      ensure(mask);
  if (!buf || buf.ndim() != 2)
    throw rtc::ShapeError("expected an HxW integer mask");
  auto m = torch::from_blob(const_cast<int64_t*>(buf.data()),
                            {buf.shape(0), buf.shape(1)}, torch::kInt64)
               .clone();
  auto recs =
      rtc::generate_patches(image_in(img), m, gamma, patch_size, source_id);
  py::list out;
  for (const auto& r : recs) {
    py::dict d;
    d["patch"] = float_out(r.patch.pixels);
    d["label"] = r.label;
    d["source_id"] = r.source_id;
    d["coverage"] = r.coverage;
    out.append(d);
  }
  return out;
}

std::string py_confusion(const std::vector<py::array>& images,
                         int64_t patch_size, const std::string& config_json) {
  auto cfg = rtc::DegradationConfig::from_json(rtc::json::parse(config_json));
  std::vector<rtc::ImageBuffer> hr;
  hr.reserve(images.size());
  for (const auto& a : images) hr.push_back(image_in(a));
  py::gil_scoped_release nogil;
  return rtc::confusion_analysis(hr, cfg, patch_size).to_json().dump();
}

std::string py_train(const std::string& config_json, const std::string& out_dir,
                     const std::vector<py::array>& images,
                     const std::string& resume) {
  auto cfg = rtc::TrainConfig::from_json(rtc::json::parse(config_json));
  std::vector<rtc::ImageBuffer> data;
  data.reserve(images.size());
  for (const auto& a : images) data.push_back(image_in(a));

  py::gil_scoped_release nogil;
  auto b = rtc::ModelBundle::create(cfg.net, rtc::derive_seed(cfg.seed, "init"));
  if (!resume.empty()) {
    auto from = rtc::load_checkpoint(resume);
    if (from.stage == cfg.stage) {
      rtc::resume_train(b, from, data, cfg, out_dir);
    } else if (from.stage == 1 && cfg.stage == 2) {
      rtc::train_stage2(b, from, data, cfg, out_dir);
    } else {
      throw rtc::ConfigError("cannot start stage " + std::to_string(cfg.stage) +
                             " from a stage-" + std::to_string(from.stage) +
                             " checkpoint");
    }
  } else {
    if (cfg.stage != 1)
      throw rtc::ConfigError("stage 2 needs a stage-1 checkpoint to resume");
    rtc::train_stage1(b, data, cfg, out_dir);
  }
  return out_dir + "/latest.ckpt";
}

py::array py_infer(const std::string& ckpt_path, const py::array& lr) {
  auto img = image_in(lr);
  torch::Tensor sr;
  {
    py::gil_scoped_release nogil;
    auto ck = rtc::load_checkpoint(ckpt_path);
    auto b = rtc::ModelBundle::create(ck.net_cfg, 0);
    rtc::apply_checkpoint(b, ck);
    sr = rtc::forward_infer(b, img).pixels;
  }
  return float_out(sr);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Blind super-resolution core: degradation, VQ, training, metrics.";

  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const rtc::ConfigError& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    } catch (const rtc::ShapeError& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    } catch (const rtc::DimensionError& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    } catch (const rtc::json::exception& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    } catch (const rtc::IoError& e) {
      PyErr_SetString(PyExc_OSError, e.what());
    }
  });

  m.def("degrade", &py_degrade, py::arg("hr"), py::arg("config_json") = "{}",
        "Run the degradation pipeline on an HxWx3 image in [0,1].");
  m.def("psnr", &py_psnr, py::arg("a"), py::arg("b"), py::arg("peak") = 1.0);
  m.def("ssim", &py_ssim, py::arg("a"), py::arg("b"), py::arg("window") = 11);
  m.def("quantize", &py_quantize, py::arg("entries"), py::arg("feats"),
        "Nearest-codeword lookup; returns (indices, quantized).");
  m.def("generate_patches", &py_generate_patches, py::arg("img"),
        py::arg("mask"), py::arg("gamma") = 0.85, py::arg("patch_size") = 16,
        py::arg("source_id") = "py",
        "Label-pure patch extraction from an image and its segment mask.");
  m.def("confusion_analysis", &py_confusion, py::arg("images"),
        py::arg("patch_size") = 32, py::arg("config_json") = "{}",
        "Degradation confusion statistics as a JSON string.");
  m.def("train", &py_train, py::arg("config_json"), py::arg("out_dir"),
        py::arg("images"), py::arg("resume") = std::string(),
        "Train one stage; returns the path of the final checkpoint.");
  m.def("infer", &py_infer, py::arg("ckpt_path"), py::arg("lr"),
        "Super-resolve an HxWx3 LR image with a stage-2 checkpoint.");
}
