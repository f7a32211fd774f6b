#include "kst/bench.hpp"
#include "kst/fourier.hpp"
#include "kst/io.hpp"
#include "kst/metrics.hpp"
#include "kst/phantom.hpp"
#include "kst/sampling.hpp"
#include "kst/training.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <complex>

namespace py = pybind11;
using namespace kst;

namespace {

using CArray = py::array_t<std::complex<double>, py::array::c_style | py::array::forcecast>;
using RArray = py::array_t<double, py::array::c_style | py::array::forcecast>;
using MArray = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

void require_2d(const py::buffer_info& b, const char* what) {
  if (b.ndim != 2) throw std::invalid_argument(std::string(what) + " must be 2-D");
}

ComplexGrid to_grid(const CArray& a) {
  const auto b = a.request();
  require_2d(b, "array");
  ComplexGrid g(b.shape[0], b.shape[1]);
  const auto* p = static_cast<const std::complex<double>*>(b.ptr);
  for (std::size_t i = 0; i < g.size(); ++i) {
    g.re[i] = p[i].real();
    g.im[i] = p[i].imag();
  }
  return g;
}

CArray from_grid(const ComplexGrid& g) {
  CArray out({g.height, g.width});
  auto* p = out.mutable_data();
  for (std::size_t i = 0; i < g.size(); ++i) p[i] = {g.re[i], g.im[i]};
  return out;
}

Image to_image(const RArray& a) {
  const auto b = a.request();
  require_2d(b, "image");
  Image img;
  img.height = b.shape[0];
  img.width = b.shape[1];
  const auto* p = static_cast<const double*>(b.ptr);
  img.pixels.assign(p, p + img.height * img.width);
  return img;
}

MArray from_mask(const Mask& m) {
  MArray out({m.height(), m.width()});
  std::copy(m.bits().begin(), m.bits().end(), out.mutable_data());
  return out;
}

Mask to_mask(const MArray& a) {
  const auto b = a.request();
  require_2d(b, "mask");
  const auto* p = static_cast<const std::uint8_t*>(b.ptr);
  std::vector<std::uint8_t> bits(p, p + b.shape[0] * b.shape[1]);
  for (auto& v : bits) v = v != 0;
  return Mask(b.shape[0], b.shape[1], std::move(bits));
}

py::object parse_json(const json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

json dump_json(const py::object& o) {
  return json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

py::dict reconstruction_dict(const Reconstruction& r) {
  py::dict d;
  d["image"] = from_grid(r.image);
  d["zero_filled"] = from_grid(r.zero_filled);
  py::list layers;
  for (const auto& g : r.layer_images) layers.append(from_grid(g));
  d["layers"] = layers;
  return d;
}

}  // namespace

PYBIND11_MODULE(_kst, m) {
  m.doc() = "K-space transformer core";

  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

  m.def("fft2_centered", [](const CArray& a) { return from_grid(fft2_centered(to_grid(a))); },
        "Orthonormal 2-D DFT with the zero frequency at (H/2, W/2).");
  m.def("ifft2_centered", [](const CArray& a) { return from_grid(ifft2_centered(to_grid(a))); });

  m.def(
      "uniform_1d_mask",
      [](std::size_t h, std::size_t w, double accel, double center_fraction, int offset) {
        return from_mask(make_uniform_1d_mask(h, w, {accel, center_fraction, offset}));
      },
      py::arg("height"), py::arg("width"), py::arg("acceleration") = 2.5,
      py::arg("center_fraction") = 0.08, py::arg("offset") = 0);
  m.def(
      "gaussian_2d_mask",
      [](std::size_t h, std::size_t w, double accel, double sigma_fraction, std::uint64_t seed) {
        return from_mask(make_gaussian_2d_mask(h, w, {accel, sigma_fraction, seed}));
      },
      py::arg("height"), py::arg("width"), py::arg("acceleration") = 5.0,
      py::arg("sigma_fraction") = 0.25, py::arg("seed") = 0);
  m.def("acceleration", [](const MArray& mask) { return acceleration(to_mask(mask)); });

  m.def(
      "phantom",
      [](std::size_t h, std::size_t w, std::uint64_t seed, std::size_t index) {
        const auto s = generate_phantom(h, w, seed, index);
        return py::make_tuple(from_grid(s.image), from_grid(s.spectrogram));
      },
      py::arg("height"), py::arg("width"), py::arg("seed") = 1, py::arg("index") = 0,
      "Returns (complex image, centered spectrogram).");

  m.def("psnr", [](const RArray& x, const RArray& ref) { return psnr(to_image(x), to_image(ref)); });
  m.def("ssim", [](const RArray& x, const RArray& ref) { return ssim(to_image(x), to_image(ref)); });

  m.def(
      "cost_standard",
      [](std::uint64_t m_, std::uint64_t n, std::uint64_t d, std::uint64_t layers) {
        const auto c = analytic_cost_standard(m_, n, d, layers);
        py::dict out;
        out["cross"] = c.cross;
        out["self"] = c.self;
        out["total"] = c.total;
        out["multiply_adds"] = c.multiply_adds;
        return out;
      },
      py::arg("m"), py::arg("n"), py::arg("d"), py::arg("layers"));
  m.def(
      "cost_hierarchical",
      [](std::uint64_t m_, std::uint64_t n, std::uint64_t l, std::uint64_t d, std::uint64_t lr_layers,
         std::uint64_t hr_layers) {
        const auto c = analytic_cost_hier(m_, n, l, d, lr_layers, hr_layers);
        py::dict out;
        out["lr_cross"] = c.lr_cross;
        out["lr_self"] = c.lr_self;
        out["hr_cross"] = c.hr_cross;
        out["total"] = c.total;
        out["peak"] = c.peak;
        out["multiply_adds"] = c.multiply_adds;
        return out;
      },
      py::arg("m"), py::arg("n"), py::arg("l"), py::arg("d"), py::arg("lr_layers"),
      py::arg("hr_layers"));

  py::class_<Checkpoint>(m, "Checkpoint")
      .def_static("load", [](const std::string& path) { return load_checkpoint(path); })
      .def_static("from_bytes",
                  [](const py::bytes& b) { return deserialize_checkpoint(std::string(b)); })
      .def("to_bytes", [](const Checkpoint& c) { return py::bytes(serialize_checkpoint(c)); })
      .def("save", [](const Checkpoint& c, const std::string& path) { save_checkpoint(path, c); })
      .def_readonly("step", &Checkpoint::step)
      .def_property_readonly("model_config", [](const Checkpoint& c) { return parse_json(to_json(c.model)); })
      .def_property_readonly("train_config", [](const Checkpoint& c) { return parse_json(to_json(c.train)); })
      .def_property_readonly("parameter_count", [](const Checkpoint& c) { return c.params.scalar_count(); })
      .def(
          "reconstruct",
          [](const Checkpoint& c, const CArray& spectrogram, const MArray& mask) {
            const auto grid = to_grid(spectrogram);
            const auto msk = to_mask(mask);
            Reconstruction r;
            {
              py::gil_scoped_release release;
              r = reconstruct(c.params, c.model, grid, msk);
            }
            return reconstruction_dict(r);
          },
          py::arg("spectrogram"), py::arg("mask"));

  m.def(
      "train",
      [](const py::object& config) {
        const auto rc = run_config_from_json(dump_json(config));
        const auto data = generate_phantoms(rc.data.train_count, rc.data.height, rc.data.width, rc.data.seed);
        TrainState<float> state;
        {
          py::gil_scoped_release release;
          state = train<float>(rc.model, rc.train, data);
        }
        py::list losses;
        for (const auto& r : state.history) losses.append(r.loss);
        return py::make_tuple(make_checkpoint(state, rc.model, rc.train, 32), losses);
      },
      py::arg("config"),
      "Trains in memory from a run-config dict; returns (Checkpoint, per-step losses).");
  m.def("default_config", [] { return parse_json(to_json(default_run_config())); });
}
