#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "pnr/checkpoint.hpp"
#include "pnr/data.hpp"
#include "pnr/metrics.hpp"
#include "pnr/sampler.hpp"
#include "pnr/schedule.hpp"
#include "pnr/trainer.hpp"

namespace py = pybind11;
using namespace pnr;

namespace {

using Array = py::array_t<float, py::array::c_style | py::array::forcecast>;

// (H, W) or (C, H, W) numpy arrays <-> single-image tensors
ImageTensor to_tensor(const Array& a) {
  int c = 1, h = 0, w = 0;
  if (a.ndim() == 2) {
    h = static_cast<int>(a.shape(0));
    w = static_cast<int>(a.shape(1));
  } else if (a.ndim() == 3) {
    c = static_cast<int>(a.shape(0));
    h = static_cast<int>(a.shape(1));
    w = static_cast<int>(a.shape(2));
  } else {
    throw UsageError("expected an (H, W) or (C, H, W) array");
  }
  return ImageTensor(Shape{1, c, h, w}, std::vector<float>(a.data(), a.data() + a.size()));
}

Array to_array(const ImageTensor& t) {
  const Shape& s = t.shape();
  std::vector<py::ssize_t> shape;
  if (s.c == 1) shape = {s.h, s.w};
  else shape = {s.c, s.h, s.w};
  Array out(shape);
  std::copy(t.span().begin(), t.span().end(), out.mutable_data());
  return out;
}

class Restorer {
 public:
  Restorer(const std::filesystem::path& ckpt, bool use_ema) {
    auto c = load_checkpoint(ckpt);
    step_ = c.step;
    config_ = c.config.to_json();
    model_ = std::make_unique<NetworkModel>(std::move(c.model), use_ema);
  }

  Array predict(const Array& y) { return to_array(clamp_unit(model_->predict(to_tensor(y)))); }

  py::list sample(const Array& y, int steps, double var_end, int n, std::uint64_t seed) {
    const SampleConfig cfg = config(steps, var_end, n, seed);
    py::list out;
    for (const auto& s : sample_set(*model_, to_tensor(y), cfg)) out.append(to_array(s));
    return out;
  }

  Array average(const Array& y, int steps, double var_end, int n, std::uint64_t seed) {
    return to_array(sample_average(*model_, to_tensor(y), config(steps, var_end, n, seed)));
  }

  std::int64_t step() const { return step_; }
  const std::string& config_json() const { return config_; }

 private:
  static SampleConfig config(int steps, double var_end, int n, std::uint64_t seed) {
    SampleConfig c;
    c.steps = steps;
    c.var_end = var_end;
    c.n_samples = n;
    c.seed = seed;
    c.validate();
    return c;
  }

  std::unique_ptr<NetworkModel> model_;
  std::int64_t step_ = 0;
  std::string config_;
};

}  // namespace

PYBIND11_MODULE(pnrdiff, m) {
  m.doc() = "Predict-and-refine diffusion deblurring";

  py::register_exception<UsageError>(m, "UsageError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  m.def(
      "linear_schedule",
      [](int steps, double var_start, double var_end) {
        const auto s = build_linear_schedule(steps, var_start, var_end);
        std::vector<double> ab(static_cast<std::size_t>(steps));
        for (int t = 1; t <= steps; ++t) ab[static_cast<std::size_t>(t - 1)] = s.alphabar(t);
        return ab;
      },
      py::arg("steps"), py::arg("var_start"), py::arg("var_end"), "alphabar_1..alphabar_T");

  m.def(
      "posterior_coeffs",
      [](int steps, double var_start, double var_end, int t) {
        const auto c = posterior_coeffs(build_linear_schedule(steps, var_start, var_end), t);
        return py::make_tuple(c.coef_x0, c.coef_xt, c.beta);
      },
      py::arg("steps"), py::arg("var_start"), py::arg("var_end"), py::arg("t"));

  m.def(
      "gen_data",
      [](const std::filesystem::path& out, int n, int height, int width, int channels, int max_kernel,
         bool gaussian_kernels, std::uint64_t seed) {
        data::DatasetConfig cfg;
        cfg.count = n;
        cfg.height = height;
        cfg.width = width;
        cfg.channels = channels;
        if (gaussian_kernels) cfg.kernel = data::KernelConfig::gaussian_dominant();
        cfg.kernel.max_support = max_kernel;
        cfg.seed = seed;
        return data::make_dataset(cfg, out).pairs.size();
      },
      py::arg("out"), py::arg("n"), py::arg("height") = 64, py::arg("width") = 64, py::arg("channels") = 1,
      py::arg("max_kernel") = 31, py::arg("gaussian_kernels") = false, py::arg("seed") = 0);

  m.def(
      "train",
      [](const std::filesystem::path& data_dir, const std::filesystem::path& out, const std::string& config_json) {
        auto cfg = config_json.empty() ? TrainerConfig{} : TrainerConfig::from_json(config_json);
        Trainer t(cfg, data::load_pairs(data_dir));
        {
          py::gil_scoped_release release;
          t.run(std::nullopt, false);
        }
        save_checkpoint(out, t);
        return t.losses();
      },
      py::arg("data"), py::arg("out"), py::arg("config_json") = "", "train and save a checkpoint; returns the losses");

  m.def(
      "read_image", [](const std::filesystem::path& p) { return to_array(data::read_ppm(p)); }, py::arg("path"));
  m.def(
      "write_image", [](const std::filesystem::path& p, const Array& a) { data::write_ppm(p, to_tensor(a)); },
      py::arg("path"), py::arg("image"));

  m.def(
      "psnr", [](const Array& a, const Array& b) { return metrics::psnr(to_tensor(a), to_tensor(b)); }, py::arg("pred"),
      py::arg("ref"));
  m.def(
      "ssim", [](const Array& a, const Array& b) { return metrics::ssim(to_tensor(a), to_tensor(b)); }, py::arg("pred"),
      py::arg("ref"));
  m.def(
      "entropy_bpd",
      [](const std::vector<Array>& imgs) {
        std::vector<ImageTensor> t;
        for (const auto& a : imgs) t.push_back(to_tensor(a));
        return metrics::entropy_bpd(t);
      },
      py::arg("images"));
  m.def(
      "spearman", [](const std::vector<double>& a, const std::vector<double>& b) { return metrics::spearman(a, b); },
      py::arg("a"), py::arg("b"));

  py::class_<Restorer>(m, "Restorer")
      .def(py::init<const std::filesystem::path&, bool>(), py::arg("checkpoint"), py::arg("use_ema") = true)
      .def("predict", &Restorer::predict, py::arg("y"), "the predictor output g(y)")
      .def("sample", &Restorer::sample, py::arg("y"), py::arg("steps") = 100, py::arg("var_end") = 0.1,
           py::arg("n") = 1, py::arg("seed") = 0)
      .def("average", &Restorer::average, py::arg("y"), py::arg("steps") = 100, py::arg("var_end") = 0.1,
           py::arg("n") = 8, py::arg("seed") = 0)
      .def_property_readonly("step", &Restorer::step)
      .def_property_readonly("config_json", &Restorer::config_json);
}
