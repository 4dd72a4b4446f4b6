#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "gazefusion/cli.hpp"
#include "gazefusion/gradcheck.hpp"
#include "gazefusion/train.hpp"

namespace py = pybind11;
using namespace gazefusion;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Image to_image(const Array& a) {
  if (a.ndim() != 2 && a.ndim() != 3) throw py::value_error("image must be HxW or HxWxC");
  const auto h = static_cast<std::size_t>(a.shape(0)), w = static_cast<std::size_t>(a.shape(1));
  const std::size_t c = a.ndim() == 3 ? static_cast<std::size_t>(a.shape(2)) : 1;
  Image img(h, w, c);
  std::copy(a.data(), a.data() + a.size(), img.pixels.begin());
  return img;
}

Array from_image(const Image& img) {
  Array out({img.height, img.width, img.channels});
  std::copy(img.pixels.begin(), img.pixels.end(), out.mutable_data());
  return out;
}

Array angles_array(const synth::Dataset& ds, GazeAngles synth::Sample::*field) {
  Array out({ds.samples.size(), std::size_t{2}});
  double* p = out.mutable_data();
  for (const auto& s : ds.samples) {
    *p++ = (s.*field).yaw;
    *p++ = (s.*field).pitch;
  }
  return out;
}

py::dict eval_dict(const train::EvalResult& e) {
  py::dict d;
  d["dataset"] = e.dataset;
  d["dataset_id"] = e.dataset_id;
  d["count"] = e.count;
  d["used_gam"] = e.used_gam;
  d["angular_error_deg"] = e.error_label_deg;
  d["angular_error_true_deg"] = e.error_true_deg;
  d["raw_angular_error_deg"] = e.raw_error_label_deg;
  d["mean_offset_deg"] = e.mean_offset_deg;
  d["absorption"] = e.absorption;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "C++ core: synthetic data, fusion estimator, adaptation heads, training";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);

  m.def(
      "angular_error_deg",
      [](std::pair<double, double> a, std::pair<double, double> b) {
        return angular_error_deg({a.first, a.second}, {b.first, b.second});
      },
      py::arg("a"), py::arg("b"), "Angle in degrees between two (yaw, pitch) directions given in radians.");

  m.def(
      "l1_loss",
      [](const std::vector<std::pair<double, double>>& pred, const std::vector<std::pair<double, double>>& label) {
        std::vector<GazeAngles> p, l;
        for (auto [y, x] : pred) p.push_back({y, x});
        for (auto [y, x] : label) l.push_back({y, x});
        return train::l1_loss(p, l);
      },
      py::arg("pred"), py::arg("label"));

  m.def("param_budget", &param_budget, py::arg("num_datasets"), py::arg("shared"), py::arg("per_head"));

  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_static("toy", &ModelConfig::toy)
      .def_static("tiny", &ModelConfig::tiny)
      .def_static("full", &ModelConfig::full)
      .def_property(
          "topology", [](const ModelConfig& c) { return topology_name(c.topology); },
          [](ModelConfig& c, const std::string& t) { c.topology = parse_topology(t); })
      .def_readwrite("face_size", &ModelConfig::face_size)
      .def_readwrite("eye_size", &ModelConfig::eye_size)
      .def_readwrite("image_channels", &ModelConfig::image_channels)
      .def_readwrite("conv_channels", &ModelConfig::conv_channels)
      .def_readwrite("feature_dim", &ModelConfig::feature_dim)
      .def_readwrite("proj_dim", &ModelConfig::proj_dim)
      .def_readwrite("num_heads", &ModelConfig::num_heads)
      .def_readwrite("num_blocks", &ModelConfig::num_blocks)
      .def_readwrite("mlp_hidden", &ModelConfig::mlp_hidden)
      .def_readwrite("gam_hidden", &ModelConfig::gam_hidden)
      .def("validate", &ModelConfig::validate)
      .def("expected_parameter_count", [](const ModelConfig& c) { return expected_parameter_count(c); })
      .def("to_text", &ModelConfig::to_text)
      .def_static("from_text", [](const std::string& t) { return ModelConfig::from_text(t); });

  py::class_<GazeModel>(m, "GazeModel")
      .def(py::init([](const ModelConfig& c, std::uint64_t seed) { return GazeModel::create(c, seed); }),
           py::arg("config"), py::arg("seed") = 0)
      .def_property_readonly("parameter_count", &GazeModel::parameter_count)
      .def("parameter_names",
           [](const GazeModel& g) {
             std::vector<std::string> names;
             for (const auto& [n, t] : g.parameters()) names.push_back(n);
             return names;
           })
      .def(
          "predict",
          [](const GazeModel& g, const Array& face, const Array& left, const Array& right) {
            Prediction p = g.predict(to_image(face), to_image(left), to_image(right));
            return py::make_tuple(p.gaze.yaw, p.gaze.pitch);
          },
          py::arg("face"), py::arg("left_eye"), py::arg("right_eye"), "Returns (yaw, pitch) in radians.");

  py::class_<synth::DatasetSpec>(m, "DatasetSpec")
      .def(py::init<>())
      .def_readwrite("name", &synth::DatasetSpec::name)
      .def_readwrite("dataset_id", &synth::DatasetSpec::dataset_id)
      .def_readwrite("num_subjects", &synth::DatasetSpec::num_subjects)
      .def_readwrite("samples_per_subject", &synth::DatasetSpec::samples_per_subject)
      .def_readwrite("rotation_deg", &synth::DatasetSpec::rotation_deg)
      .def_readwrite("rotation_axis", &synth::DatasetSpec::rotation_axis)
      .def_readwrite("bias_yaw_deg", &synth::DatasetSpec::bias_yaw_deg)
      .def_readwrite("bias_pitch_deg", &synth::DatasetSpec::bias_pitch_deg)
      .def_readwrite("noise_deg", &synth::DatasetSpec::noise_deg)
      .def_readwrite("seed", &synth::DatasetSpec::seed)
      .def_readwrite("face_size", &synth::DatasetSpec::face_size)
      .def_readwrite("eye_size", &synth::DatasetSpec::eye_size)
      .def("__repr__", [](const synth::DatasetSpec& s) { return synth::specs_to_text({s}); });

  m.def("default_specs", &synth::default_specs, py::arg("seed") = 7);

  py::class_<synth::Dataset>(m, "Dataset")
      .def_property_readonly("name", [](const synth::Dataset& d) { return d.spec.name; })
      .def_property_readonly("spec", [](const synth::Dataset& d) { return d.spec; })
      .def("__len__", [](const synth::Dataset& d) { return d.samples.size(); })
      .def("labels", [](const synth::Dataset& d) { return angles_array(d, &synth::Sample::label); })
      .def("true_gaze", [](const synth::Dataset& d) { return angles_array(d, &synth::Sample::true_gaze); })
      .def("images",
           [](const synth::Dataset& d, std::size_t i) {
             const auto& s = d.samples.at(i);
             return py::make_tuple(from_image(s.face), from_image(s.left_eye), from_image(s.right_eye));
           })
      .def("train_indices", &synth::Dataset::train_indices)
      .def("test_indices", &synth::Dataset::test_indices)
      .def("save", [](synth::Dataset& d, const std::filesystem::path& dir) { return synth::save_dataset(d, dir); });

  m.def("generate", &synth::generate, py::arg("spec"));
  m.def("load_dataset", &synth::load_dataset, py::arg("dir"));

  m.def(
      "render_face",
      [](std::pair<double, double> gaze, std::pair<double, double> head, std::size_t size) {
        auto r = synth::render_face({gaze.first, gaze.second}, {head.first, head.second}, synth::SubjectParams{},
                                    synth::Appearance{}, size);
        return from_image(r.face);
      },
      py::arg("gaze"), py::arg("head") = std::make_pair(0.0, 0.0), py::arg("size") = 32);

  py::class_<train::TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("lr0", &train::TrainConfig::lr0)
      .def_readwrite("warmup_steps", &train::TrainConfig::warmup_steps)
      .def_readwrite("gamma", &train::TrainConfig::gamma)
      .def_readwrite("epochs", &train::TrainConfig::epochs)
      .def_readwrite("steps", &train::TrainConfig::steps)
      .def_readwrite("batch_size", &train::TrainConfig::batch_size)
      .def_readwrite("weight_decay", &train::TrainConfig::weight_decay)
      .def_readwrite("seed", &train::TrainConfig::seed)
      .def_readwrite("gam_enabled", &train::TrainConfig::gam_enabled)
      .def_readwrite("dataset", &train::TrainConfig::dataset)
      .def_readwrite("eval_every", &train::TrainConfig::eval_every)
      .def_readwrite("model", &train::TrainConfig::model)
      .def_property(
          "regime", [](const train::TrainConfig& c) { return train::regime_name(c.regime); },
          [](train::TrainConfig& c, const std::string& r) { c.regime = train::parse_regime(r); })
      .def("validate", &train::TrainConfig::validate)
      .def("to_text", &train::TrainConfig::to_text)
      .def_static("from_text", [](const std::string& t) { return train::TrainConfig::from_text(t); });

  m.def("lr_at", &train::lr_at, py::arg("config"), py::arg("step"), py::arg("steps_per_epoch"));

  m.def(
      "train",
      [](const train::TrainConfig& cfg, const std::vector<synth::Dataset>& datasets,
         std::optional<std::filesystem::path> out_dir) {
        train::TrainResult r;
        {
          py::gil_scoped_release release;
          r = train::train_run(cfg, datasets, out_dir);
        }
        py::dict d;
        d["steps"] = r.steps;
        d["steps_per_epoch"] = r.steps_per_epoch;
        d["step_losses"] = r.step_losses;
        py::list fin, raw;
        for (const auto& e : r.final_eval) fin.append(eval_dict(e));
        for (const auto& e : r.final_eval_raw) raw.append(eval_dict(e));
        d["final"] = fin;
        d["final_raw"] = raw;
        py::dict p;
        p["shared"] = r.parameters.shared;
        p["per_head"] = r.parameters.per_head;
        p["trainable"] = r.parameters.trainable;
        d["parameters"] = p;
        return d;
      },
      py::arg("config"), py::arg("datasets"), py::arg("out_dir") = py::none());

  m.def(
      "grad_check",
      [](const ModelConfig& cfg, std::size_t num_datasets, std::size_t max_entries, std::uint64_t seed) {
        gradcheck::Options opt;
        opt.max_entries = max_entries;
        gradcheck::Report r = gradcheck::check_model(cfg, num_datasets, opt, seed);
        py::dict d;
        d["passed"] = r.passed;
        d["max_rel_error"] = r.max_rel_error;
        py::dict per;
        for (const auto& t : r.tensors) per[py::str(t.name)] = t.max_rel_error;
        d["tensors"] = per;
        return d;
      },
      py::arg("config"), py::arg("num_datasets") = 4, py::arg("max_entries") = 0, py::arg("seed") = 0);

  m.def(
      "cli",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "gazefusion");
        std::ostringstream out, err;
        const int code = cli::run(args, out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs a gazefusion command in-process; returns (exit_code, stdout, stderr).");
}
