#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <memory>

#include "sprnn/pipeline.hpp"

namespace py = pybind11;
using namespace sprnn;

namespace {

py::array_t<double> to_array(const Matrix& m) {
  py::array_t<double> out({m.rows, m.cols});
  std::copy(m.values.begin(), m.values.end(), out.mutable_data());
  return out;
}

Matrix to_matrix(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 2) throw ShapeError("expected a 2-D array, got " + std::to_string(a.ndim()) + " dimensions");
  const auto r = static_cast<std::size_t>(a.shape(0)), c = static_cast<std::size_t>(a.shape(1));
  return Matrix(r, c, std::vector<double>(a.data(), a.data() + r * c));
}

std::string as_config_value(const py::handle& v) {
  if (py::isinstance<py::bool_>(v)) return v.cast<bool>() ? "true" : "false";
  return py::str(v).cast<std::string>();
}

RunConfig config_from_kwargs(const py::kwargs& kwargs) {
  std::map<std::string, std::string> entries;
  std::string text;
  for (const auto& [k, v] : kwargs) text += k.cast<std::string>() + " = " + as_config_value(v) + "\n";
  return build_config(parse_config_text(text, "<kwargs>"));
}

std::optional<std::filesystem::path> optional_path(const std::optional<std::string>& p) {
  if (!p) return std::nullopt;
  return std::filesystem::path(*p);
}

py::dict breakdown_dict(const LossBreakdown& b) {
  py::dict d;
  d["nll"] = b.nll;
  d["kl"] = b.kl;
  d["pattern"] = b.pattern_mse;
  d["total"] = b.total;
  return d;
}

py::dict epoch_dict(const EpochLog& e) {
  py::dict d;
  d["epoch"] = e.epoch;
  d["kl_weight"] = e.kl_weight;
  d["train"] = breakdown_dict(e.train);
  d["val"] = e.has_val ? py::object(breakdown_dict(e.val)) : py::object(py::none());
  return d;
}

py::dict report_dict(const MetricsReport& r) {
  py::dict d;
  d["min_ade"] = r.min_ade;
  d["min_fde"] = r.min_fde;
  d["units"] = r.units;
  d["agent_windows"] = r.agent_windows;
  d["windows"] = r.windows;
  d["k"] = r.K;
  d["joint_best"] = r.joint_best;
  d["averaging"] = r.averaging;
  return d;
}

// A trained or freshly initialised model together with the config it was built from.
struct PyModel {
  RunConfig config;
  std::shared_ptr<SocialPatteRNN> model;
  FitResult fit;
};

PyModel make_model(const RunConfig& config, std::optional<std::uint64_t> seed) {
  PyModel m;
  m.config = config;
  m.model = std::make_shared<SocialPatteRNN>(config.model, seed.value_or(config.seed));
  return m;
}

RunConfig eval_config(const PyModel& m, std::optional<std::size_t> k, std::optional<std::uint64_t> seed) {
  RunConfig c = m.config;
  if (k) c.eval.K = *k;
  if (seed) c.eval.seed = *seed;
  return c;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Trajectory prediction with motion patterns and social attention";
  m.attr("__version__") = kToolVersion;

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_RuntimeError);
  py::register_exception<TrainingError>(m, "TrainingError", PyExc_RuntimeError);
  py::register_exception<CheckpointError>(m, "CheckpointError", PyExc_RuntimeError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);

  py::class_<RunConfig>(m, "Config")
      .def(py::init(&config_from_kwargs), "Build a config from key=value keyword arguments.")
      .def_static("from_text", &config_from_text, py::arg("text"))
      .def("get", [](const RunConfig& c, const std::string& key) { return config_value(c, key); }, py::arg("key"))
      .def("text", &serialize_config)
      .def("keys", [] {
        std::vector<std::string> out;
        for (const auto& k : config_keys()) out.push_back(k.name);
        return out;
      })
      .def("__repr__", [](const RunConfig& c) {
        return "<Config ablation=" + config_value(c, "ablation") + " dataset_format=" +
               config_value(c, "dataset_format") + ">";
      });

  py::class_<PyModel>(m, "Model")
      .def(py::init(&make_model), py::arg("config"), py::arg("seed") = py::none())
      .def_property_readonly("config", [](const PyModel& p) { return p.config; })
      .def_property_readonly("mode", [](const PyModel& p) { return to_string(p.config.model.mode()); })
      .def("parameter_count", [](const PyModel& p) { return p.model->params().scalar_count(); })
      .def("parameter_names", [](const PyModel& p) { return p.model->params().names(); })
      .def("parameter", [](const PyModel& p, const std::string& name) {
        const Tensor& t = p.model->params().at(name);
        py::array_t<double> out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
        std::copy(t.data().begin(), t.data().end(), out.mutable_data());
        return out;
      }, py::arg("name"))
      .def_property_readonly("history", [](const PyModel& p) {
        py::list out;
        for (const auto& e : p.fit.log) out.append(epoch_dict(e));
        return out;
      })
      .def("save", [](const PyModel& p, const std::string& path) {
        save_checkpoint(path, make_checkpoint(*p.model, p.fit.log.empty() ? nullptr : &p.fit.adam,
                                              serialize_config(p.config), p.fit.best_epoch, p.fit.best_metric));
      }, py::arg("path"))
      .def_static("load", [](const std::string& path) {
        const Checkpoint ck = load_checkpoint(path);
        PyModel p = make_model(config_from_text(ck.config_text), std::nullopt);
        load_parameters(*p.model, ck);
        return p;
      }, py::arg("path"));

  m.def("train", [](RunConfig config, std::optional<std::string> data_dir,
                    std::function<void(py::dict)> on_epoch) {
    TrainingData data = prepare_training_data(config, optional_path(data_dir));
    config.finalize();
    PyModel p;
    p.config = config;
    TrainedModel trained;
    {
      py::gil_scoped_release release;
      trained = train_model(config, data, [&](const EpochLog& e) {
        if (!on_epoch) return;
        py::gil_scoped_acquire acquire;
        on_epoch(epoch_dict(e));
      });
    }
    p.model = std::move(trained.model);
    p.fit = std::move(trained.fit);
    return p;
  }, py::arg("config"), py::arg("data_dir") = py::none(), py::arg("on_epoch") = nullptr,
     "Train a model; synthetic data is generated when no directory is given.");

  m.def("evaluate", [](const PyModel& p, std::optional<std::string> data_dir, std::optional<std::size_t> k,
                       std::optional<std::uint64_t> seed) {
    RunConfig c = eval_config(p, k, seed);
    const std::vector<Sample> test = prepare_test_data(c, optional_path(data_dir));
    const std::string units = c.data.format == DatasetFormat::synth ? "units" : config_value(c, "dataset_format");
    MetricsReport r;
    {
      py::gil_scoped_release release;
      r = evaluate(test, *p.model, c.eval, units);
    }
    return report_dict(r);
  }, py::arg("model"), py::arg("data_dir") = py::none(), py::arg("k") = py::none(), py::arg("seed") = py::none());

  m.def("predict", [](const PyModel& p, std::optional<std::string> data_dir, std::optional<std::size_t> k,
                      std::optional<std::uint64_t> seed) {
    RunConfig c = eval_config(p, k, seed);
    const std::vector<Sample> test = prepare_test_data(c, optional_path(data_dir));
    const PredictionSet set = predict(test, *p.model, c.eval);
    py::list out;
    for (const auto& a : set.agents) {
      py::dict d;
      d["scene_id"] = a.scene_id;
      d["window"] = a.window;
      d["agent_id"] = a.agent_id;
      d["history"] = to_array(a.history);
      d["ground_truth"] = to_array(a.ground_truth);
      py::array_t<double> samples({a.samples.size(), set.F, set.D});
      double* dst = samples.mutable_data();
      for (const auto& s : a.samples) dst = std::copy(s.values.begin(), s.values.end(), dst);
      d["samples"] = samples;
      out.append(d);
    }
    return out;
  }, py::arg("model"), py::arg("data_dir") = py::none(), py::arg("k") = py::none(), py::arg("seed") = py::none(),
     "Sampled futures per agent-window; samples has shape (K, F, D).");

  m.def("ade", [](const py::array_t<double>& pred, const py::array_t<double>& gt) {
    return ade(to_matrix(pred), to_matrix(gt));
  }, py::arg("prediction"), py::arg("truth"));
  m.def("fde", [](const py::array_t<double>& pred, const py::array_t<double>& gt) {
    return fde(to_matrix(pred), to_matrix(gt));
  }, py::arg("prediction"), py::arg("truth"));

  m.def("synth_scenes", [](const RunConfig& config, bool held_out) {
    RunConfig c = config;
    py::list out;
    for (const auto& scene : load_scenes(c, std::nullopt, held_out)) {
      py::dict agents;
      for (const auto& a : scene.agents) agents[py::str(a.id)] = to_array(a.positions);
      py::dict d;
      d["scene_id"] = scene.scene_id;
      d["agents"] = agents;
      out.append(d);
    }
    return out;
  }, py::arg("config"), py::arg("held_out") = false, "Synthetic scenes as {agent_id: T x D array}.");

  m.def("gradcheck", [](const std::string& ablation, std::uint64_t seed) {
    GradCheckResult r;
    {
      py::gil_scoped_release release;
      r = run_gradcheck(parse_ablation(ablation), seed);
    }
    py::dict d;
    d["max_relative_error"] = r.max_relative_error;
    d["worst_parameter"] = r.worst_parameter;
    d["checked"] = r.checked;
    d["skipped"] = r.skipped;
    return d;
  }, py::arg("ablation") = "pat_soc_att", py::arg("seed") = 0);
}
