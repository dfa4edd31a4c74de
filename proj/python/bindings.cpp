#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "xmodal/config.hpp"
#include "xmodal/error.hpp"
#include "xmodal/evalkit.hpp"
#include "xmodal/losses.hpp"
#include "xmodal/trainer.hpp"
#ifdef XMODAL_HAVE_CLI
#include "xmodal/cli.hpp"
#endif

namespace py = pybind11;
using namespace xmodal;
using nlohmann::json;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

nn::Tensor to_tensor(const Array& a) {
  if (a.ndim() != 2) throw DimensionError("expected a 2-d array");
  const auto rows = static_cast<std::size_t>(a.shape(0));
  const auto cols = static_cast<std::size_t>(a.shape(1));
  return nn::Tensor(rows, cols, std::vector<double>(a.data(), a.data() + rows * cols));
}

Array to_array(const nn::Tensor& t) {
  Array out({t.rows(), t.cols()});
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

py::dict split_dict(const Split& s) {
  py::list ids;
  for (const auto& smp : s.samples) ids.append(smp.id);
  py::dict d;
  d["ids"] = ids;
  d["traits"] = to_array(s.traits());
  for (Modality m : kModalities) d[py::str(std::string(to_string(m)))] = to_array(s.features(m));
  return d;
}

json test_metrics(const Model& model, const Dataset& data) {
  const nn::Tensor y = data.test.traits();
  json m = json::object();
  for (Modality mod : kModalities) {
    m[std::string(to_string(mod))] = r_acc(y, clip_prediction(model.predict_monomodal(mod, data.test)));
  }
  m["baseline"] = r_acc(y, clip_prediction(model.predict_baseline(data.test)));
  m["full"] = r_acc(y, clip_prediction(model.predict_full(data.test)));
  return m;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Cross-modal embedding training for apparent personality regression";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<UsageError>(m, "UsageError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_RuntimeError);
  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  m.def("default_config", [](const std::string& preset) { return RunConfig::defaults(preset).to_json().dump(); },
        py::arg("preset") = "desk");
  m.def("resolve_config", [](const std::string& text) { return RunConfig::from_json(json::parse(text)).to_json().dump(); });
  m.def("config_hash", [](const std::string& text) { return config_hash(json::parse(text)); });

  m.def("generate_synthetic", [](const std::string& text) {
    const Dataset d = generate_synthetic(RunConfig::from_json(json::parse(text)).synthetic);
    py::dict out;
    out["train"] = split_dict(d.train);
    out["val"] = split_dict(d.val);
    out["test"] = split_dict(d.test);
    return out;
  });

  m.def("classify_score", [](double score, double mean, double stddev) {
    return static_cast<int>(classify_score(score, mean, stddev));
  });
  m.def("r_acc", [](const Array& y, const Array& y_hat) { return r_acc(to_tensor(y), to_tensor(y_hat)); });
  m.def("bell_loss", [](const Array& y, const Array& y_hat, double sigma, double gamma, double score_scale) {
    BellConfig c;
    c.sigma = sigma;
    c.gamma = gamma;
    c.score_scale = score_scale;
    return bell_loss(to_tensor(y), to_tensor(y_hat), c);
  }, py::arg("y"), py::arg("y_hat"), py::arg("sigma") = BellConfig{}.sigma, py::arg("gamma") = BellConfig{}.gamma,
     py::arg("score_scale") = BellConfig{}.score_scale);
  m.def("similarity_matrix", [](const Array& e, bool normalize) { return to_array(similarity_matrix(to_tensor(e), normalize)); },
        py::arg("embeddings"), py::arg("normalize") = true);

  m.def("train", [](const std::string& text) {
    RunConfig c = RunConfig::from_json(json::parse(text));
    Dataset data = generate_synthetic(c.synthetic);
    c.model.input_dims = data.dims;
    json out;
    {
      py::gil_scoped_release release;
      Model model = init_model(data, c.model, c.train);
      run_stage1(model, data, c.train);
      run_stage2(model, data, c.train);
      run_stage3(model, data, c.train);
      run_stage4(model, data, c.train);
      out = test_metrics(model, data);
    }
    return out.dump();
  }, "Runs all four stages on the configured synthetic data; returns test R_acc per model as JSON.");

#ifdef XMODAL_HAVE_CLI
  m.def("run_cli", [](const std::vector<std::string>& args) {
    std::vector<const char*> argv{"xmodal"};
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    return py::make_tuple(code, out.str(), err.str());
  });
#endif
}
