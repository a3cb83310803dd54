// Copyright 2026 The ivtune Authors
// SPDX-License-Identifier: Apache-2.0
//
// Python bindings. Arrays cross the boundary as float64 numpy arrays.

#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/operators.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "ivtune/analysis.hpp"
#include "ivtune/checkpoint.hpp"
#include "ivtune/container.hpp"
#include "ivtune/dataset.hpp"
#include "ivtune/error.hpp"
#include "ivtune/training.hpp"

namespace py = pybind11;
using namespace ivtune;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

py::array_t<double> to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> out(shape);
  const auto src = t.data();
  std::copy(src.begin(), src.end(), out.mutable_data());
  return out;
}

py::array_t<int> labels_array(const std::vector<int>& labels, std::size_t n, std::size_t tokens) {
  py::array_t<int> out({static_cast<py::ssize_t>(n), static_cast<py::ssize_t>(tokens)});
  std::copy(labels.begin(), labels.end(), out.mutable_data());
  return out;
}

py::dict split_dict(const Split& s, std::size_t tokens) {
  py::dict d;
  d["vis"] = to_array(s.vis);
  d["ir"] = to_array(s.ir);
  d["labels"] = labels_array(s.labels, s.size(), tokens);
  return d;
}

py::dict dataset_dict(const Dataset& data) {
  py::dict d;
  d["train"] = split_dict(data.train, data.spec.num_tokens());
  d["val"] = split_dict(data.val, data.spec.num_tokens());
  d["spec"] = data.spec;
  return d;
}

py::dict metrics_dict(const Metrics& m) {
  py::dict d;
  d["loss"] = m.loss;
  d["accuracy"] = m.accuracy;
  d["miou"] = m.miou;
  return d;
}

py::dict spectrum_dict(const SpectrumReport& r) {
  py::dict d;
  d["band_lo"] = r.band_lo;
  d["band_hi"] = r.band_hi;
  d["energy"] = r.energy;
  return d;
}

}  // namespace

PYBIND11_MODULE(_ivtune, m) {
  m.doc() = "Infrared-conditioned prompt tuning of a frozen vision transformer";

  auto base = py::register_exception<Error>(m, "IvtuneError", PyExc_RuntimeError);
  py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<FormatError>(m, "FormatError", base.ptr());
  py::register_exception<FreezeViolation>(m, "FreezeViolation", base.ptr());

  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_readwrite("image_size", &ModelConfig::image_size)
      .def_readwrite("patch_size", &ModelConfig::patch_size)
      .def_readwrite("depth", &ModelConfig::depth)
      .def_readwrite("width", &ModelConfig::width)
      .def_readwrite("heads", &ModelConfig::heads)
      .def_readwrite("mlp_ratio", &ModelConfig::mlp_ratio)
      .def_readwrite("num_classes", &ModelConfig::num_classes)
      .def_readwrite("d_alpha", &ModelConfig::d_alpha)
      .def_readwrite("d_beta", &ModelConfig::d_beta)
      .def_readwrite("split_ratio_inv", &ModelConfig::split_ratio_inv)
      .def_readwrite("seed", &ModelConfig::seed)
      .def_property(
          "variant", [](const ModelConfig& c) { return to_string(c.variant); },
          [](ModelConfig& c, const std::string& v) { c.variant = parse_variant(v); })
      .def("validate", &ModelConfig::validate)
      .def(py::self == py::self)
      .def("__repr__", [](const ModelConfig& c) {
        KeyValues kv;
        write_model_config(c, kv);
        std::string s = "ModelConfig(";
        for (const auto& [k, v] : kv) s += k + "=" + v + ", ";
        return s.substr(0, s.size() - 2) + ")";
      });
  m.def("preset_config", &preset_config, py::arg("name"));

  py::class_<DatasetSpec>(m, "DatasetSpec")
      .def(py::init<>())
      .def_readwrite("seed", &DatasetSpec::seed)
      .def_readwrite("n_train", &DatasetSpec::n_train)
      .def_readwrite("n_val", &DatasetSpec::n_val)
      .def_readwrite("image_size", &DatasetSpec::image_size)
      .def_readwrite("patch_size", &DatasetSpec::patch_size)
      .def_readwrite("num_classes", &DatasetSpec::num_classes)
      .def_readwrite("ambiguity", &DatasetSpec::ambiguity)
      .def(py::self == py::self);

  m.def("generate_dataset", [](const DatasetSpec& s) { return dataset_dict(generate_dataset(s)); }, py::arg("spec"),
        "Generate both splits in memory: {'train': {...}, 'val': {...}, 'spec': DatasetSpec}.");
  m.def("write_dataset", [](const std::filesystem::path& dir, const DatasetSpec& s) {
    write_dataset(dir, generate_dataset(s));
  }, py::arg("directory"), py::arg("spec"));
  m.def("read_dataset", [](const std::filesystem::path& dir) { return dataset_dict(read_dataset(dir)); },
        py::arg("directory"));

  py::class_<IvModel>(m, "Model")
      .def(py::init([](const ModelConfig& c, const std::string& policy) { return IvModel(c, parse_policy(policy)); }),
           py::arg("config") = ModelConfig{}, py::arg("policy") = "prompt")
      .def_property_readonly("config", &IvModel::config)
      .def_property_readonly("policy", [](const IvModel& mdl) { return to_string(mdl.policy()); })
      .def("set_policy", [](IvModel& mdl, const std::string& p) { mdl.apply_policy(parse_policy(p)); })
      .def("forward",
           [](IvModel& mdl, const Array& vis, std::optional<Array> ir, bool train, bool return_layers) -> py::object {
             std::vector<Tensor> layers;
             const Tensor logits = mdl.forward(to_tensor(vis), ir ? to_tensor(*ir) : Tensor(),
                                               train ? ops::Mode::train : ops::Mode::eval,
                                               return_layers ? &layers : nullptr);
             if (!return_layers) return to_array(logits);
             py::list out;
             for (const auto& t : layers) out.append(to_array(t));
             return py::make_tuple(to_array(logits), out);
           },
           py::arg("vis"), py::arg("ir") = py::none(), py::arg("train") = false, py::arg("return_layers") = false,
           "Logits [B, N, K]; with return_layers also the per-layer token features.")
      .def("parameters",
           [](const IvModel& mdl) {
             py::dict d;
             for (const auto& p : mdl.params().all()) d[py::str(p.name)] = to_array(p.tensor);
             return d;
           })
      .def("trainable_names",
           [](const IvModel& mdl) { return mdl.partition_params().trainable; })
      .def("save", [](IvModel& mdl, const std::filesystem::path& p) { save_checkpoint(p, mdl); }, py::arg("path"))
      .def_static("load", [](const std::filesystem::path& p) { return std::move(load_checkpoint(p).model); },
                  py::arg("path"));

  m.def(
      "train",
      [](IvModel& mdl, const std::filesystem::path& data_dir, std::size_t epochs, std::size_t batch_size,
         const std::string& optimizer, double lr, double weight_decay, std::size_t max_steps,
         std::optional<std::function<void(py::dict)>> on_epoch) {
        TrainConfig tc;
        tc.epochs = epochs;
        tc.batch_size = batch_size;
        tc.max_steps = max_steps;
        tc.optimizer.kind = parse_optimizer(optimizer);
        tc.optimizer.lr = lr;
        tc.optimizer.weight_decay = weight_decay;
        auto to_dict = [](const EpochLog& e) {
          py::dict d = metrics_dict(e.metrics);
          d["epoch"] = e.epoch;
          d["split"] = e.split;
          return d;
        };
        const Dataset data = read_dataset(data_dir);
        const TrainResult r = train(mdl, data, tc, [&](const EpochLog& e) {
          if (on_epoch) (*on_epoch)(to_dict(e));
        });
        py::list log;
        for (const auto& e : r.log) log.append(to_dict(e));
        return log;
      },
      py::arg("model"), py::arg("data_dir"), py::arg("epochs") = 30, py::arg("batch_size") = 8,
      py::arg("optimizer") = "sgd", py::arg("lr") = 1e-3, py::arg("weight_decay") = 1e-2, py::arg("max_steps") = 0,
      py::arg("on_epoch") = py::none(), "Train in place; returns the per-epoch metric log.");
  m.def(
      "evaluate",
      [](IvModel& mdl, const std::filesystem::path& data_dir, const std::string& split) {
        const Dataset data = read_dataset(data_dir);
        if (split != "train" && split != "val") throw ConfigError("split must be train or val");
        if (mdl.config().num_classes != data.spec.num_classes)
          throw ConfigError("model and dataset disagree on the number of classes");
        return metrics_dict(evaluate(mdl, split == "train" ? data.train : data.val));
      },
      py::arg("model"), py::arg("data_dir"), py::arg("split") = "val");

  m.def(
      "param_report",
      [](const ModelConfig& c, const std::string& policy) {
        const ParamReport r = param_report(c, parse_policy(policy));
        py::dict d, groups;
        for (const auto& g : r.groups) groups[py::str(g.group)] = py::make_tuple(g.count, g.trainable);
        d["groups"] = groups;
        d["trainable"] = r.trainable;
        d["total"] = r.total;
        d["trainable_backbone_side"] = r.trainable_backbone_side;
        d["frozen_backbone"] = r.frozen_backbone;
        d["head"] = r.head;
        d["ratio"] = r.ratio;
        return d;
      },
      py::arg("config"), py::arg("policy") = "prompt");
  m.def("explained_variance", [](const Array& f) { return explained_variance(to_tensor(f)); }, py::arg("features"),
        "Explained-variance ratios of [..., C] features, pooled over leading axes.");
  m.def("radial_energy", [](const Array& img, std::size_t bands) { return spectrum_dict(radial_energy(to_tensor(img), bands)); },
        py::arg("image"), py::arg("bands") = 16);
  m.def("mean_radial_energy",
        [](const Array& imgs, std::size_t bands) { return spectrum_dict(mean_radial_energy(to_tensor(imgs), bands)); },
        py::arg("images"), py::arg("bands") = 16);

  m.def(
      "save_container",
      [](const std::filesystem::path& p, const std::map<std::string, Array>& entries, const std::string& dtype) {
        if (dtype != "f32" && dtype != "f64") throw ConfigError("dtype must be f32 or f64");
        std::vector<NamedTensor> out;
        for (const auto& [name, a] : entries)
          out.push_back({name, to_tensor(a), dtype == "f32" ? DType::f32 : DType::f64});
        save_container(p, out);
      },
      py::arg("path"), py::arg("entries"), py::arg("dtype") = "f64");
  m.def(
      "load_container",
      [](const std::filesystem::path& p) {
        py::dict d;
        for (const auto& e : load_container(p)) d[py::str(e.name)] = to_array(e.tensor);
        return d;
      },
      py::arg("path"));
}
