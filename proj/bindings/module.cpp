#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "fedsim/cli.hpp"
#include "fedsim/codec.hpp"
#include "fedsim/dataset.hpp"
#include "fedsim/experiment.hpp"
#include "fedsim/federation.hpp"
#include "fedsim/metrics.hpp"
#include "fedsim/network.hpp"

namespace py = pybind11;
using namespace fedsim;

namespace {

py::array_t<double> tensor_to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.dims.begin(), t.dims.end());
  py::array_t<double> out(shape);
  std::copy(t.data.begin(), t.data.end(), out.mutable_data());
  return out;
}

Dataset dataset_from_arrays(py::array_t<double, py::array::c_style | py::array::forcecast> images,
                            py::array_t<int64_t, py::array::c_style | py::array::forcecast> labels) {
  if (images.ndim() != 3 || images.shape(1) != kImageSize ||
      images.shape(2) != kImageSize)
    throw py::value_error("images must have shape [n, 16, 16]");
  if (labels.ndim() != 1 || labels.shape(0) != images.shape(0))
    throw py::value_error("labels must have shape [n]");
  Dataset data(images.shape(0));
  const double* px = images.data();
  const int64_t* lb = labels.data();
  for (py::ssize_t i = 0; i < images.shape(0); ++i) {
    if (lb[i] < 0 || lb[i] >= kNumClasses)
      throw py::value_error("labels must be in 0..3");
    std::copy(px + i * kImagePixels, px + (i + 1) * kImagePixels,
              data[i].pixels.begin());
    data[i].label = static_cast<Label>(lb[i]);
  }
  return data;
}

Batch batch_from_arrays(py::array_t<double, py::array::c_style | py::array::forcecast> images,
                        py::array_t<int64_t, py::array::c_style | py::array::forcecast> labels) {
  Dataset data = dataset_from_arrays(images, labels);
  return make_batch(data);
}

py::tuple dataset_to_arrays(const Dataset& data) {
  py::array_t<double> images({static_cast<py::ssize_t>(data.size()),
                              static_cast<py::ssize_t>(kImageSize),
                              static_cast<py::ssize_t>(kImageSize)});
  py::array_t<int64_t> labels(static_cast<py::ssize_t>(data.size()));
  double* px = images.mutable_data();
  int64_t* lb = labels.mutable_data();
  for (size_t i = 0; i < data.size(); ++i) {
    std::copy(data[i].pixels.begin(), data[i].pixels.end(),
              px + i * kImagePixels);
    lb[i] = static_cast<int64_t>(data[i].label);
  }
  return py::make_tuple(images, labels);
}

WireDtype dtype_from_str(const std::string& s) {
  if (s == "f32") return WireDtype::kF32;
  if (s == "f64") return WireDtype::kF64;
  throw py::value_error("dtype must be 'f32' or 'f64'");
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "federated learning simulator core (FedSGD/FedAvg, masked "
            "federation, synthetic quality-inspection data)";

  py::class_<ParamSet>(m, "Params")
      .def_property_readonly("architecture_id",
                             [](const ParamSet& p) { return p.architecture_id; })
      .def("names",
           [](const ParamSet& p) {
             std::vector<std::string> names;
             for (const auto& e : p.entries) names.push_back(e.name);
             return names;
           })
      .def("__getitem__",
           [](const ParamSet& p, const std::string& name) {
             const Tensor* t = p.find(name);
             if (!t) throw py::key_error(name);
             return tensor_to_array(*t);
           })
      .def("__eq__", [](const ParamSet& a, const ParamSet& b) { return a == b; })
      .def("__len__", [](const ParamSet& p) { return p.entries.size(); });

  m.def("init_params",
        [](uint64_t seed) { return init_params(Architecture::fixed(), seed); },
        py::arg("seed"),
        "Glorot-uniform weights and zero biases for the fixed architecture; "
        "a pure function of the seed.");
  m.def("zero_params", [] { return zero_params(Architecture::fixed()); });
  m.def("feature_names", [] {
    return Architecture::fixed().group_names(ParamGroup::kFeature);
  });
  m.def("classifier_names", [] {
    return Architecture::fixed().group_names(ParamGroup::kClassifier);
  });
  m.def("label_name",
        [](int label) {
          if (label < 0 || label >= kNumClasses)
            throw py::value_error("label must be in 0..3");
          return label_name(static_cast<Label>(label));
        },
        py::arg("label"), "Class name for a label index (OKAY, NOT_OKAY, ...).");

  m.def("forward",
        [](const ParamSet& params, py::array_t<double> images) {
          py::array_t<int64_t> labels(images.shape(0));
          std::fill(labels.mutable_data(), labels.mutable_data() + images.shape(0),
                    int64_t{0});
          Tensor logits = forward(params, batch_from_arrays(images, labels));
          return tensor_to_array(logits);
        },
        py::arg("params"), py::arg("images"), "Logits [b, 4] for [b,16,16] images.");

  m.def("loss_and_grad",
        [](const ParamSet& params, py::array_t<double> images,
           py::array_t<int64_t> labels) {
          LossGrad lg = loss_and_grad(params, batch_from_arrays(images, labels));
          return py::make_tuple(lg.loss, lg.grads);
        },
        py::arg("params"), py::arg("images"), py::arg("labels"));

  m.def("sgd_apply", &sgd_apply, py::arg("params"), py::arg("grads"),
        py::arg("lr"));

  m.def("evaluate",
        [](const ParamSet& params, py::array_t<double> images,
           py::array_t<int64_t> labels) {
          Dataset data = dataset_from_arrays(images, labels);
          EvalMetrics metrics = evaluate(params, data);
          py::array_t<int64_t> confusion({kNumClasses, kNumClasses});
          for (int t = 0; t < kNumClasses; ++t)
            for (int p = 0; p < kNumClasses; ++p)
              confusion.mutable_at(t, p) =
                  static_cast<int64_t>(metrics.confusion[t][p]);
          return py::make_tuple(metrics.accuracy, confusion, metrics.mean_loss);
        },
        py::arg("params"), py::arg("images"), py::arg("labels"),
        "Returns (accuracy, confusion[true][pred], mean_loss).");

  m.def("encode_params",
        [](const ParamSet& p, const std::string& dtype) {
          std::vector<uint8_t> blob = encode_params(p, dtype_from_str(dtype));
          return py::bytes(reinterpret_cast<const char*>(blob.data()),
                           blob.size());
        },
        py::arg("params"), py::arg("dtype") = "f32");
  m.def("decode_params", [](py::bytes blob) {
    std::string s = blob;
    return decode_params(
        {reinterpret_cast<const uint8_t*>(s.data()), s.size()});
  });

  m.def("aggregate",
        [](const std::vector<std::tuple<uint32_t, uint64_t, ParamSet>>& inputs,
           uint32_t round, const std::string& mode) {
          Aggregation agg;
          if (mode == "mean") agg = Aggregation::kPlainMean;
          else if (mode == "weighted") agg = Aggregation::kSampleWeighted;
          else throw py::value_error("mode must be 'mean' or 'weighted'");
          std::vector<ClientUpdate> updates;
          for (const auto& [cid, n_k, params] : inputs) {
            ClientUpdate u;
            u.client_id = cid;
            u.round = round;
            u.params = params;
            u.n_k = n_k;
            updates.push_back(std::move(u));
          }
          return aggregate(updates, agg);
        },
        py::arg("updates"), py::arg("round") = 1, py::arg("mode") = "weighted",
        "updates: list of (client_id, n_k, Params) tuples.");

  m.def("local_train",
        [](py::array_t<double> images, py::array_t<int64_t> labels,
           const ParamSet& init, uint32_t epochs, uint32_t batch_size,
           double lr, uint64_t seed, uint32_t client_id, uint32_t round,
           const std::string& mask) {
          Dataset data = dataset_from_arrays(images, labels);
          FederationConfig cfg;
          cfg.local_epochs = epochs;
          cfg.batch_size = batch_size;
          cfg.lr = lr;
          cfg.seed = seed;
          cfg.mask = mask == "classifier" ? MaskMode::kClassifierOnly
                                          : MaskMode::kAll;
          ClientUpdate u = local_train(data, init, cfg, client_id, round);
          return py::make_tuple(u.params, u.n_k);
        },
        py::arg("images"), py::arg("labels"), py::arg("init"),
        py::arg("epochs") = 1, py::arg("batch_size") = 32,
        py::arg("lr") = 0.05, py::arg("seed") = 42, py::arg("client_id") = 1,
        py::arg("round") = 1, py::arg("mask") = "all",
        "Returns (masked update Params, n_k).");

  m.def("generate_client_shard",
        [](uint32_t client_id, uint64_t seed, double split_ratio) {
          DataSpec data = default_data_spec(3, seed, split_ratio);
          Shard shard =
              generate_client_shard(data.clients[client_id - 1], split_ratio);
          py::dict out;
          out["client_id"] = shard.client_id;
          auto [train_x, train_y] = dataset_to_arrays(shard.train)
                                        .cast<std::pair<py::array, py::array>>();
          auto [test_x, test_y] = dataset_to_arrays(shard.test)
                                      .cast<std::pair<py::array, py::array>>();
          out["train_images"] = train_x;
          out["train_labels"] = train_y;
          out["test_images"] = test_x;
          out["test_labels"] = test_y;
          return out;
        },
        py::arg("client_id"), py::arg("seed") = 42,
        py::arg("split_ratio") = 0.8,
        "One of the three default synthetic client shards.");

  m.def("generate_external_testset",
        [](uint64_t seed) {
          return dataset_to_arrays(generate_external_testset(seed));
        },
        py::arg("seed") = 42, "Returns (images, labels) of the hold-out set.");

  m.def("simulate",
        [](const std::string& config_path) {
          RunConfig cfg = RunConfig::load(config_path);
          if (cfg.transport == TransportKind::kNet)
            throw py::value_error("simulate supports transport sim|dir");
          ExperimentResult result = run_and_write_outputs(cfg);
          py::dict out;
          out["best_round"] = result.best_round;
          out["best_mean_accuracy"] = result.best_mean_accuracy;
          py::list rounds;
          for (const RoundReport& r : result.reports) {
            py::dict row;
            row["round"] = r.round;
            row["global_client_accuracy"] = r.global_client_accuracy;
            row["global_external_accuracy"] = r.global_external_accuracy;
            rounds.append(row);
          }
          out["rounds"] = rounds;
          return out;
        },
        py::arg("config_path"),
        "Run a sim/dir experiment from a config file; writes the output tree "
        "and returns a summary dict.");
}
