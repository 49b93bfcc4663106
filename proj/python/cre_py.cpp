#include <pybind11/pybind11.h>
#include <pybind11/numpy.h>
#include <pybind11/stl.h>

#include <sstream>

#include "cre/baselines.hpp"
#include "cre/harness.hpp"
#include "cre/pcn.hpp"
#include "cre/report.hpp"

namespace py = pybind11;
using namespace cre;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

py::array_t<double> to_numpy(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape.begin(), t.shape.end());
  py::array_t<double> out(shape);
  std::copy(t.data.begin(), t.data.end(), out.mutable_data());
  return out;
}

Tensor from_numpy(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

py::dict metrics_dict(const harness::MetricSet& m) {
  py::dict d;
  d["accuracy"] = m.accuracy;
  d["mse"] = m.mse;
  d["loss_total"] = m.loss_total;
  d["loss_mse"] = m.loss_mse;
  d["loss_ce"] = m.loss_ce;
  return d;
}

py::dict record_dict(const harness::RunRecord& r) {
  py::dict d;
  d["run_id"] = r.run_id;
  d["failed"] = r.failed;
  d["error"] = r.error;
  py::list epochs;
  for (const auto& e : r.epochs) {
    py::dict row;
    row["epoch"] = e.epoch;
    row["train"] = metrics_dict(e.train);
    row["test"] = metrics_dict(e.test);
    epochs.append(row);
  }
  d["epochs"] = epochs;
  if (!r.epochs.empty()) {
    d["best_accuracy"] = r.best().accuracy;
    d["best_mse"] = r.best().mse;
    d["best_accuracy_epoch"] = *r.best_accuracy_epoch;
    d["best_mse_epoch"] = *r.best_mse_epoch;
  }
  d["checkpoint_accuracy"] = r.checkpoint_accuracy;
  d["checkpoint_mse"] = r.checkpoint_mse;
  return d;
}

data::Dataset make_dataset(const Array& images, const std::vector<std::size_t>& labels, const std::string& name) {
  data::Dataset d{name, from_numpy(images), labels, data::Split::train};
  if (d.images.rank() != 4 || d.images.dim(0) != labels.size()) {
    throw ShapeError("images must be [N, C, H, W] with one label per image");
  }
  return d;
}

struct Model {
  std::shared_ptr<CreModel> m;

  py::array_t<double> run(const Array& images, bool reconstruct) const {
    Graph g;
    Rng rng(0);
    nn::ForwardContext ctx(g, false, rng);
    ctx.set_track_grads(false);
    const Encoded z = encode(*m, ctx, ctx.constant(from_numpy(images)));
    return to_numpy(reconstruct ? decode(*m, ctx, z).value() : z.z.value());
  }

  py::array_t<double> logits(const Array& images) const {
    Graph g;
    Rng rng(0);
    nn::ForwardContext ctx(g, false, rng);
    ctx.set_track_grads(false);
    return to_numpy(classify(*m, ctx, encode(*m, ctx, ctx.constant(from_numpy(images)))).value());
  }
};

}  // namespace

PYBIND11_MODULE(_cre, mod) {
  mod.doc() = "Classification-reconstruction encoders, PCN reference, baselines and reporting";

  py::register_exception<Error>(mod, "CreError");

  py::class_<harness::RunConfig>(mod, "RunConfig")
      .def(py::init<>())
      .def_static("parse", &harness::parse_config, py::arg("text"))
      .def_static("load", &harness::load_config, py::arg("path"))
      .def("format", &harness::format_config)
      .def("validate", &harness::RunConfig::validate)
      .def("run_id", &harness::run_id)
      .def_property(
          "family", [](const harness::RunConfig& c) { return std::string(to_string(c.family)); },
          [](harness::RunConfig& c, const std::string& s) { c.family = parse_family(s); })
      .def_property(
          "size", [](const harness::RunConfig& c) { return std::string(to_string(c.size)); },
          [](harness::RunConfig& c, const std::string& s) { c.size = parse_size(s); })
      .def_property(
          "masking_mode", [](const harness::RunConfig& c) { return std::string(to_string(c.masking_mode)); },
          [](harness::RunConfig& c, const std::string& s) { c.masking_mode = parse_masking(s); })
      .def_readwrite("n", &harness::RunConfig::n)
      .def_readwrite("dataset", &harness::RunConfig::dataset)
      .def_readwrite("data_root", &harness::RunConfig::data_root)
      .def_readwrite("lambda_", &harness::RunConfig::lambda)
      .def_readwrite("mask_ratio", &harness::RunConfig::mask_ratio)
      .def_readwrite("epochs", &harness::RunConfig::epochs)
      .def_readwrite("batch_size", &harness::RunConfig::batch_size)
      .def_readwrite("lr_encoder", &harness::RunConfig::lr_encoder)
      .def_readwrite("lr_decoder", &harness::RunConfig::lr_decoder)
      .def_readwrite("lr_classifier", &harness::RunConfig::lr_classifier)
      .def_readwrite("seed", &harness::RunConfig::seed)
      .def_readwrite("limit", &harness::RunConfig::limit)
      .def_readwrite("dropout", &harness::RunConfig::dropout)
      .def_readwrite("droppath", &harness::RunConfig::droppath)
      .def_readwrite("workers", &harness::RunConfig::workers);

  mod.def("canonical_lambdas", &harness::canonical_lambdas);
  mod.def("derive_seed", &harness::derive_seed, py::arg("base"), py::arg("lam"), py::arg("repetition"));

  mod.def(
      "train",
      [](const harness::RunConfig& c, const Array& train_images, const std::vector<std::size_t>& train_labels,
         const Array& test_images, const std::vector<std::size_t>& test_labels, const std::string& out_dir) {
        const auto train = make_dataset(train_images, train_labels, c.dataset);
        auto test = make_dataset(test_images, test_labels, c.dataset);
        test.split = data::Split::test;
        harness::RunRecord r;
        {
          py::gil_scoped_release release;
          r = harness::run_training(c, train, test, {out_dir, !out_dir.empty()});
        }
        return record_dict(r);
      },
      py::arg("config"), py::arg("train_images"), py::arg("train_labels"), py::arg("test_images"),
      py::arg("test_labels"), py::arg("out_dir") = "", "One run on in-memory splits; returns the run record.");

  mod.def(
      "load_idx",
      [](const std::string& images, const std::string& labels) {
        const auto d = data::load_idx(images, labels);
        return py::make_tuple(to_numpy(d.images), d.labels);
      },
      py::arg("images_path"), py::arg("labels_path"));

  py::class_<Model>(mod, "Model")
      .def(py::init([](const std::string& family, const std::string& size, std::size_t n, double lam,
                       std::uint64_t seed, std::vector<std::size_t> image) {
             ModelSpec spec;
             spec.family = parse_family(family);
             spec.size = parse_size(size);
             spec.n = n;
             spec.lambda = lam;
             spec.seed = seed;
             if (image.size() != 3) throw Error("image must be [channels, height, width]");
             spec.image = {image[0], image[1], image[2]};
             return Model{std::shared_ptr<CreModel>(build_cre(spec))};
           }),
           py::arg("family") = "fc", py::arg("size") = "small", py::arg("n") = 16, py::arg("lam") = 0.5,
           py::arg("seed") = 0, py::arg("image") = std::vector<std::size_t>{1, 28, 28})
      .def_static(
          "load", [](const std::string& path) { return Model{std::shared_ptr<CreModel>(load_model(path))}; },
          py::arg("path"))
      .def("save", [](const Model& m, const std::string& path) { save_model(path, *m.m); }, py::arg("path"))
      .def_property_readonly("latent_size", [](const Model& m) { return m.m->latent_size(); })
      .def("encode", [](const Model& m, const Array& x) { return m.run(x, false); }, py::arg("images"))
      .def("reconstruct", [](const Model& m, const Array& x) { return m.run(x, true); }, py::arg("images"))
      .def("logits", &Model::logits, py::arg("images"));

  py::class_<pcn::Model>(mod, "PcnModel")
      .def(py::init([](std::vector<std::size_t> sizes, std::uint64_t seed, double step, std::size_t iterations,
                       bool identity) {
             pcn::Config c;
             c.sizes = std::move(sizes);
             c.step = step;
             c.iterations = iterations;
             c.activation = identity ? pcn::Activation::identity : pcn::Activation::tanh;
             return pcn::Model(c, seed);
           }),
           py::arg("sizes"), py::arg("seed") = 0, py::arg("step") = 0.05, py::arg("iterations") = 200,
           py::arg("identity") = false)
      .def(
          "energy_trace",
          [](const pcn::Model& m, const Array& inputs) {
            pcn::State s = pcn::prepare(m, pcn::Mode::classify, from_numpy(inputs));
            return pcn::infer(m, s).energy;
          },
          py::arg("inputs"), "Energies of one classify-mode inference, initial value first.")
      .def(
          "classify", [](const pcn::Model& m, const Array& x) { return pcn::classify(m, from_numpy(x)); },
          py::arg("inputs"))
      .def(
          "generate", [](const pcn::Model& m, const Array& top) { return to_numpy(pcn::generate(m, from_numpy(top))); },
          py::arg("top"))
      .def(
          "learn",
          [](pcn::Model& m, const Array& inputs, const Array& targets, std::size_t epochs, std::size_t batch_size,
             double lr, std::uint64_t seed) {
            return pcn::learn(m, from_numpy(inputs), from_numpy(targets), {epochs, batch_size, lr, seed});
          },
          py::arg("inputs"), py::arg("targets"), py::arg("epochs") = 10, py::arg("batch_size") = 16,
          py::arg("learning_rate") = 0.1, py::arg("seed") = 0);

  mod.def(
      "fit_pca",
      [](const Array& data, std::size_t n) {
        const auto b = baselines::fit_pca(from_numpy(data), n);
        return py::make_tuple(to_numpy(b.mean), to_numpy(b.components), b.eigenvalues);
      },
      py::arg("data"), py::arg("n"), "Returns (mean, components [n, d], eigenvalues).");
  mod.def(
      "random_projection",
      [](std::size_t d, std::size_t n, std::uint64_t seed) {
        return to_numpy(baselines::RandomProjection(d, n, seed).matrix());
      },
      py::arg("d"), py::arg("n"), py::arg("seed"));

  mod.def(
      "describe",
      [](std::vector<double> sample) {
        const auto s = report::describe(std::move(sample));
        py::dict d;
        d["count"] = s.count;
        d["min"] = s.min;
        d["q1"] = s.q1;
        d["median"] = s.median;
        d["q3"] = s.q3;
        d["max"] = s.max;
        d["mean"] = s.mean;
        d["half_width"] = s.half_width;
        d["outliers"] = s.outliers;
        return d;
      },
      py::arg("sample"));
  mod.def(
      "plot_tradeoff",
      [](const std::string& metrics_csv, const std::string& title) {
        return report::plot_tradeoff(report::summarize(harness::read_metrics_csv(metrics_csv)), title);
      },
      py::arg("metrics_csv"), py::arg("title") = "", "SVG box plot over lambda from a metrics CSV of one configuration.");
  mod.def(
      "plot_scaling",
      [](const std::vector<std::tuple<std::string, std::vector<std::tuple<std::size_t, double, double>>>>& series,
         const std::string& metric, bool lower_is_better) {
        std::vector<report::Series> s;
        for (const auto& [label, points] : series) {
          report::Series one{label, {}};
          for (const auto& [n, mean, hw] : points) one.points.push_back({n, mean, hw});
          s.push_back(std::move(one));
        }
        return report::plot_scaling(s, metric, lower_is_better);
      },
      py::arg("series"), py::arg("metric"), py::arg("lower_is_better"),
      "series: [(label, [(n, mean, half_width), ...]), ...]");
}
