#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "space/config.hpp"
#include "space/gradcheck.hpp"
#include "space/metrics.hpp"
#include "space/objectives.hpp"
#include "space/ops.hpp"
#include "space/run.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using namespace space;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor<double> to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor<double>::from_data(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor<double>& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

std::vector<double> flat(const Array& a) { return {a.data(), a.data() + a.size()}; }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Species-aware mixture-of-experts genomic profile model";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<CheckpointError>(m, "CheckpointError", PyExc_IOError);
  py::register_exception<IoError>(m, "IoError", PyExc_IOError);

  m.def("poisson_nll", [](const Array& p, const Array& t) { return poisson_nll(to_tensor(p), to_tensor(t)).item(); },
        py::arg("rates"), py::arg("targets"));
  m.def("mutual_information", [](const Array& joint) { return mutual_information(to_tensor(joint)).item(); },
        py::arg("joint"));
  m.def("topk_softmax", [](const Array& logits, std::size_t k) { return to_array(ops::topk_softmax(to_tensor(logits), k)); },
        py::arg("logits"), py::arg("k"));
  m.def("mcc_binary", &mcc_binary, py::arg("tp"), py::arg("tn"), py::arg("fp"), py::arg("fn"));
  m.def("mcc_multiclass",
        [](std::vector<std::vector<std::uint64_t>> counts) { return mcc_multiclass(ConfusionMatrix(std::move(counts))); },
        py::arg("confusion"));
  m.def("pearson", [](const Array& a, const Array& b) { return pearson(flat(a), flat(b)); }, py::arg("pred"),
        py::arg("target"));
  m.def("lr_at",
        [](std::size_t step, std::size_t steps, std::size_t warmup, double peak) {
          TrainConfig c;
          c.steps = steps;
          c.warmup_steps = warmup;
          c.peak_lr = peak;
          return lr_at(step, c);
        },
        py::arg("step"), py::arg("steps") = 2000, py::arg("warmup_steps") = 200, py::arg("peak_lr") = 5e-4);

  m.def("gradcheck",
        [](std::uint64_t seed) {
          GradcheckOptions opt;
          opt.seed = seed;
          std::vector<std::pair<std::string, double>> out;
          py::gil_scoped_release release;
          for (const auto& r : run_gradcheck_suite(opt)) out.emplace_back(r.op, r.max_rel_error);
          return out;
        },
        py::arg("seed") = 0);

  m.def("load_config", [](const fs::path& path) { return load_run_config(path).to_json().dump(); }, py::arg("path"));

  m.def("generate_data",
        [](const fs::path& config, const fs::path& out, std::optional<std::uint64_t> seed) {
          auto cfg = load_run_config(config);
          if (seed) cfg.synth.seed = *seed;
          cfg.validate();
          py::gil_scoped_release release;
          generate_dataset(cfg.schema, cfg.synth, out);
        },
        py::arg("config"), py::arg("out"), py::arg("seed") = py::none());

  m.def("train",
        [](const fs::path& config, const fs::path& data_dir, const fs::path& checkpoint, std::optional<double> alpha,
           std::optional<std::uint64_t> seed, std::optional<std::size_t> steps) {
          auto cfg = load_run_config(config);
          if (alpha) cfg.train.alpha = *alpha;
          if (seed) cfg.train.seed = *seed;
          if (steps) {
            cfg.train.steps = *steps;
            cfg.train.warmup_steps = std::min(cfg.train.warmup_steps, *steps);
          }
          cfg.validate();
          auto data = load_dataset(data_dir);
          const fs::path log = checkpoint.parent_path() / "train_log.jsonl";
          TrainOutcome res;
          {
            py::gil_scoped_release release;
            res = train_run(cfg, data, {checkpoint, log});
          }
          nlohmann::json j = {{"steps", res.steps_done},
                              {"aborted", res.aborted},
                              {"initial_poisson", res.initial_poisson},
                              {"final_poisson", res.final_poisson},
                              {"log", log.string()}};
          return j.dump();
        },
        py::arg("config"), py::arg("data"), py::arg("checkpoint"), py::arg("alpha") = py::none(),
        py::arg("seed") = py::none(), py::arg("steps") = py::none());

  m.def("evaluate",
        [](const fs::path& checkpoint, const fs::path& data_dir, bool baseline) {
          auto model = model_from_checkpoint(load_checkpoint(checkpoint));
          auto data = load_dataset(data_dir);
          py::gil_scoped_release release;
          return evaluate_model(*model, data, baseline).to_json().dump();
        },
        py::arg("checkpoint"), py::arg("data"), py::arg("baseline") = false);

  m.def("export_routing",
        [](const fs::path& checkpoint, const fs::path& data_dir, const fs::path& out) {
          auto model = model_from_checkpoint(load_checkpoint(checkpoint));
          auto data = load_dataset(data_dir);
          py::gil_scoped_release release;
          export_routing(*model, data, out);
        },
        py::arg("checkpoint"), py::arg("data"), py::arg("out"));
}
