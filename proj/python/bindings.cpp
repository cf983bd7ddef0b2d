// Python bindings. Configs cross the boundary as dicts (the same JSON objects
// the CLI reads); tensors come back as float64 NumPy arrays.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <optional>

#include "invdriver/checks.hpp"
#include "invdriver/dataset.hpp"
#include "invdriver/errors.hpp"
#include "invdriver/eval.hpp"
#include "invdriver/json_io.hpp"
#include "invdriver/ops.hpp"
#include "invdriver/plot.hpp"
#include "invdriver/queries.hpp"
#include "invdriver/training.hpp"

namespace py = pybind11;
using namespace invd;
using ad::Tensor;

namespace {

nlohmann::json to_json(const py::object& obj) {
  const auto text = py::module_::import("json").attr("dumps")(obj).cast<std::string>();
  return nlohmann::json::parse(text);
}

py::object from_json(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

template <class T>
T config_from(const std::optional<py::dict>& d) {
  T c;
  if (d) {
    try {
      to_json(*d).get_to(c);
    } catch (const nlohmann::json::exception& e) {
      throw InputError(e.what());
    }
  }
  c.validate();
  return c;
}

py::array_t<double> to_numpy(const Tensor& t) {
  if (!t.defined()) return py::array_t<double>(std::vector<py::ssize_t>{0});
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> a(shape);
  std::copy(t.values().begin(), t.values().end(), a.mutable_data());
  return a;
}

Tensor from_numpy(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  ad::Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor::from(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

py::dict output_dict(const model::ModelOutput& o) {
  py::dict d;
  d["map_points"] = to_numpy(o.map_points);
  d["map_class_logits"] = to_numpy(o.map_class_logits);
  d["agent_trajectories"] = to_numpy(o.agent_trajectories);
  d["agent_mode_logits"] = to_numpy(o.agent_mode_logits);
  d["agent_existence_logits"] = to_numpy(o.agent_existence_logits);
  d["ego_trajectories"] = to_numpy(o.ego_trajectories);
  d["ego_mode_logits"] = to_numpy(o.ego_mode_logits);
  return d;
}

py::dict epoch_dict(const train::EpochRecord& r) {
  py::dict d;
  d["epoch"] = r.epoch;
  d["total"] = r.total;
  d["map_pts"] = r.map_pts;
  d["map_cls"] = r.map_cls;
  d["map_dir"] = r.map_dir;
  d["pred_pts"] = r.pred_pts;
  d["pred_cls"] = r.pred_cls;
  d["pred_exist"] = r.pred_exist;
  d["plan_pts"] = r.plan_pts;
  d["plan_dir"] = r.plan_dir;
  d["plan_cls"] = r.plan_cls;
  return d;
}

class PyModel {
 public:
  PyModel(const std::optional<py::dict>& config, std::uint64_t seed)
      : model_(config_from<ModelConfig>(config), seed) {}

  py::object config() const {
    nlohmann::json j = model_.config();
    return from_json(j);
  }
  std::size_t parameter_count() const { return model_.registry().total_elements(); }

  py::dict forward_scene(std::uint64_t scene_seed, const std::optional<py::dict>& scene_config) const {
    const auto sc = config_from<scene::SceneGenConfig>(scene_config);
    train::check_compatible(model_.config(), sc);
    const auto s = scene::generate_scene(scene_seed, sc);
    ad::NoGradGuard ng;
    return output_dict(model_.forward(model::prepare_inputs(s, sc, model_.config())));
  }

 private:
  model::InVDriverModel model_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Vectorized query-based driving model with intra-instance masked self-attention";
  m.attr("__version__") = INVD_VERSION;

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ValidationError>(m, "ValidationError", base.ptr());
  py::register_exception<RuntimeFailure>(m, "RuntimeFailure", base.ptr());

  m.def(
      "generate_dataset",
      [](const std::filesystem::path& path, std::uint64_t seed, std::size_t count,
         const std::optional<py::dict>& scene_config) {
        const auto sc = config_from<scene::SceneGenConfig>(scene_config);
        scene::write_dataset(scene::generate_scenes(seed, count, sc), sc, path);
        return scene::file_sha256(path);
      },
      py::arg("path"), py::arg("seed"), py::arg("count"), py::arg("scene_config") = py::none(),
      "Write `count` scenes starting at `seed` as JSON Lines. Returns the file's SHA-256.");

  m.def(
      "intra_instance_mask",
      [](std::size_t n_instances, std::size_t block) {
        const auto mask = query::build_intra_instance_mask(n_instances, block);
        py::array_t<bool> a({mask.rows(), mask.cols()});
        auto v = a.mutable_unchecked<2>();
        for (std::size_t i = 0; i < mask.rows(); ++i)
          for (std::size_t j = 0; j < mask.cols(); ++j) v(i, j) = mask.allowed(i, j);
        return a;
      },
      py::arg("n_instances"), py::arg("block_size"));

  m.def(
      "masked_softmax",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& logits, std::size_t n_instances,
         std::size_t block) {
        return to_numpy(ad::masked_softmax(from_numpy(logits), query::build_intra_instance_mask(n_instances, block)));
      },
      py::arg("logits"), py::arg("n_instances"), py::arg("block_size"),
      "Softmax over the last axis with the block-diagonal mask; blocked entries are exactly 0.");

  m.def(
      "hungarian",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& cost) {
        if (cost.ndim() != 2) throw DimensionError("cost matrix must be 2-D");
        const auto r = train::hungarian(std::vector<double>(cost.data(), cost.data() + cost.size()),
                                        cost.shape(0), cost.shape(1));
        return py::make_tuple(r.assignment, r.total_cost);
      },
      py::arg("cost"), "Minimum-cost assignment. Returns ([(row, col), ...], total cost).");

  m.def(
      "boxes_intersect",
      [](std::array<double, 5> a, std::array<double, 5> b) {
        const auto box = [](const std::array<double, 5>& v) {
          return eval::OrientedBox{{v[0], v[1]}, v[2], v[3], v[4]};
        };
        return eval::boxes_intersect(box(a), box(b));
      },
      py::arg("a"), py::arg("b"), "Boxes as (x, y, heading, length, width); touching counts as intersecting.");

  py::class_<PyModel>(m, "Model")
      .def(py::init<const std::optional<py::dict>&, std::uint64_t>(), py::arg("config") = py::none(),
           py::arg("seed") = 0)
      .def_property_readonly("config", &PyModel::config)
      .def_property_readonly("parameter_count", &PyModel::parameter_count)
      .def("forward_scene", &PyModel::forward_scene, py::arg("scene_seed"), py::arg("scene_config") = py::none(),
           "Generate one scene and run the full forward pass without gradients.");

  m.def(
      "train",
      [](const std::filesystem::path& data, const std::filesystem::path& checkpoint,
         const std::optional<py::dict>& model_config, const std::optional<py::dict>& train_config) {
        const auto ds = scene::read_dataset(data);
        train::TrainState st(config_from<ModelConfig>(model_config), config_from<train::TrainConfig>(train_config),
                             ds.config);
        train::TrainOptions o;
        o.checkpoint_path = checkpoint;
        {
          py::gil_scoped_release release;
          train::train(st, ds.scenes, o);
        }
        py::list out;
        for (const auto& r : st.history) out.append(epoch_dict(r));
        return out;
      },
      py::arg("data"), py::arg("checkpoint"), py::arg("model_config") = py::none(),
      py::arg("train_config") = py::none(), "Train from scratch and write a checkpoint. Returns per-epoch losses.");

  m.def(
      "evaluate",
      [](const std::filesystem::path& checkpoint, const std::filesystem::path& data) {
        eval::EvalResult r;
        {
          py::gil_scoped_release release;
          r = eval::evaluate(checkpoint, data);
        }
        return from_json(nlohmann::json::parse(eval::report_json(r.report)));
      },
      py::arg("checkpoint"), py::arg("data"));

  m.def(
      "render_svg",
      [](const std::filesystem::path& checkpoint, const std::filesystem::path& data, std::size_t index) {
        const auto st = train::load_checkpoint(checkpoint);
        const auto ds = scene::read_dataset(data);
        train::check_compatible(st.model_config, ds.config);
        if (index >= ds.scenes.size()) throw InputError("scene index out of range");
        ad::NoGradGuard ng;
        const auto& s = ds.scenes[index];
        const auto out = st.model.forward(model::prepare_inputs(s, ds.config, st.model_config));
        return plot::render_svg(s, out, st.model_config, plot::Viewport::for_scene(ds.config));
      },
      py::arg("checkpoint"), py::arg("data"), py::arg("index") = 0);

  m.def(
      "op_gradient_errors",
      [](double tolerance, std::uint64_t seed) {
        py::dict d;
        for (const auto& r : checks::op_gradient_checks(tolerance, seed)) d[r.name.c_str()] = r.report.max_rel_error();
        return d;
      },
      py::arg("tolerance") = 1e-4, py::arg("seed") = 0,
      "Max relative finite-difference error per differentiable operation.");
}
