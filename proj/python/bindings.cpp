#include "cli.hpp"
#include "mlmspt/attention.hpp"
#include "mlmspt/checkpoint.hpp"
#include "mlmspt/data_io.hpp"
#include "mlmspt/errors.hpp"
#include "mlmspt/gradcheck.hpp"
#include "mlmspt/pointcloud.hpp"
#include "mlmspt/training.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

namespace py = pybind11;
using namespace mlmspt;

namespace {

using RowMatrix = Matrix<double>;

PointCloud cloud_from(const RowMatrix& features) {
  if (features.cols() < 3) throw DimensionError("point features need at least 3 columns (x, y, z)");
  PointCloud c;
  c.positions = features.leftCols(3);
  c.attributes = features.rightCols(features.cols() - 3);
  return c;
}

PsaScale parse_scale(const std::string& s) {
  if (s == "input_dim") return PsaScale::input_dim;
  if (s == "proj_dim") return PsaScale::proj_dim;
  throw ConfigError("psa scale must be input_dim or proj_dim, got '" + s + "'");
}

ModelConfig config_from(const py::dict& kwargs) {
  std::ostringstream text;
  std::string ablation;
  for (const auto& [k, v] : kwargs) {
    const auto key = k.cast<std::string>();
    if (key == "ablation") {
      ablation = v.cast<std::string>();
      continue;
    }
    if (py::isinstance<py::bool_>(v)) text << key << '=' << (v.cast<bool>() ? 1 : 0) << '\n';
    else text << key << '=' << py::str(v).cast<std::string>() << '\n';
  }
  ModelConfig cfg = ModelConfig::from_text(text.str());
  if (!ablation.empty()) cfg.set_ablation(parse_ablation(ablation));
  cfg.validate();
  return cfg;
}

py::dict config_to_dict(const ModelConfig& cfg) {
  py::dict d;
  std::istringstream is(cfg.to_text());
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find('=');
    d[py::str(line.substr(0, eq))] = line.substr(eq + 1);
  }
  d["ablation"] = to_string(cfg.ablation());
  return d;
}

class PyModel {
 public:
  explicit PyModel(Model<double> m) : model_(std::move(m)) {}

  RowMatrix logits(const RowMatrix& features) { return model_.logits(cloud_from(features)); }
  int predict_class(const RowMatrix& features) { return model_.predict_class(cloud_from(features)); }
  std::vector<int> predict_parts(const RowMatrix& features, const std::vector<int>& parts) {
    return model_.predict_parts(cloud_from(features), parts);
  }
  py::dict trace(const RowMatrix& features) {
    Tape<double> tape;
    ForwardTrace<double> t;
    model_.forward(tape, cloud_from(features), &t);
    py::dict d;
    d["ppt"] = t.ppt;
    d["mlt"] = t.mlt;
    d["fused"] = t.fused;
    d["mst"] = t.mst;
    d["head_input"] = t.head_input;
    d["attention"] = t.attention.maps;
    return d;
  }
  std::map<std::string, RowMatrix> parameters() const {
    std::map<std::string, RowMatrix> out;
    for (const auto& [name, t] : model_.params()) out.emplace(name, t.value);
    return out;
  }
  void save(const std::filesystem::path& path) const { save_checkpoint(model_.params(), model_.config(), path); }
  const ModelConfig& config() const { return model_.config(); }

 private:
  Model<double> model_;
};

py::tuple run_cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  int code = 0;
  {
    py::gil_scoped_release release;
    code = cli::run(args, out, err);
  }
  return py::make_tuple(code, out.str(), err.str());
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Multi-level multi-scale point transformer: core operations";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<ContractError>(m, "ContractError", PyExc_ValueError);
  py::register_exception<DivergenceError>(m, "DivergenceError", PyExc_ArithmeticError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<ParseError>(m, "ParseError", PyExc_OSError);
  py::register_exception<CheckpointError>(m, "CheckpointError", PyExc_OSError);

  m.def(
      "fps",
      [](const RowMatrix& points, std::size_t k, const std::string& start) {
        if (start != "centroid" && start != "first") throw ConfigError("start must be 'centroid' or 'first'");
        return farthest_point_sample(points, k, start == "centroid" ? StartRule::centroid_farthest : StartRule::first_index);
      },
      py::arg("points"), py::arg("k"), py::arg("start") = "centroid", "Farthest point sampling; returns selected row indices in order.");
  m.def("knn", &knn, py::arg("queries"), py::arg("sources"), py::arg("k"));
  m.def(
      "interpolation_plan",
      [](const RowMatrix& src, const RowMatrix& query) {
        const auto plan = interpolation_plan(src, query);
        return py::make_tuple(plan.index, plan.weights);
      },
      py::arg("src_pos"), py::arg("query_pos"), "Three-neighbour indices and inverse-square-distance weights.");
  m.def(
      "interpolate",
      [](const RowMatrix& src_pos, const RowMatrix& src_feat, const RowMatrix& query_pos) {
        Tape<double> tape;
        return RowMatrix(interpolate_up(src_pos, tape.constant(src_feat), query_pos).value());
      },
      py::arg("src_pos"), py::arg("src_feat"), py::arg("query_pos"));
  m.def(
      "pyramid",
      [](const RowMatrix& points, std::size_t scales) { return build_pyramid(points, scales).indices; },
      py::arg("points"), py::arg("scales") = 3, "Row indices of every pyramid scale.");

  m.def(
      "psa",
      [](const RowMatrix& f, const RowMatrix& wq, const RowMatrix& wk, const RowMatrix& wv, const std::string& scale) {
        Tape<double> tape;
        PsaWeights<double> w{tape.constant(wq), tape.constant(wk), tape.constant(wv)};
        AttentionTrace<double> trace;
        RowMatrix out = psa_forward(tape.constant(f), w, parse_scale(scale), &trace).value();
        return py::make_tuple(out, trace.maps.front());
      },
      py::arg("f"), py::arg("wq"), py::arg("wk"), py::arg("wv"), py::arg("scale") = "input_dim",
      "Point self-attention with residual; returns (output, attention map).");
  m.def(
      "multihead",
      [](const RowMatrix& f, const std::vector<std::array<RowMatrix, 3>>& heads) {
        Tape<double> tape;
        std::vector<HeadWeights<double>> hw;
        for (const auto& h : heads) hw.push_back({tape.constant(h[0]), tape.constant(h[1]), tape.constant(h[2])});
        return RowMatrix(multihead_forward<double>(tape.constant(f), hw).value());
      },
      py::arg("f"), py::arg("heads"), "Multi-head self-attention with residual; heads are (W_q, W_k, W_v) triples.");

  m.def("overall_accuracy", [](const std::vector<int>& p, const std::vector<int>& t) { return overall_accuracy(p, t); },
        py::arg("predicted"), py::arg("target"));
  m.def(
      "iou_scores",
      [](const std::vector<int>& p, const std::vector<int>& t, const std::vector<int>& parts) {
        const auto s = iou_scores(p, t, parts);
        return py::make_tuple(s.per_part, s.shape_iou);
      },
      py::arg("predicted"), py::arg("target"), py::arg("parts"), "Returns (per-part IoU, shape mIoU).");

  m.def(
      "gradcheck",
      [](std::uint64_t seed, const std::string& corrupt) {
        py::list out;
        for (const auto& r : run_gradcheck_suite(seed, corrupt)) {
          py::dict d;
          d["block"] = r.block;
          d["worst_rel_error"] = r.worst_rel_error;
          d["tolerance"] = r.tolerance;
          d["checked"] = r.checked;
          d["passed"] = r.passed;
          out.append(d);
        }
        return out;
      },
      py::arg("seed") = 0, py::arg("corrupt") = "");

  m.def(
      "synth",
      [](const std::filesystem::path& out_dir, const std::vector<std::string>& classes, std::size_t per_class, std::size_t points,
         std::uint64_t seed, const std::string& task, double noise) {
        SynthConfig s;
        s.families.clear();
        for (const auto& c : classes) s.families.push_back(parse_shape_family(c));
        s.samples_per_class = per_class;
        s.points_per_cloud = points;
        s.seed = seed;
        s.task = parse_task(task);
        s.noise_stddev = noise;
        return generate_synthetic(s, out_dir);
      },
      py::arg("out_dir"), py::arg("classes") = std::vector<std::string>{"sphere", "cube", "torus", "cylinder"},
      py::arg("per_class") = 8, py::arg("points") = 256, py::arg("seed") = 0, py::arg("task") = "cls", py::arg("noise") = 0.01,
      "Writes a synthetic dataset and returns the manifest path.");
  m.def(
      "load_dataset",
      [](const std::filesystem::path& manifest) {
        const Dataset d = load_dataset(manifest);
        py::list clouds;
        for (const auto& c : d.clouds) {
          py::dict e;
          e["features"] = c.features();
          e["label"] = c.shape_label ? py::object(py::int_(*c.shape_label)) : py::object(py::none());
          e["point_labels"] = c.point_labels;
          clouds.append(e);
        }
        return clouds;
      },
      py::arg("manifest"));

  m.def("run", &run_cli, py::arg("args"), "Runs the command-line interface in-process; returns (exit code, stdout, stderr).");

  py::class_<PyModel>(m, "Model")
      .def(py::init([](std::uint64_t seed, const py::kwargs& kwargs) {
             return PyModel(Model<double>(config_from(kwargs), seed));
           }),
           py::arg("seed") = 0)
      .def_static(
          "load", [](const std::filesystem::path& path) { return PyModel(load_checkpoint<double>(path)); }, py::arg("path"))
      .def_property_readonly("config", [](const PyModel& p) { return config_to_dict(p.config()); })
      .def("logits", &PyModel::logits, py::arg("features"))
      .def("predict_class", &PyModel::predict_class, py::arg("features"))
      .def("predict_parts", &PyModel::predict_parts, py::arg("features"), py::arg("parts") = std::vector<int>{})
      .def("trace", &PyModel::trace, py::arg("features"), "Intermediate feature maps of one forward pass.")
      .def("parameters", &PyModel::parameters)
      .def("save", &PyModel::save, py::arg("path"));
}
