// SPDX-License-Identifier: Apache-2.0
// Python module `tandkit`: scenes, heatmaps, matching, metrics, runs and inference.
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>
#include <optional>
#include <string>
#include <vector>

#include "tandkit/checkpoint.hpp"
#include "tandkit/config.hpp"
#include "tandkit/datagen.hpp"
#include "tandkit/error.hpp"
#include "tandkit/evaluation.hpp"
#include "tandkit/heatmap.hpp"
#include "tandkit/trainer.hpp"

namespace py = pybind11;
using namespace tand;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using ByteArray = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

py::array_t<float> to_numpy(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<float> out(shape);
  std::memcpy(out.mutable_data(), t.data().data(), t.numel() * sizeof(float));
  return out;
}

Tensor from_numpy(const FloatArray& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(shape, std::vector<float>(a.data(), a.data() + a.size()));
}

py::array_t<std::uint8_t> mask_to_numpy(const LabelMap& m) {
  py::array_t<std::uint8_t> out({m.height, m.width});
  std::memcpy(out.mutable_data(), m.labels.data(), m.labels.size());
  return out;
}

LabelMap mask_from_numpy(const ByteArray& a) {
  if (a.ndim() != 2) throw ShapeError("label map must be 2-D [H, W]");
  return {static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0)),
          std::vector<std::uint8_t>(a.data(), a.data() + a.size())};
}

py::object json_to_py(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

std::vector<PointAnnotation> points_from(const std::vector<std::tuple<float, float, int>>& pts) {
  std::vector<PointAnnotation> out;
  for (const auto& [x, y, c] : pts) out.push_back({x, y, c});
  return out;
}

std::vector<std::tuple<float, float, int>> points_to(const std::vector<PointAnnotation>& pts) {
  std::vector<std::tuple<float, float, int>> out;
  for (const auto& p : pts) out.emplace_back(p.x, p.y, p.class_id);
  return out;
}

std::vector<Detection> dets_from(const std::vector<std::tuple<float, float, float, std::optional<int>>>& dets) {
  std::vector<Detection> out;
  for (const auto& [x, y, s, c] : dets) {
    Detection d;
    d.x = x;
    d.y = y;
    d.score = s;
    d.class_id = c;
    out.push_back(d);
  }
  return out;
}

py::list dets_to(const std::vector<Detection>& dets) {
  py::list out;
  for (const auto& d : dets) {
    py::dict e;
    e["x"] = d.x;
    e["y"] = d.y;
    e["score"] = d.score;
    e["class_id"] = d.class_id ? py::object(py::int_(*d.class_id)) : py::object(py::none());
    out.append(e);
  }
  return out;
}

py::dict scene_to(const Scene& s) {
  py::dict d;
  d["image"] = to_numpy(s.image);
  d["mask"] = mask_to_numpy(s.tissue_mask);
  d["points"] = points_to(s.points);
  d["point_tissue"] = s.point_tissue;
  return d;
}

DecodeParams decode_params(float threshold, int window, int stride, int max_dets) {
  DecodeParams p;
  p.threshold = threshold;
  p.window = window;
  p.stride = stride;
  p.max_dets = max_dets;
  return p;
}

}  // namespace

PYBIND11_MODULE(tandkit, m) {
  m.doc() = "Tissue-aware point-supervised nuclei detection and classification";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<InvalidArgument>(m, "InvalidArgument", PyExc_ValueError);

  m.def(
      "parse_config", [](const std::string& text) { return TrainConfig::parse(text).key_values(); }, py::arg("text"),
      "Validated key-value config with every default filled in.");
  m.def(
      "generate_scene",
      [](const std::string& config_text, std::uint64_t index) {
        return scene_to(generate_scene(TrainConfig::parse(config_text).scene, index));
      },
      py::arg("config_text"), py::arg("index"));
  m.def(
      "encode_center_map",
      [](const std::vector<std::tuple<float, float, int>>& points, int map_h, int map_w, int stride, float sigma) {
        return to_numpy(encode_center_map(points_from(points), map_h, map_w, stride, sigma).values);
      },
      py::arg("points"), py::arg("map_h"), py::arg("map_w"), py::arg("stride") = 4, py::arg("sigma") = 2.0f);
  m.def(
      "decode_peaks",
      [](const FloatArray& heat, float threshold, int window, int stride, int max_dets) {
        return dets_to(decode_peaks(from_numpy(heat), decode_params(threshold, window, stride, max_dets)));
      },
      py::arg("heat"), py::arg("threshold") = 0.3f, py::arg("window") = 3, py::arg("stride") = 4,
      py::arg("max_dets") = 2000);
  m.def(
      "match_centers",
      [](const std::vector<std::tuple<float, float, int>>& gts,
         const std::vector<std::tuple<float, float, float, std::optional<int>>>& preds, float radius) {
        const auto g = points_from(gts);
        const auto p = dets_from(preds);
        const MatchReport r = match_centers(g, p, radius);
        const DetectionMetrics dm = detection_metrics(r);
        py::dict out;
        std::vector<std::tuple<int, int, float>> matches;
        for (const Match& mt : r.matches) matches.emplace_back(mt.gt_index, mt.pred_index, mt.distance);
        out["matches"] = matches;
        out["tp"] = dm.tp;
        out["fp"] = dm.fp;
        out["fn"] = dm.fn;
        out["precision"] = dm.precision;
        out["recall"] = dm.recall;
        out["f1"] = dm.f1;
        return out;
      },
      py::arg("gts"), py::arg("preds"), py::arg("radius") = kDefaultMatchRadius,
      "gts: (x, y, class); preds: (x, y, score, class or None).");
  m.def(
      "dice_per_class",
      [](const ByteArray& pred, const ByteArray& gt, int classes) {
        return dice_per_class(mask_from_numpy(pred), mask_from_numpy(gt), classes);
      },
      py::arg("pred"), py::arg("gt"), py::arg("classes"));
  m.def(
      "run_experiment",
      [](const std::string& config_text, const std::filesystem::path& out_dir, bool resume) {
        const TrainConfig cfg = TrainConfig::parse(config_text);
        RunRecord r;
        {
          py::gil_scoped_release release;
          r = run_experiment(cfg, out_dir, nullptr, RunOptions{resume, true});
        }
        return json_to_py(r.to_json());
      },
      py::arg("config_text"), py::arg("out_dir"), py::arg("resume") = false,
      "Runs stages 1-3 and the ablation arm; returns the run record.");

  py::class_<TandModel>(m, "Model")
      .def_static(
          "load", [](const std::filesystem::path& path) { return model_from_checkpoint(read_checkpoint(path)); },
          py::arg("path"))
      .def("config", [](const TandModel& model) { return json_to_py(model.config().to_json()); })
      .def(
          "predict",
          [](const TandModel& model, const FloatArray& image, bool film, float threshold, int window, int max_dets) {
            Shape shape(image.shape(), image.shape() + image.ndim());
            if (shape.size() == 3) shape.insert(shape.begin(), 1);
            const Tensor t(shape, std::vector<float>(image.data(), image.data() + image.size()));
            NoGradGuard guard;
            return dets_to(predict(model, t, film, decode_params(threshold, window, 4, max_dets)));
          },
          py::arg("image"), py::arg("film") = true, py::arg("threshold") = 0.3f, py::arg("window") = 3,
          py::arg("max_dets") = 2000, "image: [3, H, W] or [1, 3, H, W] floats in [0, 1].");
}
