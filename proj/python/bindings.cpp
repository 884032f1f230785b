#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "camgauge/bench.hpp"
#include "camgauge/cam.hpp"
#include "camgauge/cli.hpp"
#include "camgauge/core.hpp"
#include "camgauge/error.hpp"
#include "camgauge/metrics.hpp"
#include "camgauge/model.hpp"
#include "camgauge/refinecam.hpp"
#include "camgauge/synthdata.hpp"

namespace py = pybind11;
using namespace camgauge;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Image image_from(const Array& a) {
  if (a.ndim() == 2) {
    const auto h = static_cast<int>(a.shape(0)), w = static_cast<int>(a.shape(1));
    return Image(1, h, w, std::vector<double>(a.data(), a.data() + a.size()));
  }
  if (a.ndim() != 3) throw InvalidInput("images must be (C, H, W) or (H, W) arrays");
  return Image(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), static_cast<int>(a.shape(2)),
               std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Image& img) {
  Array out({img.channels(), img.height(), img.width()});
  std::copy(img.pixels().begin(), img.pixels().end(), out.mutable_data());
  return out;
}

Grid grid_from(const Array& a) {
  if (a.ndim() != 2) throw InvalidInput("maps must be 2-D arrays");
  return Grid(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)),
              std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Grid& g) {
  Array out({g.rows(), g.cols()});
  std::copy(g.values().begin(), g.values().end(), out.mutable_data());
  return out;
}

AttributionMap map_from(const Array& a) {
  const Grid g = grid_from(a);
  return AttributionMap(g, g.rows(), g.cols());
}

}  // namespace

PYBIND11_MODULE(_camgauge, m) {
  m.doc() = "Attribution-map evaluation toolkit (C++ core)";

  py::register_exception<InvalidInput>(m, "InvalidInput", PyExc_ValueError);
  py::register_exception<LookupError>(m, "LookupError", PyExc_KeyError);
  py::register_exception<UndefinedMetric>(m, "UndefinedMetric", PyExc_ArithmeticError);
  py::register_exception<GenerationError>(m, "GenerationError", PyExc_RuntimeError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  m.def("normalize_map", [](const Array& a) { return to_array(normalize_map(grid_from(a)).grid()); }, py::arg("raw"));
  m.def("resize_bilinear", [](const Array& a, int rows, int cols) { return to_array(resize_bilinear(grid_from(a), rows, cols)); },
        py::arg("grid"), py::arg("rows"), py::arg("cols"));
  m.def(
      "rank_pixels",
      [](const Array& a, const std::string& order) {
        return rank_pixels(map_from(a), order == "lerf" ? RankOrder::LeRF : RankOrder::MoRF).flat;
      },
      py::arg("map"), py::arg("order") = "morf", "Row-major pixel indices in MoRF or LeRF order.");

  py::class_<SmallCnn>(m, "Model")
      .def_static("load", [](const std::string& path) { return load_checkpoint(resolve_checkpoint_path(path)); },
                  py::arg("path"))
      .def_static("build",
                  [](int num_classes, int input_size, std::uint64_t seed) {
                    SmallCnnConfig c;
                    c.num_classes = num_classes;
                    c.input_size = input_size;
                    c.seed = seed;
                    return build_small_cnn(c);
                  },
                  py::arg("num_classes") = 6, py::arg("input_size") = 224, py::arg("seed") = 0)
      .def_property_readonly("num_classes", &SmallCnn::num_classes)
      .def_property_readonly("parameter_count", &SmallCnn::parameter_count)
      .def_property_readonly("layer_names",
                             [](const SmallCnn& s) {
                               std::vector<std::string> names;
                               for (const auto& l : s.layer_list()) names.push_back(l.name);
                               return names;
                             })
      .def("probabilities",
           [](SmallCnn& s, const Array& image) {
             const Image img = image_from(image);
             return s.forward({&img, 1})[0].probs;
           },
           py::arg("image"))
      .def("save", [](const SmallCnn& s, const std::string& path) { save_checkpoint(s, class_names(), path); },
           py::arg("path"));

  auto layer_index = [](SmallCnn& model, const std::string& layer) {
    return find_layer(model.layer_list(), layer).index;
  };

  m.def(
      "attribution",
      [layer_index](SmallCnn& model, const std::string& method, const Array& image, int cls, const std::string& layer,
                    std::uint64_t seed) {
        const auto fn = make_attribution(method, seed);
        return to_array(fn(model, layer_index(model, layer), image_from(image), cls).grid());
      },
      py::arg("model"), py::arg("method"), py::arg("image"), py::arg("cls"), py::arg("layer") = "stage1",
      py::arg("seed") = 0, "Normalized attribution map at input resolution.");
  m.def(
      "refine_cam",
      [layer_index](SmallCnn& model, const std::string& method, const Array& image, int cls, const std::string& layer,
                    const std::string& mode) {
        const auto fn = make_attribution(method);
        return to_array(
            refine_cam(fn, model, layer_index(model, layer), cls, image_from(image), parse_aggregation_mode(mode))
                .grid());
      },
      py::arg("model"), py::arg("method"), py::arg("image"), py::arg("cls"), py::arg("layer") = "stage1",
      py::arg("mode") = "multiply");

  m.def("average_drop", [](SmallCnn& model, const Array& image, const Array& map, int cls) {
    return average_drop(model, image_from(image), map_from(map), cls);
  }, py::arg("model"), py::arg("image"), py::arg("map"), py::arg("cls"));
  m.def("complexity", [](const Array& map) { return complexity(map_from(map)); }, py::arg("map"));
  m.def("coherency_from_maps", [](const Array& a, const Array& b) { return coherency_from_maps(map_from(a), map_from(b)).value; },
        py::arg("original"), py::arg("recomputed"));
  m.def("adcc", &adcc, py::arg("ad"), py::arg("cmx"), py::arg("chn"));
  m.def("arcc", &arcc, py::arg("chn"), py::arg("cmx"), py::arg("road"));
  m.def(
      "road",
      [](SmallCnn& model, const Array& image, const Array& map, int cls, double noise_std, std::uint64_t noise_seed,
         std::uint64_t image_key) {
        RoadConfig c;
        c.noise_std = noise_std;
        c.noise_seed = noise_seed;
        return road(model, image_from(image), map_from(map), cls, c, image_key);
      },
      py::arg("model"), py::arg("image"), py::arg("map"), py::arg("cls"), py::arg("noise_std") = 0.01,
      py::arg("noise_seed") = 0, py::arg("image_key") = 0);
  m.def(
      "noisy_linear_imputation",
      [](const Array& image, py::array_t<bool, py::array::c_style | py::array::forcecast> mask, double noise_std,
         std::uint64_t seed) {
        const Image img = image_from(image);
        if (mask.ndim() != 2 || mask.shape(0) != img.height() || mask.shape(1) != img.width())
          throw InvalidInput("mask must be (H, W)");
        PixelMask pm(img.height(), img.width());
        for (std::size_t i = 0; i < pm.removed.size(); ++i) pm.removed[i] = mask.data()[i] ? 1 : 0;
        RoadConfig c;
        c.noise_std = noise_std;
        return to_array(noisy_linear_imputation(img, pm, c, seed));
      },
      py::arg("image"), py::arg("mask"), py::arg("noise_std") = 0.0, py::arg("seed") = 0);
  m.def("cosine_similarity", [](const Array& a, const Array& b) {
    const Grid x = grid_from(a), y = grid_from(b);
    return cosine_similarity(x.values(), y.values());
  }, py::arg("map"), py::arg("ground_truth"));

  m.def(
      "rasterize_shape",
      [](int class_id, double scale, double rotation, double row, double col, double stroke, int h, int w) {
        ShapeSpec s;
        s.class_id = class_id;
        s.scale = scale;
        s.rotation_deg = rotation;
        s.center_row = row;
        s.center_col = col;
        s.stroke = stroke;
        return to_array(rasterize_shape(s, h, w).to_grid());
      },
      py::arg("class_id"), py::arg("scale"), py::arg("rotation_deg"), py::arg("center_row"), py::arg("center_col"),
      py::arg("stroke") = 2.0, py::arg("height") = 224, py::arg("width") = 224);
  m.def(
      "generate_dataset",
      [](const std::string& out, std::uint64_t seed, int train_per_class, int test_per_class, int image_size) {
        DatasetConfig c;
        c.out = out;
        c.seed = seed;
        c.train_per_class = train_per_class;
        c.test_per_class = test_per_class;
        c.generator.image_size = image_size;
        if (image_size < 128) {
          c.generator.scale_min = std::max(4.0, image_size / 14.0);
          c.generator.scale_max = image_size * 4.0 / 7.0;
        }
        return generate_dataset(c).samples.size();
      },
      py::arg("out"), py::arg("seed") = 0, py::arg("train_per_class") = 600, py::arg("test_per_class") = 100,
      py::arg("image_size") = 224, "Generates the shapes dataset; returns the number of samples.");
  m.def("class_names", &class_names);

  m.def(
      "train",
      [](const std::string& dataset, int epochs, std::uint64_t seed, int train_per_class) {
        TrainConfig c;
        c.epochs = epochs;
        c.seed = seed;
        c.train_per_class = train_per_class;
        py::gil_scoped_release release;
        TrainResult r = train_classifier(dataset, c);
        return std::make_pair(std::move(r.model), r.test_accuracy);
      },
      py::arg("dataset"), py::arg("epochs") = TrainConfig{}.epochs, py::arg("seed") = 0, py::arg("train_per_class") = 0,
      "Returns (model, test_accuracy).");
  m.def(
      "evaluate",
      [](const std::string& config_json) {
        const RunConfig c = run_config_from_json(config_json);
        py::gil_scoped_release release;
        const EvalSummary s = evaluate(c);
        return std::map<std::string, std::size_t>{
            {"images", s.images}, {"written", s.written}, {"skipped", s.skipped}, {"failed", s.failed}};
      },
      py::arg("config_json"), "Runs an evaluation described by a JSON run config.");
  m.def(
      "correlate",
      [](const std::string& results, const std::string& against) {
        const auto records = read_records(results);
        std::map<std::string, std::map<std::string, double>> out;
        for (const auto& e : correlate(records, against).entries)
          if (e.defined) out[e.metric] = {{"pearson", e.pearson}, {"spearman", e.spearman}};
        return out;
      },
      py::arg("results"), py::arg("against") = "cosine");
  m.def("main", [](const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int code = dispatch(args, out, err);
    py::print(out.str(), py::arg("end") = "");
    if (!err.str().empty()) py::print(err.str(), py::arg("end") = "", py::arg("file") = py::module_::import("sys").attr("stderr"));
    return code;
  }, py::arg("args"), "Runs the command-line interface; returns its exit code.");
}
