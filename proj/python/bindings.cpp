#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "eedkit/diffusion.hpp"
#include "eedkit/image_io.hpp"
#include "eedkit/metrics.hpp"
#include "eedkit/params.hpp"

namespace py = pybind11;
using namespace eedkit;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using MaskArray = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

// HxW or HxWxC (interleaved) -> planar Image
Image to_image(const Array& a) {
  if (a.ndim() != 2 && a.ndim() != 3) throw ParameterError("image must be HxW or HxWxC");
  const int h = static_cast<int>(a.shape(0));
  const int w = static_cast<int>(a.shape(1));
  const int ch = a.ndim() == 3 ? static_cast<int>(a.shape(2)) : 1;
  Image img(h, w, ch);
  const double* src = a.data();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < ch; ++c) img(y, x, c) = src[(static_cast<std::size_t>(y) * w + x) * ch + c];
  return img;
}

py::array_t<double> from_image(const Image& img, bool squeeze) {
  const int h = img.height(), w = img.width(), ch = img.channels();
  std::vector<py::ssize_t> shape{h, w};
  if (!(squeeze && ch == 1)) shape.push_back(ch);
  py::array_t<double> out(shape);
  double* dst = out.mutable_data();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < ch; ++c) dst[(static_cast<std::size_t>(y) * w + x) * ch + c] = img(y, x, c);
  return out;
}

LabelMask to_mask(const MaskArray& a, int ignore) {
  if (a.ndim() != 2) throw ParameterError("label mask must be HxW");
  LabelMask m(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), 0,
              static_cast<ClassId>(ignore));
  std::copy(a.data(), a.data() + a.size(), m.labels.begin());
  return m;
}

ClassSet class_set_from(const std::optional<std::vector<std::pair<int, std::string>>>& classes) {
  if (!classes) return common_classes();
  ClassSet set;
  for (const auto& [id, name] : *classes) set.classes.emplace_back(static_cast<ClassId>(id), name);
  return set;
}

}  // namespace

PYBIND11_MODULE(_eedkit, m) {
  m.doc() = "Edge enhancing diffusion and segmentation metrics.";

  py::register_exception<ParameterError>(m, "ParameterError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<NotFoundError>(m, "NotFoundError", PyExc_KeyError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

  py::class_<DiffusionParams>(m, "DiffusionParams")
      .def(py::init<>())
      .def_readwrite("kappa", &DiffusionParams::kappa)
      .def_readwrite("presmooth_sigma", &DiffusionParams::presmooth_sigma)
      .def_readwrite("presmooth_kernel", &DiffusionParams::presmooth_kernel)
      .def_readwrite("orient_sigma", &DiffusionParams::orient_sigma)
      .def_readwrite("orient_kernel", &DiffusionParams::orient_kernel)
      .def_readwrite("tau", &DiffusionParams::tau)
      .def_readwrite("steps", &DiffusionParams::steps)
      .def_readwrite("snapshots", &DiffusionParams::snapshots)
      .def("validate", &DiffusionParams::validate)
      .def("to_toml", [](const DiffusionParams& p) { return preset_to_toml(p); })
      .def_static("from_toml", [](const std::string& text) { return preset_from_toml(text); })
      .def("__eq__", [](const DiffusionParams& a, const DiffusionParams& b) { return a == b; })
      .def("__repr__", [](const DiffusionParams& p) {
        return "DiffusionParams(kappa=" + std::to_string(p.kappa) +
               ", steps=" + std::to_string(p.steps) + ")";
      });

  m.def("preset", [](const std::string& name) { return find_preset(name); }, py::arg("name"));
  m.def("preset_names", [] {
    std::vector<std::string> names;
    for (const auto& p : builtin_presets()) names.push_back(p.name);
    return names;
  });

  m.def(
      "eed_run",
      [](const Array& image, const DiffusionParams& params) {
        const Image img = to_image(image);
        std::vector<Snapshot> snaps;
        {
          py::gil_scoped_release release;
          snaps = eed_run(img, params);
        }
        py::dict out;
        for (const auto& s : snaps) out[py::int_(s.step)] = from_image(s.image, image.ndim() == 2);
        return out;
      },
      py::arg("image"), py::arg("params"),
      "Runs EED; returns {step: image} for the requested snapshots.");

  m.def("dirichlet_energy", [](const Array& image) { return dirichlet_energy(to_image(image)); });

  m.def("load_image", [](const std::string& path) { return from_image(load_image(path), false); });
  m.def("encode_png", [](const Array& image) {
    const Bytes b = encode_png(to_image(image));
    return py::bytes(reinterpret_cast<const char*>(b.data()), b.size());
  });
  m.def("decode_image", [](const py::bytes& data) {
    const std::string s = data;
    return from_image(decode_image(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size())),
                      false);
  });

  m.def(
      "segments",
      [](const MaskArray& gt, int ignore) {
        py::list out;
        for (const auto& seg : connected_components(to_mask(gt, ignore))) {
          out.append(py::dict(py::arg("id") = seg.id, py::arg("class_id") = seg.class_id,
                              py::arg("area") = seg.area(),
                              py::arg("boundary") = seg.boundary.size()));
        }
        return out;
      },
      py::arg("gt"), py::arg("ignore") = kIgnoreId,
      "8-connected ground-truth segments in raster order.");

  m.def(
      "segment_scores",
      [](const MaskArray& pred, const MaskArray& gt, std::optional<Array> image, int ignore) {
        const LabelMask p = to_mask(pred, ignore);
        const LabelMask g = to_mask(gt, ignore);
        if (!p.same_shape(g)) throw ParameterError("pred and gt differ in size");
        std::optional<Image> img;
        if (image) img = to_image(*image);
        py::list out;
        for (const auto& seg : connected_components(g)) {
          py::dict row(py::arg("id") = seg.id, py::arg("class_id") = seg.class_id,
                       py::arg("area") = seg.area(), py::arg("s_iou") = s_iou(p, seg));
          row["visibility"] = img ? py::cast(boundary_visibility(*img, seg)) : py::none();
          out.append(row);
        }
        return out;
      },
      py::arg("pred"), py::arg("gt"), py::arg("image") = py::none(), py::arg("ignore") = kIgnoreId,
      "Per-segment s_IoU, plus boundary visibility when the image is given.");

  m.def(
      "class_iou",
      [](const std::vector<MaskArray>& preds, const std::vector<MaskArray>& gts,
         std::optional<std::vector<std::pair<int, std::string>>> classes, int ignore) {
        if (preds.size() != gts.size()) throw ParameterError("preds and gts differ in length");
        std::vector<LabelMask> p, g;
        for (std::size_t i = 0; i < preds.size(); ++i) {
          p.push_back(to_mask(preds[i], ignore));
          g.push_back(to_mask(gts[i], ignore));
        }
        const MetricsReport r = class_iou(p, g, class_set_from(classes));
        py::dict ious;
        for (const auto& c : r.classes) {
          ious[py::str(c.name)] = c.iou ? py::cast(*c.iou) : py::none();
        }
        return py::make_tuple(r.miou, ious);
      },
      py::arg("preds"), py::arg("gts"), py::arg("classes") = py::none(),
      py::arg("ignore") = kIgnoreId, "Returns (mIoU, {class name: IoU or None}).");

  m.def("acc_rel", &acc_rel, py::arg("acc_cs"), py::arg("acc_aa"));
}
