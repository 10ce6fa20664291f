#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "recovermark/config.hpp"
#include "recovermark/dataset.hpp"
#include "recovermark/distortions.hpp"
#include "recovermark/forensics.hpp"
#include "recovermark/models.hpp"
#include "recovermark/training.hpp"

namespace py = pybind11;
using namespace recovermark;

namespace {

using ImageArray = py::array_t<double, py::array::c_style | py::array::forcecast>;
using MaskArray = py::array_t<bool, py::array::c_style | py::array::forcecast>;

// Python side uses H×W×3 arrays; the library stores channel planes.
Image image_from(const ImageArray& a) {
  if (a.ndim() != 3 || a.shape(2) != 3) throw DimensionError("expected an H×W×3 array");
  const int h = static_cast<int>(a.shape(0)), w = static_cast<int>(a.shape(1));
  Image im(h, w);
  auto v = a.unchecked<3>();
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) im.at(c, y, x) = v(y, x, c);
  return im;
}

ImageArray image_to(const Image& im) {
  ImageArray a({im.height(), im.width(), 3});
  auto v = a.mutable_unchecked<3>();
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < im.height(); ++y)
      for (int x = 0; x < im.width(); ++x) v(y, x, c) = im.at(c, y, x);
  return a;
}

BinaryMask mask_from(const MaskArray& a) {
  if (a.ndim() != 2) throw DimensionError("expected an H×W mask");
  const int h = static_cast<int>(a.shape(0)), w = static_cast<int>(a.shape(1));
  BinaryMask m(h, w);
  auto v = a.unchecked<2>();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) m.at(y, x) = v(y, x) ? 1 : 0;
  return m;
}

MaskArray mask_to(const BinaryMask& m) {
  MaskArray a({m.height(), m.width()});
  auto v = a.mutable_unchecked<2>();
  for (int y = 0; y < m.height(); ++y)
    for (int x = 0; x < m.width(); ++x) v(y, x) = m.at(y, x) != 0;
  return a;
}

py::array_t<double> map_to(const std::vector<double>& values, int h, int w) {
  py::array_t<double> a({h, w});
  std::copy(values.begin(), values.end(), a.mutable_data());
  return a;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Saliency-recovery watermarking: embedding, recovery and forensics";

  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<AttackError>(m, "AttackError", PyExc_ValueError);
  py::register_exception<CheckpointError>(m, "CheckpointError", PyExc_RuntimeError);
  py::register_exception<UntrainedModelError>(m, "UntrainedModelError", PyExc_ValueError);

  m.def("segment", [](const ImageArray& image, const MaskArray& mask) {
    const auto d = segment(image_from(image), mask_from(mask));
    return py::make_tuple(image_to(d.saliency), image_to(d.background));
  }, py::arg("image"), py::arg("mask"), "Split into (saliency, background).");
  m.def("composite", [](const ImageArray& saliency, const ImageArray& background, const MaskArray& mask) {
    return image_to(composite(image_from(saliency), image_from(background), mask_from(mask)));
  }, py::arg("saliency"), py::arg("background"), py::arg("mask"));

  m.def("psnr", [](const ImageArray& a, const ImageArray& b, std::optional<MaskArray> region) {
    return region ? psnr(image_from(a), image_from(b), mask_from(*region)) : psnr(image_from(a), image_from(b));
  }, py::arg("a"), py::arg("b"), py::arg("region") = py::none());
  m.def("ms_ssim", [](const ImageArray& a, const ImageArray& b) { return ms_ssim(image_from(a), image_from(b)); },
        py::arg("a"), py::arg("b"));
  m.def("ncc", [](const ImageArray& a, const ImageArray& b, const MaskArray& support) {
    return ncc(image_from(a), image_from(b), mask_from(support));
  }, py::arg("a"), py::arg("b"), py::arg("support"), "Pearson correlation over the support; None when undefined.");
  m.def("f1_auc", [](const py::array_t<double, py::array::c_style | py::array::forcecast>& diff, const MaskArray& pred,
                     const MaskArray& gt) {
    std::vector<double> d(diff.data(), diff.data() + diff.size());
    const auto r = f1_auc(d, mask_from(pred), mask_from(gt));
    return py::make_tuple(r.f1, r.auc);
  }, py::arg("diff_map"), py::arg("pred"), py::arg("gt"));

  m.def("localize", [](const ImageArray& recovered, const ImageArray& suspicious, const MaskArray& mask,
                       double threshold) {
    LocalizationOptions opt;
    opt.threshold = threshold;
    const Image s = image_from(suspicious);
    const auto r = localize(image_from(recovered), s, mask_from(mask), opt);
    return py::make_tuple(map_to(r.diff_map, s.height(), s.width()), mask_to(r.mask));
  }, py::arg("recovered"), py::arg("suspicious"), py::arg("mask"), py::arg("threshold") = kDefaultLocalizationThreshold,
     "Returns (diff_map, tamper_mask).");

  m.def("attack", [](const ImageArray& image, const std::string& spec, std::optional<MaskArray> mask,
                     std::uint64_t seed) {
    const Image im = image_from(image);
    const BinaryMask mk = mask ? mask_from(*mask) : BinaryMask(im.height(), im.width());
    return image_to(apply_chain(im, parse_attack_chain(spec), mk, seed, {}));
  }, py::arg("image"), py::arg("spec"), py::arg("mask") = py::none(), py::arg("seed") = 0,
     "Applies an attack chain such as \"noise:0.05;jpeg:75\". Regeneration needs the CLI.");

  m.def("schedule", [](int epochs, std::vector<std::string> order, bool cumulative) {
    std::vector<DistortionKind> kinds;
    for (const auto& t : order) kinds.push_back(parse_distortion_kind(t));
    if (kinds.empty()) kinds = TrainConfig{}.distortion_order;
    std::vector<py::tuple> out;
    for (const auto& w : build_schedule(epochs, kinds, cumulative).windows)
      out.push_back(py::make_tuple(to_token(w.kind), w.start, w.end));
    return out;
  }, py::arg("epochs"), py::arg("order") = std::vector<std::string>{}, py::arg("cumulative") = true,
     "Stage-2 distortion windows as (kind, start, end) tuples.");

  m.def("synthetic_dataset", [](int count, int side, std::uint64_t seed) {
    SyntheticOptions o;
    o.count = count;
    o.side = side;
    o.seed = seed;
    std::vector<py::tuple> out;
    for (const auto& s : make_synthetic_dataset(o)) out.push_back(py::make_tuple(image_to(s.image), mask_to(s.mask)));
    return out;
  }, py::arg("count") = 4, py::arg("side") = 64, py::arg("seed") = 0, "List of (image, mask) pairs.");

  m.def("load_image", [](const std::filesystem::path& p) { return image_to(load_image(p)); });
  m.def("save_image", [](const ImageArray& a, const std::filesystem::path& p) { save_image(image_from(a), p); });
  m.def("load_mask", [](const std::filesystem::path& p) { return mask_to(load_mask(p)); });

  py::class_<ModelBundle>(m, "Model")
      .def_static("load", [](const std::filesystem::path& path) {
        return load_checkpoint(path, ArchConfig{});
      }, py::arg("path"), "Loads a checkpoint written with the default architecture.")
      .def_static("load_with_config", [](const std::filesystem::path& path, const std::filesystem::path& config) {
        return load_checkpoint(path, load_config(config).train.arch);
      }, py::arg("path"), py::arg("config"))
      .def_static("train", [](const std::vector<std::pair<ImageArray, MaskArray>>& pairs, int epochs,
                              std::uint64_t seed, int batch_size) {
        Dataset data;
        for (const auto& [im, mk] : pairs) data.push_back({"s" + std::to_string(data.size()), image_from(im), mask_from(mk)});
        TrainConfig cfg;
        cfg.epochs = epochs;
        cfg.seed = seed;
        cfg.batch_size = batch_size;
        ModelBundle bundle(cfg.arch, seed);
        py::gil_scoped_release nogil;
        train_stage1(bundle, cfg, data);
        return bundle;
      }, py::arg("pairs"), py::arg("epochs"), py::arg("seed") = 0, py::arg("batch_size") = 8,
         "Stage-1 training with the default architecture.")
      .def("save", [](const ModelBundle& b, const std::filesystem::path& path) { save_checkpoint(b, path); })
      .def_property_readonly("stage", [](const ModelBundle& b) { return to_string(b.stage); })
      .def_property_readonly("digest", &ModelBundle::digest)
      .def("embed", [](const ModelBundle& b, const ImageArray& image, const MaskArray& mask) {
        return image_to(embed(image_from(image), mask_from(mask), b));
      }, py::arg("image"), py::arg("mask"))
      .def("recover", [](const ModelBundle& b, const ImageArray& image, const MaskArray& mask) {
        return image_to(recover(image_from(image), mask_from(mask), b));
      }, py::arg("image"), py::arg("mask"))
      .def("verify", [](const ModelBundle& b, const ImageArray& suspicious, const ImageArray& original,
                        const MaskArray& mask, double threshold) {
        const BinaryMask mk = mask_from(mask);
        const Image rec = recover(image_from(suspicious), mk, b);
        const auto r = verify(rec, segment(image_from(original), mk).saliency, mk, threshold);
        py::dict d;
        d["ncc"] = r.ncc;
        d["owned"] = r.owned;
        d["threshold"] = r.threshold;
        d["reason"] = r.reason;
        return d;
      }, py::arg("suspicious"), py::arg("original"), py::arg("mask"), py::arg("threshold") = kDefaultNccThreshold);
}
