#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "patch2loc/cli.hpp"
#include "patch2loc/error.hpp"
#include "patch2loc/evaluation.hpp"
#include "patch2loc/loss.hpp"
#include "patch2loc/phantom.hpp"
#include "patch2loc/pipeline.hpp"
#include "patch2loc/scoring.hpp"

namespace py = pybind11;
using namespace patch2loc;

namespace {

// Volumes cross the boundary as Fortran-ordered (e1, e2, e3) arrays, which
// is exactly the Grid3 memory layout.
template <class T>
using FArray = py::array_t<T, py::array::f_style | py::array::forcecast>;

template <class T>
FArray<T> to_numpy(const Grid3<T>& g) {
  FArray<T> out({g.extents.e1, g.extents.e2, g.extents.e3});
  std::copy(g.data.begin(), g.data.end(), out.mutable_data());
  return out;
}

template <class T>
Grid3<T> from_numpy(const FArray<T>& a, const char* name) {
  if (a.ndim() != 3) throw ShapeMismatchError(std::string(name) + " must be a 3-d array");
  Grid3<T> g(Extents{static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), static_cast<int>(a.shape(2))});
  std::copy(a.data(), a.data() + a.size(), g.data.begin());
  return g;
}

Volume make_volume(const FArray<float>& intensities, const FArray<std::uint8_t>& mask, const std::string& modality) {
  Volume v;
  v.intensities = from_numpy(intensities, "intensities");
  v.brain_mask = from_numpy(mask, "mask");
  if (!(v.brain_mask.extents == v.intensities.extents)) throw ShapeMismatchError("mask and volume extents differ");
  v.modality = parse_modality(modality);
  v.validate();
  return v;
}

LocationPrediction make_prediction(std::array<double, 2> mu, std::array<double, 2> logvar) {
  LocationPrediction p;
  p.mu = mu;
  p.logvar = logvar;
  return p;
}

nlohmann::json to_json(const py::dict& d) {
  return nlohmann::json::parse(py::module_::import("json").attr("dumps")(d).cast<std::string>());
}

py::dict triple_dict(const ScoreTriple& t) {
  py::dict d;
  d["score"] = t.score;
  d["log_error"] = t.log_error;
  d["log_variance"] = t.log_variance;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Patch location regression for unsupervised anomaly localization";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", base.ptr());
  py::register_exception<DivergenceError>(m, "DivergenceError", base.ptr());
  // Subclasses of ValidationError are translated by the base registration.

  m.def(
      "generate_phantom",
      [](const py::dict& config) {
        const auto ph = generate_phantom(PhantomConfig::from_json(to_json(config)));
        py::dict d;
        d["intensities"] = to_numpy(ph.volume.intensities);
        d["mask"] = to_numpy(ph.volume.brain_mask);
        d["truth"] = to_numpy(ph.truth.labels);
        d["subject_id"] = ph.volume.subject_id;
        d["modality"] = std::string(to_string(ph.volume.modality));
        py::list lesions;
        for (const auto& l : ph.lesions) {
          py::dict ld;
          ld["centre"] = l.centre;
          ld["radii"] = l.radii;
          ld["voxels"] = l.voxels;
          lesions.append(ld);
        }
        d["lesions"] = lesions;
        return d;
      },
      py::arg("config") = py::dict(),
      "Synthetic T1-like volume. Keys of `config` follow the phantom config file section.");

  m.def(
      "abnormality_score",
      [](std::array<double, 2> y, std::array<double, 2> mu, std::array<double, 2> logvar, double eps) {
        return triple_dict(abnormality_score(Vec2{y[0], y[1]}, make_prediction(mu, logvar), eps));
      },
      py::arg("y"), py::arg("mu"), py::arg("logvar"), py::arg("eps") = 0.5);

  m.def(
      "beta_nll",
      [](std::array<double, 2> y, std::array<double, 2> mu, std::array<double, 2> logvar, double beta) {
        return beta_nll(Vec2{y[0], y[1]}, make_prediction(mu, logvar), beta);
      },
      py::arg("y"), py::arg("mu"), py::arg("logvar"), py::arg("beta") = 0.5);

  m.def(
      "best_dice",
      [](const py::array_t<float, py::array::forcecast>& s, const py::array_t<std::uint8_t, py::array::forcecast>& g) {
        return best_dice({s.data(), static_cast<std::size_t>(s.size())}, {g.data(), static_cast<std::size_t>(g.size())});
      },
      py::arg("scores"), py::arg("labels"));
  m.def(
      "auprc",
      [](const py::array_t<float, py::array::forcecast>& s, const py::array_t<std::uint8_t, py::array::forcecast>& g) {
        return auprc({s.data(), static_cast<std::size_t>(s.size())}, {g.data(), static_cast<std::size_t>(g.size())});
      },
      py::arg("scores"), py::arg("labels"));
  m.def(
      "spearman",
      [](const std::vector<double>& x, const std::vector<double>& y) { return spearman(x, y); }, py::arg("x"),
      py::arg("y"));

  py::class_<LocModel>(m, "LocModel")
      .def_static("load", &LocModel::load, py::arg("path"))
      .def("save", &LocModel::save, py::arg("path"))
      .def_property_readonly("patch_shape",
                             [](const LocModel& lm) {
                               return std::array<int, 2>{lm.config().patch_shape.s1, lm.config().patch_shape.s2};
                             })
      .def_property_readonly("modality",
                             [](const LocModel& lm) { return std::string(to_string(lm.metadata().modality)); })
      .def_property_readonly("training_step", [](const LocModel& lm) { return lm.metadata().training_step; })
      .def(
          "predict",
          [](const LocModel& lm, const py::array_t<float, py::array::f_style | py::array::forcecast>& patch, double a) {
            if (patch.ndim() != 2) throw ShapeMismatchError("patch must be a 2-d array");
            Grid2<float> g(static_cast<int>(patch.shape(0)), static_cast<int>(patch.shape(1)));
            std::copy(patch.data(), patch.data() + patch.size(), g.data.begin());
            const auto p = lm.predict(g, a);
            return py::make_tuple(p.mu, p.logvar);
          },
          py::arg("patch"), py::arg("a"), "Returns (mu, logvar) for one (S1, S2) patch at slice percentage a.")
      .def(
          "score_volume",
          [](const LocModel& lm, const FArray<float>& intensities, const FArray<std::uint8_t>& mask,
             const std::string& modality, int stride, bool preprocess, int threads) {
            Volume v = make_volume(intensities, mask, modality);
            if (preprocess) v = preprocess_for(lm, v);
            PatchSpec spec;
            spec.stride = stride;
            ScoringOptions opts;
            opts.threads = threads;
            VolumeScores s;
            {
              py::gil_scoped_release release;
              s = score_volume(lm, v, spec, opts);
            }
            py::dict d;
            d["score"] = to_numpy(s.score);
            d["log_error"] = to_numpy(s.error);
            d["log_variance"] = to_numpy(s.variance);
            d["valid"] = to_numpy(s.valid);
            return d;
          },
          py::arg("intensities"), py::arg("mask"), py::arg("modality") = "T1", py::arg("stride") = 4,
          py::arg("preprocess") = true, py::arg("threads") = 1,
          "Anomaly heatmaps with the volume's shape. The checkpoint's preprocessing is applied first unless "
          "preprocess is False.");

  m.def(
      "evaluate_subject",
      [](const FArray<float>& scores, const FArray<std::uint8_t>& mask, const FArray<std::uint8_t>& truth,
         bool mask_only) -> py::object {
        Volume v;
        v.brain_mask = from_numpy(mask, "mask");
        v.intensities = Grid3<float>(v.brain_mask.extents, 0.0f);
        const auto m = evaluate_subject(from_numpy(scores, "scores"), v, GroundTruthMask{from_numpy(truth, "truth")},
                                        mask_only);
        if (!m) return py::none();
        py::dict d;
        d["best_dice"] = m->best_dice;
        d["auprc"] = m->auprc;
        d["lesion_voxels"] = m->lesion_voxels;
        d["domain_voxels"] = m->domain_voxels;
        return d;
      },
      py::arg("scores"), py::arg("mask"), py::arg("truth"), py::arg("mask_only") = true);

  m.def(
      "run_cli",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "patch2loc");
        std::vector<const char*> argv;
        for (const auto& a : args) argv.push_back(a.c_str());
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs a CLI subcommand in-process and returns (exit_code, stdout, stderr).");
}
