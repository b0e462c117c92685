// Python bindings for the main operations: phantom/benchmark generation,
// similarity metrics, field utilities and single-pair registration.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <stdexcept>

#include "regsynth/eval.hpp"
#include "regsynth/ffdreg.hpp"
#include "regsynth/image.hpp"
#include "regsynth/mi.hpp"
#include "regsynth/synthgen.hpp"
#include "regsynth/vem.hpp"

namespace py = pybind11;
using namespace regsynth;

namespace {

using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

Image2D image_from_array(const DoubleArray& a, double spacing_mm) {
  if (a.ndim() != 2) throw std::invalid_argument("expected a 2D array");
  Image2D img(int(a.shape(1)), int(a.shape(0)), spacing_mm);
  std::memcpy(img.data.data(), a.data(), sizeof(double) * img.size());
  img.validate();
  return img;
}

py::array_t<double> array_from_image(const Image2D& img) {
  py::array_t<double> out({img.height, img.width});
  std::memcpy(out.mutable_data(), img.data.data(), sizeof(double) * img.size());
  return out;
}

py::array_t<double> array_from_field(const Field2& f) {
  py::array_t<double> out({2, f.height, f.width});
  std::memcpy(out.mutable_data(), f.dx.data(), sizeof(double) * f.size());
  std::memcpy(out.mutable_data() + f.size(), f.dy.data(), sizeof(double) * f.size());
  return out;
}

Field2 field_from_array(const DoubleArray& a, double spacing_mm) {
  if (a.ndim() != 3 || a.shape(0) != 2)
    throw std::invalid_argument("expected a (2, h, w) array");
  Field2 f(int(a.shape(2)), int(a.shape(1)), spacing_mm);
  std::memcpy(f.dx.data(), a.data(), sizeof(double) * f.size());
  std::memcpy(f.dy.data(), a.data() + f.size(), sizeof(double) * f.size());
  return f;
}

LandmarkSet landmarks_from_array(const DoubleArray& a, double sigma_mm) {
  LandmarkSet out;
  out.sigma_mm = sigma_mm;
  if (a.size() == 0) return out;
  if (a.ndim() != 2 || a.shape(1) != 4)
    throw std::invalid_argument("expected an (n, 4) array of mx,my,hx,hy in mm");
  for (py::ssize_t i = 0; i < a.shape(0); ++i)
    out.points.push_back(Landmark{a.at(i, 0), a.at(i, 1), a.at(i, 2), a.at(i, 3)});
  return out;
}

} // namespace

PYBIND11_MODULE(_regsynth, m) {
  m.doc() = "Joint contrast synthesis and nonrigid 2D registration";

  m.def(
      "generate_phantom_pair",
      [](int size, std::uint64_t seed) {
        const PhantomPair p = generate_phantom_pair(size, seed);
        py::array_t<std::uint8_t> labels({size, size});
        std::memcpy(labels.mutable_data(), p.labels.data(), p.labels.size());
        return py::make_tuple(array_from_image(p.a), array_from_image(p.b), labels);
      },
      py::arg("size"), py::arg("seed"),
      "Aligned two-modality phantom; returns (a, b, labels).");

  m.def(
      "generate_benchmark_pair",
      [](int size, double sigma_v, int n_landmarks, std::uint64_t seed) {
        SynthConfig cfg;
        cfg.size = size;
        cfg.sigma_v_mm = sigma_v;
        cfg.n_landmarks = n_landmarks;
        const BenchmarkPair p = generate_benchmark_pair(cfg, seed);
        py::array_t<std::uint8_t> mask({size, size});
        std::memcpy(mask.mutable_data(), p.mask.data(), p.mask.size());
        py::array_t<double> lms({py::ssize_t(p.landmarks.size()), py::ssize_t(4)});
        for (py::ssize_t i = 0; i < py::ssize_t(p.landmarks.size()); ++i) {
          lms.mutable_at(i, 0) = p.landmarks.points[std::size_t(i)].mx;
          lms.mutable_at(i, 1) = p.landmarks.points[std::size_t(i)].my;
          lms.mutable_at(i, 2) = p.landmarks.points[std::size_t(i)].hx;
          lms.mutable_at(i, 3) = p.landmarks.points[std::size_t(i)].hy;
        }
        return py::make_tuple(array_from_image(p.reference), array_from_image(p.floating),
                              array_from_field(p.truth), mask, lms);
      },
      py::arg("size"), py::arg("sigma_v") = 20.0, py::arg("n_landmarks") = 8,
      py::arg("seed") = 1,
      "Benchmark pair: (reference, floating, truth(2,h,w), mask, landmarks(n,4)).");

  m.def(
      "mutual_information",
      [](const DoubleArray& a, const DoubleArray& b, int bins) {
        return mutual_information(image_from_array(a, 1.0), image_from_array(b, 1.0), bins);
      },
      py::arg("a"), py::arg("b"), py::arg("bins") = 64);

  m.def(
      "harris_response",
      [](const DoubleArray& a, double spacing, double k, double integration_sigma) {
        return array_from_image(
            harris_response(image_from_array(a, spacing), k, integration_sigma));
      },
      py::arg("image"), py::arg("spacing_mm") = 1.0, py::arg("k") = 0.04,
      py::arg("integration_sigma_mm") = 2.0);

  m.def(
      "warp_image",
      [](const DoubleArray& img, const DoubleArray& field, double spacing) {
        return array_from_image(
            warp_image(image_from_array(img, spacing), field_from_array(field, spacing)));
      },
      py::arg("image"), py::arg("field"), py::arg("spacing_mm") = 1.0);

  m.def(
      "integrate_velocity",
      [](const DoubleArray& vel, double spacing, int squarings) {
        VelocityField v = field_from_array(vel, spacing);
        if (squarings < 0) squarings = suggest_squarings(v);
        return array_from_field(integrate_velocity(v, squarings));
      },
      py::arg("velocity"), py::arg("spacing_mm") = 1.0, py::arg("squarings") = -1);

  m.def(
      "registration_error",
      [](const DoubleArray& est, const DoubleArray& truth,
         const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& mask,
         double spacing) {
        std::vector<std::uint8_t> mv(std::size_t(mask.size()));
        std::memcpy(mv.data(), mask.data(), mv.size());
        const ErrorStats e = registration_error(field_from_array(est, spacing),
                                                field_from_array(truth, spacing), mv);
        return py::make_tuple(e.mean_mm, e.max_mm);
      },
      py::arg("estimated"), py::arg("truth"), py::arg("mask"), py::arg("spacing_mm") = 1.0);

  m.def(
      "register_pair",
      [](const DoubleArray& ref, const DoubleArray& flt, const std::string& method,
         double spacing_mm, double control_spacing_mm, const DoubleArray& landmarks,
         double landmark_sigma_mm, double shift_radius_mm, double shift_step_mm,
         int tree_count, int pixels_per_tree, std::uint64_t seed, int threads) {
        const Image2D h = image_from_array(ref, spacing_mm);
        const Image2D mimg = image_from_array(flt, spacing_mm);
        const LandmarkSet lms = landmarks_from_array(landmarks, landmark_sigma_mm);
        RegistrationEnergyConfig rc;
        rc.control_spacing_mm = control_spacing_mm;
        rc.landmark_sigma_mm = landmark_sigma_mm;
        FfdRegResult reg;
        if (method == "mi") {
          reg = optimize_ffd_mi(mimg, h, lms, rc);
        } else if (method == "independent" || method == "joint") {
          VemConfig vc;
          vc.shift_radius_mm = shift_radius_mm;
          vc.shift_step_mm = shift_step_mm;
          vc.forest.tree_count = tree_count;
          vc.forest.pixels_per_tree = pixels_per_tree;
          vc.seed = seed;
          vc.n_threads = threads;
          std::vector<VemPair> pairs;
          pairs.push_back(VemPair{mimg, h, lms, 0});
          VemResult res = run_vem(pairs, vc);
          reg = optimize_ffd(mimg, res.predictions[0], lms, rc);
        } else {
          throw std::invalid_argument("method must be mi, joint or independent");
        }
        const DeformationField dense =
            ffd_to_dense_field(reg.transform, mimg.width, mimg.height, mimg.spacing);
        py::dict report;
        report["energy"] = reg.final_energy;
        report["iterations"] = reg.iterations;
        report["converged"] = reg.converged;
        report["mean_landmark_residual_mm"] = reg.mean_landmark_residual_mm;
        return py::make_tuple(array_from_field(dense), report);
      },
      py::arg("reference"), py::arg("floating"), py::arg("method") = "independent",
      py::arg("spacing_mm") = 1.0, py::arg("control_spacing_mm") = 6.0,
      py::arg("landmarks") = py::array_t<double>(), py::arg("landmark_sigma_mm") = 0.5,
      py::arg("shift_radius_mm") = 10.0, py::arg("shift_step_mm") = 0.5,
      py::arg("tree_count") = 100, py::arg("pixels_per_tree") = 25000,
      py::arg("seed") = 0, py::arg("threads") = 1,
      "Register floating onto reference; returns (field(2,h,w) in mm, report).");
}
