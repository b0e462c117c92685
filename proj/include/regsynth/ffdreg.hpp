// Continuous registration refinement: minimises the synthesis-based or
// mutual-information objective over a cubic B-spline control grid with
// analytic gradients, conjugate-gradient descent with backtracking line
// search, and a coarse-to-fine pyramid.

#pragma once

#include <vector>

#include "regsynth/ffd.hpp"
#include "regsynth/forest.hpp"
#include "regsynth/image.hpp"
#include "regsynth/shifts.hpp"

namespace regsynth {

struct RegistrationEnergyConfig {
  MrfParams mrf;                 // discrete stage weights
  double landmark_sigma_mm = 0.5;
  double bending_weight = 0.001; // beta_b
  double linear_weight = 0.01;   // beta_l
  double jacobian_weight = 0.0;  // beta_j
  double control_spacing_mm = 6.0;
  enum class DataTerm { synthesis, mutual_information };
  DataTerm data_term = DataTerm::synthesis;
  int mi_bins = 64;
  int pyramid_levels = 3;
  int max_iterations = 300; // per pyramid level
  double gradient_tol = 1e-6;
  // multiplies the image-term weight; 0 leaves only landmarks + regularisers
  double image_term_scale = 1.0;
};

struct FfdRegResult {
  FfdTransform transform;
  double final_energy = 0.0;
  double data_term = 0.0;
  double landmark_term = 0.0;
  FfdRegularizers regularizers;
  int iterations = 0;            // accepted steps, all levels
  bool converged = false;        // gradient tolerance met at the finest level
  bool hit_budget = false;       // returned best-so-far after budget exhaustion
  std::vector<double> energy_trace; // accepted objective values, finest level
  double mean_landmark_residual_mm = 0.0;
};

// Minimises  alpha * sum_x [M(V(x)) - mean_x]^2 / (2 var_x)
//          + 1/(2 sigma_k^2) * sum_l |V(k_h) - k_m|^2
//          + beta_b E_b + beta_l E_l + beta_j E_j,
// with alpha^-1 = 9 |Omega| / 2. The floating image is sampled through a
// smooth cubic B-spline kernel so the objective is twice differentiable.
FfdRegResult optimize_ffd(const Image2D& m, const SynthesisPrediction& pred,
                          const LandmarkSet& landmarks,
                          const RegistrationEnergyConfig& cfg);

// Same optimiser with the image term replaced by -MI[M(V(x)), H(x)],
// estimated with a Parzen joint histogram.
FfdRegResult optimize_ffd_mi(const Image2D& m, const Image2D& h,
                             const LandmarkSet& landmarks,
                             const RegistrationEnergyConfig& cfg);

// Gaussian smooth + factor-2 decimation, used by the pyramid (exposed for
// tests and the sweep driver).
Image2D downsample_half(const Image2D& img);

// The smooth image model used by the optimiser: cubic B-spline mixing of
// the pixel values at a continuous pixel coordinate.
double smooth_sample(const Image2D& img, double x_px, double y_px);

// Single-level objective value (and gradient w.r.t. the stacked control
// displacements [cx..., cy...]) at a given transform. pred selects the
// synthesis term, h the mutual-information term; exactly one must be set.
double evaluate_registration_objective(const Image2D& m, const SynthesisPrediction* pred,
                                       const Image2D* h, const LandmarkSet& landmarks,
                                       const RegistrationEnergyConfig& cfg,
                                       const FfdTransform& transform,
                                       std::vector<double>* grad);

} // namespace regsynth
