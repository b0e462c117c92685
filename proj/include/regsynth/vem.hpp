// Variational EM driver: mean-field posterior fields over discrete shifts,
// fixed-point E-step sweeps, forest retraining M-steps and free-energy
// tracking. Convergence is assessed on the predicted means and variances.

#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "regsynth/deformation.hpp"
#include "regsynth/forest.hpp"
#include "regsynth/image.hpp"
#include "regsynth/shifts.hpp"

namespace regsynth {

// Gaussian log-likelihood of M(x + shift) under the synthesis prediction,
// tabulated per pixel and shift (clamped sampling outside the raster).
struct UnaryTable {
  int width = 0;
  int height = 0;
  int n_shifts = 0;
  std::vector<double> loglik; // [(y*width + x) * n_shifts + s]

  const double* at(std::size_t pixel) const { return loglik.data() + pixel * n_shifts; }
};

UnaryTable build_unary_table(const Image2D& m, const SynthesisPrediction& pred,
                             const ShiftCatalog& catalog, int n_threads = 1);

// Landmark log factors, non-zero only at the pixels the landmarks sit on.
struct LandmarkFactors {
  std::vector<std::pair<std::size_t, std::vector<double>>> per_pixel; // (pixel, S values)
};

LandmarkFactors build_landmark_factors(const LandmarkSet& landmarks,
                                       const ShiftCatalog& catalog, int width, int height,
                                       double spacing_mm);

struct EStepOptions {
  double tol = 1e-4;   // max per-pixel total-variation change between sweeps
  int max_sweeps = 50;
};

// Sequential raster-order fixed-point sweeps of the mean-field update.
// Each per-pixel update is the exact coordinate-ascent maximiser of the
// bound, so the tractable free-energy terms never decrease. Updates are
// computed in the log domain; rows stay normalised. Returns sweeps run.
int e_step(PosteriorField& q, const UnaryTable& unary, const LandmarkFactors& landmarks,
           const MrfParams& mrf, const ShiftCatalog& catalog,
           const EStepOptions& opts = {});

// Lower-bound terms. The pairwise expectation is counted once per
// unordered 4-neighbour edge; the MRF partition function is omitted
// throughout (constant in both q and the forest parameters).
struct FreeEnergyBreakdown {
  double entropy = 0.0;
  double data = 0.0;        // E_q[log likelihood]
  double shift_prior = 0.0; // -shift_weight * E_q[|shift|^2]
  double landmark = 0.0;
  double pairwise = 0.0;    // -smooth_weight * sum over edges of E E |d - d'|^2
  double theta_prior = 0.0; // Inverse-Gamma log density of the predicted variances

  double total() const {
    return entropy + data + shift_prior + landmark + pairwise + theta_prior;
  }
  // The q-dependent part maximised by the E-step.
  double tractable() const { return entropy + data + shift_prior + landmark + pairwise; }
};

FreeEnergyBreakdown free_energy(const PosteriorField& q, const UnaryTable& unary,
                                const LandmarkFactors& landmarks, const MrfParams& mrf,
                                const ShiftCatalog& catalog,
                                const SynthesisPrediction& pred,
                                const ForestHyperparams& hyper);

// Per-pixel argmax shift and posterior entropy, for diagnostics export.
std::pair<DeformationField, Image2D> posterior_diagnostics(const PosteriorField& q,
                                                           const ShiftCatalog& catalog,
                                                           double spacing_mm);

struct VemPair {
  Image2D m;             // floating image, synthesis target
  Image2D h;             // reference image, synthesis input
  LandmarkSet landmarks;
  int id = 0;
};

struct VemConfig {
  double shift_radius_mm = 10.0;
  double shift_step_mm = 0.5;
  MrfParams mrf;
  ForestHyperparams forest;
  std::vector<double> feature_scales_mm = {0.0, 2.0, 4.0};
  int feature_max_order = 3;
  EStepOptions estep;
  int max_outer_iterations = 10;
  double convergence_tol_levels = 0.5; // on predicted mean and std, 8-bit range
  std::uint64_t seed = 0;
  int n_threads = 1;
  bool track_free_energy = false;
};

struct VemResult {
  ForestModel forest;
  std::vector<SynthesisPrediction> predictions;
  std::vector<PosteriorField> posteriors;
  int iterations = 0;
  bool converged = false;
  std::vector<double> free_energy_trace; // one value per outer iteration
};

// Algorithm: uniform posteriors, initial forest fit, then alternate
// per-pair E-steps and a forest retraining M-step until the predictions
// stop changing or the iteration budget is reached.
VemResult run_vem(const std::vector<VemPair>& pairs, const VemConfig& config);

} // namespace regsynth
