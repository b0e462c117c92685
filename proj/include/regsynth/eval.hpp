// Registration-error metrics and the experiment sweep driver that ties the
// generator, the variational loop and the final registration together.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "regsynth/deformation.hpp"
#include "regsynth/ffdreg.hpp"
#include "regsynth/vem.hpp"

namespace regsynth {

struct ErrorStats {
  double mean_mm = 0.0;
  double max_mm = 0.0;
};

// Per-pixel Euclidean distance between displacements, aggregated over the
// non-zero mask entries. Throws std::invalid_argument on grid mismatch or
// an empty mask.
ErrorStats registration_error(const DeformationField& estimated,
                              const DeformationField& truth,
                              const std::vector<std::uint8_t>& mask);

struct SweepGrid {
  std::vector<std::string> methods = {"mi", "independent"}; // or "joint"
  std::vector<int> landmark_counts = {0};
  std::vector<double> spacings_mm = {6.0, 12.0, 18.0};
};

struct SweepOptions {
  VemConfig vem;                // shift catalog, forest and E-step settings
  RegistrationEnergyConfig reg; // FFD settings; spacing overridden per cell
  std::uint64_t seed = 0;
  int n_threads = 1;
  int max_pairs = 0; // 0 = every pair in the dataset
};

struct SweepRow {
  double sigma_v = 0.0;
  double spacing_mm = 0.0;
  int n_landmarks = 0;
  std::string method;
  double mean_err_mm = 0.0; // mean over pairs of the per-pair mean error
  double max_err_mm = 0.0;  // mean over pairs of the per-pair maximum error
  double runtime_s = 0.0;
  std::uint64_t seed = 0;
};

// Runs every grid cell over the dataset and writes one CSV row per cell in
// grid order (methods, then landmark counts, then spacings). The posterior
// estimation is shared across spacings within a (method, landmarks) cell
// group. Pass an empty csv path to skip writing.
std::vector<SweepRow> run_sweep(const std::string& dataset_dir, const SweepGrid& grid,
                                const SweepOptions& options, const std::string& out_csv);

void write_sweep_csv(const std::vector<SweepRow>& rows, const std::string& path);

} // namespace regsynth
