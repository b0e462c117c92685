// Synthetic benchmark: two-modality phantom pairs, ground-truth
// diffeomorphic deformations (sampled stationary velocities, boundary
// windowing, scaling-and-squaring, a random similarity on top), Harris-based
// landmark placement with complementary-Gaussian suppression, landmark
// noise, and 8-bit quantisation.
//
// The floating image is rendered through the exact inverse map (the flow of
// the negated velocity composed with the inverse similarity), so the stored
// forward field is the true registration solution up to integrator error.

#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "regsynth/deformation.hpp"
#include "regsynth/image.hpp"
#include "regsynth/shifts.hpp"

namespace regsynth {

struct SynthConfig {
  int size = 128;
  double spacing_mm = 1.0;
  double sigma_v_mm = 20.0;        // velocity noise std, per component
  double smooth_sigma_mm = 5.0;    // velocity smoothing, both axes
  double rotation_std_deg = 2.0;
  double translation_std_px = 1.0;
  double log_scale_std = 0.1;
  int n_landmarks = 16;
  double landmark_noise_mm = 0.5;  // sigma_k
  double window_rate = 0.01;       // w(x) = 1 - exp(-rate * D(x)^2), D in mm
  int squarings = -1;              // -1: smallest s with max|v|/2^s < 0.5 px
};

struct PhantomPair {
  Image2D a;                       // modality A
  Image2D b;                       // modality B, pixel-aligned with A
  std::vector<std::uint8_t> labels; // 0 background, 1..3 tissue classes
};

// Smooth random tissue-label map rendered twice with distinct non-monotonic
// intensity mappings. Deterministic in the seed. size must be >= 64.
PhantomPair generate_phantom_pair(int size, std::uint64_t seed);

// Ground-truth displacement: windowed smoothed Gaussian velocity noise
// integrated by scaling-and-squaring, composed with a random similarity
// (applied after the nonlinear flow).
DeformationField sample_deformation(int size, const SynthConfig& cfg, std::uint64_t seed);

// Iteratively picks the global Harris-response maximum and suppresses a
// complementary-Gaussian neighbourhood around it, n times.
std::vector<std::pair<int, int>> place_landmarks(const Image2D& img, int n,
                                                 double suppression_sigma_px,
                                                 std::uint64_t seed);

// k_h = k + field(k) + isotropic Gaussian noise (std sigma_mm); source
// points stay at integer pixels. Points mapping outside the domain are
// dropped and counted.
LandmarkSet project_landmarks(const std::vector<std::pair<int, int>>& points_px,
                              const DeformationField& field, double sigma_mm,
                              std::uint64_t seed, int* dropped = nullptr);

// Affine rescale of [min, max] to [0, 255], round-half-to-even, whole
// values. A constant image maps to zeros with a warning on stderr.
Image2D quantize_8bit(const Image2D& img);

struct BenchmarkPair {
  Image2D reference;        // modality A, synthesis input side
  Image2D floating;         // modality B warped by the inverse ground truth
  DeformationField truth;   // forward field: floating(x + u(x)) ~ reference(x)
  LandmarkSet landmarks;    // point on floating (integer px) + point on reference
  std::vector<std::uint8_t> mask; // reference-grid foreground
  int dropped_landmarks = 0;
  double min_jacobian_nonlinear = 1.0;
  nlohmann::json meta;
};

BenchmarkPair generate_benchmark_pair(const SynthConfig& cfg, std::uint64_t seed);

// Dataset layout: <dir>/pair_<i>/{ref.png, float.png, truth_field.raw(+json),
// landmarks.csv, mask.png, meta.json} plus a top-level dataset.json.
void write_benchmark_pair(const std::string& dir, const BenchmarkPair& pair);
BenchmarkPair read_benchmark_pair(const std::string& dir);
void generate_dataset(const std::string& out_dir, int n_pairs, const SynthConfig& cfg,
                      std::uint64_t seed);
std::vector<std::string> list_dataset_pairs(const std::string& dir);

// Columns: id, kx_px, ky_px, khx_px, khy_px. Pixel units are converted to
// mm with the supplied spacing.
LandmarkSet read_landmarks_csv(const std::string& path, double spacing_mm,
                               double sigma_mm);

} // namespace regsynth
