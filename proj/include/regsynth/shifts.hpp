// The discrete shift set, per-pixel posterior fields over it, MRF weights
// and paired landmarks. Shared by the forest trainer, the variational loop
// and the discrete registration solver.

#pragma once

#include <cstdint>
#include <vector>

namespace regsynth {

// Ordered set of candidate 2D shifts on a square grid (mm), zero included
// exactly once. Order: y-major, x fastest, both from -radius to +radius.
struct ShiftCatalog {
  double radius_mm = 0.0;
  double step_mm = 0.0;
  std::vector<double> dx;
  std::vector<double> dy;
  std::vector<double> norm2; // cached |shift|^2
  int zero_index = 0;

  int size() const { return int(dx.size()); }

  static ShiftCatalog square_grid(double radius_mm, double step_mm);

  // Index of the catalog shift nearest to (sx, sy) mm.
  int nearest(double sx, double sy) const;
};

// Per-pixel discrete distribution over the catalog shifts.
// q[(y*width + x) * n_shifts + s], rows sum to 1.
struct PosteriorField {
  int width = 0;
  int height = 0;
  int n_shifts = 0;
  std::vector<double> q;

  std::size_t pixel_count() const { return std::size_t(width) * height; }
  double* at(std::size_t pixel) { return q.data() + pixel * n_shifts; }
  const double* at(std::size_t pixel) const { return q.data() + pixel * n_shifts; }
};

// Uniform 1/S at every pixel.
PosteriorField init_posteriors(int width, int height, const ShiftCatalog& catalog);

// Unary and pairwise deformation weights (1/mm^2), 4-connected neighbourhood.
struct MrfParams {
  double shift_weight = 0.02;  // penalises |shift|^2
  double smooth_weight = 0.02; // penalises squared shift differences per edge
};

// One paired landmark: point_m lies on the floating image M at an integer
// pixel position, point_h on H is continuous. All coordinates in mm.
struct Landmark {
  double mx = 0.0, my = 0.0;
  double hx = 0.0, hy = 0.0;
};

struct LandmarkSet {
  std::vector<Landmark> points;
  double sigma_mm = 0.5; // placement standard deviation

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

} // namespace regsynth
