// 2D scalar raster images, interpolation, Gaussian-derivative feature
// stacks and the Harris corner response.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace regsynth {

// Scalar raster with isotropic physical pixel spacing (mm/pixel).
// Intensities are kept as real numbers; 8-bit quantisation happens on disk.
struct Image2D {
  int width = 0;
  int height = 0;
  double spacing = 1.0; // mm per pixel
  std::vector<double> data; // row-major, data[y * width + x]

  Image2D() = default;
  Image2D(int w, int h, double spacing_mm, double fill = 0.0);

  double& at(int x, int y) { return data[std::size_t(y) * width + x]; }
  double at(int x, int y) const { return data[std::size_t(y) * width + x]; }

  // Clamp-to-edge accessor.
  double at_clamped(int x, int y) const;

  std::size_t size() const { return data.size(); }
  double extent_x_mm() const { return width * spacing; }
  double extent_y_mm() const { return height * spacing; }

  // Throws std::invalid_argument when an invariant is broken
  // (dimensions >= 2, spacing > 0, data length, finite values).
  void validate() const;
};

// Bilinear interpolation at a continuous pixel coordinate with a
// clamp-to-edge boundary policy. Exact at integer coordinates.
// Throws std::invalid_argument for non-finite coordinates.
double bilinear_sample(const Image2D& img, double x, double y);

// Separable Gaussian smoothing; sigma in mm, kernel truncated at 4 sigma,
// clamp-to-edge boundaries. sigma == 0 returns a copy.
Image2D gaussian_smooth(const Image2D& img, double sigma_mm);

// Per-pixel feature vectors: Gaussian derivatives of all mixed orders
// i+j <= max_order at each requested scale, plus two normalised location
// features appended at the end.
//
// Layout: data[(y*width + x) * count + f], with f running over scales in
// the given order, within a scale over total order k = 0..max_order, and
// within an order over (i, j) = (k, 0), (k-1, 1), ..., (0, k); derivatives
// are taken with respect to physical mm. The final two features are
// x/(width-1) and y/(height-1).
struct FeatureStack {
  int width = 0;
  int height = 0;
  int count = 0;
  std::vector<float> data;

  const float* at(int x, int y) const {
    return data.data() + (std::size_t(y) * width + x) * count;
  }
};

// Number of derivative features per scale for mixed orders up to max_order.
int derivative_count(int max_order);

// scales are in mm; scale 0 means raw central differences (no smoothing).
// Throws std::invalid_argument for negative scales, max_order outside
// [0, 3], or a scale exceeding the image extent.
FeatureStack gaussian_derivative_features(const Image2D& img,
                                          const std::vector<double>& scales_mm,
                                          int max_order);

// Harris corner response: structure tensor of first derivatives smoothed at
// integration_sigma (mm); response = det - k * trace^2.
// Throws std::invalid_argument for k outside (0, 0.25] or a non-positive
// integration scale.
Image2D harris_response(const Image2D& img, double k, double integration_sigma_mm);

} // namespace regsynth
