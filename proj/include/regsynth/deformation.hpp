// Dense 2D displacement and velocity fields, warping, scaling-and-squaring
// integration and Jacobian checks. Displacements are stored in mm on the
// pixel grid of their domain.

#pragma once

#include <string>
#include <vector>

#include "regsynth/image.hpp"

namespace regsynth {

// Per-pixel 2D vector field in mm on a raster grid.
struct Field2 {
  int width = 0;
  int height = 0;
  double spacing = 1.0; // mm per pixel
  std::vector<double> dx; // row-major
  std::vector<double> dy;

  Field2() = default;
  Field2(int w, int h, double spacing_mm);

  std::size_t size() const { return dx.size(); }
  std::size_t index(int x, int y) const { return std::size_t(y) * width + x; }

  void validate() const; // finite, consistent lengths
};

using DeformationField = Field2;
using VelocityField = Field2;

// Bilinear sample of a field at a continuous pixel coordinate (clamped).
void sample_field(const Field2& f, double x_px, double y_px, double& out_dx, double& out_dy);

// output(x) = bilinear_sample(img, x + field(x)/spacing).
// Throws std::invalid_argument on grid mismatch.
Image2D warp_image(const Image2D& img, const DeformationField& field);

// Displacement of the time-1 flow of a stationary velocity field: the field
// is halved `squarings` times and the resulting small displacement composed
// with itself `squarings` times (bilinear resampling, clamp-to-edge).
DeformationField integrate_velocity(const VelocityField& vel, int squarings);

// Squaring count giving seed steps of at most 1/32 px, comfortably under
// the 0.5 px validity bound of integrate_velocity.
int suggest_squarings(const VelocityField& vel);

// Minimum over interior pixels of det(I + grad u), central differences.
double min_jacobian_determinant(const DeformationField& field);

// Disk format: little-endian float32 raw, x-displacements then
// y-displacements, row-major, with sidecar { width, height, spacing_mm }.
void write_field(const DeformationField& field, const std::string& path);
DeformationField read_field(const std::string& path);

} // namespace regsynth
