// Free-form deformation: a grid of 2D control-point displacements combined
// with tensor-product cubic B-splines. Control spacing and displacements are
// in mm; the grid covers the image domain plus one basis-support margin on
// each side, so zero control displacements give the identity map everywhere.

#pragma once

#include <array>
#include <string>
#include <vector>

#include "regsynth/deformation.hpp"
#include "regsynth/image.hpp"

namespace regsynth {

struct FfdTransform {
  double grid_spacing = 1.0; // mm between control points
  int nx = 0, ny = 0;        // cells per axis; control indices run -1..n+1
  double domain_x = 0.0;     // mm, image domain extent (width-1)*pixel_spacing
  double domain_y = 0.0;
  int quad_width = 0;  // dense quadrature grid (one sample per image pixel)
  int quad_height = 0;
  double quad_spacing = 1.0;
  std::vector<double> cx; // control displacements, (nx+3)*(ny+3), row-major
  std::vector<double> cy;

  static FfdTransform for_image(const Image2D& img, double control_spacing_mm);
  static FfdTransform for_domain(double domain_x_mm, double domain_y_mm,
                                 double control_spacing_mm, int quad_w, int quad_h,
                                 double quad_spacing_mm);

  int cols() const { return nx + 3; }
  int rows() const { return ny + 3; }
  std::size_t n_controls() const { return std::size_t(cols()) * rows(); }
  std::size_t control_index(int i, int j) const { // i, j in [-1, n+1]
    return std::size_t(j + 1) * cols() + std::size_t(i + 1);
  }
};

// Basis weights and derivatives of the 4x4 support at a point (mm).
struct SplineSupport {
  int i = 0, j = 0;           // base cell
  std::array<double, 4> wx{}, wy{};   // B_k(f)
  std::array<double, 4> dwx{}, dwy{}; // dB_k/dmm
  std::array<double, 4> ddwx{}, ddwy{};
};
SplineSupport spline_support(const FfdTransform& t, double x_mm, double y_mm);

// Displacement and spatial derivatives of the displacement at (x, y) mm.
void ffd_displacement(const FfdTransform& t, const SplineSupport& s,
                      double& ux, double& uy);
void ffd_jacobian(const FfdTransform& t, const SplineSupport& s, double jac[2][2]);

// x' = x + u(x). Throws std::invalid_argument outside [0, domain] per axis.
void ffd_apply(const FfdTransform& t, double x_mm, double y_mm,
               double& out_x, double& out_y);

struct FfdRegularizers {
  double bending = 0.0;   // mean squared second derivatives
  double linear = 0.0;    // mean squared symmetric displacement Jacobian
  double jacobian = 0.0;  // mean squared log-determinant
  bool jacobian_finite = true; // false when det(I + grad u) <= 0 somewhere
};

// Energies averaged over the dense quadrature grid, derivatives in
// physical units. With non-null gradient buffers, accumulates
// beta_b * dE_b + beta_l * dE_l + beta_j * dE_j into them.
FfdRegularizers ffd_regularizers(const FfdTransform& t);
FfdRegularizers ffd_regularizers_grad(const FfdTransform& t, double beta_b, double beta_l,
                                      double beta_j, std::vector<double>* grad_cx,
                                      std::vector<double>* grad_cy);

// Exact dyadic refinement: same transform represented at half the spacing.
FfdTransform ffd_subdivide(const FfdTransform& t, double fine_domain_x, double fine_domain_y,
                           int quad_w, int quad_h, double quad_spacing_mm);

// Dense displacement field at the pixel centres of a (w, h, spacing) grid.
DeformationField ffd_to_dense_field(const FfdTransform& t, int w, int h, double spacing_mm);

void write_ffd(const FfdTransform& t, const std::string& path);
FfdTransform read_ffd(const std::string& path);

} // namespace regsynth
