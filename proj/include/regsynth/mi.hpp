// Mutual information: a joint-histogram metric on aligned rasters, and a
// smooth Parzen-window estimator with per-sample gradients for use inside
// the registration optimiser. Natural-log units throughout.

#pragma once

#include <vector>

#include "regsynth/deformation.hpp"
#include "regsynth/image.hpp"

namespace regsynth {

// MI of two images on the same grid. Intensities are binned over each
// image's own [min, max] range; samples taken at grid positions fall into
// single bins, so MI(A, A) equals the marginal entropy of A exactly.
// A constant image yields 0 (degenerate marginal).
// Throws std::invalid_argument for mismatched grids or bins < 2.
double mutual_information(const Image2D& a, const Image2D& b, int bins);

// Variant with A sampled at x + field(x): the contribution of each sample
// is spread over the four neighbouring pixels of A with bilinear
// partial-volume weights. Reduces to the plain metric for a zero field.
double mutual_information_warped(const Image2D& a, const DeformationField& field,
                                 const Image2D& b, int bins);

// Marginal entropy with the same binning convention as mutual_information.
double marginal_entropy(const Image2D& a, int bins);

// Parzen joint histogram: cubic B-spline kernel on the moving intensity,
// linear kernel on the fixed intensity. Differentiable in the moving
// values. Usage: reset(); add(...) per sample; finalize(); then mi() and
// d_mi_d_moving(...) for each sample.
class ParzenMi {
public:
  ParzenMi(int bins, double moving_min, double moving_max, double fixed_min,
           double fixed_max);

  void reset();
  void add(double moving, double fixed);
  void finalize();

  double mi() const { return mi_; }
  std::size_t samples() const { return n_; }

  // dMI/d(moving value) of one sample, valid after finalize().
  double d_mi_d_moving(double moving, double fixed) const;

private:
  double moving_coord(double v) const;
  double fixed_coord(double v) const;

  int bins_;
  double m_min_, m_scale_;
  double f_min_, f_scale_;
  std::vector<double> joint_;      // bins x bins
  std::vector<double> marg_m_, marg_f_;
  std::size_t n_ = 0;
  double mi_ = 0.0;
};

} // namespace regsynth
