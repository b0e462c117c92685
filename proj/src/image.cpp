#include "regsynth/image.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace regsynth {

Image2D::Image2D(int w, int h, double spacing_mm, double fill)
    : width(w), height(h), spacing(spacing_mm),
      data(std::size_t(std::max(w, 0)) * std::size_t(std::max(h, 0)), fill) {}

double Image2D::at_clamped(int x, int y) const {
  x = std::clamp(x, 0, width - 1);
  y = std::clamp(y, 0, height - 1);
  return data[std::size_t(y) * width + x];
}

void Image2D::validate() const {
  if (width < 2 || height < 2)
    throw std::invalid_argument("Image2D: dimensions must be at least 2x2");
  if (!(spacing > 0.0))
    throw std::invalid_argument("Image2D: spacing must be positive");
  if (data.size() != std::size_t(width) * std::size_t(height))
    throw std::invalid_argument("Image2D: data length does not match dimensions");
  for (double v : data)
    if (!std::isfinite(v))
      throw std::invalid_argument("Image2D: non-finite intensity");
}

double bilinear_sample(const Image2D& img, double x, double y) {
  if (!std::isfinite(x) || !std::isfinite(y))
    throw std::invalid_argument("bilinear_sample: non-finite coordinate");
  // clamp-to-edge keeps the four support pixels inside the raster
  x = std::clamp(x, 0.0, double(img.width - 1));
  y = std::clamp(y, 0.0, double(img.height - 1));
  const int x0 = std::min(int(x), img.width - 2);
  const int y0 = std::min(int(y), img.height - 2);
  const double fx = x - x0;
  const double fy = y - y0;
  const double v00 = img.at(x0, y0);
  const double v10 = img.at(x0 + 1, y0);
  const double v01 = img.at(x0, y0 + 1);
  const double v11 = img.at(x0 + 1, y0 + 1);
  return (1.0 - fy) * ((1.0 - fx) * v00 + fx * v10) + fy * ((1.0 - fx) * v01 + fx * v11);
}

namespace {

std::vector<double> gaussian_kernel(double sigma_px) {
  const int radius = std::max(1, int(std::ceil(4.0 * sigma_px)));
  std::vector<double> k(std::size_t(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * (double(i) * i) / (sigma_px * sigma_px));
    k[std::size_t(i + radius)] = v;
    sum += v;
  }
  for (auto& v : k) v /= sum;
  return k;
}

// Separable 1D convolution along x or y with clamp-to-edge.
void convolve_axis(const Image2D& in, Image2D& out, const std::vector<double>& k, bool along_x) {
  const int radius = int(k.size() / 2);
  for (int y = 0; y < in.height; ++y) {
    for (int x = 0; x < in.width; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        const int xx = along_x ? x + i : x;
        const int yy = along_x ? y : y + i;
        acc += k[std::size_t(i + radius)] * in.at_clamped(xx, yy);
      }
      out.at(x, y) = acc;
    }
  }
}

// First and second central differences along one axis, in physical units.
void diff1_axis(const Image2D& in, Image2D& out, bool along_x) {
  const double inv2h = 1.0 / (2.0 * in.spacing);
  for (int y = 0; y < in.height; ++y)
    for (int x = 0; x < in.width; ++x) {
      const double plus = along_x ? in.at_clamped(x + 1, y) : in.at_clamped(x, y + 1);
      const double minus = along_x ? in.at_clamped(x - 1, y) : in.at_clamped(x, y - 1);
      out.at(x, y) = (plus - minus) * inv2h;
    }
}

void diff2_axis(const Image2D& in, Image2D& out, bool along_x) {
  const double invh2 = 1.0 / (in.spacing * in.spacing);
  for (int y = 0; y < in.height; ++y)
    for (int x = 0; x < in.width; ++x) {
      const double plus = along_x ? in.at_clamped(x + 1, y) : in.at_clamped(x, y + 1);
      const double minus = along_x ? in.at_clamped(x - 1, y) : in.at_clamped(x, y - 1);
      out.at(x, y) = (plus - 2.0 * in.at(x, y) + minus) * invh2;
    }
}

// Applies the order-th derivative stencil along one axis (order 0..3);
// order 3 is composed as d1(d2(.)) so polynomial exactness carries over.
Image2D derivative_axis(const Image2D& in, int order, bool along_x) {
  if (order == 0) return in;
  Image2D out(in.width, in.height, in.spacing);
  if (order == 1) {
    diff1_axis(in, out, along_x);
  } else if (order == 2) {
    diff2_axis(in, out, along_x);
  } else {
    Image2D tmp(in.width, in.height, in.spacing);
    diff2_axis(in, tmp, along_x);
    diff1_axis(tmp, out, along_x);
  }
  return out;
}

} // namespace

Image2D gaussian_smooth(const Image2D& img, double sigma_mm) {
  if (sigma_mm < 0.0) throw std::invalid_argument("gaussian_smooth: negative sigma");
  if (sigma_mm == 0.0) return img;
  const double sigma_px = sigma_mm / img.spacing;
  const auto k = gaussian_kernel(sigma_px);
  Image2D tmp(img.width, img.height, img.spacing);
  Image2D out(img.width, img.height, img.spacing);
  convolve_axis(img, tmp, k, true);
  convolve_axis(tmp, out, k, false);
  return out;
}

int derivative_count(int max_order) {
  int n = 0;
  for (int k = 0; k <= max_order; ++k) n += k + 1;
  return n;
}

FeatureStack gaussian_derivative_features(const Image2D& img,
                                          const std::vector<double>& scales_mm,
                                          int max_order) {
  img.validate();
  if (max_order < 0 || max_order > 3)
    throw std::invalid_argument("gaussian_derivative_features: max_order must be in [0, 3]");
  for (double s : scales_mm) {
    if (s < 0.0)
      throw std::invalid_argument("gaussian_derivative_features: negative scale");
    if (s > img.extent_x_mm() || s > img.extent_y_mm())
      throw std::invalid_argument("gaussian_derivative_features: scale exceeds image extent");
  }

  FeatureStack fs;
  fs.width = img.width;
  fs.height = img.height;
  fs.count = derivative_count(max_order) * int(scales_mm.size()) + 2;
  fs.data.assign(std::size_t(fs.width) * fs.height * fs.count, 0.0f);

  int f = 0;
  for (double sigma : scales_mm) {
    const Image2D smoothed = gaussian_smooth(img, sigma);
    // cache x-derivatives once per order; y-stencils are applied on top
    Image2D dx[4];
    for (int i = 0; i <= max_order; ++i) dx[i] = derivative_axis(smoothed, i, true);
    for (int k = 0; k <= max_order; ++k) {
      for (int i = k; i >= 0; --i) {
        const int j = k - i;
        const Image2D d = derivative_axis(dx[i], j, false);
        for (int y = 0; y < fs.height; ++y)
          for (int x = 0; x < fs.width; ++x)
            fs.data[(std::size_t(y) * fs.width + x) * fs.count + f] = float(d.at(x, y));
        ++f;
      }
    }
  }
  for (int y = 0; y < fs.height; ++y)
    for (int x = 0; x < fs.width; ++x) {
      float* p = fs.data.data() + (std::size_t(y) * fs.width + x) * fs.count;
      p[f] = float(x) / float(fs.width - 1);
      p[f + 1] = float(y) / float(fs.height - 1);
    }
  return fs;
}

Image2D harris_response(const Image2D& img, double k, double integration_sigma_mm) {
  img.validate();
  if (!(k > 0.0) || k > 0.25)
    throw std::invalid_argument("harris_response: k must be in (0, 0.25]");
  if (!(integration_sigma_mm > 0.0))
    throw std::invalid_argument("harris_response: integration sigma must be positive");

  Image2D ix(img.width, img.height, img.spacing);
  Image2D iy(img.width, img.height, img.spacing);
  diff1_axis(img, ix, true);
  diff1_axis(img, iy, false);

  Image2D xx(img.width, img.height, img.spacing);
  Image2D xy(img.width, img.height, img.spacing);
  Image2D yy(img.width, img.height, img.spacing);
  for (std::size_t i = 0; i < img.size(); ++i) {
    xx.data[i] = ix.data[i] * ix.data[i];
    xy.data[i] = ix.data[i] * iy.data[i];
    yy.data[i] = iy.data[i] * iy.data[i];
  }
  xx = gaussian_smooth(xx, integration_sigma_mm);
  xy = gaussian_smooth(xy, integration_sigma_mm);
  yy = gaussian_smooth(yy, integration_sigma_mm);

  Image2D resp(img.width, img.height, img.spacing);
  for (std::size_t i = 0; i < img.size(); ++i) {
    const double det = xx.data[i] * yy.data[i] - xy.data[i] * xy.data[i];
    const double tr = xx.data[i] + yy.data[i];
    resp.data[i] = det - k * tr * tr;
  }
  return resp;
}

} // namespace regsynth
