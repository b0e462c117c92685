#include "regsynth/mi.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace regsynth {

namespace {

struct BinMap {
  double lo = 0.0;
  double scale = 0.0; // 0 for a constant image
  int bins = 0;

  int index(double v) const {
    if (scale == 0.0) return 0;
    return std::clamp(int((v - lo) * scale), 0, bins - 1);
  }
};

BinMap make_bin_map(const Image2D& img, int bins) {
  const auto [mn, mx] = std::minmax_element(img.data.begin(), img.data.end());
  BinMap m;
  m.lo = *mn;
  m.bins = bins;
  m.scale = *mx > *mn ? double(bins) / (*mx - *mn) : 0.0;
  return m;
}

double mi_from_joint(const std::vector<double>& joint, int bins, double total) {
  std::vector<double> pa(std::size_t(bins), 0.0), pb(std::size_t(bins), 0.0);
  for (int i = 0; i < bins; ++i)
    for (int j = 0; j < bins; ++j) {
      pa[std::size_t(i)] += joint[std::size_t(i) * bins + j];
      pb[std::size_t(j)] += joint[std::size_t(i) * bins + j];
    }
  double mi = 0.0;
  for (int i = 0; i < bins; ++i)
    for (int j = 0; j < bins; ++j) {
      const double p = joint[std::size_t(i) * bins + j] / total;
      if (p <= 0.0) continue;
      mi += p * std::log(p * total * total / (pa[std::size_t(i)] * pb[std::size_t(j)]));
    }
  return mi;
}

void check_pair(const Image2D& a, const Image2D& b, int bins) {
  if (a.width != b.width || a.height != b.height)
    throw std::invalid_argument("mutual_information: grid mismatch");
  if (bins < 2) throw std::invalid_argument("mutual_information: bins must be >= 2");
}

} // namespace

double mutual_information(const Image2D& a, const Image2D& b, int bins) {
  check_pair(a, b, bins);
  const BinMap ma = make_bin_map(a, bins), mb = make_bin_map(b, bins);
  std::vector<double> joint(std::size_t(bins) * bins, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i)
    joint[std::size_t(ma.index(a.data[i])) * bins + mb.index(b.data[i])] += 1.0;
  return mi_from_joint(joint, bins, double(a.size()));
}

double mutual_information_warped(const Image2D& a, const DeformationField& field,
                                 const Image2D& b, int bins) {
  check_pair(a, b, bins);
  if (field.width != a.width || field.height != a.height)
    throw std::invalid_argument("mutual_information_warped: field grid mismatch");
  const BinMap ma = make_bin_map(a, bins), mb = make_bin_map(b, bins);
  std::vector<double> joint(std::size_t(bins) * bins, 0.0);
  for (int y = 0; y < a.height; ++y)
    for (int x = 0; x < a.width; ++x) {
      const std::size_t i = field.index(x, y);
      const int jb = mb.index(b.data[i]);
      // partial-volume weighting over the four neighbours of the sample
      const double sx = std::clamp(x + field.dx[i] / a.spacing, 0.0, double(a.width - 1));
      const double sy = std::clamp(y + field.dy[i] / a.spacing, 0.0, double(a.height - 1));
      const int x0 = std::min(int(sx), a.width - 2);
      const int y0 = std::min(int(sy), a.height - 2);
      const double fx = sx - x0, fy = sy - y0;
      const double w[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
      const int xs[4] = {x0, x0 + 1, x0, x0 + 1};
      const int ys[4] = {y0, y0, y0 + 1, y0 + 1};
      for (int k = 0; k < 4; ++k) {
        if (w[k] == 0.0) continue;
        joint[std::size_t(ma.index(a.at(xs[k], ys[k]))) * bins + jb] += w[k];
      }
    }
  return mi_from_joint(joint, bins, double(a.size()));
}

double marginal_entropy(const Image2D& a, int bins) {
  if (bins < 2) throw std::invalid_argument("marginal_entropy: bins must be >= 2");
  const BinMap ma = make_bin_map(a, bins);
  std::vector<double> hist(std::size_t(bins), 0.0);
  for (double v : a.data) hist[std::size_t(ma.index(v))] += 1.0;
  double h = 0.0;
  for (double c : hist) {
    if (c <= 0.0) continue;
    const double p = c / double(a.size());
    h -= p * std::log(p);
  }
  return h;
}

namespace {

// cubic B-spline kernel and derivative, support |t| < 2
double bspline3(double t) {
  t = std::abs(t);
  if (t >= 2.0) return 0.0;
  if (t >= 1.0) {
    const double u = 2.0 - t;
    return u * u * u / 6.0;
  }
  return (4.0 - 6.0 * t * t + 3.0 * t * t * t) / 6.0;
}

double bspline3_d(double t) {
  const double s = t < 0.0 ? -1.0 : 1.0;
  t = std::abs(t);
  if (t >= 2.0) return 0.0;
  if (t >= 1.0) {
    const double u = 2.0 - t;
    return s * (-0.5 * u * u);
  }
  return s * (-2.0 * t + 1.5 * t * t);
}

} // namespace

ParzenMi::ParzenMi(int bins, double moving_min, double moving_max, double fixed_min,
                   double fixed_max)
    : bins_(bins), m_min_(moving_min), f_min_(fixed_min) {
  if (bins < 8) throw std::invalid_argument("ParzenMi: need at least 8 bins");
  // moving intensities map to [1, bins-2] so the cubic kernel stays inside
  m_scale_ = moving_max > moving_min ? double(bins - 3) / (moving_max - moving_min) : 0.0;
  f_scale_ = fixed_max > fixed_min ? double(bins - 1) / (fixed_max - fixed_min) : 0.0;
  joint_.assign(std::size_t(bins) * bins, 0.0);
  marg_m_.assign(std::size_t(bins), 0.0);
  marg_f_.assign(std::size_t(bins), 0.0);
}

void ParzenMi::reset() {
  std::fill(joint_.begin(), joint_.end(), 0.0);
  std::fill(marg_m_.begin(), marg_m_.end(), 0.0);
  std::fill(marg_f_.begin(), marg_f_.end(), 0.0);
  n_ = 0;
  mi_ = 0.0;
}

double ParzenMi::moving_coord(double v) const {
  return std::clamp(1.0 + (v - m_min_) * m_scale_, 1.0, double(bins_ - 2));
}

double ParzenMi::fixed_coord(double v) const {
  return std::clamp((v - f_min_) * f_scale_, 0.0, double(bins_ - 1));
}

void ParzenMi::add(double moving, double fixed) {
  const double cm = moving_coord(moving);
  const double cf = fixed_coord(fixed);
  const int im = int(std::floor(cm));
  const int jf = std::min(int(cf), bins_ - 2);
  const double wf1 = cf - jf;
  for (int di = -1; di <= 2; ++di) {
    const int i = im + di;
    if (i < 0 || i >= bins_) continue;
    const double wm = bspline3(double(i) - cm);
    if (wm == 0.0) continue;
    joint_[std::size_t(i) * bins_ + jf] += wm * (1.0 - wf1);
    joint_[std::size_t(i) * bins_ + jf + 1] += wm * wf1;
  }
  ++n_;
}

void ParzenMi::finalize() {
  if (n_ == 0) return;
  const double inv = 1.0 / double(n_);
  for (auto& v : joint_) v *= inv;
  std::fill(marg_m_.begin(), marg_m_.end(), 0.0);
  std::fill(marg_f_.begin(), marg_f_.end(), 0.0);
  for (int i = 0; i < bins_; ++i)
    for (int j = 0; j < bins_; ++j) {
      marg_m_[std::size_t(i)] += joint_[std::size_t(i) * bins_ + j];
      marg_f_[std::size_t(j)] += joint_[std::size_t(i) * bins_ + j];
    }
  mi_ = 0.0;
  for (int i = 0; i < bins_; ++i)
    for (int j = 0; j < bins_; ++j) {
      const double p = joint_[std::size_t(i) * bins_ + j];
      if (p <= 0.0) continue;
      mi_ += p * std::log(p / (marg_m_[std::size_t(i)] * marg_f_[std::size_t(j)]));
    }
}

double ParzenMi::d_mi_d_moving(double moving, double fixed) const {
  if (n_ == 0 || m_scale_ == 0.0) return 0.0;
  const double cm = moving_coord(moving);
  // clamped samples sit on a flat region of the kernel map
  if (cm <= 1.0 || cm >= double(bins_ - 2)) return 0.0;
  const double cf = fixed_coord(fixed);
  const int im = int(std::floor(cm));
  const int jf = std::min(int(cf), bins_ - 2);
  const double wf[2] = {1.0 - (cf - jf), cf - jf};
  double acc = 0.0;
  for (int dj = 0; dj < 2; ++dj) {
    if (wf[dj] == 0.0) continue;
    const int j = jf + dj;
    for (int di = -1; di <= 2; ++di) {
      const int i = im + di;
      if (i < 0 || i >= bins_) continue;
      const double dw = bspline3_d(double(i) - cm); // d/d(i - cm)
      if (dw == 0.0) continue;
      const double p = joint_[std::size_t(i) * bins_ + j];
      if (p <= 0.0) continue;
      // terms independent of i cancel because the kernel weights sum to 1
      acc += -dw * wf[dj] * std::log(p / marg_m_[std::size_t(i)]);
    }
  }
  return acc * m_scale_ / double(n_);
}

} // namespace regsynth
