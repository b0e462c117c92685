#include "regsynth/ffdreg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <stdexcept>

#include "regsynth/mi.hpp"

namespace regsynth {

namespace {

// Smooth image model: uniform cubic B-spline mixing of the pixel values
// (no prefilter). C^2 in the sample position, values stay within the local
// intensity range. Gradients are returned per mm.
struct SmoothSampler {
  const Image2D* img;

  void eval(double x_px, double y_px, double& value, double& gx_mm, double& gy_mm) const {
    const int w = img->width, h = img->height;
    x_px = std::clamp(x_px, -2.0, double(w) + 1.0);
    y_px = std::clamp(y_px, -2.0, double(h) + 1.0);
    const int ix = int(std::floor(x_px));
    const int iy = int(std::floor(y_px));
    const double fx = x_px - ix;
    const double fy = y_px - iy;
    double wx[4], wy[4], dwx[4], dwy[4];
    cubic_w(fx, wx, dwx);
    cubic_w(fy, wy, dwy);
    double v = 0.0, gx = 0.0, gy = 0.0;
    for (int l = 0; l < 4; ++l) {
      const int yy = std::clamp(iy - 1 + l, 0, h - 1);
      double row_v = 0.0, row_g = 0.0;
      for (int k = 0; k < 4; ++k) {
        const int xx = std::clamp(ix - 1 + k, 0, w - 1);
        const double p = img->at(xx, yy);
        row_v += wx[k] * p;
        row_g += dwx[k] * p;
      }
      v += wy[l] * row_v;
      gx += wy[l] * row_g;
      gy += dwy[l] * row_v;
    }
    value = v;
    gx_mm = gx / img->spacing;
    gy_mm = gy / img->spacing;
  }

private:
  static void cubic_w(double t, double w[4], double dw[4]) {
    const double t2 = t * t, t3 = t2 * t;
    w[0] = (1.0 - 3.0 * t + 3.0 * t2 - t3) / 6.0;
    w[1] = (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0;
    w[2] = (-3.0 * t3 + 3.0 * t2 + 3.0 * t + 1.0) / 6.0;
    w[3] = t3 / 6.0;
    dw[0] = -0.5 * (1.0 - t) * (1.0 - t);
    dw[1] = (3.0 * t2 - 4.0 * t) / 2.0;
    dw[2] = (-3.0 * t2 + 2.0 * t + 1.0) / 2.0;
    dw[3] = 0.5 * t2;
  }
};

struct PredictionLevel {
  std::vector<double> mean;
  std::vector<double> variance;
};

PredictionLevel downsample_prediction(const PredictionLevel& p, const Image2D& grid) {
  // reuse the image pipeline by wrapping the fields as rasters
  Image2D mu(grid.width, grid.height, grid.spacing);
  Image2D var(grid.width, grid.height, grid.spacing);
  mu.data = p.mean;
  var.data = p.variance;
  const Image2D mu2 = downsample_half(mu);
  const Image2D var2 = downsample_half(var);
  return PredictionLevel{mu2.data, var2.data};
}

class FfdObjective {
public:
  FfdObjective(const Image2D& m, const LandmarkSet& landmarks,
               const RegistrationEnergyConfig& cfg, FfdTransform grid)
      : m_(&m), landmarks_(&landmarks), cfg_(&cfg), t_(std::move(grid)) {
    sampler_.img = m_;
    // supports depend only on geometry; cache them per pixel and landmark
    pixel_support_.reserve(std::size_t(t_.quad_width) * t_.quad_height);
    for (int y = 0; y < t_.quad_height; ++y)
      for (int x = 0; x < t_.quad_width; ++x)
        pixel_support_.push_back(
            spline_support(t_, x * t_.quad_spacing, y * t_.quad_spacing));
    for (const auto& lm : landmarks.points)
      lm_support_.push_back(spline_support(
          t_, std::clamp(lm.hx, 0.0, t_.domain_x), std::clamp(lm.hy, 0.0, t_.domain_y)));
    reg_gx_.resize(t_.n_controls());
    reg_gy_.resize(t_.n_controls());
  }
  virtual ~FfdObjective() = default;

  FfdTransform& transform() { return t_; }
  std::size_t dim() const { return 2 * t_.n_controls(); }

  void get_params(std::vector<double>& psi) const {
    psi.resize(dim());
    std::copy(t_.cx.begin(), t_.cx.end(), psi.begin());
    std::copy(t_.cy.begin(), t_.cy.end(), psi.begin() + std::ptrdiff_t(t_.n_controls()));
  }
  void set_params(const std::vector<double>& psi) {
    std::copy(psi.begin(), psi.begin() + std::ptrdiff_t(t_.n_controls()), t_.cx.begin());
    std::copy(psi.begin() + std::ptrdiff_t(t_.n_controls()), psi.end(), t_.cy.begin());
  }

  double eval(const std::vector<double>& psi, std::vector<double>* grad) {
    set_params(psi);
    if (grad != nullptr) std::fill(grad->begin(), grad->end(), 0.0);

    std::fill(reg_gx_.begin(), reg_gx_.end(), 0.0);
    std::fill(reg_gy_.begin(), reg_gy_.end(), 0.0);
    last_reg = ffd_regularizers_grad(t_, cfg_->bending_weight, cfg_->linear_weight,
                                     cfg_->jacobian_weight,
                                     grad != nullptr ? &reg_gx_ : nullptr,
                                     grad != nullptr ? &reg_gy_ : nullptr);
    if (!last_reg.jacobian_finite && cfg_->jacobian_weight > 0.0)
      return std::numeric_limits<double>::infinity();

    double total = cfg_->bending_weight * last_reg.bending +
                   cfg_->linear_weight * last_reg.linear;
    if (cfg_->jacobian_weight > 0.0) total += cfg_->jacobian_weight * last_reg.jacobian;
    if (grad != nullptr) {
      const std::size_t nc = t_.n_controls();
      for (std::size_t i = 0; i < nc; ++i) {
        (*grad)[i] += reg_gx_[i];
        (*grad)[nc + i] += reg_gy_[i];
      }
    }

    last_data = data_term(grad);
    total += last_data;

    last_landmark = landmark_term(grad);
    total += last_landmark;
    return total;
  }

  double landmark_residual_mean() {
    if (landmarks_->empty()) return 0.0;
    double acc = 0.0;
    for (std::size_t l = 0; l < landmarks_->points.size(); ++l) {
      const auto& lm = landmarks_->points[l];
      double ux, uy;
      ffd_displacement(t_, lm_support_[l], ux, uy);
      acc += std::hypot(lm.hx + ux - lm.mx, lm.hy + uy - lm.my);
    }
    return acc / double(landmarks_->points.size());
  }

  double last_data = 0.0;
  double last_landmark = 0.0;
  FfdRegularizers last_reg;

protected:
  virtual double data_term(std::vector<double>* grad) = 0;

  // scatter a per-point 2D gradient into the control-point gradient buffer
  void scatter(std::vector<double>* grad, const SplineSupport& s, double gx, double gy) {
    const std::size_t nc = t_.n_controls();
    for (int l = 0; l < 4; ++l) {
      const std::size_t row = t_.control_index(s.i - 1, s.j + l - 1);
      const double wl = s.wy[std::size_t(l)];
      for (int k = 0; k < 4; ++k) {
        const double w = s.wx[std::size_t(k)] * wl;
        (*grad)[row + std::size_t(k)] += gx * w;
        (*grad)[nc + row + std::size_t(k)] += gy * w;
      }
    }
  }

  double landmark_term(std::vector<double>* grad) {
    if (landmarks_->empty()) return 0.0;
    const double inv_var = 1.0 / (cfg_->landmark_sigma_mm * cfg_->landmark_sigma_mm);
    double acc = 0.0;
    for (std::size_t l = 0; l < landmarks_->points.size(); ++l) {
      const auto& lm = landmarks_->points[l];
      double ux, uy;
      ffd_displacement(t_, lm_support_[l], ux, uy);
      const double rx = lm.hx + ux - lm.mx;
      const double ry = lm.hy + uy - lm.my;
      acc += 0.5 * inv_var * (rx * rx + ry * ry);
      if (grad != nullptr) scatter(grad, lm_support_[l], inv_var * rx, inv_var * ry);
    }
    return acc;
  }

  const Image2D* m_;
  const LandmarkSet* landmarks_;
  const RegistrationEnergyConfig* cfg_;
  FfdTransform t_;
  SmoothSampler sampler_;
  std::vector<SplineSupport> pixel_support_;
  std::vector<SplineSupport> lm_support_;
  std::vector<double> reg_gx_, reg_gy_;
};

class SynthesisObjective final : public FfdObjective {
public:
  SynthesisObjective(const Image2D& m, const PredictionLevel& pred,
                     const LandmarkSet& landmarks, const RegistrationEnergyConfig& cfg,
                     FfdTransform grid)
      : FfdObjective(m, landmarks, cfg, std::move(grid)), pred_(&pred) {}

protected:
  double data_term(std::vector<double>* grad) override {
    if (cfg_->image_term_scale == 0.0) return 0.0;
    const std::size_t n = std::size_t(t_.quad_width) * t_.quad_height;
    const double alpha = cfg_->image_term_scale * 2.0 / (9.0 * double(n));
    double acc = 0.0;
    for (int y = 0; y < t_.quad_height; ++y)
      for (int x = 0; x < t_.quad_width; ++x) {
        const std::size_t p = std::size_t(y) * t_.quad_width + x;
        const SplineSupport& s = pixel_support_[p];
        double ux, uy;
        ffd_displacement(t_, s, ux, uy);
        const double px = (x * t_.quad_spacing + ux) / m_->spacing;
        const double py = (y * t_.quad_spacing + uy) / m_->spacing;
        double v, gvx, gvy;
        sampler_.eval(px, py, v, gvx, gvy);
        const double r = v - pred_->mean[p];
        const double inv_var = 1.0 / pred_->variance[p];
        acc += alpha * 0.5 * r * r * inv_var;
        if (grad != nullptr)
          scatter(grad, s, alpha * r * inv_var * gvx, alpha * r * inv_var * gvy);
      }
    return acc;
  }

private:
  const PredictionLevel* pred_;
};

class MiObjective final : public FfdObjective {
public:
  MiObjective(const Image2D& m, const Image2D& h, const LandmarkSet& landmarks,
              const RegistrationEnergyConfig& cfg, FfdTransform grid)
      : FfdObjective(m, landmarks, cfg, std::move(grid)) {
    // both channels go through the same smooth image model, so identical
    // pre-aligned images are perfectly dependent at the identity
    fixed_.resize(std::size_t(t_.quad_width) * t_.quad_height);
    SmoothSampler hs{&h};
    for (int y = 0; y < t_.quad_height; ++y)
      for (int x = 0; x < t_.quad_width; ++x) {
        double v, gx, gy;
        hs.eval(x, y, v, gx, gy);
        fixed_[std::size_t(y) * t_.quad_width + x] = v;
      }
    const auto [mn_m, mx_m] = std::minmax_element(m.data.begin(), m.data.end());
    const auto [mn_h, mx_h] = std::minmax_element(fixed_.begin(), fixed_.end());
    parzen_ = std::make_unique<ParzenMi>(cfg.mi_bins, *mn_m, *mx_m, *mn_h, *mx_h);
    values_.resize(fixed_.size());
    grads_x_.resize(values_.size());
    grads_y_.resize(values_.size());
  }

protected:
  double data_term(std::vector<double>* grad) override {
    if (cfg_->image_term_scale == 0.0) return 0.0;
    parzen_->reset();
    for (int y = 0; y < t_.quad_height; ++y)
      for (int x = 0; x < t_.quad_width; ++x) {
        const std::size_t p = std::size_t(y) * t_.quad_width + x;
        double ux, uy;
        ffd_displacement(t_, pixel_support_[p], ux, uy);
        const double px = (x * t_.quad_spacing + ux) / m_->spacing;
        const double py = (y * t_.quad_spacing + uy) / m_->spacing;
        sampler_.eval(px, py, values_[p], grads_x_[p], grads_y_[p]);
        parzen_->add(values_[p], fixed_[p]);
      }
    parzen_->finalize();
    if (grad != nullptr) {
      for (std::size_t p = 0; p < values_.size(); ++p) {
        const double d = -cfg_->image_term_scale *
                         parzen_->d_mi_d_moving(values_[p], fixed_[p]);
        if (d == 0.0) continue;
        scatter(grad, pixel_support_[p], d * grads_x_[p], d * grads_y_[p]);
      }
    }
    return -cfg_->image_term_scale * parzen_->mi();
  }

private:
  std::vector<double> fixed_;
  std::unique_ptr<ParzenMi> parzen_;
  std::vector<double> values_, grads_x_, grads_y_;
};

struct OptimizerReport {
  int iterations = 0;
  bool gradient_converged = false;
  std::vector<double> trace;
};

// Polak-Ribiere conjugate gradient with Armijo backtracking; accepted
// objective values are non-increasing by construction.
OptimizerReport minimize(FfdObjective& obj, std::vector<double>& psi, int max_iters,
                         double gtol) {
  OptimizerReport rep;
  const std::size_t dim = psi.size();
  std::vector<double> g(dim), g_new(dim), d(dim), trial(dim);
  double f = obj.eval(psi, &g);
  rep.trace.push_back(f);
  for (std::size_t i = 0; i < dim; ++i) d[i] = -g[i];
  double step = 1.0;

  for (int it = 0; it < max_iters; ++it) {
    double gnorm2 = 0.0;
    for (double v : g) gnorm2 += v * v;
    if (std::sqrt(gnorm2) < gtol) {
      rep.gradient_converged = true;
      break;
    }
    double gd = 0.0;
    for (std::size_t i = 0; i < dim; ++i) gd += g[i] * d[i];
    if (gd >= 0.0) { // not a descent direction: restart on steepest descent
      for (std::size_t i = 0; i < dim; ++i) d[i] = -g[i];
      gd = -gnorm2;
    }

    double t = step;
    bool accepted = false;
    double f_new = f;
    for (int bt = 0; bt < 40; ++bt) {
      for (std::size_t i = 0; i < dim; ++i) trial[i] = psi[i] + t * d[i];
      f_new = obj.eval(trial, nullptr);
      if (f_new <= f + 1e-4 * t * gd) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) break;

    psi.swap(trial);
    f_new = obj.eval(psi, &g_new); // refresh gradient at the accepted point
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
      num += g_new[i] * (g_new[i] - g[i]);
      den += g[i] * g[i];
    }
    const double beta = den > 0.0 ? std::max(0.0, num / den) : 0.0;
    for (std::size_t i = 0; i < dim; ++i) d[i] = -g_new[i] + beta * d[i];
    g.swap(g_new);
    f = f_new;
    rep.trace.push_back(f);
    ++rep.iterations;
    step = std::min(t * 2.0, 1e4);
  }
  return rep;
}

FfdRegResult optimize_pyramid(
    const Image2D& m_full, const Image2D* h_full, const PredictionLevel* pred_full,
    const LandmarkSet& landmarks, const RegistrationEnergyConfig& cfg) {
  if (!(cfg.control_spacing_mm > 0.0) || cfg.pyramid_levels < 1)
    throw std::invalid_argument("optimize_ffd: invalid configuration");

  // build the pyramid, finest first
  std::vector<Image2D> m_levels{m_full};
  std::vector<Image2D> h_levels;
  std::vector<PredictionLevel> pred_levels;
  if (h_full != nullptr) h_levels.push_back(*h_full);
  if (pred_full != nullptr) pred_levels.push_back(*pred_full);
  for (int l = 1; l < cfg.pyramid_levels; ++l) {
    if (m_levels.back().width < 8 || m_levels.back().height < 8) break;
    m_levels.push_back(downsample_half(m_levels.back()));
    if (h_full != nullptr) h_levels.push_back(downsample_half(h_levels.back()));
    if (pred_full != nullptr)
      pred_levels.push_back(
          downsample_prediction(pred_levels.back(), m_levels[m_levels.size() - 2]));
  }
  const int levels = int(m_levels.size());

  FfdRegResult result;
  FfdTransform current;
  bool have_transform = false;

  for (int l = levels - 1; l >= 0; --l) {
    const Image2D& m = m_levels[std::size_t(l)];
    const double spacing_l = cfg.control_spacing_mm * double(1 << l);
    FfdTransform grid = FfdTransform::for_image(m, spacing_l);
    if (have_transform) {
      grid = ffd_subdivide(current, (m.width - 1) * m.spacing, (m.height - 1) * m.spacing,
                           m.width, m.height, m.spacing);
    }

    std::unique_ptr<FfdObjective> obj;
    if (cfg.data_term == RegistrationEnergyConfig::DataTerm::synthesis) {
      obj = std::make_unique<SynthesisObjective>(m, pred_levels[std::size_t(l)], landmarks,
                                                 cfg, std::move(grid));
    } else {
      obj = std::make_unique<MiObjective>(m, h_levels[std::size_t(l)], landmarks, cfg,
                                          std::move(grid));
    }

    std::vector<double> psi;
    obj->get_params(psi);
    const OptimizerReport rep = minimize(*obj, psi, cfg.max_iterations, cfg.gradient_tol);
    obj->set_params(psi);
    result.iterations += rep.iterations;

    if (l == 0) {
      result.converged = rep.gradient_converged;
      result.hit_budget = !rep.gradient_converged;
      result.energy_trace = rep.trace;
      result.final_energy = obj->eval(psi, nullptr);
      result.data_term = obj->last_data;
      result.landmark_term = obj->last_landmark;
      result.regularizers = obj->last_reg;
      result.mean_landmark_residual_mm = obj->landmark_residual_mean();
      result.transform = obj->transform();
    } else {
      current = obj->transform();
      have_transform = true;
    }
  }
  return result;
}

} // namespace

double smooth_sample(const Image2D& img, double x_px, double y_px) {
  SmoothSampler sampler{&img};
  double v, gx, gy;
  sampler.eval(x_px, y_px, v, gx, gy);
  return v;
}

Image2D downsample_half(const Image2D& img) {
  const Image2D smoothed = gaussian_smooth(img, img.spacing);
  Image2D out((img.width + 1) / 2, (img.height + 1) / 2, img.spacing * 2.0);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x)
      out.at(x, y) = smoothed.at(std::min(2 * x, img.width - 1),
                                 std::min(2 * y, img.height - 1));
  return out;
}

double evaluate_registration_objective(const Image2D& m, const SynthesisPrediction* pred,
                                       const Image2D* h, const LandmarkSet& landmarks,
                                       const RegistrationEnergyConfig& cfg,
                                       const FfdTransform& transform,
                                       std::vector<double>* grad) {
  if ((pred == nullptr) == (h == nullptr))
    throw std::invalid_argument(
        "evaluate_registration_objective: exactly one data term must be given");
  std::unique_ptr<FfdObjective> obj;
  PredictionLevel plevel;
  if (pred != nullptr) {
    plevel = PredictionLevel{pred->mean, pred->variance};
    obj = std::make_unique<SynthesisObjective>(m, plevel, landmarks, cfg, transform);
  } else {
    obj = std::make_unique<MiObjective>(m, *h, landmarks, cfg, transform);
  }
  std::vector<double> psi;
  obj->get_params(psi);
  if (grad != nullptr) grad->assign(psi.size(), 0.0);
  return obj->eval(psi, grad);
}

FfdRegResult optimize_ffd(const Image2D& m, const SynthesisPrediction& pred,
                          const LandmarkSet& landmarks,
                          const RegistrationEnergyConfig& cfg) {
  if (pred.width != m.width || pred.height != m.height)
    throw std::invalid_argument("optimize_ffd: prediction grid mismatch");
  PredictionLevel p0{pred.mean, pred.variance};
  return optimize_pyramid(m, nullptr, &p0, landmarks, cfg);
}

FfdRegResult optimize_ffd_mi(const Image2D& m, const Image2D& h,
                             const LandmarkSet& landmarks,
                             const RegistrationEnergyConfig& cfg) {
  if (h.width != m.width || h.height != m.height)
    throw std::invalid_argument("optimize_ffd_mi: image grids differ");
  RegistrationEnergyConfig mi_cfg = cfg;
  mi_cfg.data_term = RegistrationEnergyConfig::DataTerm::mutual_information;
  return optimize_pyramid(m, &h, nullptr, landmarks, mi_cfg);
}

} // namespace regsynth
