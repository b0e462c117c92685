#include "regsynth/ffd.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "json.hpp"

namespace regsynth {

namespace {

inline void basis(double t, double b[4]) {
  const double t2 = t * t, t3 = t2 * t;
  b[0] = (1.0 - 3.0 * t + 3.0 * t2 - t3) / 6.0;
  b[1] = (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0;
  b[2] = (-3.0 * t3 + 3.0 * t2 + 3.0 * t + 1.0) / 6.0;
  b[3] = t3 / 6.0;
}

inline void basis_d1(double t, double b[4]) {
  const double t2 = t * t;
  b[0] = -0.5 * (1.0 - t) * (1.0 - t);
  b[1] = (3.0 * t2 - 4.0 * t) / 2.0;
  b[2] = (-3.0 * t2 + 2.0 * t + 1.0) / 2.0;
  b[3] = 0.5 * t2;
}

inline void basis_d2(double t, double b[4]) {
  b[0] = 1.0 - t;
  b[1] = 3.0 * t - 2.0;
  b[2] = 1.0 - 3.0 * t;
  b[3] = t;
}

int cells_for(double extent_mm, double spacing_mm) {
  return std::max(1, int(std::ceil(extent_mm / spacing_mm - 1e-12)));
}

} // namespace

FfdTransform FfdTransform::for_domain(double domain_x_mm, double domain_y_mm,
                                      double control_spacing_mm, int quad_w, int quad_h,
                                      double quad_spacing_mm) {
  if (!(control_spacing_mm > 0.0))
    throw std::invalid_argument("FfdTransform: control spacing must be positive");
  FfdTransform t;
  t.grid_spacing = control_spacing_mm;
  t.domain_x = domain_x_mm;
  t.domain_y = domain_y_mm;
  t.nx = cells_for(domain_x_mm, control_spacing_mm);
  t.ny = cells_for(domain_y_mm, control_spacing_mm);
  t.quad_width = quad_w;
  t.quad_height = quad_h;
  t.quad_spacing = quad_spacing_mm;
  t.cx.assign(t.n_controls(), 0.0);
  t.cy.assign(t.n_controls(), 0.0);
  return t;
}

FfdTransform FfdTransform::for_image(const Image2D& img, double control_spacing_mm) {
  return for_domain((img.width - 1) * img.spacing, (img.height - 1) * img.spacing,
                    control_spacing_mm, img.width, img.height, img.spacing);
}

SplineSupport spline_support(const FfdTransform& t, double x_mm, double y_mm) {
  SplineSupport s;
  const double gx = x_mm / t.grid_spacing;
  const double gy = y_mm / t.grid_spacing;
  s.i = std::clamp(int(std::floor(gx)), 0, t.nx - 1);
  s.j = std::clamp(int(std::floor(gy)), 0, t.ny - 1);
  const double fx = gx - s.i;
  const double fy = gy - s.j;
  double w[4];
  basis(fx, w);
  std::copy(w, w + 4, s.wx.begin());
  basis(fy, w);
  std::copy(w, w + 4, s.wy.begin());
  const double inv = 1.0 / t.grid_spacing;
  basis_d1(fx, w);
  for (int k = 0; k < 4; ++k) s.dwx[std::size_t(k)] = w[k] * inv;
  basis_d1(fy, w);
  for (int k = 0; k < 4; ++k) s.dwy[std::size_t(k)] = w[k] * inv;
  basis_d2(fx, w);
  for (int k = 0; k < 4; ++k) s.ddwx[std::size_t(k)] = w[k] * inv * inv;
  basis_d2(fy, w);
  for (int k = 0; k < 4; ++k) s.ddwy[std::size_t(k)] = w[k] * inv * inv;
  return s;
}

void ffd_displacement(const FfdTransform& t, const SplineSupport& s,
                      double& ux, double& uy) {
  ux = 0.0;
  uy = 0.0;
  for (int l = 0; l < 4; ++l) {
    const std::size_t row = t.control_index(s.i - 1, s.j + l - 1);
    double ax = 0.0, ay = 0.0;
    for (int k = 0; k < 4; ++k) {
      ax += s.wx[std::size_t(k)] * t.cx[row + std::size_t(k)];
      ay += s.wx[std::size_t(k)] * t.cy[row + std::size_t(k)];
    }
    ux += s.wy[std::size_t(l)] * ax;
    uy += s.wy[std::size_t(l)] * ay;
  }
}

void ffd_jacobian(const FfdTransform& t, const SplineSupport& s, double jac[2][2]) {
  double axx = 0.0, axy = 0.0, ayx = 0.0, ayy = 0.0;
  for (int l = 0; l < 4; ++l) {
    const std::size_t row = t.control_index(s.i - 1, s.j + l - 1);
    double dX = 0.0, wX = 0.0, dY = 0.0, wY = 0.0;
    for (int k = 0; k < 4; ++k) {
      const double cxv = t.cx[row + std::size_t(k)];
      const double cyv = t.cy[row + std::size_t(k)];
      dX += s.dwx[std::size_t(k)] * cxv;
      wX += s.wx[std::size_t(k)] * cxv;
      dY += s.dwx[std::size_t(k)] * cyv;
      wY += s.wx[std::size_t(k)] * cyv;
    }
    axx += s.wy[std::size_t(l)] * dX;  // du_x/dx
    axy += s.dwy[std::size_t(l)] * wX; // du_x/dy
    ayx += s.wy[std::size_t(l)] * dY;  // du_y/dx
    ayy += s.dwy[std::size_t(l)] * wY; // du_y/dy
  }
  jac[0][0] = axx;
  jac[0][1] = axy;
  jac[1][0] = ayx;
  jac[1][1] = ayy;
}

void ffd_apply(const FfdTransform& t, double x_mm, double y_mm,
               double& out_x, double& out_y) {
  const double eps = 1e-9;
  if (!(x_mm >= -eps && x_mm <= t.domain_x + eps && y_mm >= -eps && y_mm <= t.domain_y + eps))
    throw std::invalid_argument("ffd_apply: coordinate outside supported domain");
  const SplineSupport s = spline_support(t, x_mm, y_mm);
  double ux, uy;
  ffd_displacement(t, s, ux, uy);
  out_x = x_mm + ux;
  out_y = y_mm + uy;
}

FfdRegularizers ffd_regularizers_grad(const FfdTransform& t, double beta_b, double beta_l,
                                      double beta_j, std::vector<double>* grad_cx,
                                      std::vector<double>* grad_cy) {
  FfdRegularizers r;
  const std::size_t q_count = std::size_t(t.quad_width) * std::size_t(t.quad_height);
  if (q_count == 0) return r;
  const double inv_q = 1.0 / double(q_count);
  // bending and strain derivatives are taken per control-grid unit, the
  // convention the default weights are calibrated for; the log-determinant
  // stays in physical units
  const double sg = t.grid_spacing;
  const double sg2 = sg * sg;

  for (int qy = 0; qy < t.quad_height; ++qy) {
    for (int qx = 0; qx < t.quad_width; ++qx) {
      const double x = qx * t.quad_spacing;
      const double y = qy * t.quad_spacing;
      const SplineSupport s = spline_support(t, x, y);

      // first and second derivatives of both displacement components
      double a = 0, b = 0, c = 0, d = 0;          // du1/dx du1/dy du2/dx du2/dy
      double xx1 = 0, xy1 = 0, yy1 = 0;           // second derivatives, component 1
      double xx2 = 0, xy2 = 0, yy2 = 0;
      for (int l = 0; l < 4; ++l) {
        const std::size_t row = t.control_index(s.i - 1, s.j + l - 1);
        const double wl = s.wy[std::size_t(l)];
        const double dl = s.dwy[std::size_t(l)];
        const double ddl = s.ddwy[std::size_t(l)];
        for (int k = 0; k < 4; ++k) {
          const double cxv = t.cx[row + std::size_t(k)];
          const double cyv = t.cy[row + std::size_t(k)];
          const double wk = s.wx[std::size_t(k)];
          const double dk = s.dwx[std::size_t(k)];
          const double ddk = s.ddwx[std::size_t(k)];
          a += dk * wl * cxv;
          b += wk * dl * cxv;
          c += dk * wl * cyv;
          d += wk * dl * cyv;
          xx1 += ddk * wl * cxv;
          xy1 += dk * dl * cxv;
          yy1 += wk * ddl * cxv;
          xx2 += ddk * wl * cyv;
          xy2 += dk * dl * cyv;
          yy2 += wk * ddl * cyv;
        }
      }

      r.bending += inv_q * sg2 * sg2 *
                   (xx1 * xx1 + 2.0 * xy1 * xy1 + yy1 * yy1 +
                    xx2 * xx2 + 2.0 * xy2 * xy2 + yy2 * yy2);

      const double exx = a, eyy = d, exy = 0.5 * (b + c);
      r.linear += inv_q * sg2 * (exx * exx + eyy * eyy + 2.0 * exy * exy);

      const double det = (1.0 + a) * (1.0 + d) - b * c;
      double jac_coeff = 0.0;
      if (det <= 0.0) {
        r.jacobian_finite = false;
      } else if (r.jacobian_finite) {
        const double lg = std::log(det);
        r.jacobian += inv_q * lg * lg;
        jac_coeff = 2.0 * lg / det * inv_q;
      }

      if (grad_cx != nullptr) {
        // chain rule back to the 4x4 control support
        for (int l = 0; l < 4; ++l) {
          const std::size_t row = t.control_index(s.i - 1, s.j + l - 1);
          const double wl = s.wy[std::size_t(l)];
          const double dl = s.dwy[std::size_t(l)];
          const double ddl = s.ddwy[std::size_t(l)];
          for (int k = 0; k < 4; ++k) {
            const double wk = s.wx[std::size_t(k)];
            const double dk = s.dwx[std::size_t(k)];
            const double ddk = s.ddwx[std::size_t(k)];
            const double w_x = dk * wl;   // d/dc of first-derivative-in-x
            const double w_y = wk * dl;
            const double w_xx = ddk * wl;
            const double w_xy = dk * dl;
            const double w_yy = wk * ddl;
            double gx = 0.0, gy = 0.0;
            if (beta_b != 0.0) {
              gx += beta_b * inv_q * sg2 * sg2 * 2.0 *
                    (xx1 * w_xx + 2.0 * xy1 * w_xy + yy1 * w_yy);
              gy += beta_b * inv_q * sg2 * sg2 * 2.0 *
                    (xx2 * w_xx + 2.0 * xy2 * w_xy + yy2 * w_yy);
            }
            if (beta_l != 0.0) {
              gx += beta_l * inv_q * sg2 * (2.0 * exx * w_x + 2.0 * exy * w_y);
              gy += beta_l * inv_q * sg2 * (2.0 * eyy * w_y + 2.0 * exy * w_x);
            }
            if (beta_j != 0.0 && r.jacobian_finite) {
              // d(det)/da=(1+d), /db=-c, /dc=-b, /dd=(1+a)
              gx += beta_j * jac_coeff * ((1.0 + d) * w_x - c * w_y);
              gy += beta_j * jac_coeff * ((1.0 + a) * w_y - b * w_x);
            }
            (*grad_cx)[row + std::size_t(k)] += gx;
            (*grad_cy)[row + std::size_t(k)] += gy;
          }
        }
      }
    }
  }
  if (!r.jacobian_finite) r.jacobian = std::numeric_limits<double>::infinity();
  return r;
}

FfdRegularizers ffd_regularizers(const FfdTransform& t) {
  return ffd_regularizers_grad(t, 0.0, 0.0, 0.0, nullptr, nullptr);
}

FfdTransform ffd_subdivide(const FfdTransform& t, double fine_domain_x, double fine_domain_y,
                           int quad_w, int quad_h, double quad_spacing_mm) {
  FfdTransform f = FfdTransform::for_domain(fine_domain_x, fine_domain_y,
                                            t.grid_spacing * 0.5, quad_w, quad_h,
                                            quad_spacing_mm);
  auto coarse = [&t](int i, int j, const std::vector<double>& c) {
    i = std::clamp(i, -1, t.nx + 1);
    j = std::clamp(j, -1, t.ny + 1);
    return c[t.control_index(i, j)];
  };
  // dyadic cubic B-spline refinement: even (1 6 1)/8, odd (4 4)/8, per axis
  auto refined = [&](int fi, int fj, const std::vector<double>& c) {
    auto along_x = [&](int ci, int fj2) {
      if (fj2 % 2 == 0) {
        const int m = fj2 / 2;
        return (coarse(ci, m - 1, c) + 6.0 * coarse(ci, m, c) + coarse(ci, m + 1, c)) / 8.0;
      }
      const int m = (fj2 - 1) / 2;
      return 0.5 * (coarse(ci, m, c) + coarse(ci, m + 1, c));
    };
    if (fi % 2 == 0) {
      const int m = fi / 2;
      return (along_x(m - 1, fj) + 6.0 * along_x(m, fj) + along_x(m + 1, fj)) / 8.0;
    }
    const int m = (fi - 1) / 2;
    return 0.5 * (along_x(m, fj) + along_x(m + 1, fj));
  };
  for (int j = -1; j <= f.ny + 1; ++j)
    for (int i = -1; i <= f.nx + 1; ++i) {
      f.cx[f.control_index(i, j)] = refined(i, j, t.cx);
      f.cy[f.control_index(i, j)] = refined(i, j, t.cy);
    }
  return f;
}

DeformationField ffd_to_dense_field(const FfdTransform& t, int w, int h, double spacing_mm) {
  DeformationField out(w, h, spacing_mm);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const SplineSupport s = spline_support(t, x * spacing_mm, y * spacing_mm);
      double ux, uy;
      ffd_displacement(t, s, ux, uy);
      const std::size_t i = out.index(x, y);
      out.dx[i] = ux;
      out.dy[i] = uy;
    }
  return out;
}

void write_ffd(const FfdTransform& t, const std::string& path) {
  nlohmann::json j;
  j["grid_spacing_mm"] = t.grid_spacing;
  j["nx"] = t.nx;
  j["ny"] = t.ny;
  j["domain_x_mm"] = t.domain_x;
  j["domain_y_mm"] = t.domain_y;
  j["quad_width"] = t.quad_width;
  j["quad_height"] = t.quad_height;
  j["quad_spacing_mm"] = t.quad_spacing;
  j["dx"] = t.cx;
  j["dy"] = t.cy;
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << j.dump() << "\n";
}

FfdTransform read_ffd(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  nlohmann::json j;
  f >> j;
  FfdTransform t = FfdTransform::for_domain(
      j.at("domain_x_mm").get<double>(), j.at("domain_y_mm").get<double>(),
      j.at("grid_spacing_mm").get<double>(), j.at("quad_width").get<int>(),
      j.at("quad_height").get<int>(), j.at("quad_spacing_mm").get<double>());
  t.cx = j.at("dx").get<std::vector<double>>();
  t.cy = j.at("dy").get<std::vector<double>>();
  if (t.cx.size() != t.n_controls() || t.cy.size() != t.n_controls())
    throw std::runtime_error("FFD control grid size mismatch in " + path);
  return t;
}

} // namespace regsynth
