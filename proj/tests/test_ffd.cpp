#include "doctest.h"

#include <cmath>
#include <filesystem>

#include "regsynth/ffd.hpp"
#include "regsynth/rng.hpp"

using namespace regsynth;

namespace {

FfdTransform random_ffd(double domain, double spacing, std::uint64_t seed, double amp = 2.0) {
  FfdTransform t = FfdTransform::for_domain(domain, domain, spacing, int(domain) + 1,
                                            int(domain) + 1, 1.0);
  Rng rng(seed);
  for (auto& v : t.cx) v = rng.normal(0.0, amp);
  for (auto& v : t.cy) v = rng.normal(0.0, amp);
  return t;
}

// independent oracle: direct evaluation of the 4x4 tensor-product sum
double bspline_basis(int k, double u) {
  switch (k) {
    case 0: return (1 - u) * (1 - u) * (1 - u) / 6.0;
    case 1: return (3 * u * u * u - 6 * u * u + 4) / 6.0;
    case 2: return (-3 * u * u * u + 3 * u * u + 3 * u + 1) / 6.0;
    default: return u * u * u / 6.0;
  }
}

void brute_force_apply(const FfdTransform& t, double x, double y, double& ox, double& oy) {
  const double gx = x / t.grid_spacing, gy = y / t.grid_spacing;
  const int i = std::min(std::max(int(std::floor(gx)), 0), t.nx - 1);
  const int j = std::min(std::max(int(std::floor(gy)), 0), t.ny - 1);
  double ux = 0.0, uy = 0.0;
  for (int l = 0; l < 4; ++l)
    for (int k = 0; k < 4; ++k) {
      const double w = bspline_basis(k, gx - i) * bspline_basis(l, gy - j);
      ux += w * t.cx[t.control_index(i + k - 1, j + l - 1)];
      uy += w * t.cy[t.control_index(i + k - 1, j + l - 1)];
    }
  ox = x + ux;
  oy = y + uy;
}

// embeds the affine map u(p) = A p + b into the control displacements
void add_affine(FfdTransform& t, double a00, double a01, double a10, double a11, double bx,
                double by) {
  for (int j = -1; j <= t.ny + 1; ++j)
    for (int i = -1; i <= t.nx + 1; ++i) {
      const double px = i * t.grid_spacing, py = j * t.grid_spacing;
      t.cx[t.control_index(i, j)] += a00 * px + a01 * py + bx;
      t.cy[t.control_index(i, j)] += a10 * px + a11 * py + by;
    }
}

} // namespace

TEST_CASE("zero control displacements give the identity transform") {
  const FfdTransform t = FfdTransform::for_domain(30.0, 24.0, 6.0, 31, 25, 1.0);
  Rng rng(4);
  for (int i = 0; i < 100; ++i) {
    const double x = rng.uniform() * 30.0, y = rng.uniform() * 24.0;
    double ox, oy;
    ffd_apply(t, x, y, ox, oy);
    CHECK(ox == doctest::Approx(x).epsilon(1e-12));
    CHECK(oy == doctest::Approx(y).epsilon(1e-12));
  }
}

TEST_CASE("constant control displacements translate every point") {
  FfdTransform t = FfdTransform::for_domain(30.0, 30.0, 5.0, 31, 31, 1.0);
  for (auto& v : t.cx) v = 1.75;
  for (auto& v : t.cy) v = -0.5;
  Rng rng(6);
  for (int i = 0; i < 100; ++i) {
    const double x = rng.uniform() * 30.0, y = rng.uniform() * 30.0;
    double ox, oy;
    ffd_apply(t, x, y, ox, oy);
    CHECK(ox - x == doctest::Approx(1.75).epsilon(1e-12));
    CHECK(oy - y == doctest::Approx(-0.5).epsilon(1e-12));
  }
}

TEST_CASE("ffd evaluation matches the brute-force tensor-product sum") {
  const FfdTransform t = random_ffd(40.0, 7.0, 99);
  Rng rng(100);
  for (int i = 0; i < 300; ++i) {
    const double x = rng.uniform() * 40.0, y = rng.uniform() * 40.0;
    double ox, oy, bx, by;
    ffd_apply(t, x, y, ox, oy);
    brute_force_apply(t, x, y, bx, by);
    CHECK(ox == doctest::Approx(bx).epsilon(1e-12));
    CHECK(oy == doctest::Approx(by).epsilon(1e-12));
  }
}

TEST_CASE("points outside the supported domain are rejected") {
  const FfdTransform t = FfdTransform::for_domain(20.0, 20.0, 5.0, 21, 21, 1.0);
  double ox, oy;
  CHECK_THROWS_AS(ffd_apply(t, -1.0, 5.0, ox, oy), std::invalid_argument);
  CHECK_THROWS_AS(ffd_apply(t, 5.0, 25.0, ox, oy), std::invalid_argument);
}

TEST_CASE("analytic jacobian agrees with central differences") {
  const FfdTransform t = random_ffd(32.0, 6.0, 12345);
  Rng rng(11);
  const double h = 1e-5;
  for (int i = 0; i < 50; ++i) {
    const double x = 2.0 + rng.uniform() * 28.0, y = 2.0 + rng.uniform() * 28.0;
    double jac[2][2];
    ffd_jacobian(t, spline_support(t, x, y), jac);
    double xp, yp, xm, ym;
    ffd_apply(t, x + h, y, xp, yp);
    ffd_apply(t, x - h, y, xm, ym);
    CHECK(jac[0][0] == doctest::Approx((xp - xm) / (2 * h) - 1.0).epsilon(1e-5));
    CHECK(jac[1][0] == doctest::Approx((yp - ym) / (2 * h)).epsilon(1e-5));
    ffd_apply(t, x, y + h, xp, yp);
    ffd_apply(t, x, y - h, xm, ym);
    CHECK(jac[0][1] == doctest::Approx((xp - xm) / (2 * h)).epsilon(1e-5));
    CHECK(jac[1][1] == doctest::Approx((yp - ym) / (2 * h) - 1.0).epsilon(1e-5));
  }
}

TEST_CASE("regularizers vanish for the identity and for pure translations") {
  FfdTransform t = FfdTransform::for_domain(24.0, 24.0, 6.0, 25, 25, 1.0);
  FfdRegularizers r = ffd_regularizers(t);
  CHECK(r.bending == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(r.linear == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(r.jacobian == doctest::Approx(0.0).epsilon(1e-15));

  for (auto& v : t.cx) v = 4.0;
  for (auto& v : t.cy) v = -2.0;
  r = ffd_regularizers(t);
  CHECK(r.bending == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(r.linear == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(r.jacobian == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("an affine shear has linear energy but no bending energy") {
  FfdTransform t = FfdTransform::for_domain(24.0, 24.0, 4.0, 25, 25, 1.0);
  add_affine(t, 0.0, 0.1, 0.0, 0.0, 0.0, 0.0);
  const FfdRegularizers r = ffd_regularizers(t);
  CHECK(r.linear > 1e-4);
  CHECK(r.bending <= 1e-8 * r.linear);
}

TEST_CASE("bending energy is invariant under adding an affine map") {
  FfdTransform t = random_ffd(30.0, 6.0, 2024, 1.0);
  const double before = ffd_regularizers(t).bending;
  add_affine(t, 0.05, -0.02, 0.03, 0.04, 1.0, -2.0);
  const double after = ffd_regularizers(t).bending;
  CHECK(after == doctest::Approx(before).epsilon(1e-8));
}

TEST_CASE("regularizer gradients match finite differences") {
  FfdTransform t = random_ffd(20.0, 5.0, 555, 0.8);
  std::vector<double> gx(t.n_controls(), 0.0), gy(t.n_controls(), 0.0);
  const double wb = 0.7, wl = 1.3, wj = 0.21;
  ffd_regularizers_grad(t, wb, wl, wj, &gx, &gy);
  auto value = [&]() {
    const FfdRegularizers r = ffd_regularizers(t);
    return wb * r.bending + wl * r.linear + wj * r.jacobian;
  };
  Rng rng(66);
  const double h = 1e-6;
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t i = std::size_t(rng.below(t.n_controls()));
    const bool on_x = rng.uniform() < 0.5;
    auto& c = on_x ? t.cx : t.cy;
    const double saved = c[i];
    c[i] = saved + h;
    const double fp = value();
    c[i] = saved - h;
    const double fm = value();
    c[i] = saved;
    const double fd = (fp - fm) / (2 * h);
    const double an = on_x ? gx[i] : gy[i];
    CHECK(an == doctest::Approx(fd).epsilon(1e-4));
  }
}

TEST_CASE("dyadic subdivision preserves the transform") {
  const FfdTransform t = random_ffd(32.0, 8.0, 31415);
  const FfdTransform f = ffd_subdivide(t, 32.0, 32.0, 33, 33, 1.0);
  CHECK(f.grid_spacing == doctest::Approx(4.0));
  Rng rng(8);
  for (int i = 0; i < 200; ++i) {
    const double x = 3.0 + rng.uniform() * 26.0, y = 3.0 + rng.uniform() * 26.0;
    double ax, ay, bx, by;
    ffd_apply(t, x, y, ax, ay);
    ffd_apply(f, x, y, bx, by);
    CHECK(bx == doctest::Approx(ax).epsilon(1e-9));
    CHECK(by == doctest::Approx(ay).epsilon(1e-9));
  }
}

TEST_CASE("ffd json round-trip") {
  const auto dir = std::filesystem::temp_directory_path() / "regsynth_ffd_test";
  std::filesystem::create_directories(dir);
  const FfdTransform t = random_ffd(18.0, 4.5, 77);
  const std::string path = (dir / "ffd.json").string();
  write_ffd(t, path);
  const FfdTransform back = read_ffd(path);
  REQUIRE(back.n_controls() == t.n_controls());
  CHECK(back.grid_spacing == doctest::Approx(t.grid_spacing));
  for (std::size_t i = 0; i < t.n_controls(); ++i) {
    CHECK(back.cx[i] == doctest::Approx(t.cx[i]).epsilon(1e-12));
    CHECK(back.cy[i] == doctest::Approx(t.cy[i]).epsilon(1e-12));
  }
  std::filesystem::remove_all(dir);
}
