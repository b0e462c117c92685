#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <stdexcept>

#include "regsynth/image.hpp"
#include "regsynth/image_io.hpp"
#include "regsynth/rng.hpp"

using namespace regsynth;

namespace {

Image2D ramp_image(int w, int h, double spacing, double ax, double ay, double c = 0.0) {
  Image2D img(w, h, spacing);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) img.at(x, y) = ax * x + ay * y + c;
  return img;
}

Image2D random_image(int w, int h, double spacing, std::uint64_t seed) {
  Image2D img(w, h, spacing);
  Rng rng(seed);
  for (auto& v : img.data) v = 255.0 * rng.uniform();
  return img;
}

// feature index of derivative (ix, iy) at scale position si, orders <= 3
int feature_index(int si, int ix, int iy) {
  const int order = ix + iy;
  int f = si * 10;
  for (int k = 0; k < order; ++k) f += k + 1;
  return f + (order - ix);
}

} // namespace

TEST_CASE("bilinear sampling is exact at integer coordinates") {
  const Image2D img = random_image(8, 7, 1.0, 42);
  CHECK(bilinear_sample(img, 3.0, 5.0) == img.at(3, 5));
}

TEST_CASE("bilinear sampling hits the midpoint of two pixels") {
  Image2D img(4, 4, 1.0);
  img.at(1, 2) = 10.0;
  img.at(2, 2) = 20.0;
  CHECK(bilinear_sample(img, 1.5, 2.0) == doctest::Approx(15.0));
}

TEST_CASE("bilinear sampling reproduces bilinear functions") {
  const Image2D img = ramp_image(16, 16, 1.0, 2.0, 3.0);
  Rng rng(7);
  for (int i = 0; i < 200; ++i) {
    const double x = rng.uniform() * 15.0;
    const double y = rng.uniform() * 15.0;
    CHECK(bilinear_sample(img, x, y) == doctest::Approx(2.0 * x + 3.0 * y).epsilon(1e-9));
  }
}

TEST_CASE("bilinear sampling rejects non-finite coordinates") {
  const Image2D img = random_image(4, 4, 1.0, 1);
  CHECK_THROWS_AS(bilinear_sample(img, std::nan(""), 0.0), std::invalid_argument);
  CHECK_THROWS_AS(bilinear_sample(img, 0.0, std::numeric_limits<double>::infinity()),
                  std::invalid_argument);
}

TEST_CASE("constant image: order-0 features equal the constant, others vanish") {
  Image2D img(32, 32, 1.0, 77.0);
  const FeatureStack fs = gaussian_derivative_features(img, {0.0, 2.0, 4.0}, 3);
  REQUIRE(fs.count == 32);
  for (int y = 0; y < fs.height; ++y)
    for (int x = 0; x < fs.width; ++x) {
      const float* f = fs.at(x, y);
      for (int si = 0; si < 3; ++si) {
        CHECK(f[feature_index(si, 0, 0)] == doctest::Approx(77.0).epsilon(1e-9));
        for (int ix = 0; ix <= 3; ++ix)
          for (int iy = 0; ix + iy <= 3; ++iy)
            if (ix + iy >= 1) CHECK(f[feature_index(si, ix, iy)] == 0.0f);
      }
    }
}

TEST_CASE("feature count matches the scale/order combinatorics") {
  const Image2D img = random_image(24, 24, 1.0, 3);
  CHECK(gaussian_derivative_features(img, {0.0, 2.0, 4.0}, 3).count == 32);
  CHECK(gaussian_derivative_features(img, {0.0}, 1).count == 3 + 2);
  CHECK(derivative_count(3) == 10);
}

TEST_CASE("ramp image derivative features in physical units") {
  const double spacing = 0.5;
  const Image2D img = ramp_image(16, 16, spacing, 5.0, 0.0);
  const FeatureStack fs = gaussian_derivative_features(img, {0.0}, 1);
  for (int y = 4; y < 12; ++y)
    for (int x = 4; x < 12; ++x) {
      const float* f = fs.at(x, y);
      CHECK(f[feature_index(0, 1, 0)] == doctest::Approx(5.0 / spacing).epsilon(1e-6));
      CHECK(f[feature_index(0, 0, 1)] == doctest::Approx(0.0).epsilon(1e-9));
    }
}

TEST_CASE("feature extraction commutes with whole-pixel translation") {
  const int shift = 3;
  Image2D a = random_image(40, 40, 1.0, 11);
  a = gaussian_smooth(a, 1.5);
  Image2D b(40, 40, 1.0);
  for (int y = 0; y < 40; ++y)
    for (int x = 0; x < 40; ++x) b.at(x, y) = a.at_clamped(x - shift, y);
  const FeatureStack fa = gaussian_derivative_features(a, {0.0, 2.0}, 2);
  const FeatureStack fb = gaussian_derivative_features(b, {0.0, 2.0}, 2);
  const int n_deriv = fa.count - 2; // location features excluded
  for (int y = 12; y < 28; ++y)
    for (int x = 12; x < 28; ++x)
      for (int f = 0; f < n_deriv; ++f)
        CHECK(fb.at(x, y)[f] == doctest::Approx(fa.at(x - shift, y)[f]).epsilon(1e-6));
}

TEST_CASE("feature extraction validates its inputs") {
  const Image2D img = random_image(16, 16, 1.0, 5);
  CHECK_THROWS_AS(gaussian_derivative_features(img, {-1.0}, 3), std::invalid_argument);
  CHECK_THROWS_AS(gaussian_derivative_features(img, {0.0}, 4), std::invalid_argument);
  CHECK_THROWS_AS(gaussian_derivative_features(img, {100.0}, 3), std::invalid_argument);
}

TEST_CASE("harris response of a constant image is zero") {
  Image2D img(16, 16, 1.0, 9.0);
  const Image2D r = harris_response(img, 0.04, 2.0);
  for (double v : r.data) CHECK(v == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("harris response is non-positive along a straight step edge") {
  Image2D img(32, 32, 1.0);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) img.at(x, y) = x < 16 ? 0.0 : 100.0;
  const Image2D r = harris_response(img, 0.04, 2.0);
  // edge interior, away from the raster border
  for (int y = 10; y < 22; ++y)
    for (int x = 14; x < 18; ++x) CHECK(r.at(x, y) <= 1e-9);
}

TEST_CASE("checkerboard corner is a strict local maximum of the harris response") {
  Image2D img(16, 16, 1.0);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) img.at(x, y) = ((x < 8) == (y < 8)) ? 200.0 : 50.0;
  const Image2D r = harris_response(img, 0.04, 2.0);
  // brute-force search for the best response; it must sit at the corner
  int bx = 0, by = 0;
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x)
      if (r.at(x, y) > r.at(bx, by)) {
        bx = x;
        by = y;
      }
  CHECK(std::abs(bx - 7.5) < 1.6);
  CHECK(std::abs(by - 7.5) < 1.6);
  // the corner falls between pixels, so its 2x2 plateau shares the maximum;
  // the response must drop strictly outside that plateau
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x)
      if (std::max(std::abs(x - 7.5), std::abs(y - 7.5)) > 1.0)
        CHECK(r.at(bx, by) > r.at(x, y));
}

TEST_CASE("harris response is invariant to an intensity offset") {
  Image2D a = random_image(24, 24, 1.0, 21);
  Image2D b = a;
  for (auto& v : b.data) v += 40.0;
  const Image2D ra = harris_response(a, 0.04, 2.0);
  const Image2D rb = harris_response(b, 0.04, 2.0);
  for (std::size_t i = 0; i < ra.size(); ++i)
    CHECK(rb.data[i] == doctest::Approx(ra.data[i]).epsilon(1e-6));
}

TEST_CASE("harris parameter validation") {
  const Image2D img = random_image(8, 8, 1.0, 2);
  CHECK_THROWS_AS(harris_response(img, 0.0, 2.0), std::invalid_argument);
  CHECK_THROWS_AS(harris_response(img, 0.3, 2.0), std::invalid_argument);
  CHECK_THROWS_AS(harris_response(img, 0.04, 0.0), std::invalid_argument);
}

TEST_CASE("pgm and png round-trips preserve 8-bit content and spacing") {
  const auto dir = std::filesystem::temp_directory_path() / "regsynth_io_test";
  std::filesystem::create_directories(dir);
  Image2D img = random_image(23, 17, 0.7, 99);
  for (auto& v : img.data) v = std::floor(v);

  for (const char* name : {"img.pgm", "img.png"}) {
    const std::string path = (dir / name).string();
    if (std::string(name).ends_with("pgm"))
      write_pgm(img, path);
    else
      write_png(img, path);
    const Image2D back = read_image(path);
    REQUIRE(back.width == img.width);
    REQUIRE(back.height == img.height);
    CHECK(back.spacing == doctest::Approx(0.7));
    for (std::size_t i = 0; i < img.size(); ++i) CHECK(back.data[i] == img.data[i]);
  }
  std::filesystem::remove_all(dir);
}
