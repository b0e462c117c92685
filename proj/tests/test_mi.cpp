#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "regsynth/mi.hpp"
#include "regsynth/rng.hpp"

using namespace regsynth;

namespace {

Image2D random_8bit(int n, std::uint64_t seed) {
  Image2D img(n, n, 1.0);
  Rng rng(seed);
  for (auto& v : img.data) v = std::floor(rng.uniform() * 256.0);
  return img;
}

} // namespace

TEST_CASE("self mutual information equals the marginal entropy") {
  const Image2D a = random_8bit(48, 3);
  CHECK(mutual_information(a, a, 64) == doctest::Approx(marginal_entropy(a, 64)).epsilon(1e-9));
}

TEST_CASE("mutual information is symmetric") {
  const Image2D a = random_8bit(32, 4);
  const Image2D b = random_8bit(32, 5);
  CHECK(mutual_information(a, b, 64) == doctest::Approx(mutual_information(b, a, 64)).epsilon(1e-12));
}

TEST_CASE("independent noise carries only the plug-in sampling bias") {
  const Image2D a = random_8bit(64, 6);
  const Image2D b = random_8bit(64, 7);
  // the plug-in estimate under independence concentrates near its
  // chi-square mean (K-1)^2 / (2n); far below the ~4.1 nat marginal entropy
  const double bias = 63.0 * 63.0 / (2.0 * a.size());
  const double mi = mutual_information(a, b, 64);
  CHECK(mi < 2.0 * bias);
  CHECK(mi < 0.15 * marginal_entropy(a, 64));
  // a quarter of the bins quarters the bias
  CHECK(mutual_information(a, b, 16) < 2.0 * 15.0 * 15.0 / (2.0 * a.size()));
}

TEST_CASE("a constant image carries no information") {
  Image2D a(16, 16, 1.0, 5.0);
  const Image2D b = random_8bit(16, 8);
  CHECK(mutual_information(a, b, 64) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(mutual_information(b, a, 64) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("mutual information input validation") {
  const Image2D a = random_8bit(16, 9);
  CHECK_THROWS_AS(mutual_information(a, random_8bit(15, 9), 64), std::invalid_argument);
  CHECK_THROWS_AS(mutual_information(a, a, 1), std::invalid_argument);
}

TEST_CASE("mutual information is invariant under a shared bin permutation") {
  const int bins = 8;
  Image2D a(32, 32, 1.0), b(32, 32, 1.0);
  Rng rng(10);
  for (std::size_t i = 0; i < a.size(); ++i) {
    a.data[i] = double(rng.below(bins));
    b.data[i] = double(rng.below(bins));
  }
  // force both ranges to [0, bins-1] so bin identities are stable
  a.data[0] = 0;
  a.data[1] = bins - 1;
  b.data[0] = 0;
  b.data[1] = bins - 1;
  const double before = mutual_information(a, b, bins);
  const int perm[8] = {5, 2, 7, 0, 3, 6, 1, 4};
  Image2D ap = a, bp = b;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ap.data[i] = perm[int(a.data[i])];
    bp.data[i] = perm[int(b.data[i])];
  }
  CHECK(mutual_information(ap, bp, bins) == doctest::Approx(before).epsilon(1e-9));
}

TEST_CASE("partial-volume weighting with a zero field matches the plain metric") {
  const Image2D a = random_8bit(24, 11);
  const Image2D b = random_8bit(24, 12);
  const DeformationField zero(24, 24, 1.0);
  CHECK(mutual_information_warped(a, zero, b, 32) ==
        doctest::Approx(mutual_information(a, b, 32)).epsilon(1e-12));
}

TEST_CASE("parzen mutual information approximates the binned value") {
  Image2D a = random_8bit(48, 13);
  Image2D b = a;
  Rng rng(14);
  for (std::size_t i = 0; i < b.size(); ++i)
    b.data[i] = std::clamp(200.0 - 0.7 * b.data[i] + rng.normal(0.0, 8.0), 0.0, 255.0);
  ParzenMi parzen(64, 0.0, 255.0, 0.0, 255.0);
  for (std::size_t i = 0; i < a.size(); ++i) parzen.add(a.data[i], b.data[i]);
  parzen.finalize();
  const double hard = mutual_information(a, b, 64);
  CHECK(parzen.mi() > 0.5 * hard);
  CHECK(parzen.mi() < 1.5 * hard);
}

TEST_CASE("parzen gradient matches finite differences") {
  Rng rng(15);
  const int n = 500;
  std::vector<double> moving(n), fixed(n);
  for (int i = 0; i < n; ++i) {
    moving[std::size_t(i)] = rng.uniform() * 100.0;
    fixed[std::size_t(i)] = 0.4 * moving[std::size_t(i)] + rng.normal(0.0, 10.0);
  }
  auto mi_of = [&](double delta, int which) {
    ParzenMi p(32, 0.0, 100.0, -60.0, 120.0);
    for (int i = 0; i < n; ++i)
      p.add(moving[std::size_t(i)] + (i == which ? delta : 0.0), fixed[std::size_t(i)]);
    p.finalize();
    return p.mi();
  };
  ParzenMi p(32, 0.0, 100.0, -60.0, 120.0);
  for (int i = 0; i < n; ++i) p.add(moving[std::size_t(i)], fixed[std::size_t(i)]);
  p.finalize();
  const double h = 1e-5;
  for (int trial = 0; trial < 12; ++trial) {
    const int which = int(rng.below(n));
    const double fd = (mi_of(h, which) - mi_of(-h, which)) / (2 * h);
    const double an = p.d_mi_d_moving(moving[std::size_t(which)], fixed[std::size_t(which)]);
    CHECK(an == doctest::Approx(fd).epsilon(1e-4));
  }
}
