#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "regsynth/mi.hpp"
#include "regsynth/rng.hpp"
#include "regsynth/synthgen.hpp"

using namespace regsynth;

TEST_CASE("phantom generation is deterministic in the seed") {
  const PhantomPair a = generate_phantom_pair(64, 42);
  const PhantomPair b = generate_phantom_pair(64, 42);
  CHECK(a.a.data == b.a.data);
  CHECK(a.b.data == b.b.data);
  CHECK(a.labels == b.labels);
  const PhantomPair c = generate_phantom_pair(64, 43);
  CHECK(a.a.data != c.a.data);
}

TEST_CASE("phantom modalities order the tissue classes differently") {
  const PhantomPair p = generate_phantom_pair(96, 7);
  double mean_a[4] = {0, 0, 0, 0}, mean_b[4] = {0, 0, 0, 0};
  int count[4] = {0, 0, 0, 0};
  for (std::size_t i = 0; i < p.labels.size(); ++i) {
    mean_a[p.labels[i]] += p.a.data[i];
    mean_b[p.labels[i]] += p.b.data[i];
    ++count[p.labels[i]];
  }
  for (int c = 0; c < 4; ++c) {
    REQUIRE(count[c] > 0);
    mean_a[c] /= count[c];
    mean_b[c] /= count[c];
  }
  std::vector<int> order_a = {0, 1, 2, 3}, order_b = {0, 1, 2, 3};
  std::sort(order_a.begin(), order_a.end(), [&](int i, int j) { return mean_a[i] < mean_a[j]; });
  std::sort(order_b.begin(), order_b.end(), [&](int i, int j) { return mean_b[i] < mean_b[j]; });
  CHECK(order_a != order_b); // non-monotonic intensity relationship
}

TEST_CASE("alignment maximises the dependence between the modalities") {
  const PhantomPair p = generate_phantom_pair(96, 9);
  Image2D shifted(96, 96, 1.0);
  for (int y = 0; y < 96; ++y)
    for (int x = 0; x < 96; ++x) shifted.at(x, y) = p.b.at_clamped(x + 5, y);
  CHECK(mutual_information(p.a, p.b, 64) > mutual_information(p.a, shifted, 64));
}

TEST_CASE("a silent configuration produces the identity deformation") {
  SynthConfig cfg;
  cfg.size = 64;
  cfg.sigma_v_mm = 0.0;
  cfg.rotation_std_deg = 0.0;
  cfg.translation_std_px = 0.0;
  cfg.log_scale_std = 0.0;
  const DeformationField u = sample_deformation(64, cfg, 5);
  for (std::size_t i = 0; i < u.size(); ++i) {
    CHECK(std::abs(u.dx[i]) < 1e-12);
    CHECK(std::abs(u.dy[i]) < 1e-12);
  }
}

TEST_CASE("the boundary window pins the nonlinear field at the border") {
  SynthConfig cfg;
  cfg.size = 64;
  cfg.sigma_v_mm = 30.0;
  cfg.rotation_std_deg = 0.0;
  cfg.translation_std_px = 0.0;
  cfg.log_scale_std = 0.0;
  const DeformationField u = sample_deformation(64, cfg, 11);
  for (int x = 0; x < 64; ++x) {
    for (const std::size_t i : {u.index(x, 0), u.index(x, 63), u.index(0, x), u.index(63, x)}) {
      CHECK(std::abs(u.dx[i]) < 0.05);
      CHECK(std::abs(u.dy[i]) < 0.05);
    }
  }
}

TEST_CASE("nonlinear parts of sampled deformations stay diffeomorphic") {
  SynthConfig cfg;
  cfg.size = 64;
  cfg.sigma_v_mm = 30.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const BenchmarkPair pair = generate_benchmark_pair(cfg, 900 + seed);
    CHECK(pair.min_jacobian_nonlinear > 0.0);
  }
}

TEST_CASE("mean displacement grows with the velocity noise level") {
  double means[3] = {0, 0, 0};
  const double sigmas[3] = {10.0, 20.0, 30.0};
  for (int k = 0; k < 3; ++k) {
    SynthConfig cfg;
    cfg.size = 64;
    cfg.sigma_v_mm = sigmas[k];
    cfg.rotation_std_deg = 0.0;
    cfg.translation_std_px = 0.0;
    cfg.log_scale_std = 0.0;
    const DeformationField u = sample_deformation(64, cfg, 77);
    for (std::size_t i = 0; i < u.size(); ++i) means[k] += std::hypot(u.dx[i], u.dy[i]);
    means[k] /= double(u.size());
  }
  CHECK(means[0] < means[1]);
  CHECK(means[1] < means[2]);
}

TEST_CASE("landmark placement starts at the global harris maximum") {
  const PhantomPair p = generate_phantom_pair(64, 3);
  const Image2D quant = quantize_8bit(p.a);
  const auto picks = place_landmarks(quant, 1, 6.4, 0);
  REQUIRE(picks.size() == 1);
  const Image2D resp = harris_response(quant, 0.04, 2.0);
  std::size_t best = 0;
  for (std::size_t i = 1; i < resp.size(); ++i)
    if (resp.data[i] > resp.data[best]) best = i;
  CHECK(picks[0].first == int(best % 64));
  CHECK(picks[0].second == int(best / 64));
}

TEST_CASE("suppression prevents repeats and spreads the landmarks") {
  const PhantomPair p = generate_phantom_pair(96, 5);
  const Image2D quant = quantize_8bit(p.a);
  const double sigma = 9.6;
  const auto picks = place_landmarks(quant, 8, sigma, 0);
  REQUIRE(picks.size() == 8);
  for (std::size_t i = 0; i < picks.size(); ++i)
    for (std::size_t j = i + 1; j < picks.size(); ++j) {
      const double d = std::hypot(double(picks[i].first - picks[j].first),
                                  double(picks[i].second - picks[j].second));
      CHECK(d > sigma / 2.0);
    }
}

TEST_CASE("landmark counts beyond the pixel budget are rejected") {
  const PhantomPair p = generate_phantom_pair(64, 2);
  CHECK_THROWS_AS(place_landmarks(p.a, 64 * 64 + 1, 5.0, 0), std::invalid_argument);
}

TEST_CASE("projection through the identity keeps noiseless landmarks fixed") {
  const DeformationField id(32, 32, 1.0);
  const auto set = project_landmarks({{4, 5}, {10, 20}}, id, 0.0, 3);
  REQUIRE(set.points.size() == 2);
  CHECK(set.points[0].hx == doctest::Approx(4.0));
  CHECK(set.points[0].hy == doctest::Approx(5.0));
  CHECK(set.points[1].hx == doctest::Approx(10.0));
  CHECK(set.points[1].hy == doctest::Approx(20.0));
}

TEST_CASE("projection through a constant field shifts the paired points") {
  DeformationField f(32, 32, 1.0);
  for (auto& v : f.dx) v = 2.0;
  const auto set = project_landmarks({{8, 8}}, f, 0.0, 1);
  REQUIRE(set.points.size() == 1);
  CHECK(set.points[0].hx == doctest::Approx(10.0));
  CHECK(set.points[0].hy == doctest::Approx(8.0));
}

TEST_CASE("landmark noise has the configured scale") {
  const DeformationField id(64, 64, 1.0);
  std::vector<std::pair<int, int>> points(10000, {32, 32});
  const auto set = project_landmarks(points, id, 0.5, 99);
  REQUIRE(set.points.size() == 10000);
  double vx = 0.0, vy = 0.0;
  for (const auto& lm : set.points) {
    vx += (lm.hx - 32.0) * (lm.hx - 32.0);
    vy += (lm.hy - 32.0) * (lm.hy - 32.0);
  }
  CHECK(std::sqrt(vx / 10000) == doctest::Approx(0.5).epsilon(0.05));
  CHECK(std::sqrt(vy / 10000) == doctest::Approx(0.5).epsilon(0.05));
}

TEST_CASE("8-bit quantisation maps extremes to 0 and 255") {
  Image2D img(8, 8, 1.0, 3.0);
  img.at(0, 0) = -5.0;
  img.at(7, 7) = 11.0;
  const Image2D q = quantize_8bit(img);
  CHECK(q.at(0, 0) == 0.0);
  CHECK(q.at(7, 7) == 255.0);
  for (double v : q.data) {
    CHECK(v >= 0.0);
    CHECK(v <= 255.0);
    CHECK(v == std::floor(v));
  }
}

TEST_CASE("quantisation error stays within half a level") {
  Image2D img(16, 16, 1.0);
  Rng rng(4);
  for (auto& v : img.data) v = rng.normal(50.0, 30.0);
  const auto [mn, mx] = std::minmax_element(img.data.begin(), img.data.end());
  const Image2D q = quantize_8bit(img);
  const double step = (*mx - *mn) / 255.0;
  for (std::size_t i = 0; i < img.size(); ++i) {
    const double reconstructed = *mn + q.data[i] * step;
    CHECK(std::abs(reconstructed - img.data[i]) <= 0.5 * step + 1e-12);
  }
}

TEST_CASE("a constant image quantises to zeros") {
  const Image2D q = quantize_8bit(Image2D(8, 8, 1.0, 7.0));
  for (double v : q.data) CHECK(v == 0.0);
}

TEST_CASE("benchmark pairs are bit-identical across runs with one seed") {
  SynthConfig cfg;
  cfg.size = 64;
  cfg.sigma_v_mm = 20.0;
  cfg.n_landmarks = 6;
  const BenchmarkPair a = generate_benchmark_pair(cfg, 1234);
  const BenchmarkPair b = generate_benchmark_pair(cfg, 1234);
  CHECK(a.reference.data == b.reference.data);
  CHECK(a.floating.data == b.floating.data);
  CHECK(a.truth.dx == b.truth.dx);
  CHECK(a.truth.dy == b.truth.dy);
  REQUIRE(a.landmarks.size() == b.landmarks.size());
  for (std::size_t i = 0; i < a.landmarks.size(); ++i) {
    CHECK(a.landmarks.points[i].hx == b.landmarks.points[i].hx);
    CHECK(a.landmarks.points[i].mx == b.landmarks.points[i].mx);
  }
}

TEST_CASE("the stored truth aligns the floating image with the reference") {
  SynthConfig cfg;
  cfg.size = 96;
  cfg.sigma_v_mm = 20.0;
  const BenchmarkPair pair = generate_benchmark_pair(cfg, 5);
  const Image2D warped = warp_image(pair.floating, pair.truth);
  // warped floating B-modality must correlate with the aligned B phantom;
  // verify via mutual information against the reference far exceeding the
  // unwarped one
  const double aligned = mutual_information(warped, pair.reference, 32);
  const double raw = mutual_information(pair.floating, pair.reference, 32);
  CHECK(aligned > raw);
}

TEST_CASE("dataset files round-trip") {
  const auto dir = std::filesystem::temp_directory_path() / "regsynth_ds_test";
  std::filesystem::remove_all(dir);
  SynthConfig cfg;
  cfg.size = 64;
  cfg.n_landmarks = 5;
  generate_dataset(dir.string(), 2, cfg, 77);
  const auto pairs = list_dataset_pairs(dir.string());
  REQUIRE(pairs.size() == 2);
  const BenchmarkPair back = read_benchmark_pair(pairs[0]);
  const BenchmarkPair orig = generate_benchmark_pair(cfg, mix_seed(77, 0));
  CHECK(back.reference.data == orig.reference.data);
  CHECK(back.floating.data == orig.floating.data);
  REQUIRE(back.landmarks.size() == orig.landmarks.size());
  for (std::size_t i = 0; i < back.landmarks.size(); ++i) {
    CHECK(back.landmarks.points[i].mx == doctest::Approx(orig.landmarks.points[i].mx));
    CHECK(back.landmarks.points[i].hx ==
          doctest::Approx(orig.landmarks.points[i].hx).epsilon(1e-6));
  }
  for (std::size_t i = 0; i < back.truth.size(); ++i) {
    CHECK(back.truth.dx[i] == doctest::Approx(orig.truth.dx[i]).epsilon(1e-6));
    CHECK(back.truth.dy[i] == doctest::Approx(orig.truth.dy[i]).epsilon(1e-6));
  }
  CHECK(back.mask == orig.mask);
  std::filesystem::remove_all(dir);
}

TEST_CASE("undersized phantoms are rejected") {
  CHECK_THROWS_AS(generate_phantom_pair(32, 1), std::invalid_argument);
}
