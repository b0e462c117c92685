#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "regsynth/eval.hpp"
#include "regsynth/rng.hpp"
#include "regsynth/synthgen.hpp"

using namespace regsynth;

namespace {

DeformationField random_field(int n, std::uint64_t seed) {
  DeformationField f(n, n, 1.0);
  Rng rng(seed);
  for (std::size_t i = 0; i < f.size(); ++i) {
    f.dx[i] = rng.normal(0.0, 2.0);
    f.dy[i] = rng.normal(0.0, 2.0);
  }
  return f;
}

// quick settings for the pipeline smoke tests
SweepOptions fast_options(std::uint64_t seed) {
  SweepOptions opt;
  opt.vem.shift_radius_mm = 2.0;
  opt.vem.shift_step_mm = 1.0;
  opt.vem.forest.tree_count = 8;
  opt.vem.forest.pixels_per_tree = 1500;
  opt.vem.feature_scales_mm = {0.0, 2.0};
  opt.vem.feature_max_order = 2;
  opt.vem.max_outer_iterations = 4;
  opt.reg.max_iterations = 120;
  opt.seed = seed;
  opt.n_threads = 2;
  return opt;
}

} // namespace

TEST_CASE("registration error of the exact solution is zero") {
  const DeformationField f = random_field(16, 1);
  const std::vector<std::uint8_t> mask(f.size(), 255);
  const ErrorStats e = registration_error(f, f, mask);
  CHECK(e.mean_mm == 0.0);
  CHECK(e.max_mm == 0.0);
}

TEST_CASE("a constant offset appears as a constant error") {
  const DeformationField truth = random_field(16, 2);
  DeformationField est = truth;
  for (auto& v : est.dx) v += 2.0;
  const std::vector<std::uint8_t> mask(truth.size(), 255);
  const ErrorStats e = registration_error(est, truth, mask);
  CHECK(e.mean_mm == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(e.max_mm == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("registration error matches a direct per-pixel oracle") {
  const DeformationField est = random_field(20, 3);
  const DeformationField truth = random_field(20, 4);
  std::vector<std::uint8_t> mask(est.size(), 0);
  Rng rng(5);
  for (auto& m : mask) m = rng.uniform() < 0.7 ? 255 : 0;
  mask[0] = 255;
  const ErrorStats e = registration_error(est, truth, mask);
  double sum = 0.0, mx = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    const double d = std::sqrt((est.dx[i] - truth.dx[i]) * (est.dx[i] - truth.dx[i]) +
                               (est.dy[i] - truth.dy[i]) * (est.dy[i] - truth.dy[i]));
    sum += d;
    mx = std::max(mx, d);
    ++n;
  }
  CHECK(e.mean_mm == doctest::Approx(sum / double(n)).epsilon(1e-12));
  CHECK(e.max_mm == doctest::Approx(mx).epsilon(1e-12));
  CHECK(e.mean_mm <= e.max_mm);
}

TEST_CASE("registration error validates its inputs") {
  const DeformationField a = random_field(8, 1);
  const DeformationField b = random_field(9, 1);
  CHECK_THROWS_AS(registration_error(a, b, std::vector<std::uint8_t>(64, 255)),
                  std::invalid_argument);
  CHECK_THROWS_AS(registration_error(a, a, std::vector<std::uint8_t>(64, 0)),
                  std::invalid_argument);
}

TEST_CASE("a one-cell sweep produces exactly one csv row") {
  const auto dir = std::filesystem::temp_directory_path() / "regsynth_sweep1";
  std::filesystem::remove_all(dir);
  SynthConfig cfg;
  cfg.size = 64;
  cfg.sigma_v_mm = 10.0;
  cfg.n_landmarks = 4;
  generate_dataset(dir.string(), 1, cfg, 3);

  SweepGrid grid;
  grid.methods = {"mi"};
  grid.landmark_counts = {0};
  grid.spacings_mm = {12.0};
  const std::string csv = (dir / "out.csv").string();
  const auto rows = run_sweep(dir.string(), grid, fast_options(1), csv);
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].method == "mi");
  CHECK(rows[0].mean_err_mm <= rows[0].max_err_mm);
  CHECK(rows[0].sigma_v == doctest::Approx(10.0));

  std::ifstream f(csv);
  std::string header;
  std::getline(f, header);
  CHECK(header == "sigma_v,spacing_mm,n_landmarks,method,mean_err_mm,max_err_mm,runtime_s,seed");
  std::string row;
  int count = 0;
  while (std::getline(f, row))
    if (!row.empty()) ++count;
  CHECK(count == 1);
  std::filesystem::remove_all(dir);
}

TEST_CASE("near-identity datasets are recovered to sub-half-millimetre error") {
  const auto dir = std::filesystem::temp_directory_path() / "regsynth_sweep0";
  std::filesystem::remove_all(dir);
  SynthConfig cfg;
  cfg.size = 64;
  cfg.sigma_v_mm = 0.0;
  cfg.rotation_std_deg = 0.0;
  cfg.translation_std_px = 0.0;
  cfg.log_scale_std = 0.0;
  cfg.n_landmarks = 0;
  generate_dataset(dir.string(), 2, cfg, 9);

  SweepGrid grid;
  grid.methods = {"mi", "independent"};
  grid.landmark_counts = {0};
  grid.spacings_mm = {12.0};
  const auto rows = run_sweep(dir.string(), grid, fast_options(4), "");
  REQUIRE(rows.size() == 2);
  for (const auto& r : rows) CHECK(r.mean_err_mm < 0.5);
  std::filesystem::remove_all(dir);
}

TEST_CASE("joint estimation degenerates to independent estimation for one pair") {
  const auto dir = std::filesystem::temp_directory_path() / "regsynth_sweepj";
  std::filesystem::remove_all(dir);
  SynthConfig cfg;
  cfg.size = 64;
  cfg.sigma_v_mm = 10.0;
  cfg.n_landmarks = 0;
  generate_dataset(dir.string(), 1, cfg, 21);

  SweepGrid grid;
  grid.landmark_counts = {0};
  grid.spacings_mm = {12.0};
  grid.methods = {"joint"};
  const auto joint_rows = run_sweep(dir.string(), grid, fast_options(8), "");
  grid.methods = {"independent"};
  const auto indep_rows = run_sweep(dir.string(), grid, fast_options(8), "");
  REQUIRE(joint_rows.size() == 1);
  REQUIRE(indep_rows.size() == 1);
  CHECK(joint_rows[0].mean_err_mm == doctest::Approx(indep_rows[0].mean_err_mm).epsilon(1e-12));
  CHECK(joint_rows[0].max_err_mm == doctest::Approx(indep_rows[0].max_err_mm).epsilon(1e-12));
  std::filesystem::remove_all(dir);
}
