#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "regsynth/graphcut.hpp"
#include "regsynth/rng.hpp"

using namespace regsynth;

namespace {

struct TinyInstance {
  Image2D m;
  SynthesisPrediction pred;
  LandmarkSet landmarks;
  MrfParams mrf;
  ShiftCatalog catalog;
};

TinyInstance random_instance(int w, int h, std::uint64_t seed, bool with_landmark) {
  TinyInstance t;
  t.catalog = ShiftCatalog::square_grid(1.0, 1.0);
  t.catalog.dx.resize(5);
  t.catalog.dy.resize(5);
  t.catalog.norm2.resize(5); // 5 labels
  Rng rng(seed);
  t.m = Image2D(w, h, 1.0);
  for (auto& v : t.m.data) v = 255.0 * rng.uniform();
  t.pred.width = w;
  t.pred.height = h;
  t.pred.mean.resize(std::size_t(w) * h);
  t.pred.variance.resize(std::size_t(w) * h);
  for (std::size_t i = 0; i < t.pred.mean.size(); ++i) {
    t.pred.mean[i] = 255.0 * rng.uniform();
    t.pred.variance[i] = 50.0 + 400.0 * rng.uniform();
  }
  t.mrf.shift_weight = 0.05 * rng.uniform();
  t.mrf.smooth_weight = 0.2 * rng.uniform();
  if (with_landmark) {
    Landmark lm;
    lm.mx = rng.below(std::uint64_t(w));
    lm.my = rng.below(std::uint64_t(h));
    lm.hx = lm.mx + rng.normal(0.0, 0.7);
    lm.hy = lm.my + rng.normal(0.0, 0.7);
    t.landmarks.points.push_back(lm);
    t.landmarks.sigma_mm = 0.5;
  }
  return t;
}

// independent oracle: enumerate every labeling of a tiny grid
double exhaustive_minimum(const TinyInstance& t) {
  const int n = t.m.width * t.m.height;
  const int s_count = t.catalog.size();
  const auto unary =
      discrete_registration_unaries(t.m, t.pred, t.landmarks, t.mrf, t.catalog);
  std::vector<int> labels(std::size_t(n), 0);
  double best = 1e300;
  while (true) {
    double e = 0.0;
    for (int p = 0; p < n; ++p) e += unary[std::size_t(p) * s_count + std::size_t(labels[std::size_t(p)])];
    for (int y = 0; y < t.m.height; ++y)
      for (int x = 0; x < t.m.width; ++x) {
        const int p = y * t.m.width + x;
        auto add = [&](int q) {
          const double dx = t.catalog.dx[std::size_t(labels[std::size_t(p)])] -
                            t.catalog.dx[std::size_t(labels[std::size_t(q)])];
          const double dy = t.catalog.dy[std::size_t(labels[std::size_t(p)])] -
                            t.catalog.dy[std::size_t(labels[std::size_t(q)])];
          e += t.mrf.smooth_weight * (dx * dx + dy * dy);
        };
        if (x + 1 < t.m.width) add(p + 1);
        if (y + 1 < t.m.height) add(p + t.m.width);
      }
    best = std::min(best, e);
    int carry = 0;
    while (carry < n && ++labels[std::size_t(carry)] == s_count) {
      labels[std::size_t(carry)] = 0;
      ++carry;
    }
    if (carry == n) break;
  }
  return best;
}

} // namespace

TEST_CASE("without coupling the solution is the per-pixel likelihood argmax") {
  TinyInstance t = random_instance(4, 4, 2, false);
  t.mrf.shift_weight = 0.0;
  t.mrf.smooth_weight = 0.0;
  const GraphcutResult res =
      map_registration_graphcut(t.m, t.pred, t.landmarks, t.mrf, t.catalog);
  const auto unary = discrete_registration_unaries(t.m, t.pred, t.landmarks, t.mrf, t.catalog);
  for (int p = 0; p < 16; ++p) {
    const double* u = unary.data() + std::size_t(p) * 5;
    const int best = int(std::min_element(u, u + 5) - u);
    CHECK(res.field.dx[std::size_t(p)] == t.catalog.dx[std::size_t(best)]);
    CHECK(res.field.dy[std::size_t(p)] == t.catalog.dy[std::size_t(best)]);
  }
}

TEST_CASE("expansion moves reach the exhaustive optimum on tiny instances") {
  int solved_within_1pct = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const TinyInstance t = random_instance(3, 2, 100 + seed, seed % 3 == 0);
    const GraphcutResult res =
        map_registration_graphcut(t.m, t.pred, t.landmarks, t.mrf, t.catalog, 6);
    const double best = exhaustive_minimum(t);
    CHECK(res.final_energy >= best - 1e-9);
    if (res.final_energy <= best * 1.01 + 1e-12) ++solved_within_1pct;
    for (std::size_t i = 1; i < res.energy_trace.size(); ++i)
      CHECK(res.energy_trace[i] <= res.energy_trace[i - 1] + 1e-12);
  }
  CHECK(solved_within_1pct == 20);
}

TEST_CASE("a tight landmark dominates a flat image term") {
  TinyInstance t = random_instance(5, 5, 7, false);
  for (auto& v : t.pred.variance) v = 1e8; // flat likelihood
  t.mrf.shift_weight = 0.0;
  t.mrf.smooth_weight = 0.01;
  Landmark lm;
  lm.mx = 3.0;
  lm.my = 2.0;
  lm.hx = 2.2;
  lm.hy = 2.4;
  t.landmarks.points.push_back(lm);
  t.landmarks.sigma_mm = 0.5;
  const GraphcutResult res =
      map_registration_graphcut(t.m, t.pred, t.landmarks, t.mrf, t.catalog, 4);
  // the label at round(k_h) must be the catalog shift nearest to k_m - k_h
  const int pix = 2 * 5 + 2;
  const int want = t.catalog.nearest(lm.mx - lm.hx, lm.my - lm.hy);
  CHECK(res.field.dx[std::size_t(pix)] == t.catalog.dx[std::size_t(want)]);
  CHECK(res.field.dy[std::size_t(pix)] == t.catalog.dy[std::size_t(want)]);
}

TEST_CASE("an empty catalog is rejected") {
  TinyInstance t = random_instance(2, 2, 1, false);
  ShiftCatalog empty;
  CHECK_THROWS_AS(map_registration_graphcut(t.m, t.pred, t.landmarks, t.mrf, empty),
                  std::invalid_argument);
}
