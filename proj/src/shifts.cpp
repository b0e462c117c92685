#include "regsynth/shifts.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace regsynth {

ShiftCatalog ShiftCatalog::square_grid(double radius_mm, double step_mm) {
  if (!(step_mm > 0.0) || radius_mm < 0.0)
    throw std::invalid_argument("ShiftCatalog: invalid radius/step");
  ShiftCatalog c;
  c.radius_mm = radius_mm;
  c.step_mm = step_mm;
  const int n = int(std::floor(radius_mm / step_mm + 1e-9));
  c.dx.reserve(std::size_t(2 * n + 1) * std::size_t(2 * n + 1));
  for (int j = -n; j <= n; ++j)
    for (int i = -n; i <= n; ++i) {
      if (i == 0 && j == 0) c.zero_index = int(c.dx.size());
      c.dx.push_back(i * step_mm);
      c.dy.push_back(j * step_mm);
      c.norm2.push_back(double(i) * i * step_mm * step_mm +
                        double(j) * j * step_mm * step_mm);
    }
  return c;
}

int ShiftCatalog::nearest(double sx, double sy) const {
  int best = 0;
  double best_d = std::numeric_limits<double>::max();
  for (int s = 0; s < size(); ++s) {
    const double d = (dx[std::size_t(s)] - sx) * (dx[std::size_t(s)] - sx) +
                     (dy[std::size_t(s)] - sy) * (dy[std::size_t(s)] - sy);
    if (d < best_d) {
      best_d = d;
      best = s;
    }
  }
  return best;
}

PosteriorField init_posteriors(int width, int height, const ShiftCatalog& catalog) {
  if (catalog.size() < 1)
    throw std::invalid_argument("init_posteriors: empty shift catalog");
  PosteriorField p;
  p.width = width;
  p.height = height;
  p.n_shifts = catalog.size();
  p.q.assign(std::size_t(width) * height * std::size_t(catalog.size()),
             1.0 / double(catalog.size()));
  return p;
}

} // namespace regsynth
