#include "regsynth/vem.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "regsynth/parallel.hpp"
#include "regsynth/rng.hpp"

namespace regsynth {

UnaryTable build_unary_table(const Image2D& m, const SynthesisPrediction& pred,
                             const ShiftCatalog& catalog, int n_threads) {
  if (pred.width != m.width || pred.height != m.height)
    throw std::invalid_argument("build_unary_table: prediction grid mismatch");
  UnaryTable table;
  table.width = m.width;
  table.height = m.height;
  table.n_shifts = catalog.size();
  table.loglik.resize(std::size_t(m.width) * m.height * std::size_t(catalog.size()));

  const int s_count = catalog.size();
  const double log2pi = std::log(2.0 * std::numbers::pi);
  parallel_for_ranges(std::size_t(m.width) * m.height, n_threads,
                      [&](std::size_t lo, std::size_t hi) {
    const std::size_t sc = std::size_t(s_count);
    std::vector<double> sx(sc), sy(sc);
    for (int s = 0; s < s_count; ++s) {
      sx[std::size_t(s)] = catalog.dx[std::size_t(s)] / m.spacing;
      sy[std::size_t(s)] = catalog.dy[std::size_t(s)] / m.spacing;
    }
    for (std::size_t p = lo; p < hi; ++p) {
      const int px = int(p % std::size_t(m.width));
      const int py = int(p / std::size_t(m.width));
      const double mu = pred.mean[p];
      const double var = pred.variance[p];
      const double norm = -0.5 * (log2pi + std::log(var));
      const double inv2v = 0.5 / var;
      double* out = table.loglik.data() + p * std::size_t(s_count);
      for (int s = 0; s < s_count; ++s) {
        const double v = bilinear_sample(m, px + sx[std::size_t(s)], py + sy[std::size_t(s)]);
        const double d = v - mu;
        out[s] = norm - d * d * inv2v;
      }
    }
  });
  return table;
}

LandmarkFactors build_landmark_factors(const LandmarkSet& landmarks,
                                       const ShiftCatalog& catalog, int width, int height,
                                       double spacing_mm) {
  LandmarkFactors out;
  const double log2pi = std::log(2.0 * std::numbers::pi);
  const double var = landmarks.sigma_mm * landmarks.sigma_mm;
  for (const auto& lm : landmarks.points) {
    const int px = int(std::lround(lm.mx / spacing_mm));
    const int py = int(std::lround(lm.my / spacing_mm));
    if (px < 0 || px >= width || py < 0 || py >= height) continue;
    const std::size_t pixel = std::size_t(py) * width + px;
    auto it = std::find_if(out.per_pixel.begin(), out.per_pixel.end(),
                           [pixel](const auto& e) { return e.first == pixel; });
    if (it == out.per_pixel.end()) {
      out.per_pixel.emplace_back(pixel, std::vector<double>(std::size_t(catalog.size()), 0.0));
      it = out.per_pixel.end() - 1;
    }
    // log N(k_h; k_m - shift, sigma^2 I)
    for (int s = 0; s < catalog.size(); ++s) {
      const double rx = lm.hx - lm.mx + catalog.dx[std::size_t(s)];
      const double ry = lm.hy - lm.my + catalog.dy[std::size_t(s)];
      it->second[std::size_t(s)] += -(rx * rx + ry * ry) / (2.0 * var) - log2pi - std::log(var);
    }
  }
  return out;
}

int e_step(PosteriorField& q, const UnaryTable& unary, const LandmarkFactors& landmarks,
           const MrfParams& mrf, const ShiftCatalog& catalog, const EStepOptions& opts) {
  const int w = q.width, h = q.height, s_count = q.n_shifts;
  if (unary.width != w || unary.height != h || unary.n_shifts != s_count)
    throw std::invalid_argument("e_step: unary table grid mismatch");
  const std::size_t n = q.pixel_count();

  // cached per-pixel posterior moments: E[shift], E[|shift|^2]
  std::vector<double> m1x(n), m1y(n), m2(n);
  for (std::size_t p = 0; p < n; ++p) {
    const double* row = q.at(p);
    double ax = 0.0, ay = 0.0, a2 = 0.0;
    for (int s = 0; s < s_count; ++s) {
      ax += row[s] * catalog.dx[std::size_t(s)];
      ay += row[s] * catalog.dy[std::size_t(s)];
      a2 += row[s] * catalog.norm2[std::size_t(s)];
    }
    m1x[p] = ax;
    m1y[p] = ay;
    m2[p] = a2;
  }

  std::vector<const double*> lm_ptr(n, nullptr);
  for (const auto& [pixel, values] : landmarks.per_pixel) lm_ptr[pixel] = values.data();

  std::vector<double> buf(std::size_t(s_count), 0.0);
  int sweep = 0;
  for (; sweep < opts.max_sweeps; ++sweep) {
    double max_tv = 0.0;
    for (int py = 0; py < h; ++py) {
      for (int px = 0; px < w; ++px) {
        const std::size_t p = std::size_t(py) * w + px;
        double sx = 0.0, sy = 0.0;
        int deg = 0;
        if (px > 0) { sx += m1x[p - 1]; sy += m1y[p - 1]; ++deg; }
        if (px + 1 < w) { sx += m1x[p + 1]; sy += m1y[p + 1]; ++deg; }
        if (py > 0) { sx += m1x[p - std::size_t(w)]; sy += m1y[p - std::size_t(w)]; ++deg; }
        if (py + 1 < h) { sx += m1x[p + std::size_t(w)]; sy += m1y[p + std::size_t(w)]; ++deg; }

        const double cn = mrf.shift_weight + mrf.smooth_weight * deg;
        const double cx = 2.0 * mrf.smooth_weight * sx;
        const double cy = 2.0 * mrf.smooth_weight * sy;
        const double* u = unary.at(p);
        const double* lm = lm_ptr[p];

        double mx = -std::numeric_limits<double>::infinity();
        for (int s = 0; s < s_count; ++s) {
          double t = u[s] - cn * catalog.norm2[std::size_t(s)] +
                     cx * catalog.dx[std::size_t(s)] + cy * catalog.dy[std::size_t(s)];
          if (lm != nullptr) t += lm[s];
          buf[std::size_t(s)] = t;
          if (t > mx) mx = t;
        }
        // max-subtracted softmax: the peak maps to exp(0), so the row can
        // never normalise to zero or NaN
        double sum = 0.0;
        for (int s = 0; s < s_count; ++s) {
          const double e = std::exp(buf[std::size_t(s)] - mx);
          buf[std::size_t(s)] = e;
          sum += e;
        }
        const double inv = 1.0 / sum;
        double* row = q.at(p);
        double tv = 0.0, ax = 0.0, ay = 0.0, a2 = 0.0;
        for (int s = 0; s < s_count; ++s) {
          const double v = buf[std::size_t(s)] * inv;
          tv += std::abs(v - row[s]);
          row[s] = v;
          ax += v * catalog.dx[std::size_t(s)];
          ay += v * catalog.dy[std::size_t(s)];
          a2 += v * catalog.norm2[std::size_t(s)];
        }
        m1x[p] = ax;
        m1y[p] = ay;
        m2[p] = a2;
        max_tv = std::max(max_tv, 0.5 * tv);
      }
    }
    if (max_tv < opts.tol) return sweep + 1;
  }
  return sweep;
}

FreeEnergyBreakdown free_energy(const PosteriorField& q, const UnaryTable& unary,
                                const LandmarkFactors& landmarks, const MrfParams& mrf,
                                const ShiftCatalog& catalog,
                                const SynthesisPrediction& pred,
                                const ForestHyperparams& hyper) {
  FreeEnergyBreakdown fe;
  const int w = q.width, h = q.height, s_count = q.n_shifts;
  const std::size_t n = q.pixel_count();

  std::vector<double> m1x(n), m1y(n), m2(n);
  for (std::size_t p = 0; p < n; ++p) {
    const double* row = q.at(p);
    const double* u = unary.at(p);
    double ent = 0.0, data = 0.0, sp = 0.0, ax = 0.0, ay = 0.0, a2 = 0.0;
    for (int s = 0; s < s_count; ++s) {
      const double v = row[s];
      if (v > 0.0) ent -= v * std::log(v);
      data += v * u[s];
      sp += v * catalog.norm2[std::size_t(s)];
      ax += v * catalog.dx[std::size_t(s)];
      ay += v * catalog.dy[std::size_t(s)];
      a2 += v * catalog.norm2[std::size_t(s)];
    }
    fe.entropy += ent;
    fe.data += data;
    fe.shift_prior -= mrf.shift_weight * sp;
    m1x[p] = ax;
    m1y[p] = ay;
    m2[p] = a2;
  }

  for (const auto& [pixel, values] : landmarks.per_pixel) {
    const double* row = q.at(pixel);
    for (int s = 0; s < s_count; ++s) fe.landmark += row[s] * values[std::size_t(s)];
  }

  // E E |d - d'|^2 = E|d|^2 + E|d'|^2 - 2 E[d].E[d'], once per edge
  double pw = 0.0;
  for (int py = 0; py < h; ++py)
    for (int px = 0; px < w; ++px) {
      const std::size_t p = std::size_t(py) * w + px;
      if (px + 1 < w) {
        const std::size_t r = p + 1;
        pw += m2[p] + m2[r] - 2.0 * (m1x[p] * m1x[r] + m1y[p] * m1y[r]);
      }
      if (py + 1 < h) {
        const std::size_t d = p + std::size_t(w);
        pw += m2[p] + m2[d] - 2.0 * (m1x[p] * m1x[d] + m1y[p] * m1y[d]);
      }
    }
  fe.pairwise = -mrf.smooth_weight * pw;

  const double a = hyper.variance_prior_shape;
  const double b = hyper.variance_prior_scale;
  const double norm = a * std::log(b) - std::lgamma(a);
  for (std::size_t p = 0; p < pred.variance.size(); ++p) {
    const double var = pred.variance[p];
    fe.theta_prior += norm - (a + 1.0) * std::log(var) - b / var;
  }
  return fe;
}

std::pair<DeformationField, Image2D> posterior_diagnostics(const PosteriorField& q,
                                                           const ShiftCatalog& catalog,
                                                           double spacing_mm) {
  DeformationField argmax(q.width, q.height, spacing_mm);
  Image2D entropy(q.width, q.height, spacing_mm);
  for (std::size_t p = 0; p < q.pixel_count(); ++p) {
    const double* row = q.at(p);
    int best = 0;
    double ent = 0.0;
    for (int s = 0; s < q.n_shifts; ++s) {
      if (row[s] > row[best]) best = s;
      if (row[s] > 0.0) ent -= row[s] * std::log(row[s]);
    }
    argmax.dx[p] = catalog.dx[std::size_t(best)];
    argmax.dy[p] = catalog.dy[std::size_t(best)];
    entropy.data[p] = ent;
  }
  return {std::move(argmax), std::move(entropy)};
}

VemResult run_vem(const std::vector<VemPair>& pairs, const VemConfig& config) {
  if (pairs.empty()) throw std::invalid_argument("run_vem: no image pairs");
  for (const auto& p : pairs) {
    p.m.validate();
    p.h.validate();
    if (p.m.width != p.h.width || p.m.height != p.h.height)
      throw std::invalid_argument("run_vem: image pair grids differ");
  }

  const ShiftCatalog catalog =
      ShiftCatalog::square_grid(config.shift_radius_mm, config.shift_step_mm);

  std::vector<FeatureStack> features(pairs.size());
  parallel_for(pairs.size(), config.n_threads, [&](std::size_t i) {
    features[i] = gaussian_derivative_features(pairs[i].h, config.feature_scales_mm,
                                               config.feature_max_order);
  });

  VemResult result;
  result.posteriors.resize(pairs.size());
  std::vector<LandmarkFactors> lm_factors(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    result.posteriors[i] = init_posteriors(pairs[i].m.width, pairs[i].m.height, catalog);
    lm_factors[i] = build_landmark_factors(pairs[i].landmarks, catalog, pairs[i].m.width,
                                           pairs[i].m.height, pairs[i].m.spacing);
  }

  // Retraining reuses the same per-tree streams every round (common random
  // numbers): the shift draws still follow the current posteriors through
  // the inverse CDF, but as q converges the training sets converge too, so
  // the predicted means and variances can actually settle.
  auto train = [&]() {
    std::vector<ForestTrainInput> inputs(pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i)
      inputs[i] = ForestTrainInput{&features[i], &pairs[i].m, &result.posteriors[i],
                                   pairs[i].id};
    return train_forest(inputs, catalog, config.forest, config.seed, config.n_threads);
  };
  auto predict_all = [&](const ForestModel& model) {
    std::vector<SynthesisPrediction> preds(pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i)
      preds[i] = predict(model, features[i], config.n_threads);
    return preds;
  };

  result.forest = train();
  result.predictions = predict_all(result.forest);

  for (int it = 0; it < config.max_outer_iterations; ++it) {
    result.iterations = it + 1;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      const UnaryTable unary =
          build_unary_table(pairs[i].m, result.predictions[i], catalog, config.n_threads);
      e_step(result.posteriors[i], unary, lm_factors[i], config.mrf, catalog, config.estep);
    }
    if (config.track_free_energy) {
      double j = 0.0;
      for (std::size_t i = 0; i < pairs.size(); ++i) {
        const UnaryTable unary =
            build_unary_table(pairs[i].m, result.predictions[i], catalog, config.n_threads);
        j += free_energy(result.posteriors[i], unary, lm_factors[i], config.mrf, catalog,
                         result.predictions[i], config.forest)
                 .total();
      }
      result.free_energy_trace.push_back(j);
    }

    result.forest = train();
    auto preds = predict_all(result.forest);

    double delta = 0.0;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      for (std::size_t p = 0; p < preds[i].mean.size(); ++p) {
        delta = std::max(delta, std::abs(preds[i].mean[p] - result.predictions[i].mean[p]));
        delta = std::max(delta, std::abs(std::sqrt(preds[i].variance[p]) -
                                         std::sqrt(result.predictions[i].variance[p])));
      }
    }
    result.predictions = std::move(preds);
    if (delta < config.convergence_tol_levels) {
      result.converged = true;
      break;
    }
  }
  return result;
}

} // namespace regsynth
