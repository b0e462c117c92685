#include "regsynth/synthgen.hpp"

#include <algorithm>
#include <cfenv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>
#include <stdexcept>

#include "regsynth/image_io.hpp"
#include "regsynth/rng.hpp"

namespace regsynth {

namespace {

constexpr std::uint64_t kTagPhantom = 0x11;
constexpr std::uint64_t kTagVelocity = 0x22;
constexpr std::uint64_t kTagSimilarity = 0x33;
constexpr std::uint64_t kTagLandmarkNoise = 0x44;

Image2D smooth_noise(int w, int h, double sigma_px, Rng& rng) {
  Image2D img(w, h, 1.0);
  for (auto& v : img.data) v = rng.normal();
  img = gaussian_smooth(img, sigma_px);
  double mean = 0.0;
  for (double v : img.data) mean += v;
  mean /= double(img.size());
  double var = 0.0;
  for (double v : img.data) var += (v - mean) * (v - mean);
  var /= double(img.size());
  const double inv_std = var > 0.0 ? 1.0 / std::sqrt(var) : 1.0;
  for (auto& v : img.data) v = (v - mean) * inv_std;
  return img;
}

// approximate Euclidean distance (px) to the nearest zero of the mask
std::vector<double> chamfer_distance(const std::vector<std::uint8_t>& mask, int w, int h) {
  const double inf = 1e9, diag = std::numbers::sqrt2;
  std::vector<double> d(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) d[i] = mask[i] ? inf : 0.0;
  auto at = [&](int x, int y) -> double& { return d[std::size_t(y) * w + x]; };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double v = at(x, y);
      if (x > 0) v = std::min(v, at(x - 1, y) + 1.0);
      if (y > 0) v = std::min(v, at(x, y - 1) + 1.0);
      if (x > 0 && y > 0) v = std::min(v, at(x - 1, y - 1) + diag);
      if (x + 1 < w && y > 0) v = std::min(v, at(x + 1, y - 1) + diag);
      at(x, y) = v;
    }
  for (int y = h - 1; y >= 0; --y)
    for (int x = w - 1; x >= 0; --x) {
      double v = at(x, y);
      if (x + 1 < w) v = std::min(v, at(x + 1, y) + 1.0);
      if (y + 1 < h) v = std::min(v, at(x, y + 1) + 1.0);
      if (x + 1 < w && y + 1 < h) v = std::min(v, at(x + 1, y + 1) + diag);
      if (x > 0 && y + 1 < h) v = std::min(v, at(x - 1, y + 1) + diag);
      at(x, y) = v;
    }
  return d;
}

// similarity map about the image centre: p -> c + s R (p - c) + t
struct Similarity {
  double cx = 0.0, cy = 0.0;
  double cos_a = 1.0, sin_a = 0.0;
  double scale = 1.0;
  double tx = 0.0, ty = 0.0;

  void apply(double x, double y, double& ox, double& oy) const {
    const double rx = x - cx, ry = y - cy;
    ox = cx + scale * (cos_a * rx - sin_a * ry) + tx;
    oy = cy + scale * (sin_a * rx + cos_a * ry) + ty;
  }
  void apply_inverse(double x, double y, double& ox, double& oy) const {
    const double rx = (x - cx - tx) / scale, ry = (y - cy - ty) / scale;
    ox = cx + cos_a * rx + sin_a * ry;
    oy = cy - sin_a * rx + cos_a * ry;
  }
};

struct GroundTruth {
  VelocityField velocity;
  DeformationField flow_fwd; // displacement of the time-1 flow
  DeformationField flow_inv; // flow of the negated velocity
  Similarity sim;
  int squarings = 0;
};

VelocityField sample_velocity(int size, const SynthConfig& cfg, std::uint64_t seed) {
  VelocityField v(size, size, cfg.spacing_mm);
  Rng rng(mix_seed(seed, kTagVelocity));
  for (std::size_t i = 0; i < v.size(); ++i) {
    v.dx[i] = rng.normal(0.0, cfg.sigma_v_mm);
    v.dy[i] = rng.normal(0.0, cfg.sigma_v_mm);
  }
  if (cfg.smooth_sigma_mm > 0.0 && cfg.sigma_v_mm > 0.0) {
    Image2D cx(size, size, cfg.spacing_mm), cy(size, size, cfg.spacing_mm);
    cx.data = v.dx;
    cy.data = v.dy;
    v.dx = gaussian_smooth(cx, cfg.smooth_sigma_mm).data;
    v.dy = gaussian_smooth(cy, cfg.smooth_sigma_mm).data;
  }
  // window vanishing at the border keeps deformations away from it
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double d_mm =
          std::min(std::min(x, size - 1 - x), std::min(y, size - 1 - y)) * cfg.spacing_mm;
      const double w = 1.0 - std::exp(-cfg.window_rate * d_mm * d_mm);
      const std::size_t i = v.index(x, y);
      v.dx[i] *= w;
      v.dy[i] *= w;
    }
  return v;
}

GroundTruth make_ground_truth(int size, const SynthConfig& cfg, std::uint64_t seed) {
  GroundTruth gt;
  gt.velocity = sample_velocity(size, cfg, seed);
  gt.squarings = cfg.squarings >= 0 ? cfg.squarings : suggest_squarings(gt.velocity);
  gt.flow_fwd = integrate_velocity(gt.velocity, gt.squarings);
  VelocityField neg = gt.velocity;
  for (std::size_t i = 0; i < neg.size(); ++i) {
    neg.dx[i] = -neg.dx[i];
    neg.dy[i] = -neg.dy[i];
  }
  gt.flow_inv = integrate_velocity(neg, gt.squarings);

  Rng rng(mix_seed(seed, kTagSimilarity));
  const double angle = rng.normal(0.0, cfg.rotation_std_deg) * std::numbers::pi / 180.0;
  gt.sim.cos_a = std::cos(angle);
  gt.sim.sin_a = std::sin(angle);
  gt.sim.scale = std::exp(rng.normal(0.0, cfg.log_scale_std));
  gt.sim.tx = rng.normal(0.0, cfg.translation_std_px) * cfg.spacing_mm;
  gt.sim.ty = rng.normal(0.0, cfg.translation_std_px) * cfg.spacing_mm;
  gt.sim.cx = 0.5 * (size - 1) * cfg.spacing_mm;
  gt.sim.cy = 0.5 * (size - 1) * cfg.spacing_mm;
  return gt;
}

// forward map: similarity applied after the nonlinear flow
DeformationField compose_truth(const GroundTruth& gt) {
  const auto& f = gt.flow_fwd;
  DeformationField u(f.width, f.height, f.spacing);
  for (int y = 0; y < f.height; ++y)
    for (int x = 0; x < f.width; ++x) {
      const std::size_t i = f.index(x, y);
      const double px = x * f.spacing + f.dx[i];
      const double py = y * f.spacing + f.dy[i];
      double ox, oy;
      gt.sim.apply(px, py, ox, oy);
      u.dx[i] = ox - x * f.spacing;
      u.dy[i] = oy - y * f.spacing;
    }
  return u;
}

// inverse map as a displacement field: y -> flow_inv(sim^-1(y))
DeformationField compose_inverse(const GroundTruth& gt) {
  const auto& f = gt.flow_inv;
  DeformationField u(f.width, f.height, f.spacing);
  for (int y = 0; y < f.height; ++y)
    for (int x = 0; x < f.width; ++x) {
      const std::size_t i = f.index(x, y);
      double zx, zy;
      gt.sim.apply_inverse(x * f.spacing, y * f.spacing, zx, zy);
      double ddx, ddy;
      sample_field(f, zx / f.spacing, zy / f.spacing, ddx, ddy);
      u.dx[i] = zx + ddx - x * f.spacing;
      u.dy[i] = zy + ddy - y * f.spacing;
    }
  return u;
}

std::string pair_dir_name(int index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "pair_%03d", index);
  return buf;
}

} // namespace

PhantomPair generate_phantom_pair(int size, std::uint64_t seed) {
  if (size < 64) throw std::invalid_argument("generate_phantom_pair: size must be >= 64");
  const int w = size, h = size;
  Rng rng(mix_seed(seed, kTagPhantom));
  const Image2D wobble = smooth_noise(w, h, size / 6.0, rng);
  const Image2D ribbon = smooth_noise(w, h, size / 16.0, rng);
  const Image2D vent = smooth_noise(w, h, size / 12.0, rng);
  const Image2D texture = smooth_noise(w, h, size / 10.0, rng);
  // fine-scale anatomy shared by both modalities; without it tissue
  // interiors quantise to plateaus and the matching likelihood goes flat
  const Image2D detail = smooth_noise(w, h, 1.0, rng);

  PhantomPair out;
  out.labels.assign(std::size_t(w) * h, 0);
  const double cx = 0.5 * (w - 1), cy = 0.5 * (h - 1);
  const double rx = 0.38 * w, ry = 0.42 * h;

  std::vector<std::uint8_t> brain(out.labels.size(), 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double e = ((x - cx) / rx) * ((x - cx) / rx) + ((y - cy) / ry) * ((y - cy) / ry);
      brain[std::size_t(y) * w + x] = e < 1.0 + 0.22 * wobble.at(x, y) ? 1 : 0;
    }
  const std::vector<double> dist = chamfer_distance(brain, w, h);

  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t i = std::size_t(y) * w + x;
      if (!brain[i]) continue;
      const double ev = ((x - cx) / (0.34 * rx)) * ((x - cx) / (0.34 * rx)) +
                        ((y - cy - 0.05 * h) / (0.30 * ry)) * ((y - cy - 0.05 * h) / (0.30 * ry));
      const bool ventricle = ev < 1.0 + 0.4 * vent.at(x, y) && dist[i] > 8.0;
      const bool cortex = dist[i] < 0.055 * w + 2.0 * ribbon.at(x, y);
      const double bl = ((x - cx + 0.21 * w) / (0.12 * w)) * ((x - cx + 0.21 * w) / (0.12 * w)) +
                        ((y - cy - 0.14 * h) / (0.10 * h)) * ((y - cy - 0.14 * h) / (0.10 * h));
      const double br = ((x - cx - 0.21 * w) / (0.12 * w)) * ((x - cx - 0.21 * w) / (0.12 * w)) +
                        ((y - cy - 0.14 * h) / (0.10 * h)) * ((y - cy - 0.14 * h) / (0.10 * h));
      const bool nucleus = bl < 1.0 + 0.3 * ribbon.at(x, y) || br < 1.0 + 0.3 * ribbon.at(x, y);
      if (ventricle)
        out.labels[i] = 1; // CSF
      else if (cortex || nucleus)
        out.labels[i] = 2; // gray matter
      else
        out.labels[i] = 3; // white matter
    }

  // the two modalities order the class intensities differently
  const double base_a[4] = {12.0, 35.0, 105.0, 200.0};
  const double gain_a[4] = {0.0, 8.0, 16.0, 10.0};
  const double base_b[4] = {8.0, 225.0, 95.0, 155.0};
  const double gain_b[4] = {0.0, -12.0, 20.0, -14.0};
  // per-class weight of the shared fine-scale detail
  const double detail_a[4] = {0.0, 16.0, 28.0, 26.0};
  const double detail_b[4] = {0.0, 20.0, 30.0, -27.0};

  out.a = Image2D(w, h, 1.0);
  out.b = Image2D(w, h, 1.0);
  for (std::size_t i = 0; i < out.labels.size(); ++i) {
    const int c = out.labels[i];
    const double tex = texture.data[i];
    const double fine = detail.data[i];
    out.a.data[i] = base_a[c] + gain_a[c] * tex + detail_a[c] * fine;
    out.b.data[i] = base_b[c] + gain_b[c] * tex + detail_b[c] * fine;
  }
  // smooth the anatomy, then add unsmoothed acquisition noise per modality;
  // the background stays exactly constant, as in skull-stripped scans
  out.a = gaussian_smooth(out.a, 0.5);
  out.b = gaussian_smooth(out.b, 0.5);
  for (std::size_t i = 0; i < out.labels.size(); ++i) {
    const double na = rng.normal(0.0, 7.0);
    const double nb = rng.normal(0.0, 7.0);
    if (out.labels[i] == 0) {
      out.a.data[i] = base_a[0];
      out.b.data[i] = base_b[0];
      continue;
    }
    out.a.data[i] = std::clamp(out.a.data[i] + na, 0.0, 255.0);
    out.b.data[i] = std::clamp(out.b.data[i] + nb, 0.0, 255.0);
  }
  return out;
}

DeformationField sample_deformation(int size, const SynthConfig& cfg, std::uint64_t seed) {
  return compose_truth(make_ground_truth(size, cfg, seed));
}

std::vector<std::pair<int, int>> place_landmarks(const Image2D& img, int n,
                                                 double suppression_sigma_px,
                                                 std::uint64_t seed) {
  (void)seed; // selection is deterministic given the image
  if (n < 0 || std::size_t(n) > img.size())
    throw std::invalid_argument("place_landmarks: invalid landmark count");
  Image2D response = harris_response(img, 0.04, 2.0 * img.spacing);
  std::vector<std::pair<int, int>> picks;
  picks.reserve(std::size_t(n));
  const double inv2s2 = 0.5 / (suppression_sigma_px * suppression_sigma_px);
  for (int k = 0; k < n; ++k) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < response.size(); ++i)
      if (response.data[i] > response.data[best]) best = i;
    const int bx = int(best % std::size_t(response.width));
    const int by = int(best / std::size_t(response.width));
    picks.emplace_back(bx, by);
    for (int y = 0; y < response.height; ++y)
      for (int x = 0; x < response.width; ++x) {
        const double d2 = double(x - bx) * (x - bx) + double(y - by) * (y - by);
        response.at(x, y) *= 1.0 - std::exp(-d2 * inv2s2);
      }
  }
  return picks;
}

LandmarkSet project_landmarks(const std::vector<std::pair<int, int>>& points_px,
                              const DeformationField& field, double sigma_mm,
                              std::uint64_t seed, int* dropped) {
  LandmarkSet out;
  out.sigma_mm = sigma_mm;
  Rng rng(mix_seed(seed, kTagLandmarkNoise));
  int drop_count = 0;
  const double max_x = (field.width - 1) * field.spacing;
  const double max_y = (field.height - 1) * field.spacing;
  for (const auto& [px, py] : points_px) {
    Landmark lm;
    lm.mx = px * field.spacing;
    lm.my = py * field.spacing;
    double ddx, ddy;
    sample_field(field, px, py, ddx, ddy);
    lm.hx = lm.mx + ddx + rng.normal(0.0, sigma_mm);
    lm.hy = lm.my + ddy + rng.normal(0.0, sigma_mm);
    if (lm.hx < 0.0 || lm.hx > max_x || lm.hy < 0.0 || lm.hy > max_y) {
      ++drop_count;
      continue;
    }
    out.points.push_back(lm);
  }
  if (dropped != nullptr) *dropped = drop_count;
  if (drop_count > 0)
    std::cerr << "project_landmarks: dropped " << drop_count
              << " landmark(s) outside the domain\n";
  return out;
}

Image2D quantize_8bit(const Image2D& img) {
  const auto [mn_it, mx_it] = std::minmax_element(img.data.begin(), img.data.end());
  Image2D out(img.width, img.height, img.spacing);
  if (!(*mx_it > *mn_it)) {
    std::cerr << "quantize_8bit: constant image, emitting zeros\n";
    return out;
  }
  const double scale = 255.0 / (*mx_it - *mn_it);
  const double lo = *mn_it;
  for (std::size_t i = 0; i < img.size(); ++i)
    out.data[i] = std::nearbyint((img.data[i] - lo) * scale); // round half to even
  return out;
}

BenchmarkPair generate_benchmark_pair(const SynthConfig& cfg, std::uint64_t seed) {
  const PhantomPair phantom = generate_phantom_pair(cfg.size, seed);
  const GroundTruth gt = make_ground_truth(cfg.size, cfg, seed);

  BenchmarkPair pair;
  pair.truth = compose_truth(gt);
  pair.min_jacobian_nonlinear = min_jacobian_determinant(gt.flow_fwd);

  const DeformationField inverse = compose_inverse(gt);
  Image2D floating_raw(cfg.size, cfg.size, cfg.spacing_mm);
  for (int y = 0; y < cfg.size; ++y)
    for (int x = 0; x < cfg.size; ++x) {
      const std::size_t i = inverse.index(x, y);
      floating_raw.at(x, y) =
          bilinear_sample(phantom.b, (x * cfg.spacing_mm + inverse.dx[i]) / cfg.spacing_mm,
                          (y * cfg.spacing_mm + inverse.dy[i]) / cfg.spacing_mm);
    }

  Image2D ref_raw = phantom.a;
  ref_raw.spacing = cfg.spacing_mm;
  pair.reference = quantize_8bit(ref_raw);
  pair.floating = quantize_8bit(floating_raw);
  pair.mask.assign(phantom.labels.size(), 0);
  for (std::size_t i = 0; i < phantom.labels.size(); ++i)
    pair.mask[i] = phantom.labels[i] != 0 ? 255 : 0;

  const auto points = place_landmarks(
      pair.floating, cfg.n_landmarks, 0.1 * cfg.size, mix_seed(seed, 0x99));
  pair.landmarks = project_landmarks(points, inverse, cfg.landmark_noise_mm,
                                     seed, &pair.dropped_landmarks);

  pair.meta["seed"] = seed;
  pair.meta["size"] = cfg.size;
  pair.meta["spacing_mm"] = cfg.spacing_mm;
  pair.meta["sigma_v_mm"] = cfg.sigma_v_mm;
  pair.meta["smooth_sigma_mm"] = cfg.smooth_sigma_mm;
  pair.meta["rotation_std_deg"] = cfg.rotation_std_deg;
  pair.meta["translation_std_px"] = cfg.translation_std_px;
  pair.meta["log_scale_std"] = cfg.log_scale_std;
  pair.meta["n_landmarks"] = cfg.n_landmarks;
  pair.meta["landmark_noise_mm"] = cfg.landmark_noise_mm;
  pair.meta["window_rate"] = cfg.window_rate;
  pair.meta["squarings"] = gt.squarings;
  pair.meta["composition"] = "similarity_after_nonlinear";
  pair.meta["similarity"] = {{"cos_a", gt.sim.cos_a},
                             {"sin_a", gt.sim.sin_a},
                             {"scale", gt.sim.scale},
                             {"tx_mm", gt.sim.tx},
                             {"ty_mm", gt.sim.ty}};
  pair.meta["dropped_landmarks"] = pair.dropped_landmarks;
  pair.meta["min_jacobian_nonlinear"] = pair.min_jacobian_nonlinear;
  return pair;
}

void write_benchmark_pair(const std::string& dir, const BenchmarkPair& pair) {
  std::filesystem::create_directories(dir);
  write_png(pair.reference, dir + "/ref.png");
  write_png(pair.floating, dir + "/float.png");
  write_field(pair.truth, dir + "/truth_field.raw");

  Image2D mask_img(pair.reference.width, pair.reference.height, pair.reference.spacing);
  for (std::size_t i = 0; i < pair.mask.size(); ++i) mask_img.data[i] = double(pair.mask[i]);
  write_png(mask_img, dir + "/mask.png");

  std::ofstream csv(dir + "/landmarks.csv");
  if (!csv) throw std::runtime_error("cannot write landmarks.csv in " + dir);
  csv << "id,kx_px,ky_px,khx_px,khy_px\n";
  const double sp = pair.reference.spacing;
  char line[160];
  for (std::size_t l = 0; l < pair.landmarks.points.size(); ++l) {
    const auto& lm = pair.landmarks.points[l];
    std::snprintf(line, sizeof line, "%zu,%d,%d,%.6f,%.6f\n", l,
                  int(std::lround(lm.mx / sp)), int(std::lround(lm.my / sp)), lm.hx / sp,
                  lm.hy / sp);
    csv << line;
  }

  std::ofstream meta(dir + "/meta.json");
  if (!meta) throw std::runtime_error("cannot write meta.json in " + dir);
  meta << pair.meta.dump(2) << "\n";
}

BenchmarkPair read_benchmark_pair(const std::string& dir) {
  BenchmarkPair pair;
  pair.reference = read_image(dir + "/ref.png");
  pair.floating = read_image(dir + "/float.png");
  pair.truth = read_field(dir + "/truth_field.raw");
  const Image2D mask_img = read_image(dir + "/mask.png");
  pair.mask.resize(mask_img.size());
  for (std::size_t i = 0; i < mask_img.size(); ++i)
    pair.mask[i] = mask_img.data[i] > 127.0 ? 255 : 0;

  std::ifstream meta(dir + "/meta.json");
  if (!meta) throw std::runtime_error("missing meta.json in " + dir);
  meta >> pair.meta;

  pair.landmarks = read_landmarks_csv(dir + "/landmarks.csv", pair.reference.spacing,
                                      pair.meta.value("landmark_noise_mm", 0.5));
  return pair;
}

LandmarkSet read_landmarks_csv(const std::string& path, double spacing_mm,
                               double sigma_mm) {
  std::ifstream csv(path);
  if (!csv) throw std::runtime_error("cannot open " + path);
  LandmarkSet out;
  out.sigma_mm = sigma_mm;
  std::string header;
  std::getline(csv, header);
  std::string row;
  while (std::getline(csv, row)) {
    if (row.empty()) continue;
    Landmark lm;
    long id = 0;
    double kx, ky, khx, khy;
    if (std::sscanf(row.c_str(), "%ld,%lf,%lf,%lf,%lf", &id, &kx, &ky, &khx, &khy) != 5)
      throw std::runtime_error("bad landmark row in " + path + ": " + row);
    lm.mx = kx * spacing_mm;
    lm.my = ky * spacing_mm;
    lm.hx = khx * spacing_mm;
    lm.hy = khy * spacing_mm;
    out.points.push_back(lm);
  }
  return out;
}

void generate_dataset(const std::string& out_dir, int n_pairs, const SynthConfig& cfg,
                      std::uint64_t seed) {
  if (n_pairs < 1) throw std::invalid_argument("generate_dataset: n_pairs must be >= 1");
  std::filesystem::create_directories(out_dir);
  for (int i = 0; i < n_pairs; ++i) {
    const BenchmarkPair pair = generate_benchmark_pair(cfg, mix_seed(seed, std::uint64_t(i)));
    write_benchmark_pair(out_dir + "/" + pair_dir_name(i), pair);
  }
  nlohmann::json j;
  j["n_pairs"] = n_pairs;
  j["seed"] = seed;
  j["sigma_v_mm"] = cfg.sigma_v_mm;
  j["size"] = cfg.size;
  j["spacing_mm"] = cfg.spacing_mm;
  j["n_landmarks"] = cfg.n_landmarks;
  std::ofstream f(out_dir + "/dataset.json");
  if (!f) throw std::runtime_error("cannot write dataset.json");
  f << j.dump(2) << "\n";
}

std::vector<std::string> list_dataset_pairs(const std::string& dir) {
  std::vector<std::string> out;
  if (!std::filesystem::is_directory(dir)) return out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_directory() && e.path().filename().string().rfind("pair_", 0) == 0)
      out.push_back(e.path().string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

} // namespace regsynth
