#include "regsynth/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <stdexcept>

#include "regsynth/parallel.hpp"
#include "regsynth/rng.hpp"
#include "regsynth/synthgen.hpp"

namespace regsynth {

ErrorStats registration_error(const DeformationField& estimated,
                              const DeformationField& truth,
                              const std::vector<std::uint8_t>& mask) {
  if (estimated.width != truth.width || estimated.height != truth.height ||
      estimated.spacing != truth.spacing)
    throw std::invalid_argument("registration_error: field grids differ");
  if (mask.size() != estimated.size())
    throw std::invalid_argument("registration_error: mask size mismatch");
  ErrorStats stats;
  std::size_t count = 0;
  double sum = 0.0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i] == 0) continue;
    const double e = std::hypot(estimated.dx[i] - truth.dx[i], estimated.dy[i] - truth.dy[i]);
    sum += e;
    stats.max_mm = std::max(stats.max_mm, e);
    ++count;
  }
  if (count == 0) throw std::invalid_argument("registration_error: empty mask");
  stats.mean_mm = sum / double(count);
  return stats;
}

namespace {

using clock_type = std::chrono::steady_clock;

double seconds_since(clock_type::time_point t0) {
  return std::chrono::duration<double>(clock_type::now() - t0).count();
}

LandmarkSet landmark_subset(const LandmarkSet& full, int n) {
  LandmarkSet out;
  out.sigma_mm = full.sigma_mm;
  const std::size_t keep = std::min<std::size_t>(std::size_t(std::max(0, n)), full.size());
  out.points.assign(full.points.begin(), full.points.begin() + std::ptrdiff_t(keep));
  return out;
}

} // namespace

std::vector<SweepRow> run_sweep(const std::string& dataset_dir, const SweepGrid& grid,
                                const SweepOptions& options, const std::string& out_csv) {
  const auto pair_dirs = list_dataset_pairs(dataset_dir);
  std::vector<BenchmarkPair> pairs;
  int skipped = 0;
  for (const auto& dir : pair_dirs) {
    if (options.max_pairs > 0 && int(pairs.size()) >= options.max_pairs) break;
    try {
      pairs.push_back(read_benchmark_pair(dir));
    } catch (const std::exception& e) {
      ++skipped;
      std::cerr << "sweep: skipping " << dir << ": " << e.what() << "\n";
    }
  }
  if (skipped > 0) std::cerr << "sweep: skipped " << skipped << " pair(s)\n";
  if (pairs.empty()) throw std::runtime_error("sweep: no usable pairs in " + dataset_dir);

  const double sigma_v = pairs.front().meta.value("sigma_v_mm", 0.0);
  const int n_pairs = int(pairs.size());
  const int pair_workers = std::max(1, std::min(options.n_threads, n_pairs));
  const int inner_threads = std::max(1, options.n_threads / pair_workers);

  std::vector<SweepRow> rows;
  for (std::size_t method_idx = 0; method_idx < grid.methods.size(); ++method_idx) {
    const std::string& method = grid.methods[method_idx];
    if (method != "mi" && method != "independent" && method != "joint")
      throw std::invalid_argument("sweep: unknown method " + method);
    for (int n_lm : grid.landmark_counts) {
      // posterior estimation is shared by every spacing in this group
      std::vector<SynthesisPrediction> predictions(pairs.size());
      double vem_seconds = 0.0;
      if (method != "mi") {
        const auto t0 = clock_type::now();
        VemConfig vc = options.vem;
        vc.n_threads = inner_threads;
        // seeds keyed only by (root seed, landmark count, pair block) so a
        // one-pair joint run coincides exactly with the independent run
        const std::uint64_t cell_seed = mix_seed(options.seed, std::uint64_t(n_lm));
        if (method == "joint") {
          std::vector<VemPair> vpairs;
          for (std::size_t p = 0; p < pairs.size(); ++p)
            vpairs.push_back(VemPair{pairs[p].floating, pairs[p].reference,
                                     landmark_subset(pairs[p].landmarks, n_lm), int(p)});
          VemConfig jc = vc;
          jc.n_threads = options.n_threads;
          jc.seed = mix_seed(cell_seed, 0);
          VemResult res = run_vem(vpairs, jc);
          for (std::size_t p = 0; p < pairs.size(); ++p)
            predictions[p] = std::move(res.predictions[p]);
        } else {
          parallel_for(pairs.size(), pair_workers, [&](std::size_t p) {
            VemConfig ic = vc;
            ic.seed = mix_seed(cell_seed, p);
            std::vector<VemPair> one;
            one.push_back(VemPair{pairs[p].floating, pairs[p].reference,
                                  landmark_subset(pairs[p].landmarks, n_lm), int(p)});
            VemResult res = run_vem(one, ic);
            predictions[p] = std::move(res.predictions[0]);
          });
        }
        vem_seconds = seconds_since(t0);
      }

      for (double spacing : grid.spacings_mm) {
        const auto t0 = clock_type::now();
        std::vector<double> means(pairs.size()), maxes(pairs.size());
        parallel_for(pairs.size(), pair_workers, [&](std::size_t p) {
          RegistrationEnergyConfig rc = options.reg;
          rc.control_spacing_mm = spacing;
          const LandmarkSet lms = landmark_subset(pairs[p].landmarks, n_lm);
          FfdRegResult reg;
          if (method == "mi") {
            reg = optimize_ffd_mi(pairs[p].floating, pairs[p].reference, lms, rc);
          } else {
            reg = optimize_ffd(pairs[p].floating, predictions[p], lms, rc);
          }
          const DeformationField dense =
              ffd_to_dense_field(reg.transform, pairs[p].truth.width,
                                 pairs[p].truth.height, pairs[p].truth.spacing);
          const ErrorStats err = registration_error(dense, pairs[p].truth, pairs[p].mask);
          means[p] = err.mean_mm;
          maxes[p] = err.max_mm;
        });

        SweepRow row;
        row.sigma_v = sigma_v;
        row.spacing_mm = spacing;
        row.n_landmarks = n_lm;
        row.method = method;
        for (std::size_t p = 0; p < pairs.size(); ++p) {
          row.mean_err_mm += means[p];
          row.max_err_mm += maxes[p];
        }
        row.mean_err_mm /= double(n_pairs);
        row.max_err_mm /= double(n_pairs);
        row.runtime_s = seconds_since(t0) + vem_seconds / double(grid.spacings_mm.size());
        row.seed = options.seed;
        rows.push_back(row);
        std::cerr << "sweep: method=" << method << " landmarks=" << n_lm
                  << " spacing=" << spacing << " mean=" << row.mean_err_mm
                  << " max=" << row.max_err_mm << "\n";
      }
    }
  }

  if (!out_csv.empty()) write_sweep_csv(rows, out_csv);
  return rows;
}

void write_sweep_csv(const std::vector<SweepRow>& rows, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << "sigma_v,spacing_mm,n_landmarks,method,mean_err_mm,max_err_mm,runtime_s,seed\n";
  char line[256];
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%.6g,%.6g,%d,%s,%.6f,%.6f,%.3f,%llu\n", r.sigma_v,
                  r.spacing_mm, r.n_landmarks, r.method.c_str(), r.mean_err_mm, r.max_err_mm,
                  r.runtime_s, static_cast<unsigned long long>(r.seed));
    f << line;
  }
}

} // namespace regsynth
