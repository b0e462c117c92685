// regsynth command line: dataset generation, single-pair registration,
// experiment sweeps and forest prediction.

#include <chrono>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "regsynth/config.hpp"
#include "regsynth/eval.hpp"
#include "regsynth/ffdreg.hpp"
#include "regsynth/graphcut.hpp"
#include "regsynth/image_io.hpp"
#include "regsynth/parallel.hpp"
#include "regsynth/synthgen.hpp"
#include "regsynth/vem.hpp"

namespace {

using namespace regsynth;

double now_seconds() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

int cmd_generate(const std::string& out_dir, int n_pairs, SynthConfig cfg,
                 std::uint64_t seed) {
  generate_dataset(out_dir, n_pairs, cfg, seed);
  std::cerr << "generate: wrote " << n_pairs << " pair(s) to " << out_dir << "\n";
  return 0;
}

struct RegisterArgs {
  std::string ref_path, float_path, landmarks_path, mask_path, truth_path;
  std::string method = "independent";
  std::string final_stage = "ffd";
  std::string out_field, report_path, model_in, model_out, qdiag_prefix;
  std::string config_path;
  double spacing_mm = 6.0;
  double shift_radius = -1.0, shift_step = -1.0;
  std::uint64_t seed = 0;
  int threads = 0;
};

int cmd_register(const RegisterArgs& args) {
  ToolConfig cfg = load_config_file(args.config_path);
  if (args.shift_radius > 0.0) cfg.vem.shift_radius_mm = args.shift_radius;
  if (args.shift_step > 0.0) cfg.vem.shift_step_mm = args.shift_step;
  cfg.reg.control_spacing_mm = args.spacing_mm;
  cfg.vem.seed = args.seed;
  cfg.vem.n_threads = args.threads > 0 ? args.threads : hardware_threads();

  const Image2D h = read_image(args.ref_path);
  const Image2D m = read_image(args.float_path);
  if (h.width != m.width || h.height != m.height || h.spacing != m.spacing)
    throw std::runtime_error("register: images must share one grid (after linear pre-alignment)");

  LandmarkSet landmarks;
  landmarks.sigma_mm = cfg.reg.landmark_sigma_mm;
  if (!args.landmarks_path.empty())
    landmarks = read_landmarks_csv(args.landmarks_path, h.spacing, cfg.reg.landmark_sigma_mm);

  nlohmann::json report;
  report["method"] = args.method;
  report["final"] = args.final_stage;
  report["spacing_mm"] = args.spacing_mm;
  report["landmarks"] = landmarks.points.size();
  const double t0 = now_seconds();

  DeformationField out_field;
  if (args.method == "mi") {
    if (args.final_stage != "ffd")
      throw std::runtime_error("register: the mi method supports only --final ffd");
    const FfdRegResult reg = optimize_ffd_mi(m, h, landmarks, cfg.reg);
    out_field = ffd_to_dense_field(reg.transform, m.width, m.height, m.spacing);
    report["energy"] = {{"total", reg.final_energy},
                        {"data", reg.data_term},
                        {"landmark", reg.landmark_term},
                        {"bending", reg.regularizers.bending},
                        {"linear", reg.regularizers.linear},
                        {"jacobian", reg.regularizers.jacobian}};
    report["iterations"] = reg.iterations;
    report["converged"] = reg.converged;
    report["mean_landmark_residual_mm"] = reg.mean_landmark_residual_mm;
  } else if (args.method == "independent" || args.method == "joint") {
    SynthesisPrediction pred;
    PosteriorField posterior;
    VemConfig vc = cfg.vem;
    const ShiftCatalog catalog =
        ShiftCatalog::square_grid(vc.shift_radius_mm, vc.shift_step_mm);
    if (!args.model_in.empty()) {
      // online use of a saved regressor: skip the variational loop
      const ForestModel model = read_forest(args.model_in);
      const FeatureStack features =
          gaussian_derivative_features(h, vc.feature_scales_mm, vc.feature_max_order);
      pred = predict(model, features, vc.n_threads);
      report["vem"] = {{"skipped", true}, {"model", args.model_in}};
    } else {
      std::vector<VemPair> pairs;
      pairs.push_back(VemPair{m, h, landmarks, 0});
      VemResult res = run_vem(pairs, vc);
      pred = res.predictions[0];
      posterior = std::move(res.posteriors[0]);
      report["vem"] = {{"iterations", res.iterations}, {"converged", res.converged}};
      if (!args.model_out.empty()) write_forest(res.forest, args.model_out);
      if (!args.qdiag_prefix.empty()) {
        const auto [argmax, entropy] = posterior_diagnostics(posterior, catalog, m.spacing);
        write_field(argmax, args.qdiag_prefix + "_argmax.raw");
        write_raw_raster(entropy, args.qdiag_prefix + "_entropy.raw");
      }
    }
    if (args.final_stage == "graphcut") {
      const GraphcutResult gc =
          map_registration_graphcut(m, pred, landmarks, cfg.vem.mrf, catalog);
      out_field = gc.field;
      report["energy"] = {{"total", gc.final_energy}};
      report["moves_accepted"] = gc.moves_accepted;
    } else {
      const FfdRegResult reg = optimize_ffd(m, pred, landmarks, cfg.reg);
      out_field = ffd_to_dense_field(reg.transform, m.width, m.height, m.spacing);
      report["energy"] = {{"total", reg.final_energy},
                          {"data", reg.data_term},
                          {"landmark", reg.landmark_term},
                          {"bending", reg.regularizers.bending},
                          {"linear", reg.regularizers.linear},
                          {"jacobian", reg.regularizers.jacobian}};
      report["iterations"] = reg.iterations;
      report["converged"] = reg.converged;
      report["mean_landmark_residual_mm"] = reg.mean_landmark_residual_mm;
    }
  } else {
    throw std::runtime_error("register: unknown method " + args.method);
  }

  report["runtime_s"] = now_seconds() - t0;

  if (!args.truth_path.empty()) {
    const DeformationField truth = read_field(args.truth_path);
    std::vector<std::uint8_t> mask(truth.size(), 255);
    if (!args.mask_path.empty()) {
      const Image2D mask_img = read_image(args.mask_path);
      for (std::size_t i = 0; i < mask.size(); ++i)
        mask[i] = mask_img.data[i] > 127.0 ? 255 : 0;
    }
    const ErrorStats err = registration_error(out_field, truth, mask);
    report["error"] = {{"mean_mm", err.mean_mm}, {"max_mm", err.max_mm}};
  }

  if (!args.out_field.empty()) write_field(out_field, args.out_field);
  if (!args.report_path.empty()) {
    std::ofstream f(args.report_path);
    if (!f) throw std::runtime_error("cannot write " + args.report_path);
    f << report.dump(2) << "\n";
  }
  std::cerr << "register: done\n" << report.dump(2) << "\n";
  return 0;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Joint contrast synthesis and nonrigid 2D registration"};
  app.require_subcommand(1);

  // generate
  auto* gen = app.add_subcommand("generate", "Create a synthetic benchmark dataset");
  std::string gen_out = "dataset";
  int gen_pairs = 20;
  SynthConfig gen_cfg;
  std::uint64_t gen_seed = 1;
  gen->add_option("--out", gen_out, "Output dataset directory");
  gen->add_option("--pairs", gen_pairs, "Number of image pairs");
  gen->add_option("--size", gen_cfg.size, "Image size in pixels");
  gen->add_option("--spacing-mm", gen_cfg.spacing_mm, "Pixel spacing in mm");
  gen->add_option("--sigma-v", gen_cfg.sigma_v_mm, "Velocity noise std (mm)");
  gen->add_option("--smooth-sigma", gen_cfg.smooth_sigma_mm, "Velocity smoothing (mm)");
  gen->add_option("--landmarks", gen_cfg.n_landmarks, "Landmarks per pair");
  gen->add_option("--landmark-noise", gen_cfg.landmark_noise_mm, "Landmark noise std (mm)");
  gen->add_option("--rotation-std", gen_cfg.rotation_std_deg, "Similarity rotation std (deg)");
  gen->add_option("--translation-std", gen_cfg.translation_std_px,
                  "Similarity translation std (px)");
  gen->add_option("--log-scale-std", gen_cfg.log_scale_std, "Similarity log-scale std");
  gen->add_option("--seed", gen_seed, "Root seed");

  // register
  auto* reg = app.add_subcommand("register", "Register one image pair");
  RegisterArgs rargs;
  reg->add_option("--ref", rargs.ref_path, "Reference image (synthesis input side)")
      ->required();
  reg->add_option("--float", rargs.float_path, "Floating image (resampled side)")
      ->required();
  reg->add_option("--landmarks", rargs.landmarks_path, "Landmark CSV (id,kx,ky,khx,khy in px)");
  reg->add_option("--mask", rargs.mask_path, "Evaluation mask image");
  reg->add_option("--truth", rargs.truth_path, "Ground-truth field for error reporting");
  reg->add_option("--method", rargs.method, "mi | joint | independent");
  reg->add_option("--final", rargs.final_stage, "ffd | graphcut");
  reg->add_option("--spacing-mm", rargs.spacing_mm, "FFD control-point spacing (mm)");
  reg->add_option("--shift-radius", rargs.shift_radius, "Shift catalog radius (mm)");
  reg->add_option("--shift-step", rargs.shift_step, "Shift catalog step (mm)");
  reg->add_option("--out-field", rargs.out_field, "Output displacement field (.raw)");
  reg->add_option("--report", rargs.report_path, "Output JSON report");
  reg->add_option("--model", rargs.model_in, "Apply a saved forest instead of running VEM");
  reg->add_option("--save-model", rargs.model_out, "Save the trained forest");
  reg->add_option("--q-diag", rargs.qdiag_prefix, "Prefix for posterior diagnostics");
  reg->add_option("--config", rargs.config_path, "JSON configuration file");
  reg->add_option("--seed", rargs.seed, "Random seed");
  reg->add_option("--threads", rargs.threads, "Worker threads (0 = hardware)");

  // sweep
  auto* sw = app.add_subcommand("sweep", "Run the benchmark grid and write a CSV");
  std::string sw_dataset, sw_out = "sweep.csv", sw_config;
  std::vector<std::string> sw_methods = {"mi", "independent"};
  std::vector<int> sw_lm = {0};
  std::vector<double> sw_spacings = {6.0, 12.0, 18.0};
  std::uint64_t sw_seed = 0;
  int sw_threads = 0, sw_max_pairs = 0;
  double sw_shift_step = -1.0, sw_shift_radius = -1.0;
  sw->add_option("--dataset", sw_dataset, "Dataset directory")->required();
  sw->add_option("--out", sw_out, "Output CSV path");
  sw->add_option("--methods", sw_methods, "mi | joint | independent")->delimiter(',');
  sw->add_option("--landmark-counts", sw_lm, "Landmark counts")->delimiter(',');
  sw->add_option("--spacings", sw_spacings, "Control spacings (mm)")->delimiter(',');
  sw->add_option("--config", sw_config, "JSON configuration file");
  sw->add_option("--seed", sw_seed, "Root seed");
  sw->add_option("--threads", sw_threads, "Worker threads (0 = hardware)");
  sw->add_option("--max-pairs", sw_max_pairs, "Limit the number of pairs (0 = all)");
  sw->add_option("--shift-step", sw_shift_step, "Shift catalog step (mm)");
  sw->add_option("--shift-radius", sw_shift_radius, "Shift catalog radius (mm)");

  // predict
  auto* pr = app.add_subcommand("predict", "Apply a saved forest to an image");
  std::string pr_model, pr_image, pr_mean, pr_var, pr_png, pr_config;
  pr->add_option("--model", pr_model, "Forest JSON")->required();
  pr->add_option("--image", pr_image, "Input image (synthesis input side)")->required();
  pr->add_option("--out-mean", pr_mean, "Predicted mean raster (.raw)");
  pr->add_option("--out-var", pr_var, "Predicted variance raster (.raw)");
  pr->add_option("--out-png", pr_png, "Predicted mean as 8-bit PNG");
  pr->add_option("--config", pr_config, "JSON configuration file");

  // config-dump
  auto* cd = app.add_subcommand("config-dump", "Write the default configuration JSON");
  std::string cd_out = "regsynth.json";
  cd->add_option("--out", cd_out, "Output path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_generate(gen_out, gen_pairs, gen_cfg, gen_seed);
    if (reg->parsed()) return cmd_register(rargs);
    if (sw->parsed()) {
      SweepGrid grid;
      grid.methods = sw_methods;
      grid.landmark_counts = sw_lm;
      grid.spacings_mm = sw_spacings;
      SweepOptions options;
      ToolConfig cfg = load_config_file(sw_config);
      if (sw_shift_step > 0.0) cfg.vem.shift_step_mm = sw_shift_step;
      if (sw_shift_radius > 0.0) cfg.vem.shift_radius_mm = sw_shift_radius;
      options.vem = cfg.vem;
      options.reg = cfg.reg;
      options.seed = sw_seed;
      options.n_threads = sw_threads > 0 ? sw_threads : hardware_threads();
      options.max_pairs = sw_max_pairs;
      run_sweep(sw_dataset, grid, options, sw_out);
      std::cerr << "sweep: wrote " << sw_out << "\n";
      return 0;
    }
    if (pr->parsed()) {
      const ToolConfig cfg = load_config_file(pr_config);
      const ForestModel model = read_forest(pr_model);
      const Image2D img = read_image(pr_image);
      const FeatureStack features = gaussian_derivative_features(
          img, cfg.vem.feature_scales_mm, cfg.vem.feature_max_order);
      const SynthesisPrediction pred = predict(model, features, hardware_threads());
      Image2D mean(img.width, img.height, img.spacing), var(img.width, img.height, img.spacing);
      mean.data = pred.mean;
      var.data = pred.variance;
      if (!pr_mean.empty()) write_raw_raster(mean, pr_mean);
      if (!pr_var.empty()) write_raw_raster(var, pr_var);
      if (!pr_png.empty()) write_png(mean, pr_png);
      return 0;
    }
    if (cd->parsed()) {
      std::ofstream f(cd_out);
      if (!f) throw std::runtime_error("cannot write " + cd_out);
      f << config_to_json(ToolConfig{}).dump(2) << "\n";
      std::cerr << "config-dump: wrote " << cd_out << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
