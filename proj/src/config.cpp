#include "regsynth/config.hpp"

#include <fstream>
#include <stdexcept>

namespace regsynth {

nlohmann::json config_to_json(const ToolConfig& cfg) {
  nlohmann::json j;
  j["shift_radius_mm"] = cfg.vem.shift_radius_mm;
  j["shift_step_mm"] = cfg.vem.shift_step_mm;
  j["mrf"] = {{"shift_weight", cfg.vem.mrf.shift_weight},
              {"smooth_weight", cfg.vem.mrf.smooth_weight}};
  j["landmark_sigma_mm"] = cfg.reg.landmark_sigma_mm;
  j["forest"] = {{"variance_prior_shape", cfg.vem.forest.variance_prior_shape},
                 {"variance_prior_scale", cfg.vem.forest.variance_prior_scale},
                 {"tree_count", cfg.vem.forest.tree_count},
                 {"min_leaf_size", cfg.vem.forest.min_leaf_size},
                 {"features_per_node", cfg.vem.forest.features_per_node},
                 {"image_bag_fraction", cfg.vem.forest.image_bag_fraction},
                 {"pixel_bag_fraction", cfg.vem.forest.pixel_bag_fraction},
                 {"pixels_per_tree", cfg.vem.forest.pixels_per_tree},
                 {"max_depth", cfg.vem.forest.max_depth}};
  j["features"] = {{"scales_mm", cfg.vem.feature_scales_mm},
                   {"max_order", cfg.vem.feature_max_order}};
  j["vem"] = {{"max_outer_iterations", cfg.vem.max_outer_iterations},
              {"estep_tol", cfg.vem.estep.tol},
              {"estep_max_sweeps", cfg.vem.estep.max_sweeps},
              {"convergence_tol_levels", cfg.vem.convergence_tol_levels}};
  j["ffd"] = {{"bending_weight", cfg.reg.bending_weight},
              {"linear_weight", cfg.reg.linear_weight},
              {"jacobian_weight", cfg.reg.jacobian_weight},
              {"control_spacing_mm", cfg.reg.control_spacing_mm},
              {"mi_bins", cfg.reg.mi_bins},
              {"pyramid_levels", cfg.reg.pyramid_levels},
              {"max_iterations", cfg.reg.max_iterations},
              {"gradient_tol", cfg.reg.gradient_tol}};
  return j;
}

ToolConfig config_from_json(const nlohmann::json& j) {
  ToolConfig cfg;
  cfg.vem.shift_radius_mm = j.value("shift_radius_mm", cfg.vem.shift_radius_mm);
  cfg.vem.shift_step_mm = j.value("shift_step_mm", cfg.vem.shift_step_mm);
  if (j.contains("mrf")) {
    cfg.vem.mrf.shift_weight = j["mrf"].value("shift_weight", cfg.vem.mrf.shift_weight);
    cfg.vem.mrf.smooth_weight = j["mrf"].value("smooth_weight", cfg.vem.mrf.smooth_weight);
  }
  cfg.reg.mrf = cfg.vem.mrf;
  cfg.reg.landmark_sigma_mm = j.value("landmark_sigma_mm", cfg.reg.landmark_sigma_mm);
  if (j.contains("forest")) {
    const auto& f = j["forest"];
    auto& h = cfg.vem.forest;
    h.variance_prior_shape = f.value("variance_prior_shape", h.variance_prior_shape);
    h.variance_prior_scale = f.value("variance_prior_scale", h.variance_prior_scale);
    h.tree_count = f.value("tree_count", h.tree_count);
    h.min_leaf_size = f.value("min_leaf_size", h.min_leaf_size);
    h.features_per_node = f.value("features_per_node", h.features_per_node);
    h.image_bag_fraction = f.value("image_bag_fraction", h.image_bag_fraction);
    h.pixel_bag_fraction = f.value("pixel_bag_fraction", h.pixel_bag_fraction);
    h.pixels_per_tree = f.value("pixels_per_tree", h.pixels_per_tree);
    h.max_depth = f.value("max_depth", h.max_depth);
  }
  if (j.contains("features")) {
    cfg.vem.feature_scales_mm =
        j["features"].value("scales_mm", cfg.vem.feature_scales_mm);
    cfg.vem.feature_max_order = j["features"].value("max_order", cfg.vem.feature_max_order);
  }
  if (j.contains("vem")) {
    const auto& v = j["vem"];
    cfg.vem.max_outer_iterations = v.value("max_outer_iterations", cfg.vem.max_outer_iterations);
    cfg.vem.estep.tol = v.value("estep_tol", cfg.vem.estep.tol);
    cfg.vem.estep.max_sweeps = v.value("estep_max_sweeps", cfg.vem.estep.max_sweeps);
    cfg.vem.convergence_tol_levels =
        v.value("convergence_tol_levels", cfg.vem.convergence_tol_levels);
  }
  if (j.contains("ffd")) {
    const auto& f = j["ffd"];
    cfg.reg.bending_weight = f.value("bending_weight", cfg.reg.bending_weight);
    cfg.reg.linear_weight = f.value("linear_weight", cfg.reg.linear_weight);
    cfg.reg.jacobian_weight = f.value("jacobian_weight", cfg.reg.jacobian_weight);
    cfg.reg.control_spacing_mm = f.value("control_spacing_mm", cfg.reg.control_spacing_mm);
    cfg.reg.mi_bins = f.value("mi_bins", cfg.reg.mi_bins);
    cfg.reg.pyramid_levels = f.value("pyramid_levels", cfg.reg.pyramid_levels);
    cfg.reg.max_iterations = f.value("max_iterations", cfg.reg.max_iterations);
    cfg.reg.gradient_tol = f.value("gradient_tol", cfg.reg.gradient_tol);
  }
  return cfg;
}

ToolConfig load_config_file(const std::string& path) {
  if (path.empty()) return ToolConfig{};
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config " + path);
  nlohmann::json j;
  f >> j;
  return config_from_json(j);
}

} // namespace regsynth
