// Regression forest for contrast synthesis. Training samples one shift per
// drawn pixel from the current registration posterior, so the regressor is
// fitted under registration uncertainty; prediction fuses the per-tree
// guesses with an Inverse-Gamma prior on the variance.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "regsynth/image.hpp"
#include "regsynth/shifts.hpp"

namespace regsynth {

struct ForestHyperparams {
  double variance_prior_shape = 2.0;    // Inverse-Gamma a
  double variance_prior_scale = 1250.0; // Inverse-Gamma b (25^2 * a)
  int tree_count = 100;
  int min_leaf_size = 5;
  int features_per_node = 5;
  double image_bag_fraction = 0.66;
  double pixel_bag_fraction = 0.66; // used when training on a single pair
  int pixels_per_tree = 25000;
  int max_depth = 0; // 0 = no explicit limit

  void validate() const;
};

// Axis-aligned threshold trees; leaves store the mean of their targets.
struct RegressionTree {
  std::vector<int> feature; // -1 marks a leaf
  std::vector<float> threshold;
  std::vector<int> left;
  std::vector<int> right;
  std::vector<double> value;

  double predict(const float* f) const {
    int n = 0;
    while (feature[std::size_t(n)] >= 0)
      n = f[feature[std::size_t(n)]] < threshold[std::size_t(n)] ? left[std::size_t(n)]
                                                                 : right[std::size_t(n)];
    return value[std::size_t(n)];
  }
};

struct ForestModel {
  ForestHyperparams hyper;
  int n_features = 0;
  std::vector<RegressionTree> trees;
};

// Per-pixel predictive mean and variance on the feature grid.
struct SynthesisPrediction {
  int width = 0;
  int height = 0;
  std::vector<double> mean;
  std::vector<double> variance;
};

struct ForestTrainInput {
  const FeatureStack* features = nullptr;  // of H
  const Image2D* target = nullptr;         // M, sampled at shifted positions
  const PosteriorField* posterior = nullptr;
  int image_id = 0; // stable identity; bagging draws are keyed by it
};

// Per tree: bag images (or pixels when there is a single input), draw
// pixels uniformly from the bagged pool until the per-tree budget is met,
// sample one shift per draw from the pixel's posterior, and grow a
// variance-reduction tree testing `features_per_node` random features per
// node. Deterministic given the seed, independent of input order.
ForestModel train_forest(const std::vector<ForestTrainInput>& inputs,
                         const ShiftCatalog& catalog, const ForestHyperparams& hyper,
                         std::uint64_t seed, int n_threads = 1);

SynthesisPrediction predict(const ForestModel& model, const FeatureStack& features,
                            int n_threads = 1);

// Versioned JSON serialisation.
void write_forest(const ForestModel& model, const std::string& path);
ForestModel read_forest(const std::string& path);

} // namespace regsynth
