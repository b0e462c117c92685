#include "regsynth/forest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "json.hpp"

#include "regsynth/parallel.hpp"
#include "regsynth/rng.hpp"

namespace regsynth {

namespace {

constexpr std::uint64_t kTagImageBag = 0x1a6e;
constexpr std::uint64_t kTagPixelBag = 0x2b7f;
constexpr std::uint64_t kTagDraw = 0x3c90;
constexpr std::uint64_t kTagGrow = 0x4da1;

struct Sample {
  const float* features;
  double target;
};

struct TreeBuilder {
  const std::vector<Sample>& samples;
  int n_features;
  const ForestHyperparams& hyper;
  Rng rng;
  RegressionTree tree;
  std::vector<int> index;
  std::vector<std::pair<float, double>> scratch; // (feature value, target)
  std::vector<int> feature_pool;

  TreeBuilder(const std::vector<Sample>& s, int nf, const ForestHyperparams& h,
              std::uint64_t seed)
      : samples(s), n_features(nf), hyper(h), rng(seed) {
    index.resize(samples.size());
    std::iota(index.begin(), index.end(), 0);
    scratch.resize(samples.size());
    feature_pool.resize(std::size_t(n_features));
    std::iota(feature_pool.begin(), feature_pool.end(), 0);
  }

  int make_leaf(double mean) {
    tree.feature.push_back(-1);
    tree.threshold.push_back(0.0f);
    tree.left.push_back(-1);
    tree.right.push_back(-1);
    tree.value.push_back(mean);
    return int(tree.feature.size()) - 1;
  }

  int build(int lo, int hi, int depth) {
    const int n = hi - lo;
    double sum = 0.0, sumsq = 0.0;
    for (int i = lo; i < hi; ++i) {
      const double t = samples[std::size_t(index[std::size_t(i)])].target;
      sum += t;
      sumsq += t * t;
    }
    const double mean = sum / n;
    const double sse = std::max(0.0, sumsq - sum * sum / n);

    const bool depth_capped = hyper.max_depth > 0 && depth >= hyper.max_depth;
    if (n < 2 * hyper.min_leaf_size || sse <= 1e-12 * n || depth_capped)
      return make_leaf(mean);

    // test a random subset of features, keep the best variance-reduction split
    const int n_try = std::min(hyper.features_per_node, n_features);
    for (int k = 0; k < n_try; ++k) {
      const int swap_with = k + int(rng.below(std::uint64_t(n_features - k)));
      std::swap(feature_pool[std::size_t(k)], feature_pool[std::size_t(swap_with)]);
    }

    int best_feature = -1;
    float best_threshold = 0.0f;
    double best_gain = 0.0;
    for (int k = 0; k < n_try; ++k) {
      const int f = feature_pool[std::size_t(k)];
      for (int i = lo; i < hi; ++i) {
        const Sample& s = samples[std::size_t(index[std::size_t(i)])];
        scratch[std::size_t(i - lo)] = {s.features[f], s.target};
      }
      std::sort(scratch.begin(), scratch.begin() + n);
      double lsum = 0.0, lsumsq = 0.0;
      for (int i = 0; i + 1 < n; ++i) {
        const double t = scratch[std::size_t(i)].second;
        lsum += t;
        lsumsq += t * t;
        const int nl = i + 1, nr = n - nl;
        if (nl < hyper.min_leaf_size || nr < hyper.min_leaf_size) continue;
        if (!(scratch[std::size_t(i)].first < scratch[std::size_t(i + 1)].first)) continue;
        const double rsum = sum - lsum, rsumsq = sumsq - lsumsq;
        const double sse_l = lsumsq - lsum * lsum / nl;
        const double sse_r = rsumsq - rsum * rsum / nr;
        const double gain = sse - sse_l - sse_r;
        if (gain > best_gain) {
          best_gain = gain;
          best_feature = f;
          best_threshold =
              0.5f * (scratch[std::size_t(i)].first + scratch[std::size_t(i + 1)].first);
        }
      }
    }
    if (best_feature < 0) return make_leaf(mean);

    // partition in place, preserving relative order for determinism
    const auto mid_it = std::stable_partition(
        index.begin() + lo, index.begin() + hi, [&](int si) {
          return samples[std::size_t(si)].features[best_feature] < best_threshold;
        });
    const int mid = int(mid_it - index.begin());
    if (mid == lo || mid == hi) return make_leaf(mean); // numeric ties

    const int node = make_leaf(mean); // reserve slot, then fill as internal
    tree.feature[std::size_t(node)] = best_feature;
    tree.threshold[std::size_t(node)] = best_threshold;
    const int l = build(lo, mid, depth + 1);
    const int r = build(mid, hi, depth + 1);
    tree.left[std::size_t(node)] = l;
    tree.right[std::size_t(node)] = r;
    return node;
  }
};

// Cumulative posterior per pixel, used for inverse-CDF shift sampling.
std::vector<float> build_cdf(const PosteriorField& post) {
  std::vector<float> cdf(post.q.size());
  const int s_count = post.n_shifts;
  for (std::size_t p = 0; p < post.pixel_count(); ++p) {
    const double* q = post.at(p);
    double acc = 0.0;
    float* out = cdf.data() + p * std::size_t(s_count);
    for (int s = 0; s < s_count; ++s) {
      acc += q[s];
      out[s] = float(acc);
    }
  }
  return cdf;
}

int sample_shift(const float* cdf, int s_count, double u) {
  const float total = cdf[s_count - 1];
  const float target = float(u) * total;
  const float* it = std::upper_bound(cdf, cdf + s_count, target);
  return int(std::min<std::ptrdiff_t>(it - cdf, s_count - 1));
}

} // namespace

void ForestHyperparams::validate() const {
  if (!(variance_prior_shape > 1.0))
    throw std::invalid_argument("ForestHyperparams: prior shape must be > 1");
  if (!(variance_prior_scale > 0.0))
    throw std::invalid_argument("ForestHyperparams: prior scale must be > 0");
  if (tree_count < 1) throw std::invalid_argument("ForestHyperparams: tree_count >= 1");
  if (min_leaf_size < 1) throw std::invalid_argument("ForestHyperparams: min_leaf_size >= 1");
  if (features_per_node < 1 || pixels_per_tree < 1)
    throw std::invalid_argument("ForestHyperparams: invalid sampling settings");
  if (image_bag_fraction <= 0.0 || image_bag_fraction > 1.0 || pixel_bag_fraction <= 0.0 ||
      pixel_bag_fraction > 1.0)
    throw std::invalid_argument("ForestHyperparams: bag fractions must be in (0, 1]");
}

ForestModel train_forest(const std::vector<ForestTrainInput>& inputs,
                         const ShiftCatalog& catalog, const ForestHyperparams& hyper,
                         std::uint64_t seed, int n_threads) {
  hyper.validate();
  if (inputs.empty()) throw std::invalid_argument("train_forest: empty training set");
  for (const auto& in : inputs) {
    if (in.features == nullptr || in.target == nullptr || in.posterior == nullptr)
      throw std::invalid_argument("train_forest: null input");
    if (in.features->width != in.target->width || in.features->height != in.target->height ||
        in.posterior->width != in.target->width || in.posterior->height != in.target->height)
      throw std::invalid_argument("train_forest: feature/target grid mismatch");
    if (in.posterior->n_shifts != catalog.size())
      throw std::invalid_argument("train_forest: posterior does not match shift catalog");
    if (in.features->count != inputs.front().features->count)
      throw std::invalid_argument("train_forest: inconsistent feature dimension");
  }

  // id-sorted view so draws are keyed by image identity, not list position
  std::vector<int> order(inputs.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return inputs[std::size_t(a)].image_id < inputs[std::size_t(b)].image_id; });

  std::vector<const float*> cdf_ptr(inputs.size());
  std::vector<std::vector<float>> cdfs(inputs.size());
  parallel_for(inputs.size(), n_threads, [&](std::size_t i) {
    cdfs[i] = build_cdf(*inputs[i].posterior);
    cdf_ptr[i] = cdfs[i].data();
  });

  const int n_features = inputs.front().features->count;
  ForestModel model;
  model.hyper = hyper;
  model.n_features = n_features;
  model.trees.resize(std::size_t(hyper.tree_count));

  parallel_for(std::size_t(hyper.tree_count), n_threads, [&](std::size_t ti) {
    const std::uint64_t t = std::uint64_t(ti);

    // image bagging (or pixel bagging when a single pair is available)
    std::vector<int> bagged;
    if (inputs.size() > 1) {
      const std::size_t keep = std::max<std::size_t>(
          1, std::size_t(std::llround(hyper.image_bag_fraction * double(inputs.size()))));
      std::vector<std::pair<std::uint64_t, int>> keyed;
      keyed.reserve(inputs.size());
      for (int idx : order)
        keyed.emplace_back(
            mix_seed(seed, kTagImageBag, t, std::uint64_t(inputs[std::size_t(idx)].image_id)),
            idx);
      std::sort(keyed.begin(), keyed.end());
      for (std::size_t k = 0; k < keep; ++k) bagged.push_back(keyed[k].second);
      std::sort(bagged.begin(), bagged.end(), [&](int a, int b) {
        return inputs[std::size_t(a)].image_id < inputs[std::size_t(b)].image_id;
      });
    } else {
      bagged.push_back(0);
    }

    // per-image pixel pools
    std::vector<std::vector<int>> pools(bagged.size());
    for (std::size_t bi = 0; bi < bagged.size(); ++bi) {
      const auto& in = inputs[std::size_t(bagged[bi])];
      const int n_pix = in.target->width * in.target->height;
      auto& pool = pools[bi];
      pool.resize(std::size_t(n_pix));
      std::iota(pool.begin(), pool.end(), 0);
      if (inputs.size() == 1) {
        const std::size_t keep = std::max<std::size_t>(
            1, std::size_t(std::llround(hyper.pixel_bag_fraction * double(n_pix))));
        Rng bag_rng(mix_seed(seed, kTagPixelBag, t, std::uint64_t(in.image_id)));
        for (std::size_t k = 0; k < keep; ++k) {
          const std::size_t j = k + bag_rng.below(std::uint64_t(pool.size() - k));
          std::swap(pool[k], pool[j]);
        }
        pool.resize(keep);
      }
    }

    // proportional draw allocation until the per-tree budget is met
    std::size_t total_pool = 0;
    for (const auto& p : pools) total_pool += p.size();
    const std::int64_t budget = hyper.pixels_per_tree;
    std::vector<Sample> samples;
    samples.reserve(std::size_t(budget));
    std::size_t cum = 0;
    std::int64_t assigned_before = 0;
    for (std::size_t bi = 0; bi < bagged.size(); ++bi) {
      cum += pools[bi].size();
      const std::int64_t assigned_after =
          std::int64_t(double(budget) * double(cum) / double(total_pool) + 0.5);
      const std::int64_t draws = assigned_after - assigned_before;
      assigned_before = assigned_after;
      const auto& in = inputs[std::size_t(bagged[bi])];
      const auto& pool = pools[bi];
      Rng draw_rng(mix_seed(seed, kTagDraw, t, std::uint64_t(in.image_id)));
      const float* cdf = cdf_ptr[std::size_t(bagged[bi])];
      const int s_count = catalog.size();
      const double spacing = in.target->spacing;
      // distinct pixels only: each patch enters a tree at most once, so a
      // small pool cannot be memorised through duplicated draws
      auto& pool_mut = pools[bi];
      const std::int64_t take = std::min<std::int64_t>(draws, std::int64_t(pool_mut.size()));
      for (std::int64_t d = 0; d < take; ++d) {
        const std::size_t j =
            std::size_t(d) + std::size_t(draw_rng.below(std::uint64_t(pool_mut.size() - std::size_t(d))));
        std::swap(pool_mut[std::size_t(d)], pool_mut[j]);
        const int pix = pool_mut[std::size_t(d)];
        const int px = pix % in.target->width;
        const int py = pix / in.target->width;
        const int s = sample_shift(cdf + std::size_t(pix) * std::size_t(s_count), s_count,
                                   draw_rng.uniform());
        const double tx = px + catalog.dx[std::size_t(s)] / spacing;
        const double ty = py + catalog.dy[std::size_t(s)] / spacing;
        samples.push_back(Sample{in.features->at(px, py), bilinear_sample(*in.target, tx, ty)});
      }
    }

    TreeBuilder builder(samples, n_features, hyper, mix_seed(seed, kTagGrow, t));
    builder.build(0, int(samples.size()), 0);
    model.trees[ti] = std::move(builder.tree);
  });

  return model;
}

SynthesisPrediction predict(const ForestModel& model, const FeatureStack& features,
                            int n_threads) {
  if (features.count != model.n_features)
    throw std::invalid_argument("predict: feature dimension mismatch");
  SynthesisPrediction pred;
  pred.width = features.width;
  pred.height = features.height;
  const std::size_t n = std::size_t(pred.width) * pred.height;
  pred.mean.resize(n);
  pred.variance.resize(n);

  const double a = model.hyper.variance_prior_shape;
  const double b = model.hyper.variance_prior_scale;
  const double t_count = double(model.trees.size());

  parallel_for_ranges(n, n_threads, [&](std::size_t lo, std::size_t hi) {
    std::vector<double> guesses(model.trees.size());
    for (std::size_t p = lo; p < hi; ++p) {
      const float* f = features.data.data() + p * std::size_t(features.count);
      double sum = 0.0;
      for (std::size_t t = 0; t < model.trees.size(); ++t) {
        guesses[t] = model.trees[t].predict(f);
        sum += guesses[t];
      }
      const double mu = sum / t_count;
      double spread = 0.0;
      for (double g : guesses) spread += (g - mu) * (g - mu);
      pred.mean[p] = mu;
      pred.variance[p] = (2.0 * b + spread) / (2.0 * a + t_count);
    }
  });
  return pred;
}

void write_forest(const ForestModel& model, const std::string& path) {
  nlohmann::json j;
  j["format"] = "regsynth-forest";
  j["version"] = 1;
  j["n_features"] = model.n_features;
  j["hyper"] = {{"variance_prior_shape", model.hyper.variance_prior_shape},
                {"variance_prior_scale", model.hyper.variance_prior_scale},
                {"tree_count", model.hyper.tree_count},
                {"min_leaf_size", model.hyper.min_leaf_size},
                {"features_per_node", model.hyper.features_per_node},
                {"image_bag_fraction", model.hyper.image_bag_fraction},
                {"pixel_bag_fraction", model.hyper.pixel_bag_fraction},
                {"pixels_per_tree", model.hyper.pixels_per_tree},
                {"max_depth", model.hyper.max_depth}};
  nlohmann::json trees = nlohmann::json::array();
  for (const auto& t : model.trees) {
    trees.push_back({{"feature", t.feature},
                     {"threshold", t.threshold},
                     {"left", t.left},
                     {"right", t.right},
                     {"value", t.value}});
  }
  j["trees"] = std::move(trees);
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << j.dump() << "\n";
}

ForestModel read_forest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  nlohmann::json j;
  f >> j;
  if (j.value("format", "") != "regsynth-forest" || j.value("version", 0) != 1)
    throw std::runtime_error("unrecognised forest file: " + path);
  ForestModel model;
  model.n_features = j.at("n_features").get<int>();
  const auto& h = j.at("hyper");
  model.hyper.variance_prior_shape = h.at("variance_prior_shape").get<double>();
  model.hyper.variance_prior_scale = h.at("variance_prior_scale").get<double>();
  model.hyper.tree_count = h.at("tree_count").get<int>();
  model.hyper.min_leaf_size = h.at("min_leaf_size").get<int>();
  model.hyper.features_per_node = h.at("features_per_node").get<int>();
  model.hyper.image_bag_fraction = h.at("image_bag_fraction").get<double>();
  model.hyper.pixel_bag_fraction = h.at("pixel_bag_fraction").get<double>();
  model.hyper.pixels_per_tree = h.at("pixels_per_tree").get<int>();
  model.hyper.max_depth = h.at("max_depth").get<int>();
  for (const auto& tj : j.at("trees")) {
    RegressionTree t;
    t.feature = tj.at("feature").get<std::vector<int>>();
    t.threshold = tj.at("threshold").get<std::vector<float>>();
    t.left = tj.at("left").get<std::vector<int>>();
    t.right = tj.at("right").get<std::vector<int>>();
    t.value = tj.at("value").get<std::vector<double>>();
    model.trees.push_back(std::move(t));
  }
  return model;
}

} // namespace regsynth
