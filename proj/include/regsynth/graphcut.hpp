// Discrete MAP registration over the shift catalog: expansion moves solved
// as binary min-cut problems. The quadratic pairwise label cost is a
// semi-metric, so each move uses a truncated (and, per edge, submodularity-
// clamped) cost for graph construction while acceptance is decided on the
// true energy; passes therefore never increase the energy.

#pragma once

#include <vector>

#include "regsynth/deformation.hpp"
#include "regsynth/forest.hpp"
#include "regsynth/image.hpp"
#include "regsynth/shifts.hpp"

namespace regsynth {

// Augmenting-path max-flow (Dinic) on a fixed node set.
class Maxflow {
public:
  explicit Maxflow(int n_nodes);

  // cost0 charged when the node stays with its current label (source side),
  // cost1 when it takes the expansion label (sink side).
  void add_unary(int node, double cost0, double cost1);
  // charged when `from` keeps its label and `to` switches.
  void add_directed(int from, int to, double cost);

  double run();
  bool source_side(int node) const;

private:
  int add_arc(int u, int v, double cap);
  bool bfs();
  double dfs(int u, double limit);

  int n_;
  std::vector<int> head_, next_, to_;
  std::vector<double> cap_;
  std::vector<double> src_, snk_;
  std::vector<int> level_, iter_;
  int source_, sink_;
  bool built_ = false;
};

struct GraphcutResult {
  DeformationField field;
  double final_energy = 0.0;
  std::vector<double> energy_trace; // energy after each accepted move
  int moves_accepted = 0;
};

// Energy: sum_x [M(x+u(x)) - mean_x]^2 / (2 var_x) + shift_weight |u(x)|^2
//       + landmark quadratics folded into the unaries at round(k_h)
//       + smooth_weight * sum over unordered 4-neighbour edges |u - u'|^2.
double discrete_registration_energy(const std::vector<int>& labels, int width, int height,
                                    const std::vector<double>& unary,
                                    const MrfParams& mrf, const ShiftCatalog& catalog);

// Unary table of the energy above (pixel-major, S per pixel).
std::vector<double> discrete_registration_unaries(const Image2D& m,
                                                  const SynthesisPrediction& pred,
                                                  const LandmarkSet& landmarks,
                                                  const MrfParams& mrf,
                                                  const ShiftCatalog& catalog);

GraphcutResult map_registration_graphcut(const Image2D& m, const SynthesisPrediction& pred,
                                         const LandmarkSet& landmarks, const MrfParams& mrf,
                                         const ShiftCatalog& catalog, int max_cycles = 3);

} // namespace regsynth
